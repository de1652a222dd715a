#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "sfusnet/dropblock.hpp"
#include "sfusnet/ops.hpp"
#include "sfusnet/rng.hpp"
#include "sfusnet/spectral.hpp"

namespace sfus {

struct ModelConfig {
  index_t base_channels = 32;
  std::array<index_t, 4> stage_depths{3, 6, 3, 3};
  index_t num_classes = 4;
  index_t input_size = 224;
  index_t dropblock_block_size = 5;
  double dropblock_drop_rate = 0.1;
  bool fft_branch_enabled = true;

  void validate() const {
    SFUS_CHECK(base_channels >= 1, "base_channels must be positive");
    SFUS_CHECK(num_classes >= 2, "num_classes must be at least 2");
    for (index_t d : stage_depths) SFUS_CHECK(d >= 1, "stage depths must be positive");
    SFUS_CHECK(input_size >= 16 && input_size % 16 == 0,
               "input_size must be divisible by 16 (stem halving plus three downsamples), got "
                   << input_size);
    SFUS_CHECK(dropblock_block_size >= 1 && dropblock_block_size % 2 == 1,
               "dropblock_block_size must be odd");
    SFUS_CHECK(dropblock_drop_rate >= 0 && dropblock_drop_rate < 1,
               "dropblock_drop_rate must be in [0,1)");
    // DropBlock sits after stages 2 and 3 (maps of input/4 and input/8)
    SFUS_CHECK(dropblock_drop_rate == 0 || dropblock_block_size <= input_size / 8,
               "dropblock_block_size " << dropblock_block_size
                                       << " exceeds the stage-3 feature map ("
                                       << input_size / 8 << "x" << input_size / 8 << ")");
  }

  index_t stage_channels(int stage) const { return base_channels << stage; }
};

template <typename S>
struct Conv2dLayer {
  Tensor<S> weight;
  Tensor<S> bias;
  index_t stride = 1;
  index_t padding = 0;
};

template <typename S>
struct BatchNormLayer {
  Tensor<S> gamma;
  Tensor<S> beta;
  RunningStats<S> stats;
};

template <typename S>
struct LinearLayer {
  Tensor<S> weight;
  Tensor<S> bias;
};

// Three-branch unit: identity, spatial PW/3x3/PW stack, and a frequency
// branch convolving the packed half-plane spectrum. All branches preserve
// NxCxHxW so they can be fused by elementwise addition.
template <typename S>
struct ConvFftBlockLayer {
  Conv2dLayer<S> pw1, conv3, pw2;
  BatchNormLayer<S> bn1, bn2, bn3;
  bool fft_enabled = true;
  Conv2dLayer<S> fconv1, fconv2;  // 2C -> 2C over [Re, Im] channels
  BatchNormLayer<S> fbn1, fbn2;
};

template <typename S>
struct DownsampleLayer {
  Conv2dLayer<S> pw;  // C -> 2C
  BatchNormLayer<S> bn;
};

template <typename S>
Tensor<S> apply_conv(const Tensor<S>& x, const Conv2dLayer<S>& layer) {
  return conv2d(x, layer.weight, layer.bias, layer.stride, layer.padding);
}

template <typename S>
Tensor<S> apply_bn(const Tensor<S>& x, BatchNormLayer<S>& layer, Mode mode) {
  return batchnorm2d(x, layer.gamma, layer.beta, layer.stats, mode);
}

// conv3x3 stride 2 -> BN -> GELU; halves the spatial extent and moves the
// channel count to base_channels.
template <typename S>
Tensor<S> stem_forward(const Tensor<S>& input, Conv2dLayer<S>& conv, BatchNormLayer<S>& bn,
                       Mode mode) {
  SFUS_CHECK_SHAPE(input.ndim() == 4, "stem input must be NxCxSxS");
  SFUS_CHECK_SHAPE(input.dim(2) % 2 == 0 && input.dim(3) % 2 == 0,
                   "stem requires even spatial extents, got " << input.dim(2) << "x"
                                                              << input.dim(3));
  return gelu(apply_bn(apply_conv(input, conv), bn, mode));
}

// GELU(identity + spatial + frequency); the frequency term is omitted when
// the branch is disabled (ablation variant).
template <typename S>
Tensor<S> conv_fft_block_forward(const Tensor<S>& input, ConvFftBlockLayer<S>& block, Mode mode) {
  SFUS_CHECK_SHAPE(input.ndim() == 4, "conv-fft block input must be NxCxHxW");
  const index_t W = input.dim(3);

  Tensor<S> spatial = apply_bn(apply_conv(input, block.pw1), block.bn1, mode);
  spatial = gelu(apply_bn(apply_conv(spatial, block.conv3), block.bn2, mode));
  spatial = apply_bn(apply_conv(spatial, block.pw2), block.bn3, mode);

  Tensor<S> fused = add(input, spatial);
  if (block.fft_enabled) {
    // pack_complex(rfft2(x)) and irfft2(unpack_complex(...)) fused to the
    // packed layout; identical values, two channel copies fewer.
    Tensor<S> f = rfft2_packed(input);
    f = gelu(apply_bn(apply_conv(f, block.fconv1), block.fbn1, mode));
    f = apply_bn(apply_conv(f, block.fconv2), block.fbn2, mode);
    Tensor<S> freq = irfft2_packed(f, W);
    fused = add(fused, freq);
  }
  return gelu(fused);
}

// maxpool 2x2 stride 2, then PW-conv doubling the channel count, with BN.
template <typename S>
Tensor<S> downsample_forward(const Tensor<S>& input, DownsampleLayer<S>& down, Mode mode) {
  return apply_bn(apply_conv(maxpool2d(input), down.pw), down.bn, mode);
}

template <typename S = double>
struct SfusNet {
  ModelConfig config;
  Conv2dLayer<S> stem_conv;
  BatchNormLayer<S> stem_bn;
  std::vector<std::vector<ConvFftBlockLayer<S>>> stages;
  std::array<DownsampleLayer<S>, 3> downs;
  LinearLayer<S> head;
  Mode mode = Mode::kEval;

  void set_mode(Mode m) { mode = m; }

  // stem -> stage1 -> down -> stage2 -> DropBlock -> down -> stage3 ->
  // DropBlock -> down -> stage4 -> global average pool -> linear.
  // `dropblock_rng` is required only in train mode with a nonzero drop rate.
  Tensor<S> forward(const Tensor<S>& input, Rng* dropblock_rng = nullptr) {
    SFUS_CHECK_SHAPE(input.ndim() == 4 && input.dim(1) == 3 && input.dim(2) == config.input_size &&
                         input.dim(3) == config.input_size,
                     "model expects Nx3x" << config.input_size << "x" << config.input_size
                                          << " input, got " << shape_str(input.shape()));
    const bool drops = mode == Mode::kTrain && config.dropblock_drop_rate > 0;
    SFUS_CHECK(!drops || dropblock_rng != nullptr,
               "train-mode forward with DropBlock enabled needs an RNG");
    Tensor<S> t = stem_forward(input, stem_conv, stem_bn, mode);
    for (int s = 0; s < 4; ++s) {
      for (auto& block : stages[static_cast<std::size_t>(s)])
        t = conv_fft_block_forward(t, block, mode);
      if ((s == 1 || s == 2) && drops)  // identity in eval mode or at rate 0
        t = dropblock(t, config.dropblock_block_size, config.dropblock_drop_rate, mode,
                      *dropblock_rng);
      if (s < 3) t = downsample_forward(t, downs[static_cast<std::size_t>(s)], mode);
    }
    return linear(global_avg_pool(t), head.weight, head.bias);
  }

  struct NamedParam {
    std::string name;
    Tensor<S>* tensor;
  };

  std::vector<NamedParam> parameters() {
    std::vector<NamedParam> out;
    auto conv = [&](const std::string& p, Conv2dLayer<S>& c) {
      out.push_back({p + ".weight", &c.weight});
      out.push_back({p + ".bias", &c.bias});
    };
    auto bn = [&](const std::string& p, BatchNormLayer<S>& b) {
      out.push_back({p + ".gamma", &b.gamma});
      out.push_back({p + ".beta", &b.beta});
    };
    conv("stem.conv", stem_conv);
    bn("stem.bn", stem_bn);
    for (std::size_t s = 0; s < stages.size(); ++s) {
      for (std::size_t i = 0; i < stages[s].size(); ++i) {
        const std::string p = "stage" + std::to_string(s) + ".block" + std::to_string(i);
        auto& blk = stages[s][i];
        conv(p + ".pw1", blk.pw1);
        bn(p + ".bn1", blk.bn1);
        conv(p + ".conv3", blk.conv3);
        bn(p + ".bn2", blk.bn2);
        conv(p + ".pw2", blk.pw2);
        bn(p + ".bn3", blk.bn3);
        if (blk.fft_enabled) {
          conv(p + ".fconv1", blk.fconv1);
          bn(p + ".fbn1", blk.fbn1);
          conv(p + ".fconv2", blk.fconv2);
          bn(p + ".fbn2", blk.fbn2);
        }
      }
      if (s < 3) {
        const std::string p = "down" + std::to_string(s);
        conv(p + ".pw", downs[s].pw);
        bn(p + ".bn", downs[s].bn);
      }
    }
    out.push_back({"head.weight", &head.weight});
    out.push_back({"head.bias", &head.bias});
    return out;
  }

  struct NamedBn {
    std::string name;
    BatchNormLayer<S>* layer;
  };

  std::vector<NamedBn> batchnorms() {
    std::vector<NamedBn> out;
    out.push_back({"stem.bn", &stem_bn});
    for (std::size_t s = 0; s < stages.size(); ++s) {
      for (std::size_t i = 0; i < stages[s].size(); ++i) {
        const std::string p = "stage" + std::to_string(s) + ".block" + std::to_string(i);
        auto& blk = stages[s][i];
        out.push_back({p + ".bn1", &blk.bn1});
        out.push_back({p + ".bn2", &blk.bn2});
        out.push_back({p + ".bn3", &blk.bn3});
        if (blk.fft_enabled) {
          out.push_back({p + ".fbn1", &blk.fbn1});
          out.push_back({p + ".fbn2", &blk.fbn2});
        }
      }
      if (s < 3) out.push_back({"down" + std::to_string(s) + ".bn", &downs[s].bn});
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor->zero_grad();
  }
};

namespace detail {

template <typename S>
Conv2dLayer<S> init_conv(Rng& rng, index_t c_out, index_t c_in, index_t k, index_t stride,
                         index_t padding) {
  Conv2dLayer<S> layer;
  const double stddev = std::sqrt(2.0 / static_cast<double>(c_in * k * k));
  layer.weight = Tensor<S>::randn({c_out, c_in, k, k}, rng, static_cast<S>(stddev));
  layer.weight.set_requires_grad(true);
  layer.bias = Tensor<S>::zeros({c_out}, true);
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

template <typename S>
BatchNormLayer<S> init_bn(index_t channels) {
  BatchNormLayer<S> layer;
  layer.gamma = Tensor<S>::full({channels}, S(1));
  layer.gamma.set_requires_grad(true);
  layer.beta = Tensor<S>::zeros({channels}, true);
  layer.stats = RunningStats<S>::fresh(channels);
  return layer;
}

}  // namespace detail

// He-normal (fan-in) weights, zero biases, BN gamma=1 beta=0; deterministic
// for a given seed.
template <typename S = double>
SfusNet<S> build_model(const ModelConfig& config, std::uint64_t init_seed) {
  config.validate();
  Rng rng(init_seed);
  SfusNet<S> net;
  net.config = config;
  net.stem_conv = detail::init_conv<S>(rng, config.base_channels, 3, 3, 2, 1);
  net.stem_bn = detail::init_bn<S>(config.base_channels);
  net.stages.resize(4);
  for (int s = 0; s < 4; ++s) {
    const index_t c = config.stage_channels(s);
    for (index_t b = 0; b < config.stage_depths[static_cast<std::size_t>(s)]; ++b) {
      ConvFftBlockLayer<S> blk;
      blk.pw1 = detail::init_conv<S>(rng, c, c, 1, 1, 0);
      blk.bn1 = detail::init_bn<S>(c);
      blk.conv3 = detail::init_conv<S>(rng, c, c, 3, 1, 1);
      blk.bn2 = detail::init_bn<S>(c);
      blk.pw2 = detail::init_conv<S>(rng, c, c, 1, 1, 0);
      blk.bn3 = detail::init_bn<S>(c);
      blk.fft_enabled = config.fft_branch_enabled;
      if (blk.fft_enabled) {
        blk.fconv1 = detail::init_conv<S>(rng, 2 * c, 2 * c, 3, 1, 1);
        blk.fbn1 = detail::init_bn<S>(2 * c);
        blk.fconv2 = detail::init_conv<S>(rng, 2 * c, 2 * c, 3, 1, 1);
        blk.fbn2 = detail::init_bn<S>(2 * c);
      }
      net.stages[static_cast<std::size_t>(s)].push_back(std::move(blk));
    }
    if (s < 3) {
      net.downs[static_cast<std::size_t>(s)].pw = detail::init_conv<S>(rng, 2 * c, c, 1, 1, 0);
      net.downs[static_cast<std::size_t>(s)].bn = detail::init_bn<S>(2 * c);
    }
  }
  const index_t feat = config.stage_channels(3);
  const double stddev = std::sqrt(2.0 / static_cast<double>(feat));
  net.head.weight = Tensor<S>::randn({config.num_classes, feat}, rng, static_cast<S>(stddev));
  net.head.weight.set_requires_grad(true);
  net.head.bias = Tensor<S>::zeros({config.num_classes}, true);
  return net;
}

// Closed-form parameter count of the frequency branches: two 3x3 convs over
// 2C channels plus their BNs, per block.
inline index_t frequency_branch_param_count(const ModelConfig& cfg) {
  index_t total = 0;
  for (int s = 0; s < 4; ++s) {
    const index_t c = cfg.stage_channels(s);
    const index_t conv = (2 * c) * (2 * c) * 9 + 2 * c;  // weight + bias
    const index_t bn = 2 * (2 * c);                      // gamma + beta
    total += cfg.stage_depths[static_cast<std::size_t>(s)] * 2 * (conv + bn);
  }
  return total;
}

template <typename S>
index_t count_parameters(SfusNet<S>& model) {
  index_t total = 0;
  for (const auto& p : model.parameters()) total += p.tensor->numel();
  return total;
}

template <typename S>
index_t count_parameters(const std::vector<typename SfusNet<S>::NamedParam>& params) {
  index_t total = 0;
  for (const auto& p : params) total += p.tensor->numel();
  return total;
}

}  // namespace sfus
