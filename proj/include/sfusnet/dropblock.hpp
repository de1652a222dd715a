#pragma once

#include <memory>

#include "sfusnet/ops.hpp"
#include "sfusnet/rng.hpp"

namespace sfus {

// DropBlock: in train mode, Bernoulli seeds drawn over the valid block-center
// region are expanded to block_size^2 zero squares, and kept activations are
// rescaled by count(total)/count(kept). The mask is shared across channels of
// a sample and independent across samples. Eval mode (and drop_rate 0) is a
// bit-exact identity.
template <typename S>
Tensor<S> dropblock(const Tensor<S>& input, index_t block_size, double drop_rate, Mode mode,
                    Rng& rng) {
  SFUS_CHECK_SHAPE(input.ndim() == 4, "dropblock input must be NxCxHxW");
  const index_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  SFUS_CHECK(block_size >= 1 && block_size % 2 == 1,
             "dropblock block_size must be odd, got " << block_size);
  SFUS_CHECK(block_size <= H && block_size <= W,
             "dropblock block_size " << block_size << " exceeds feature map " << H << "x" << W);
  SFUS_CHECK(drop_rate >= 0 && drop_rate < 1, "dropblock drop_rate must be in [0,1), got "
                                                  << drop_rate);
  if (mode == Mode::kEval || drop_rate == 0) return input;

  const index_t hv = H - block_size + 1, wv = W - block_size + 1;
  const double gamma = drop_rate * static_cast<double>(H * W) /
                       (static_cast<double>(block_size * block_size) *
                        static_cast<double>(hv * wv));

  // mask values are already rescaled: 0 for dropped, HW/kept for kept
  auto mask = std::make_shared<ArrayX<S>>(ArrayX<S>::Ones(N * H * W));
  for (index_t n = 0; n < N; ++n) {
    S* m = mask->data() + n * H * W;
    for (index_t sy = 0; sy < hv; ++sy)
      for (index_t sx = 0; sx < wv; ++sx)
        if (rng.uniform() < gamma)
          for (index_t by = 0; by < block_size; ++by)
            for (index_t bx = 0; bx < block_size; ++bx) m[(sy + by) * W + (sx + bx)] = S(0);
    index_t kept = 0;
    for (index_t i = 0; i < H * W; ++i) kept += (m[i] != S(0));
    const S scale = kept > 0 ? static_cast<S>(H * W) / static_cast<S>(kept) : S(0);
    for (index_t i = 0; i < H * W; ++i) m[i] *= scale;
  }

  ArrayX<S> out(input.numel());
  parallel_for(N * C, [&](index_t s0, index_t s1) {
    for (index_t s = s0; s < s1; ++s) {
      const index_t n = s / C, hw = H * W;
      Eigen::Map<ArrayX<S>>(out.data() + s * hw, hw) =
          Eigen::Map<const ArrayX<S>>(input.data() + s * hw, hw) *
          Eigen::Map<const ArrayX<S>>(mask->data() + n * hw, hw);
    }
  });

  return Tensor<S>::make_op(input.shape(), std::move(out), "dropblock", {input},
                            [=](const ArrayX<S>& g) {
                              ArrayX<S> gx(g.size());
                              parallel_for(N * C, [&](index_t s0, index_t s1) {
                                for (index_t s = s0; s < s1; ++s) {
                                  const index_t n = s / C, hw = H * W;
                                  Eigen::Map<ArrayX<S>>(gx.data() + s * hw, hw) =
                                      Eigen::Map<const ArrayX<S>>(g.data() + s * hw, hw) *
                                      Eigen::Map<const ArrayX<S>>(mask->data() + n * hw, hw);
                                }
                              });
                              return std::vector<ArrayX<S>>{std::move(gx)};
                            });
}

}  // namespace sfus
