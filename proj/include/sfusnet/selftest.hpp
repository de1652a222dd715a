#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "sfusnet/data.hpp"
#include "sfusnet/dropblock.hpp"
#include "sfusnet/gradcheck.hpp"
#include "sfusnet/model.hpp"
#include "sfusnet/report.hpp"
#include "sfusnet/spectral.hpp"

namespace sfus {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace selftest {

inline SuiteResult fft_suite() {
  SuiteResult r{"fft", true, ""};
  std::ostringstream oss;
  Rng rng(1001);
  double worst_rt = 0;
  for (index_t sz : {8, 16, 32, 64, 128, 14, 28, 56, 112}) {
    Tensor<double> x = Tensor<double>::zeros({1, 1, sz, sz});
    for (index_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform();
    Tensor<double> y = irfft2_packed(rfft2_packed(x), sz);
    worst_rt = std::max(worst_rt, (y.array() - x.array()).abs().maxCoeff());
  }
  oss << "roundtrip max err " << worst_rt;
  if (!(worst_rt <= 1e-10)) r.passed = false;

  double worst_naive = 0;
  for (index_t sz : {8, 14}) {
    Tensor<double> x = Tensor<double>::zeros({sz, sz});
    for (index_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform();
    auto [nre, nim] = naive_dft2(x);
    Tensor<double> x4 = Tensor<double>::from_array({1, 1, sz, sz}, x.array());
    Tensor<double> p = rfft2_packed(x4);
    const index_t wh = sz / 2 + 1;
    for (index_t u = 0; u < sz; ++u)
      for (index_t v = 0; v < wh; ++v) {
        worst_naive = std::max(worst_naive,
                               std::abs(p.data()[u * wh + v] - nre.data()[u * sz + v]));
        worst_naive = std::max(
            worst_naive, std::abs(p.data()[sz * wh + u * wh + v] - nim.data()[u * sz + v]));
      }
  }
  oss << ", naive-dft max err " << worst_naive;
  if (!(worst_naive <= 1e-9)) r.passed = false;

  {
    Tensor<double> x = Tensor<double>::zeros({12, 12});
    for (index_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform();
    auto [nre, nim] = naive_dft2(x);
    const double e_spatial = x.array().square().sum();
    const double e_freq =
        (nre.array().square() + nim.array().square()).sum() / static_cast<double>(12 * 12);
    const double rel = std::abs(e_spatial - e_freq) / e_spatial;
    oss << ", parseval rel " << rel;
    if (!(rel <= 1e-10)) r.passed = false;
  }
  r.detail = oss.str();
  return r;
}

inline SuiteResult conv_suite() {
  SuiteResult r{"conv", true, ""};
  Rng rng(2002);
  double worst = 0;
  for (int c = 0; c < 20; ++c) {
    const index_t n = 1 + static_cast<index_t>(rng.below(2));
    const index_t ci = 1 + static_cast<index_t>(rng.below(4));
    const index_t co = 1 + static_cast<index_t>(rng.below(4));
    const index_t k = 1 + static_cast<index_t>(rng.below(3));
    const index_t stride = 1 + static_cast<index_t>(rng.below(2));
    const index_t pad = static_cast<index_t>(rng.below(2));
    const index_t h = k + static_cast<index_t>(rng.below(6));
    const index_t w = k + static_cast<index_t>(rng.below(6));
    Tensor<double> x = Tensor<double>::randn({n, ci, h, w}, rng);
    Tensor<double> wt = Tensor<double>::randn({co, ci, k, k}, rng);
    Tensor<double> b = Tensor<double>::randn({co}, rng);
    Tensor<double> got = conv2d(x, wt, b, stride, pad);
    Tensor<double> want = conv2d_reference(x, wt, b, stride, pad);
    worst = std::max(worst, (got.array() - want.array()).abs().maxCoeff());
  }
  std::ostringstream oss;
  oss << "20 cases vs reference, max err " << worst;
  r.detail = oss.str();
  r.passed = worst <= 1e-12;
  return r;
}

inline SuiteResult grad_suite() {
  SuiteResult r{"grad", true, ""};
  Rng rng(3003);
  double worst = 0;
  auto check = [&](const char*, double err) { worst = std::max(worst, err); };

  {
    Tensor<double> w = Tensor<double>::randn({3, 2, 3, 3}, rng, 0.4);
    Tensor<double> b = Tensor<double>::randn({3}, rng, 0.2);
    check("conv.x", grad_check<double>(
                        [&](const Tensor<double>& t) { return sum_all(gelu(conv2d(t, w, b, 2, 1))); },
                        Tensor<double>::randn({2, 2, 6, 6}, rng)));
  }
  {
    Tensor<double> x = Tensor<double>::randn({2, 2, 6, 6}, rng);
    Tensor<double> b = Tensor<double>::zeros({3});
    check("conv.w", grad_check<double>(
                        [&](const Tensor<double>& t) { return sum_all(gelu(conv2d(x, t, b, 1, 1))); },
                        Tensor<double>::randn({3, 2, 3, 3}, rng, 0.4)));
  }
  {
    RunningStats<double> stats = RunningStats<double>::fresh(3);
    Tensor<double> g = Tensor<double>::randn({3}, rng);
    Tensor<double> be = Tensor<double>::randn({3}, rng);
    check("batchnorm.x",
          grad_check<double>(
              [&](const Tensor<double>& t) {
                return sum_all(gelu(batchnorm2d(t, g, be, stats, Mode::kTrain)));
              },
              Tensor<double>::randn({2, 3, 4, 4}, rng)));
  }
  check("maxpool", grad_check<double>(
                       [&](const Tensor<double>& t) { return sum_all(gelu(maxpool2d(t))); },
                       Tensor<double>::randn({1, 2, 6, 6}, rng)));
  {
    Tensor<double> w = Tensor<double>::randn({4, 5}, rng);
    Tensor<double> b = Tensor<double>::randn({4}, rng);
    check("linear", grad_check<double>(
                        [&](const Tensor<double>& t) { return sum_all(gelu(linear(t, w, b))); },
                        Tensor<double>::randn({3, 5}, rng)));
  }
  check("gap", grad_check<double>(
                   [&](const Tensor<double>& t) { return sum_all(gelu(global_avg_pool(t))); },
                   Tensor<double>::randn({2, 3, 4, 4}, rng)));
  {
    std::vector<index_t> labels{1, 0, 3};
    check("softmax_ce",
          grad_check<double>(
              [&](const Tensor<double>& t) { return softmax_cross_entropy(t, labels); },
              Tensor<double>::randn({3, 4}, rng)));
  }
  {
    const index_t sz = 8;
    Rng prng(77);
    Tensor<double> w = Tensor<double>::randn({4, 2, 3, 3}, prng, 0.3);
    Tensor<double> b = Tensor<double>::randn({4}, prng, 0.1);
    check("spectral",
          grad_check<double>(
              [&](const Tensor<double>& t) {
                Tensor<double> p = rfft2_packed(t);
                Tensor<double> q = conv2d(p, w, b, 1, 1);
                return sum_all(gelu(irfft2_packed(q, sz)));
              },
              Tensor<double>::randn({1, 1, sz, sz}, rng)));
  }
  {
    // full reduced model, 20 sampled parameters
    ModelConfig mc;
    mc.base_channels = 4;
    mc.stage_depths = {1, 1, 1, 1};
    mc.num_classes = 4;
    mc.input_size = 16;
    mc.dropblock_drop_rate = 0;
    SfusNet<double> model = build_model<double>(mc, 99);
    model.set_mode(Mode::kTrain);
    Rng drng(5);
    Tensor<double> x = Tensor<double>::randn({2, 3, 16, 16}, drng);
    std::vector<index_t> labels{1, 3};
    auto named = model.parameters();
    std::vector<Tensor<double>*> params;
    for (auto& p : named) params.push_back(p.tensor);
    std::vector<std::pair<std::size_t, index_t>> samples;
    Rng srng(17);
    for (int i = 0; i < 20; ++i) {
      const std::size_t pi = static_cast<std::size_t>(srng.below(params.size()));
      samples.push_back({pi, static_cast<index_t>(srng.below(
                                 static_cast<std::uint64_t>(params[pi]->numel())))});
    }
    check("model", grad_check_params<double>(
                       [&] {
                         return softmax_cross_entropy(model.forward(x), labels);
                       },
                       params, samples));
  }
  std::ostringstream oss;
  oss << "max relative error " << worst;
  r.detail = oss.str();
  r.passed = worst <= 1e-4;
  return r;
}

inline SuiteResult dropblock_suite() {
  SuiteResult r{"dropblock", true, ""};
  Rng rng(4004);
  const index_t trials = 4000;
  double zero_frac_sum = 0;
  Tensor<double> ones = Tensor<double>::full({1, 1, 32, 32}, 1.0);
  for (index_t t = 0; t < trials; ++t) {
    Tensor<double> y = dropblock(ones, 5, 0.1, Mode::kTrain, rng);
    index_t zeros = 0;
    for (index_t i = 0; i < y.numel(); ++i) zeros += (y.data()[i] == 0.0);
    zero_frac_sum += static_cast<double>(zeros) / static_cast<double>(y.numel());
  }
  const double mean_frac = zero_frac_sum / static_cast<double>(trials);
  Tensor<double> x = Tensor<double>::randn({2, 3, 16, 16}, rng);
  Tensor<double> e = dropblock(x, 5, 0.9, Mode::kEval, rng);
  const bool eval_identity = (e.array() == x.array()).all();
  std::ostringstream oss;
  oss << "mean zeroed fraction " << mean_frac << " (target 0.1 +-10%), eval identity "
      << (eval_identity ? "yes" : "no");
  r.detail = oss.str();
  r.passed = eval_identity && mean_frac >= 0.09 && mean_frac <= 0.11;
  return r;
}

inline SuiteResult metrics_suite() {
  SuiteResult r{"metrics", true, ""};
  Rng rng(5005);
  bool ok = true;
  for (int t = 0; t < 200 && ok; ++t) {
    ConfusionCounts c;
    c.tp = static_cast<index_t>(rng.below(500));
    c.tn = static_cast<index_t>(rng.below(500));
    c.fp = static_cast<index_t>(rng.below(500));
    c.fn = static_cast<index_t>(rng.below(500));
    auto close = [](MetricValue m, index_t num, index_t den) {
      if (den == 0) return !m.defined && m.value == 0.0;
      return m.defined &&
             std::abs(m.value * static_cast<double>(den) - static_cast<double>(num)) <=
                 1e-12 * std::max<double>(1.0, static_cast<double>(num));
    };
    ok = ok && close(metric_accuracy(c), c.tp + c.tn, c.total());
    ok = ok && close(metric_sensitivity(c), c.tp, c.tp + c.fn);
    ok = ok && close(metric_specificity(c), c.tn, c.tn + c.fp);
    ok = ok && close(metric_precision(c), c.tp, c.tp + c.fp);
  }
  const bool fmt_ok =
      format_pct(0.9289, 0.0042) == "92.89%(±0.42)" && format_pct(1.0, 0.0) == "100.00%(±0.00)";
  std::ostringstream oss;
  oss << "ratio identities " << (ok ? "ok" : "FAILED") << ", formatting "
      << (fmt_ok ? "ok" : "FAILED");
  r.detail = oss.str();
  r.passed = ok && fmt_ok;
  return r;
}

}  // namespace selftest

inline std::vector<SuiteResult> run_selftest() {
  return {selftest::fft_suite(), selftest::conv_suite(), selftest::grad_suite(),
          selftest::dropblock_suite(), selftest::metrics_suite()};
}

}  // namespace sfus
