#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "sfusnet/gradcheck.hpp"
#include "sfusnet/ops.hpp"

using namespace sfus;

TEST_SUITE_BEGIN("ops");

namespace {

Tensor<> iota(Shape shape) {
  Tensor<> t = Tensor<>::zeros(shape);
  for (index_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<double>(i);
  return t;
}

}  // namespace

TEST_CASE("conv2d: 1x1 identity kernel is the identity map") {
  Tensor<> x = Tensor<>::full({1, 1, 3, 3}, 1.0);
  Tensor<> w = Tensor<>::full({1, 1, 1, 1}, 1.0);
  Tensor<> b = Tensor<>::zeros({1});
  Tensor<> y = conv2d(x, w, b);
  CHECK(y.shape() == x.shape());
  CHECK((y.array() - x.array()).abs().maxCoeff() == 0.0);
}

TEST_CASE("conv2d: 4x4 with 3x3 pad 1 preserves the extent") {
  Rng rng(1);
  Tensor<> x = Tensor<>::randn({1, 1, 4, 4}, rng);
  Tensor<> y = conv2d(x, Tensor<>::randn({1, 1, 3, 3}, rng), Tensor<>::zeros({1}), 1, 1);
  CHECK(y.shape() == Shape{1, 1, 4, 4});
}

TEST_CASE("conv2d: frozen 4x4 valid case against the quadruple-loop oracle") {
  Tensor<> x = iota({1, 1, 4, 4});
  Tensor<> w = iota({1, 1, 3, 3});
  Tensor<> b = Tensor<>::zeros({1});
  Tensor<> y = conv2d(x, w, b);
  const double expect[4] = {258, 294, 402, 438};
  for (index_t i = 0; i < 4; ++i) CHECK(y.data()[i] == doctest::Approx(expect[i]).epsilon(1e-14));
  // the oracle itself agrees with the frozen values
  std::vector<double> xs(x.data(), x.data() + 16), ks(w.data(), w.data() + 9);
  const auto oracle = oracles::conv_valid_3x3(xs, 4, 4, ks);
  for (std::size_t i = 0; i < 4; ++i) CHECK(oracle[i] == expect[i]);
  Tensor<> ref = conv2d_reference(x, w, b);
  CHECK((y.array() - ref.array()).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("conv2d: rejects channel mismatch") {
  CHECK_THROWS_AS(conv2d(Tensor<>::zeros({1, 2, 4, 4}), Tensor<>::zeros({1, 3, 3, 3}),
                         Tensor<>::zeros({1})),
                  ShapeError);
}

TEST_CASE("conv2d: random strided/padded cases match the reference") {
  Rng rng(7);
  for (int c = 0; c < 8; ++c) {
    const index_t k = 1 + static_cast<index_t>(rng.below(3));
    const index_t stride = 1 + static_cast<index_t>(rng.below(2));
    const index_t pad = static_cast<index_t>(rng.below(3));
    const index_t h = k + static_cast<index_t>(rng.below(7));
    const index_t w = k + static_cast<index_t>(rng.below(7));
    Tensor<> x = Tensor<>::randn({2, 3, h, w}, rng);
    Tensor<> wt = Tensor<>::randn({4, 3, k, k}, rng);
    Tensor<> b = Tensor<>::randn({4}, rng);
    Tensor<> got = conv2d(x, wt, b, stride, pad);
    Tensor<> want = conv2d_reference(x, wt, b, stride, pad);
    CHECK((got.array() - want.array()).abs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("conv2d: linear in input and weight") {
  Rng rng(13);
  Tensor<> a = Tensor<>::randn({1, 2, 5, 5}, rng);
  Tensor<> b = Tensor<>::randn({1, 2, 5, 5}, rng);
  Tensor<> w = Tensor<>::randn({3, 2, 3, 3}, rng);
  Tensor<> zero_bias = Tensor<>::zeros({3});
  Tensor<> sum_in = Tensor<>::from_array(a.shape(), a.array() + b.array());
  ArrayX<double> lhs = conv2d(sum_in, w, zero_bias, 1, 1).array();
  ArrayX<double> rhs =
      conv2d(a, w, zero_bias, 1, 1).array() + conv2d(b, w, zero_bias, 1, 1).array();
  CHECK((lhs - rhs).abs().maxCoeff() <= 1e-10);

  Tensor<> w2 = Tensor<>::randn({3, 2, 3, 3}, rng);
  Tensor<> wsum = Tensor<>::from_array(w.shape(), w.array() + w2.array());
  ArrayX<double> lhs2 = conv2d(a, wsum, zero_bias, 1, 1).array();
  ArrayX<double> rhs2 =
      conv2d(a, w, zero_bias, 1, 1).array() + conv2d(a, w2, zero_bias, 1, 1).array();
  CHECK((lhs2 - rhs2).abs().maxCoeff() <= 1e-10);
}

TEST_CASE("conv2d: gradients pass finite differences") {
  Rng rng(3);
  Tensor<> w = Tensor<>::randn({3, 2, 3, 3}, rng, 0.4);
  Tensor<> b = Tensor<>::randn({3}, rng, 0.2);
  Tensor<> x = Tensor<>::randn({2, 2, 5, 5}, rng);
  CHECK(grad_check<double>(
            [&](const Tensor<>& t) { return sum_all(gelu(conv2d(t, w, b, 2, 1))); }, x) <= 1e-4);
  CHECK(grad_check<double>(
            [&](const Tensor<>& t) { return sum_all(gelu(conv2d(x, t, b, 1, 1))); }, w) <= 1e-4);
  CHECK(grad_check<double>(
            [&](const Tensor<>& t) { return sum_all(gelu(conv2d(x, w, t, 1, 0))); }, b) <= 1e-4);
}

TEST_CASE("maxpool2d: single window and constants") {
  Tensor<> x = Tensor<>::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(maxpool2d(x).value() == 4.0);
  Tensor<> c = Tensor<>::full({2, 3, 4, 4}, 2.5);
  Tensor<> y = maxpool2d(c);
  CHECK(y.shape() == Shape{2, 3, 2, 2});
  CHECK((y.array() == 2.5).all());
}

TEST_CASE("maxpool2d: fixed-seed case against a window-scan oracle") {
  Rng rng(5);
  Tensor<> x = Tensor<>::randn({1, 1, 4, 4}, rng);
  Tensor<> y = maxpool2d(x);
  for (index_t oy = 0; oy < 2; ++oy)
    for (index_t ox = 0; ox < 2; ++ox) {
      double best = -1e300;
      for (index_t dy = 0; dy < 2; ++dy)
        for (index_t dx = 0; dx < 2; ++dx)
          best = std::max(best, x.at({0, 0, 2 * oy + dy, 2 * ox + dx}));
      CHECK(y.at({0, 0, oy, ox}) == best);
    }
}

TEST_CASE("maxpool2d: rejects odd extents") {
  CHECK_THROWS_AS(maxpool2d(Tensor<>::zeros({1, 1, 3, 4})), ShapeError);
}

TEST_CASE("maxpool2d: backward routes to the argmax, first occurrence on ties") {
  Tensor<> x = Tensor<>::from_vector({1, 1, 2, 2}, {7, 7, 7, 7});
  x.set_requires_grad(true);
  sum_all(maxpool2d(x)).backward();
  CHECK(x.grad()[0] == 1.0);  // row-major first occurrence
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[3] == 0.0);

  Rng rng(9);
  Tensor<> r = Tensor<>::randn({2, 3, 6, 6}, rng);
  r.set_requires_grad(true);
  Tensor<> y = maxpool2d(r);
  ArrayX<double> seed = ArrayX<double>::Random(y.numel());
  y.backward(seed);
  CHECK(r.grad().sum() == doctest::Approx(seed.sum()).epsilon(1e-12));
  index_t nonzero = 0;
  for (index_t i = 0; i < r.numel(); ++i) nonzero += (r.grad()[i] != 0.0);
  CHECK(nonzero == y.numel());  // one input position per output cell
}

TEST_CASE("batchnorm2d: two-point channel normalizes to +-1/sqrt(1+eps)") {
  Tensor<> x = Tensor<>::from_vector({2, 1, 1, 1}, {-1, 1});
  RunningStats<double> stats = RunningStats<double>::fresh(1);
  Tensor<> gamma = Tensor<>::full({1}, 1.0);
  Tensor<> beta = Tensor<>::zeros({1});
  Tensor<> y = batchnorm2d(x, gamma, beta, stats, Mode::kTrain);
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y.data()[0] == doctest::Approx(-expect).epsilon(1e-12));
  CHECK(y.data()[1] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(stats.tracked == 1);
}

TEST_CASE("batchnorm2d: gamma 0 collapses to beta") {
  Rng rng(2);
  Tensor<> x = Tensor<>::randn({2, 3, 4, 4}, rng);
  RunningStats<double> stats = RunningStats<double>::fresh(3);
  Tensor<> gamma = Tensor<>::zeros({3});
  Tensor<> beta = Tensor<>::from_vector({3}, {1, 2, 3});
  Tensor<> y = batchnorm2d(x, gamma, beta, stats, Mode::kTrain);
  for (index_t c = 0; c < 3; ++c)
    for (index_t i = 0; i < 16; ++i) CHECK(y.at({0, c, i / 4, i % 4}) == doctest::Approx(c + 1.0));
}

TEST_CASE("batchnorm2d: output statistics match gamma/beta") {
  Rng rng(4);
  Tensor<> x = Tensor<>::randn({4, 2, 8, 8}, rng);
  RunningStats<double> stats = RunningStats<double>::fresh(2);
  Tensor<> gamma = Tensor<>::from_vector({2}, {1.5, 0.5});
  Tensor<> beta = Tensor<>::from_vector({2}, {-1.0, 2.0});
  Tensor<> y = batchnorm2d(x, gamma, beta, stats, Mode::kTrain);
  const index_t M = 4 * 64;
  for (index_t c = 0; c < 2; ++c) {
    double mean = 0, var = 0;
    for (index_t n = 0; n < 4; ++n)
      for (index_t i = 0; i < 64; ++i) mean += y.at({n, c, i / 8, i % 8});
    mean /= M;
    for (index_t n = 0; n < 4; ++n)
      for (index_t i = 0; i < 64; ++i) {
        const double d = y.at({n, c, i / 8, i % 8}) - mean;
        var += d * d;
      }
    var /= M;
    CHECK(mean == doctest::Approx(beta.data()[c]).epsilon(1e-6));
    CHECK(var == doctest::Approx(gamma.data()[c] * gamma.data()[c]).epsilon(1e-4));
  }
}

TEST_CASE("batchnorm2d: eval before any tracked batch is rejected") {
  RunningStats<double> stats = RunningStats<double>::fresh(1);
  Tensor<> x = Tensor<>::zeros({1, 1, 2, 2});
  Tensor<> gamma = Tensor<>::full({1}, 1.0), beta = Tensor<>::zeros({1});
  CHECK_THROWS_AS(batchnorm2d(x, gamma, beta, stats, Mode::kEval), Error);
  batchnorm2d(x, gamma, beta, stats, Mode::kTrain);
  CHECK_NOTHROW(batchnorm2d(x, gamma, beta, stats, Mode::kEval));
}

TEST_CASE("batchnorm2d: train mode needs at least two values per channel") {
  RunningStats<double> stats = RunningStats<double>::fresh(1);
  Tensor<> x = Tensor<>::zeros({1, 1, 1, 1});
  Tensor<> gamma = Tensor<>::full({1}, 1.0), beta = Tensor<>::zeros({1});
  CHECK_THROWS_AS(batchnorm2d(x, gamma, beta, stats, Mode::kTrain), Error);
}

TEST_CASE("batchnorm2d: gradients pass finite differences") {
  Rng rng(6);
  Tensor<> x = Tensor<>::randn({2, 2, 3, 3}, rng);
  Tensor<> gamma = Tensor<>::randn({2}, rng);
  Tensor<> beta = Tensor<>::randn({2}, rng);
  auto fresh = [] { return RunningStats<double>::fresh(2); };
  RunningStats<double> s1 = fresh(), s2 = fresh(), s3 = fresh();
  CHECK(grad_check<double>(
            [&](const Tensor<>& t) {
              return sum_all(gelu(batchnorm2d(t, gamma, beta, s1, Mode::kTrain)));
            },
            x) <= 1e-4);
  CHECK(grad_check<double>(
            [&](const Tensor<>& t) {
              return sum_all(gelu(batchnorm2d(x, t, beta, s2, Mode::kTrain)));
            },
            gamma) <= 1e-4);
  CHECK(grad_check<double>(
            [&](const Tensor<>& t) {
              return sum_all(gelu(batchnorm2d(x, gamma, t, s3, Mode::kTrain)));
            },
            beta) <= 1e-4);
}

TEST_CASE("gelu: fixed points") {
  Tensor<> x = Tensor<>::from_vector({3}, {0.0, 10.0, 1.0});
  Tensor<> y = gelu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(std::abs(y.data()[1] - 10.0) <= 1e-9);
  CHECK(y.data()[2] == doctest::Approx(0.841345).epsilon(1e-6));
  // exact value via a series-evaluated erf
  const double expect = 0.5 * 1.0 * (1.0 + oracles::erf_series(1.0 / std::sqrt(2.0)));
  CHECK(y.data()[2] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("gelu: gradient") {
  Rng rng(8);
  CHECK(grad_check<double>([](const Tensor<>& t) { return sum_all(gelu(t)); },
                           Tensor<>::randn({16}, rng)) <= 1e-4);
}

TEST_CASE("linear: identity and bias-only") {
  Tensor<> x = Tensor<>::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<> eye = Tensor<>::from_vector({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<> zero3 = Tensor<>::zeros({3});
  Tensor<> y = linear(x, eye, zero3);
  CHECK((y.array() - x.array()).abs().maxCoeff() == 0.0);

  Tensor<> wzero = Tensor<>::zeros({4, 3});
  Tensor<> bias = Tensor<>::from_vector({4}, {1, 2, 3, 4});
  Tensor<> rows = linear(x, wzero, bias);
  for (index_t n = 0; n < 2; ++n)
    for (index_t k = 0; k < 4; ++k) CHECK(rows.at({n, k}) == bias.data()[k]);
}

TEST_CASE("linear: fixed case against a triple-loop oracle") {
  Rng rng(21);
  Tensor<> x = Tensor<>::randn({2, 3}, rng);
  Tensor<> w = Tensor<>::randn({4, 3}, rng);
  Tensor<> b = Tensor<>::randn({4}, rng);
  Tensor<> y = linear(x, w, b);
  CHECK(y.shape() == Shape{2, 4});
  for (index_t n = 0; n < 2; ++n)
    for (index_t k = 0; k < 4; ++k) {
      double acc = b.data()[k];
      for (index_t f = 0; f < 3; ++f) acc += x.at({n, f}) * w.at({k, f});
      CHECK(y.at({n, k}) == doctest::Approx(acc).epsilon(1e-12));
    }
  CHECK_THROWS_AS(linear(x, Tensor<>::zeros({4, 5}), b), ShapeError);
}

TEST_CASE("linear: gradients") {
  Rng rng(22);
  Tensor<> x = Tensor<>::randn({3, 4}, rng);
  Tensor<> w = Tensor<>::randn({2, 4}, rng);
  Tensor<> b = Tensor<>::randn({2}, rng);
  CHECK(grad_check<double>([&](const Tensor<>& t) { return sum_all(gelu(linear(t, w, b))); }, x) <=
        1e-4);
  CHECK(grad_check<double>([&](const Tensor<>& t) { return sum_all(gelu(linear(x, t, b))); }, w) <=
        1e-4);
  CHECK(grad_check<double>([&](const Tensor<>& t) { return sum_all(gelu(linear(x, w, t))); }, b) <=
        1e-4);
}

TEST_CASE("global_avg_pool: constants, frozen case, gradient") {
  Tensor<> c = Tensor<>::full({2, 3, 5, 5}, -1.25);
  Tensor<> yc = global_avg_pool(c);
  CHECK(yc.shape() == Shape{2, 3});
  CHECK((yc.array() == -1.25).all());

  Tensor<> x = Tensor<>::from_vector({1, 1, 2, 2}, {0, 2, 4, 6});
  CHECK(global_avg_pool(x).value() == 3.0);

  Rng rng(30);
  Tensor<> r = Tensor<>::randn({2, 4, 3, 3}, rng);
  Tensor<> y = global_avg_pool(r);
  for (index_t n = 0; n < 2; ++n)
    for (index_t ch = 0; ch < 4; ++ch) {
      double sum = 0;
      for (index_t i = 0; i < 9; ++i) sum += r.at({n, ch, i / 3, i % 3});
      CHECK(y.at({n, ch}) == doctest::Approx(sum / 9.0).epsilon(1e-12));
    }
  CHECK(grad_check<double>([](const Tensor<>& t) { return sum_all(gelu(global_avg_pool(t))); },
                           r) <= 1e-4);
}

TEST_CASE("softmax_cross_entropy: uniform logits give ln K") {
  Tensor<> logits = Tensor<>::full({3, 4}, 0.7);
  Tensor<> loss = softmax_cross_entropy(logits, {0, 1, 3});
  CHECK(loss.value() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("softmax_cross_entropy: saturated correct logit gives ~0 loss") {
  Tensor<> logits = Tensor<>::zeros({1, 4});
  logits.data()[2] = 1000.0;
  Tensor<> loss = softmax_cross_entropy(logits, {2});
  CHECK(loss.value() >= 0.0);
  CHECK(loss.value() <= 1e-9);
}

TEST_CASE("softmax_cross_entropy: fixed logits match a 50-digit oracle") {
  Rng rng(41);
  Tensor<> logits = Tensor<>::randn({2, 4}, rng, 2.0);
  std::vector<index_t> labels{3, 1};
  Tensor<> loss = softmax_cross_entropy(logits, labels);
  std::vector<double> vals(logits.data(), logits.data() + 8);
  const double expect = oracles::softmax_ce_highprec(vals, 2, 4, {3, 1});
  CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("softmax_cross_entropy: rejects out-of-range labels") {
  Tensor<> logits = Tensor<>::zeros({2, 4});
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 4}), Error);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {-1, 0}), Error);
}

TEST_CASE("softmax_cross_entropy: gradient rows sum to zero and pass FD") {
  Rng rng(42);
  Tensor<> logits = Tensor<>::randn({3, 5}, rng);
  logits.set_requires_grad(true);
  std::vector<index_t> labels{4, 0, 2};
  softmax_cross_entropy(logits, labels).backward();
  for (index_t n = 0; n < 3; ++n) {
    double row = 0;
    for (index_t k = 0; k < 5; ++k) row += logits.grad()[n * 5 + k];
    CHECK(std::abs(row) <= 1e-12);
  }
  CHECK(grad_check<double>(
            [&](const Tensor<>& t) { return softmax_cross_entropy(t, labels); },
            Tensor<>::randn({3, 5}, rng)) <= 1e-4);
}

TEST_CASE("grad_check reports non-finite values as failure") {
  auto bad = [](const Tensor<>& t) {
    Tensor<> y = sum_all(t);
    y.data()[0] = std::numeric_limits<double>::quiet_NaN();
    return y;
  };
  Rng rng(60);
  CHECK(std::isinf(grad_check<double>(bad, Tensor<>::randn({3}, rng))));
}

TEST_CASE("batchnorm2d: running statistics update by exponential moving average") {
  Rng rng(61);
  Tensor<> x = Tensor<>::randn({4, 2, 3, 3}, rng);
  RunningStats<double> stats = RunningStats<double>::fresh(2);
  Tensor<> gamma = Tensor<>::full({2}, 1.0), beta = Tensor<>::zeros({2});
  batchnorm2d(x, gamma, beta, stats, Mode::kTrain);
  const index_t M = 4 * 9;
  for (index_t c = 0; c < 2; ++c) {
    double mean = 0;
    for (index_t n = 0; n < 4; ++n)
      for (index_t i = 0; i < 9; ++i) mean += x.at({n, c, i / 3, i % 3});
    mean /= M;
    double ss = 0;
    for (index_t n = 0; n < 4; ++n)
      for (index_t i = 0; i < 9; ++i) {
        const double d = x.at({n, c, i / 3, i % 3}) - mean;
        ss += d * d;
      }
    const double var_unbiased = ss / (M - 1);
    CHECK(stats.mean[c] == doctest::Approx(0.9 * 0.0 + 0.1 * mean).epsilon(1e-12));
    CHECK(stats.var[c] == doctest::Approx(0.9 * 1.0 + 0.1 * var_unbiased).epsilon(1e-12));
  }
  CHECK(stats.tracked == 1);
}

TEST_CASE("slice/concat channels are inverse bijections") {
  Rng rng(50);
  Tensor<> a = Tensor<>::randn({2, 3, 4, 4}, rng);
  Tensor<> b = Tensor<>::randn({2, 2, 4, 4}, rng);
  Tensor<> cat = concat_channels(a, b);
  CHECK(cat.shape() == Shape{2, 5, 4, 4});
  Tensor<> a2 = slice_channels(cat, 0, 3);
  Tensor<> b2 = slice_channels(cat, 3, 5);
  CHECK((a2.array() == a.array()).all());
  CHECK((b2.array() == b.array()).all());
  CHECK(grad_check<double>(
            [&](const Tensor<>& t) { return sum_all(gelu(concat_channels(t, b))); }, a) <= 1e-4);
  CHECK(grad_check<double>(
            [&](const Tensor<>& t) { return sum_all(gelu(slice_channels(t, 1, 3))); }, a) <= 1e-4);
}

TEST_SUITE_END();
