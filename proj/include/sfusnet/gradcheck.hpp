#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "sfusnet/tensor.hpp"

namespace sfus {

namespace detail {

inline double grad_rel_error(double analytic, double numeric) {
  if (!std::isfinite(analytic) || !std::isfinite(numeric))
    return std::numeric_limits<double>::infinity();
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace detail

namespace detail {

// Fourth-order central stencil.
template <typename Eval>
double central_diff(const Eval& f, double eps) {
  const double f_p1 = f(eps), f_m1 = f(-eps);
  const double f_p2 = f(2 * eps), f_m2 = f(-2 * eps);
  return (f_m2 - 8 * f_m1 + 8 * f_p1 - f_p2) / (12 * eps);
}

// One derivative coordinate, scored as the best agreement across a step
// ladder. No single step works for every coordinate: parameters that cancel
// exactly (a conv bias feeding train-mode BN) need a large step to push the
// roundoff term u*|f|/eps below the relative-error floor, while coordinates
// near a maxpool argmax switch need a small one. A systematically wrong
// gradient disagrees at every step.
template <typename Eval>
double best_rel_error(const Eval& f, double analytic, double eps_max) {
  double best = std::numeric_limits<double>::infinity();
  double eps = eps_max;
  for (int step = 0; step < 11; ++step, eps /= 3.0)
    best = std::min(best, grad_rel_error(analytic, central_diff(f, eps)));
  return best;
}

}  // namespace detail

// Central finite differences against backprop for the listed elements of
// `point`; `fn` must produce a scalar (compose with sum_all otherwise).
// Returns the max relative error; non-finite values report as +inf.
template <typename S>
double grad_check_sampled(const std::function<Tensor<S>(const Tensor<S>&)>& fn,
                          const Tensor<S>& point, const std::vector<index_t>& indices,
                          double eps = 0.3) {
  Tensor<S> x = Tensor<S>::from_array(point.shape(), point.array());
  x.set_requires_grad(true);
  Tensor<S> y = fn(x);
  SFUS_CHECK_SHAPE(y.numel() == 1, "grad_check requires a scalar-valued function");
  y.backward();
  SFUS_CHECK(x.has_grad(), "grad_check: function does not depend on the input");
  const ArrayX<S> analytic = x.grad();

  double worst = 0;
  NoGradGuard guard;
  for (index_t i : indices) {
    const S orig = x.data()[i];
    const double rel = detail::best_rel_error(
        [&](double h) {
          x.data()[i] = orig + static_cast<S>(h);
          return static_cast<double>(fn(x).value());
        },
        static_cast<double>(analytic[i]), eps);
    x.data()[i] = orig;
    worst = std::max(worst, rel);
  }
  return worst;
}

template <typename S>
double grad_check(const std::function<Tensor<S>(const Tensor<S>&)>& fn, const Tensor<S>& point,
                  double eps = 0.3) {
  std::vector<index_t> all(static_cast<std::size_t>(point.numel()));
  for (index_t i = 0; i < point.numel(); ++i) all[static_cast<std::size_t>(i)] = i;
  return grad_check_sampled(fn, point, all, eps);
}

// Finite differences against accumulated leaf gradients for parameter
// tensors of a larger computation (e.g. a whole model). `samples` lists
// (parameter index, element index) pairs.
template <typename S>
double grad_check_params(const std::function<Tensor<S>()>& loss_fn,
                         const std::vector<Tensor<S>*>& params,
                         const std::vector<std::pair<std::size_t, index_t>>& samples,
                         double eps = 0.3) {
  for (Tensor<S>* p : params) p->zero_grad();
  Tensor<S> loss = loss_fn();
  SFUS_CHECK_SHAPE(loss.numel() == 1, "grad_check_params requires a scalar loss");
  loss.backward();

  double worst = 0;
  NoGradGuard guard;
  for (const auto& [pi, ei] : samples) {
    Tensor<S>* p = params[pi];
    const double analytic =
        p->has_grad() ? static_cast<double>(p->grad()[ei]) : 0.0;
    const S orig = p->data()[ei];
    const double rel = detail::best_rel_error(
        [&](double h) {
          p->data()[ei] = orig + static_cast<S>(h);
          return static_cast<double>(loss_fn().value());
        },
        analytic, eps);
    p->data()[ei] = orig;
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace sfus
