// Test-only oracles, independent of the library's implementation paths.
#pragma once

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracles {

using BigInt = boost::multiprecision::cpp_int;
using BigFloat = boost::multiprecision::cpp_bin_float_50;

// True iff d is the nearest double to the exact rational num/den (den > 0):
// both neighbours of d must be at least as far from num/den, checked in
// exact integer arithmetic on 2^exp-scaled values.
inline bool correctly_rounded(double d, std::int64_t num, std::int64_t den) {
  if (den <= 0 || !std::isfinite(d)) return false;
  // distance comparison |num/den - d| <= |num/den - e| for both neighbours e
  auto as_scaled = [](double x, int& exp2) {
    // x = m * 2^exp2 with integer m
    int e;
    const double m = std::frexp(x, &e);          // m in [0.5, 1)
    const double mi = std::ldexp(m, 53);         // integer-valued
    exp2 = e - 53;
    return BigInt(static_cast<long long>(mi));
  };
  auto dist_cmp = [&](double a, double b) {
    // sign of |num/den - a| - |num/den - b|, exact
    int ea, eb;
    const BigInt ma = as_scaled(a, ea), mb = as_scaled(b, eb);
    // common scale: num/den - m*2^e  ->  (num*2^-e - m*den) / (den*2^-e), e<0
    const int e = std::min(ea, eb);
    BigInt da = (BigInt(num) << static_cast<unsigned>(-e)) - (ma << static_cast<unsigned>(ea - e)) * den;
    BigInt db = (BigInt(num) << static_cast<unsigned>(-e)) - (mb << static_cast<unsigned>(eb - e)) * den;
    if (da < 0) da = -da;
    if (db < 0) db = -db;
    return da.compare(db);
  };
  const double lo = std::nextafter(d, -1.0), hi = std::nextafter(d, 2.0);
  return dist_cmp(d, lo) <= 0 && dist_cmp(d, hi) <= 0;
}

// Plain quadruple-loop 2-D cross-correlation for a single channel pair is in
// the library (conv2d_reference); this adds an independent single-case check
// used to pin frozen values.
inline std::vector<double> conv_valid_3x3(const std::vector<double>& x, int h, int w,
                                          const std::vector<double>& k) {
  std::vector<double> out;
  for (int oy = 0; oy + 3 <= h; ++oy)
    for (int ox = 0; ox + 3 <= w; ++ox) {
      double acc = 0;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) acc += x[(oy + ky) * w + ox + kx] * k[ky * 3 + kx];
      out.push_back(acc);
    }
  return out;
}

// Hand-rolled scalar Adam (bias-corrected, coupled L2 weight decay).
struct ScalarAdam {
  double m = 0, v = 0;
  long t = 0;

  double step(double param, double grad, double lr, double b1, double b2, double wd, double eps) {
    ++t;
    const double g = grad + wd * param;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return param - lr * mh / (std::sqrt(vh) + eps);
  }
};

// erf via its Maclaurin series, enough terms for |x| <= 2.
inline double erf_series(double x) {
  const BigFloat xx(x);
  BigFloat term = xx, sum = xx;
  for (int n = 1; n < 80; ++n) {
    term *= -xx * xx / n;
    sum += term / (2 * n + 1);
  }
  sum *= 2 / boost::multiprecision::sqrt(boost::multiprecision::atan(BigFloat(1)) * 4);
  return static_cast<double>(sum);
}

// Softmax cross-entropy of one batch in 50-digit arithmetic.
inline double softmax_ce_highprec(const std::vector<double>& logits, int n, int k,
                                  const std::vector<long>& labels) {
  BigFloat total = 0;
  for (int i = 0; i < n; ++i) {
    BigFloat z = 0;
    for (int j = 0; j < k; ++j) z += boost::multiprecision::exp(BigFloat(logits[i * k + j]));
    total += boost::multiprecision::log(z) - BigFloat(logits[i * k + labels[i]]);
  }
  return static_cast<double>(total / n);
}

inline std::pair<double, double> mean_std_highprec(const std::vector<double>& vals) {
  BigFloat mean = 0;
  for (double v : vals) mean += BigFloat(v);
  mean /= static_cast<int>(vals.size());
  BigFloat ss = 0;
  for (double v : vals) ss += (BigFloat(v) - mean) * (BigFloat(v) - mean);
  ss /= static_cast<int>(vals.size() - 1);
  return {static_cast<double>(mean), static_cast<double>(boost::multiprecision::sqrt(ss))};
}

}  // namespace oracles
