#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "sfusnet/common.hpp"

namespace sfus {
namespace fft {

inline bool is_pow2(index_t n) { return n > 0 && (n & (n - 1)) == 0; }

inline index_t next_pow2(index_t n) {
  index_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Tables for a fixed length: radix-2 butterflies for powers of two, Bluestein
// chirp-z (via a power-of-two convolution) otherwise. Twiddles are planar so
// the row transforms below vectorize across columns.
template <typename S>
struct Plan {
  index_t n = 0;
  std::vector<index_t> bitrev;
  std::vector<S> tw_re, tw_im;  // exp(-2*pi*i*j/n), j in [0, n/2)
  index_t m = 0;                // Bluestein convolution length
  std::vector<S> chirp_re, chirp_im;            // exp(-i*pi*k^2/n)
  std::vector<S> chirp_spec_re, chirp_spec_im;  // FFT_m of the wrapped conjugate chirp
  std::shared_ptr<const Plan> sub;              // plan for length m
};

// DFT along the row axis of an (n x cols) planar matrix, in place,
// unnormalized; `inverse` flips the twiddle sign (still no 1/n factor).
// Butterflies combine whole rows, so the inner loops are contiguous.
template <typename S>
void fft_rows_pow2(const Plan<S>& p, S* re, S* im, index_t cols, bool inverse) {
  const index_t n = p.n;
  if (n == 1) return;
  for (index_t i = 0; i < n; ++i) {
    const index_t j = p.bitrev[i];
    if (i < j) {
      std::swap_ranges(re + i * cols, re + (i + 1) * cols, re + j * cols);
      std::swap_ranges(im + i * cols, im + (i + 1) * cols, im + j * cols);
    }
  }
  for (index_t len = 2; len <= n; len <<= 1) {
    const index_t half = len >> 1;
    const index_t step = n / len;
    for (index_t base = 0; base < n; base += len) {
      for (index_t j = 0; j < half; ++j) {
        S* __restrict ur = re + (base + j) * cols;
        S* __restrict ui = im + (base + j) * cols;
        S* __restrict vr = re + (base + j + half) * cols;
        S* __restrict vi = im + (base + j + half) * cols;
        if (j == 0) {
          for (index_t c = 0; c < cols; ++c) {
            const S tr = vr[c], ti = vi[c];
            vr[c] = ur[c] - tr;
            vi[c] = ui[c] - ti;
            ur[c] += tr;
            ui[c] += ti;
          }
        } else {
          const S wr = p.tw_re[j * step];
          const S wi = inverse ? -p.tw_im[j * step] : p.tw_im[j * step];
          for (index_t c = 0; c < cols; ++c) {
            const S tr = wr * vr[c] - wi * vi[c];
            const S ti = wr * vi[c] + wi * vr[c];
            vr[c] = ur[c] - tr;
            vi[c] = ui[c] - ti;
            ur[c] += tr;
            ui[c] += ti;
          }
        }
      }
    }
  }
}

template <typename S>
std::shared_ptr<const Plan<S>> make_plan(index_t n);

// Process-wide plan cache; plans are immutable once built.
template <typename S>
const Plan<S>& plan(index_t n) {
  static std::mutex mu;
  static std::map<index_t, std::shared_ptr<const Plan<S>>> cache;
  std::lock_guard<std::mutex> lk(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, make_plan<S>(n)).first;
  return *it->second;
}

template <typename S>
std::shared_ptr<const Plan<S>> make_plan(index_t n) {
  SFUS_CHECK(n >= 1, "fft plan length must be positive, got " << n);
  auto p = std::make_shared<Plan<S>>();
  p->n = n;
  if (is_pow2(n)) {
    p->bitrev.resize(n);
    index_t bits = 0;
    while ((index_t(1) << bits) < n) ++bits;
    for (index_t i = 0; i < n; ++i) {
      index_t r = 0;
      for (index_t b = 0; b < bits; ++b)
        if (i & (index_t(1) << b)) r |= index_t(1) << (bits - 1 - b);
      p->bitrev[i] = r;
    }
    const index_t half = std::max<index_t>(n / 2, 1);
    p->tw_re.resize(half);
    p->tw_im.resize(half);
    for (index_t j = 0; j < half; ++j) {
      const double ang =
          -6.283185307179586476925286766559 * static_cast<double>(j) / static_cast<double>(n);
      p->tw_re[j] = static_cast<S>(std::cos(ang));
      p->tw_im[j] = static_cast<S>(std::sin(ang));
    }
  } else {
    p->m = next_pow2(2 * n - 1);
    p->sub = make_plan<S>(p->m);
    p->chirp_re.resize(n);
    p->chirp_im.resize(n);
    for (index_t k = 0; k < n; ++k) {
      const index_t q = (k * k) % (2 * n);  // keeps the angle argument small
      const double ang =
          -3.1415926535897932384626433832795 * static_cast<double>(q) / static_cast<double>(n);
      p->chirp_re[k] = static_cast<S>(std::cos(ang));
      p->chirp_im[k] = static_cast<S>(std::sin(ang));
    }
    std::vector<S> wre(p->m, S(0)), wim(p->m, S(0));
    for (index_t k = 0; k < n; ++k) {
      wre[k] = p->chirp_re[k];
      wim[k] = -p->chirp_im[k];
      if (k > 0) {
        wre[p->m - k] = wre[k];
        wim[p->m - k] = wim[k];
      }
    }
    fft_rows_pow2(*p->sub, wre.data(), wim.data(), 1, false);
    p->chirp_spec_re = std::move(wre);
    p->chirp_spec_im = std::move(wim);
  }
  return p;
}

// Reusable planar buffers for the 2-D transforms.
template <typename S>
struct Workspace2d {
  std::vector<S> a_re, a_im;  // width-direction pass, (W x cols)
  std::vector<S> b_re, b_im;  // height-direction pass, (H x cols)
  std::vector<S> s_re, s_im;  // Bluestein convolution scratch, (m x cols)
};

template <typename S>
void bluestein_rows(const Plan<S>& p, S* re, S* im, index_t cols, bool inverse,
                    Workspace2d<S>& ws) {
  const index_t n = p.n, m = p.m;
  if (inverse)
    for (index_t i = 0; i < n * cols; ++i) im[i] = -im[i];
  ws.s_re.assign(static_cast<std::size_t>(m * cols), S(0));
  ws.s_im.assign(static_cast<std::size_t>(m * cols), S(0));
  S* sre = ws.s_re.data();
  S* sim = ws.s_im.data();
  for (index_t k = 0; k < n; ++k) {
    const S cr = p.chirp_re[k], ci = p.chirp_im[k];
    const S* __restrict xr = re + k * cols;
    const S* __restrict xi = im + k * cols;
    S* __restrict dr = sre + k * cols;
    S* __restrict di = sim + k * cols;
    for (index_t c = 0; c < cols; ++c) {
      dr[c] = xr[c] * cr - xi[c] * ci;
      di[c] = xr[c] * ci + xi[c] * cr;
    }
  }
  fft_rows_pow2(*p.sub, sre, sim, cols, false);
  for (index_t k = 0; k < m; ++k) {
    const S cr = p.chirp_spec_re[k], ci = p.chirp_spec_im[k];
    S* __restrict dr = sre + k * cols;
    S* __restrict di = sim + k * cols;
    for (index_t c = 0; c < cols; ++c) {
      const S tr = dr[c] * cr - di[c] * ci;
      di[c] = dr[c] * ci + di[c] * cr;
      dr[c] = tr;
    }
  }
  fft_rows_pow2(*p.sub, sre, sim, cols, true);
  const S inv_m = S(1) / static_cast<S>(m);
  for (index_t k = 0; k < n; ++k) {
    const S cr = p.chirp_re[k] * inv_m, ci = p.chirp_im[k] * inv_m;
    const S* __restrict dr = sre + k * cols;
    const S* __restrict di = sim + k * cols;
    S* __restrict xr = re + k * cols;
    S* __restrict xi = im + k * cols;
    for (index_t c = 0; c < cols; ++c) {
      xr[c] = dr[c] * cr - di[c] * ci;
      xi[c] = dr[c] * ci + di[c] * cr;
    }
  }
  if (inverse)
    for (index_t i = 0; i < n * cols; ++i) im[i] = -im[i];
}

template <typename S>
void fft_rows(const Plan<S>& p, S* re, S* im, index_t cols, bool inverse, Workspace2d<S>& ws) {
  if (p.n == 1) return;
  if (p.m == 0)
    fft_rows_pow2(p, re, im, cols, inverse);
  else
    bluestein_rows(p, re, im, cols, inverse, ws);
}

namespace detail2d {

// Slices per internal group: keeps the wide planar buffers cache-sized.
inline index_t group_size(index_t count, index_t hw) {
  const index_t cap = std::max<index_t>(index_t(1), (index_t(1) << 16) / std::max<index_t>(hw, 1));
  return std::min(count, cap);
}

}  // namespace detail2d

// Forward real-to-complex 2-D DFT of `count` contiguous H x W slices,
// unnormalized, keeping the half plane v in [0, W/2]. re/im each hold
// `count` contiguous H x (W/2+1) slices.
template <typename S>
void rfft2_many(const S* x, index_t count, index_t H, index_t W, S* re, S* im,
                Workspace2d<S>& ws) {
  const index_t Wh = W / 2 + 1;
  const Plan<S>& pw = plan<S>(W);
  const Plan<S>& ph = plan<S>(H);
  const index_t g_max = detail2d::group_size(count, H * W);
  ws.a_re.resize(static_cast<std::size_t>(W * g_max * H));
  ws.a_im.resize(static_cast<std::size_t>(W * g_max * H));
  ws.b_re.resize(static_cast<std::size_t>(H * g_max * Wh));
  ws.b_im.resize(static_cast<std::size_t>(H * g_max * Wh));
  for (index_t s0 = 0; s0 < count; s0 += g_max) {
    const index_t g = std::min(g_max, count - s0);
    const index_t acols = g * H;
    // A[w, s*H + h] = x[s][h][w]; inner loop writes contiguous h-runs, the
    // strided reads stay cache-resident across the w sweep.
    for (index_t s = 0; s < g; ++s) {
      const S* xs = x + (s0 + s) * H * W;
      for (index_t w = 0; w < W; ++w) {
        S* __restrict dst = ws.a_re.data() + w * acols + s * H;
        const S* __restrict src = xs + w;
        for (index_t h = 0; h < H; ++h) dst[h] = src[h * W];
      }
    }
    std::fill(ws.a_im.begin(), ws.a_im.begin() + static_cast<std::ptrdiff_t>(W * acols), S(0));
    fft_rows(pw, ws.a_re.data(), ws.a_im.data(), acols, false, ws);
    // B[h, s*Wh + v] = A[v, s*H + h] for v in [0, Wh)
    const index_t bcols = g * Wh;
    for (index_t s = 0; s < g; ++s)
      for (index_t h = 0; h < H; ++h) {
        S* __restrict br = ws.b_re.data() + h * bcols + s * Wh;
        S* __restrict bi = ws.b_im.data() + h * bcols + s * Wh;
        const S* __restrict ar = ws.a_re.data() + s * H + h;
        const S* __restrict ai = ws.a_im.data() + s * H + h;
        for (index_t v = 0; v < Wh; ++v) {
          br[v] = ar[v * acols];
          bi[v] = ai[v * acols];
        }
      }
    fft_rows(ph, ws.b_re.data(), ws.b_im.data(), bcols, false, ws);
    for (index_t s = 0; s < g; ++s) {
      S* dre = re + (s0 + s) * H * Wh;
      S* dim = im + (s0 + s) * H * Wh;
      for (index_t h = 0; h < H; ++h) {
        std::copy_n(ws.b_re.data() + h * bcols + s * Wh, Wh, dre + h * Wh);
        std::copy_n(ws.b_im.data() + h * bcols + s * Wh, Wh, dim + h * Wh);
      }
    }
  }
}

// Inverse of rfft2_many under Hermitian extension of the stored half plane,
// times `scale`. The output is the real part of the complex inverse; the
// anti-Hermitian content of the v=0 / v=W/2 columns cannot reach it, so those
// columns are symmetrized up front and the leftover imaginary residue is a
// pure rounding probe, reported relative to the slice magnitude.
template <typename S>
void irfft2_many(const S* re, const S* im, index_t count, index_t H, index_t W, S scale, S* y,
                 Workspace2d<S>& ws, S* max_resid_rel) {
  const index_t Wh = W / 2 + 1;
  const Plan<S>& pw = plan<S>(W);
  const Plan<S>& ph = plan<S>(H);
  const index_t g_max = detail2d::group_size(count, H * W);
  ws.b_re.resize(static_cast<std::size_t>(H * g_max * Wh));
  ws.b_im.resize(static_cast<std::size_t>(H * g_max * Wh));
  ws.a_re.resize(static_cast<std::size_t>(W * g_max * H));
  ws.a_im.resize(static_cast<std::size_t>(W * g_max * H));
  S max_im = 0, max_re = 0;
  for (index_t s0 = 0; s0 < count; s0 += g_max) {
    const index_t g = std::min(g_max, count - s0);
    const index_t bcols = g * Wh;
    // load spectra: B[h, s*Wh + v]
    for (index_t s = 0; s < g; ++s) {
      const S* sre = re + (s0 + s) * H * Wh;
      const S* sim = im + (s0 + s) * H * Wh;
      for (index_t h = 0; h < H; ++h) {
        std::copy_n(sre + h * Wh, Wh, ws.b_re.data() + h * bcols + s * Wh);
        std::copy_n(sim + h * Wh, Wh, ws.b_im.data() + h * bcols + s * Wh);
      }
    }
    // symmetrize the edge columns (v = 0 and, for even W, v = W/2)
    for (index_t s = 0; s < g; ++s) {
      for (index_t v = 0; v < Wh; ++v) {
        const bool edge = (v == 0) || (W % 2 == 0 && v == Wh - 1);
        if (!edge) continue;
        S* br = ws.b_re.data() + s * Wh + v;
        S* bi = ws.b_im.data() + s * Wh + v;
        bi[0] = S(0);
        if (H % 2 == 0 && H > 1) bi[(H / 2) * bcols] = S(0);
        for (index_t u = 1; 2 * u < H; ++u) {
          const S hr = (br[u * bcols] + br[(H - u) * bcols]) * S(0.5);
          const S hi = (bi[u * bcols] - bi[(H - u) * bcols]) * S(0.5);
          br[u * bcols] = hr;
          bi[u * bcols] = hi;
          br[(H - u) * bcols] = hr;
          bi[(H - u) * bcols] = -hi;
        }
      }
    }
    fft_rows(ph, ws.b_re.data(), ws.b_im.data(), bcols, true, ws);
    // A[v, s*H + h] = B[h, s*Wh + v], Hermitian-extended to v in [0, W);
    // h-inner keeps the writes contiguous.
    const index_t acols = g * H;
    for (index_t s = 0; s < g; ++s)
      for (index_t v = 0; v < Wh; ++v) {
        const S* __restrict br = ws.b_re.data() + s * Wh + v;
        const S* __restrict bi = ws.b_im.data() + s * Wh + v;
        S* __restrict ar = ws.a_re.data() + v * acols + s * H;
        S* __restrict ai = ws.a_im.data() + v * acols + s * H;
        for (index_t h = 0; h < H; ++h) {
          ar[h] = br[h * bcols];
          ai[h] = bi[h * bcols];
        }
        if (v != 0 && v != W - v) {
          S* __restrict mr = ws.a_re.data() + (W - v) * acols + s * H;
          S* __restrict mi = ws.a_im.data() + (W - v) * acols + s * H;
          for (index_t h = 0; h < H; ++h) {
            mr[h] = ar[h];
            mi[h] = -ai[h];
          }
        }
      }
    fft_rows(pw, ws.a_re.data(), ws.a_im.data(), acols, true, ws);
    // y[s][h][w] = Re(A[w, s*H + h]) * scale; imag part is the residue probe
    for (index_t s = 0; s < g; ++s) {
      S* ys = y + (s0 + s) * H * W;
      for (index_t h = 0; h < H; ++h) {
        S* __restrict dst = ys + h * W;
        const S* __restrict src = ws.a_re.data() + s * H + h;
        for (index_t w = 0; w < W; ++w) dst[w] = src[w * acols] * scale;
      }
    }
    if (max_resid_rel) {
      const index_t n = W * acols;
      max_im = std::max(max_im,
                        Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>(ws.a_im.data(), n)
                            .abs()
                            .maxCoeff());
      max_re = std::max(max_re,
                        Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>(ws.a_re.data(), n)
                            .abs()
                            .maxCoeff());
    }
  }
  if (max_resid_rel) *max_resid_rel = max_im / std::max(max_re, S(1));
}

// Single-slice conveniences.
template <typename S>
void rfft2_slice(const S* x, index_t H, index_t W, S* re, S* im, Workspace2d<S>& ws) {
  rfft2_many(x, 1, H, W, re, im, ws);
}

template <typename S>
void irfft2_slice(const S* re, const S* im, index_t H, index_t W, S scale, S* y,
                  Workspace2d<S>& ws, S* max_resid_rel) {
  irfft2_many(re, im, 1, H, W, scale, y, ws, max_resid_rel);
}

}  // namespace fft
}  // namespace sfus
