#pragma once

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "sfusnet/parallel.hpp"
#include "sfusnet/tensor.hpp"

namespace sfus {

enum class Mode { kTrain, kEval };

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using ColMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

namespace detail {

inline index_t conv_out_extent(index_t in, index_t k, index_t stride, index_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Valid output-x range [lo, hi) for a kernel column kx, so interior runs can
// copy without per-element bounds checks.
inline void conv_x_range(index_t W, index_t Wo, index_t kx, index_t stride, index_t pad,
                         index_t& lo, index_t& hi) {
  // need 0 <= ox*stride - pad + kx < W
  const index_t off = pad - kx;
  lo = off <= 0 ? 0 : (off + stride - 1) / stride;
  const index_t last = W - 1 + off;  // largest ox*stride allowed
  hi = last < 0 ? 0 : std::min(Wo, last / stride + 1);
  if (hi < lo) hi = lo;
}

// Patch matrix rows for one sample written into a batch-wide row-major
// buffer: row (c*k+ky)*k+kx, columns [col0, col0 + Ho*Wo) of `ld` total.
// Interior spans are contiguous copies when stride == 1.
template <typename S>
void im2col_slice(const S* x, index_t C, index_t H, index_t W, index_t k, index_t stride,
                  index_t pad, index_t Ho, index_t Wo, S* cols, index_t ld, index_t col0) {
  index_t r = 0;
  for (index_t c = 0; c < C; ++c) {
    const S* xc = x + c * H * W;
    for (index_t ky = 0; ky < k; ++ky) {
      for (index_t kx = 0; kx < k; ++kx, ++r) {
        index_t lo, hi;
        conv_x_range(W, Wo, kx, stride, pad, lo, hi);
        S* row = cols + r * ld + col0;
        for (index_t oy = 0; oy < Ho; ++oy) {
          const index_t iy = oy * stride - pad + ky;
          S* __restrict dst = row + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::fill_n(dst, Wo, S(0));
            continue;
          }
          std::fill_n(dst, lo, S(0));
          std::fill_n(dst + hi, Wo - hi, S(0));
          const S* __restrict src = xc + iy * W + (lo * stride - pad + kx);
          if (stride == 1) {
            std::copy_n(src, hi - lo, dst + lo);
          } else {
            for (index_t i = 0; i < hi - lo; ++i) dst[lo + i] = src[i * stride];
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col_slice.
template <typename S>
void col2im_add_slice(const S* cols, index_t C, index_t H, index_t W, index_t k, index_t stride,
                      index_t pad, index_t Ho, index_t Wo, S* dx, index_t ld, index_t col0) {
  index_t r = 0;
  for (index_t c = 0; c < C; ++c) {
    S* xc = dx + c * H * W;
    for (index_t ky = 0; ky < k; ++ky) {
      for (index_t kx = 0; kx < k; ++kx, ++r) {
        index_t lo, hi;
        conv_x_range(W, Wo, kx, stride, pad, lo, hi);
        const S* row = cols + r * ld + col0;
        for (index_t oy = 0; oy < Ho; ++oy) {
          const index_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          const S* __restrict src = row + oy * Wo + lo;
          S* __restrict dst = xc + iy * W + (lo * stride - pad + kx);
          if (stride == 1) {
            for (index_t i = 0; i < hi - lo; ++i) dst[i] += src[i];
          } else {
            for (index_t i = 0; i < hi - lo; ++i) dst[i * stride] += src[i];
          }
        }
      }
    }
  }
}

inline index_t chunk_count(index_t n) {
  return std::min<index_t>(ThreadPool::instance().threads(), std::max<index_t>(n, 1));
}

// Grow-only scratch for the batched im2col buffers; conv ops run on the
// graph-building thread only.
template <typename S>
std::vector<S>& conv_scratch(int slot) {
  static thread_local std::vector<S> bufs[2];
  return bufs[slot];
}

}  // namespace detail

// 2-D cross-correlation (deep-learning convolution), zero padding, square
// kernel. Differentiable w.r.t. input, weight and bias.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 index_t stride = 1, index_t padding = 0) {
  SFUS_CHECK_SHAPE(input.ndim() == 4, "conv2d input must be NxCxHxW, got "
                                          << shape_str(input.shape()));
  SFUS_CHECK_SHAPE(weight.ndim() == 4 && weight.dim(2) == weight.dim(3),
                   "conv2d weight must be OxIxkxk, got " << shape_str(weight.shape()));
  const index_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const index_t Co = weight.dim(0), Ci = weight.dim(1), k = weight.dim(2);
  SFUS_CHECK_SHAPE(Ci == C, "conv2d channel mismatch: input C=" << C << ", weight expects " << Ci);
  SFUS_CHECK_SHAPE(bias.ndim() == 1 && bias.dim(0) == Co,
                   "conv2d bias must have " << Co << " entries");
  SFUS_CHECK(stride >= 1 && padding >= 0, "conv2d: invalid stride/padding");
  SFUS_CHECK_SHAPE(k <= H + 2 * padding && k <= W + 2 * padding,
                   "conv2d kernel " << k << " exceeds padded input " << H + 2 * padding << "x"
                                    << W + 2 * padding);

  const index_t Ho = detail::conv_out_extent(H, k, stride, padding);
  const index_t Wo = detail::conv_out_extent(W, k, stride, padding);
  const index_t ckk = C * k * k, hw_out = Ho * Wo;
  const bool pointwise = (k == 1 && stride == 1 && padding == 0);

  // Pointwise convs run per sample on direct views. Larger kernels build one
  // whole-batch patch matrix and split the GEMM by column blocks; both
  // partitions keep every output element's accumulation order fixed.
  ArrayX<S> out(N * Co * hw_out);
  {
    Eigen::Map<const RowMat<S>> wmat(weight.data(), Co, ckk);
    Eigen::Map<const VecX<S>> bvec(bias.data(), Co);
    if (pointwise) {
      parallel_for(N, [&](index_t n0, index_t n1) {
        for (index_t n = n0; n < n1; ++n) {
          Eigen::Map<RowMat<S>> ymat(out.data() + n * Co * hw_out, Co, hw_out);
          Eigen::Map<const RowMat<S>> xmat(input.data() + n * C * H * W, C, H * W);
          ymat.noalias() = wmat * xmat;
          ymat.colwise() += bvec;
        }
      });
    } else {
      const index_t ncols = N * hw_out;
      std::vector<S>& cols_buf = detail::conv_scratch<S>(0);
      cols_buf.resize(static_cast<std::size_t>(ckk * ncols));
      parallel_for(N, [&](index_t n0, index_t n1) {
        for (index_t n = n0; n < n1; ++n)
          detail::im2col_slice(input.data() + n * C * H * W, C, H, W, k, stride, padding, Ho, Wo,
                               cols_buf.data(), ncols, n * hw_out);
      });
      Eigen::Map<const RowMat<S>> cols(cols_buf.data(), ckk, ncols);
      // out is (N, Co, hw_out) row-major; GEMM per column block, then copy
      // rows into the per-sample slices.
      parallel_for(ncols, [&](index_t c0, index_t c1) {
        RowMat<S> block = wmat * cols.middleCols(c0, c1 - c0);
        for (index_t a = c0; a < c1;) {
          const index_t n = a / hw_out, p0 = a % hw_out;
          const index_t len = std::min(c1 - a, hw_out - p0);
          for (index_t co = 0; co < Co; ++co)
            Eigen::Map<ArrayX<S>>(out.data() + (n * Co + co) * hw_out + p0, len) =
                Eigen::Map<const ArrayX<S>>(block.data() + co * (c1 - c0) + (a - c0), len) +
                bvec[co];
          a += len;
        }
      });
    }
  }

  const bool need_x = input.requires_grad(), need_w = weight.requires_grad(),
             need_b = bias.requires_grad();
  return Tensor<S>::make_op(
      {N, Co, Ho, Wo}, std::move(out), "conv2d", {input, weight, bias},
      [=](const ArrayX<S>& g) {
        std::vector<ArrayX<S>> res(3);
        Eigen::Map<const RowMat<S>> wmat(weight.data(), Co, ckk);
        if (need_x) res[0] = ArrayX<S>::Zero(N * C * H * W);
        const index_t nchunks = detail::chunk_count(N);
        std::vector<ArrayX<S>> gw_parts, gb_parts;
        if (need_w) gw_parts.assign(nchunks, ArrayX<S>::Zero(Co * ckk));
        if (need_b) gb_parts.assign(nchunks, ArrayX<S>::Zero(Co));

        if (pointwise) {
          ThreadPool::instance().run_chunked(
              N, nchunks, [&](index_t chunk, index_t n0, index_t n1) {
                for (index_t n = n0; n < n1; ++n) {
                  Eigen::Map<const RowMat<S>> gmat(g.data() + n * Co * hw_out, Co, hw_out);
                  Eigen::Map<const RowMat<S>> xmat(input.data() + n * C * H * W, C, H * W);
                  if (need_w) {
                    Eigen::Map<RowMat<S>> gw(gw_parts[chunk].data(), Co, ckk);
                    gw.noalias() += gmat * xmat.transpose();
                  }
                  if (need_x) {
                    Eigen::Map<RowMat<S>> gxmat(res[0].data() + n * C * H * W, C, H * W);
                    gxmat.noalias() = wmat.transpose() * gmat;
                  }
                  if (need_b) {
                    Eigen::Map<VecX<S>> gb(gb_parts[chunk].data(), Co);
                    gb.noalias() += gmat.rowwise().sum();
                  }
                }
              });
        } else {
          const index_t ncols = N * hw_out;
          std::vector<S>& cols_buf = detail::conv_scratch<S>(0);
          std::vector<S>& dcols_buf = detail::conv_scratch<S>(1);
          cols_buf.resize(static_cast<std::size_t>(ckk * ncols));
          if (need_x) dcols_buf.resize(static_cast<std::size_t>(ckk * ncols));
          parallel_for(N, [&](index_t n0, index_t n1) {
            for (index_t n = n0; n < n1; ++n)
              detail::im2col_slice(input.data() + n * C * H * W, C, H, W, k, stride, padding, Ho,
                                   Wo, cols_buf.data(), ncols, n * hw_out);
          });
          Eigen::Map<const RowMat<S>> cols(cols_buf.data(), ckk, ncols);
          ThreadPool::instance().run_chunked(
              ncols, nchunks, [&](index_t chunk, index_t c0, index_t c1) {
                // upstream gradient block in (Co x cols) layout
                RowMat<S> gblk(Co, c1 - c0);
                for (index_t a = c0; a < c1;) {
                  const index_t n = a / hw_out, p0 = a % hw_out;
                  const index_t len = std::min(c1 - a, hw_out - p0);
                  for (index_t co = 0; co < Co; ++co)
                    Eigen::Map<ArrayX<S>>(gblk.data() + co * (c1 - c0) + (a - c0), len) =
                        Eigen::Map<const ArrayX<S>>(g.data() + (n * Co + co) * hw_out + p0, len);
                  a += len;
                }
                if (need_w) {
                  Eigen::Map<RowMat<S>> gw(gw_parts[chunk].data(), Co, ckk);
                  gw.noalias() += gblk * cols.middleCols(c0, c1 - c0).transpose();
                }
                if (need_b) {
                  Eigen::Map<VecX<S>> gb(gb_parts[chunk].data(), Co);
                  gb.noalias() += gblk.rowwise().sum();
                }
                if (need_x) {
                  Eigen::Map<RowMat<S>> dcols(dcols_buf.data(), ckk, ncols);
                  dcols.middleCols(c0, c1 - c0).noalias() = wmat.transpose() * gblk;
                }
              });
          if (need_x) {
            parallel_for(N, [&](index_t n0, index_t n1) {
              for (index_t n = n0; n < n1; ++n)
                detail::col2im_add_slice(dcols_buf.data(), C, H, W, k, stride, padding, Ho, Wo,
                                         res[0].data() + n * C * H * W, ncols, n * hw_out);
            });
          }
        }
        std::vector<ArrayX<S>> out3(3);
        if (need_x) out3[0] = std::move(res[0]);
        if (need_w) {
          out3[1] = std::move(gw_parts[0]);
          for (index_t c = 1; c < nchunks; ++c) out3[1] += gw_parts[c];
        }
        if (need_b) {
          out3[2] = std::move(gb_parts[0]);
          for (index_t c = 1; c < nchunks; ++c) out3[2] += gb_parts[c];
        }
        return out3;
      });
}

// Plain quadruple-loop convolution, kept free of the im2col/GEMM path; used
// by the self-test and as a cross-check target.
template <typename S>
Tensor<S> conv2d_reference(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                           index_t stride = 1, index_t padding = 0) {
  const index_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const index_t Co = weight.dim(0), k = weight.dim(2);
  SFUS_CHECK_SHAPE(weight.dim(1) == C, "conv2d_reference channel mismatch");
  const index_t Ho = detail::conv_out_extent(H, k, stride, padding);
  const index_t Wo = detail::conv_out_extent(W, k, stride, padding);
  Tensor<S> out = Tensor<S>::zeros({N, Co, Ho, Wo});
  const S* x = input.data();
  const S* w = weight.data();
  S* y = out.data();
  for (index_t n = 0; n < N; ++n)
    for (index_t co = 0; co < Co; ++co)
      for (index_t oy = 0; oy < Ho; ++oy)
        for (index_t ox = 0; ox < Wo; ++ox) {
          S acc = bias.data()[co];
          for (index_t c = 0; c < C; ++c)
            for (index_t ky = 0; ky < k; ++ky)
              for (index_t kx = 0; kx < k; ++kx) {
                const index_t iy = oy * stride - padding + ky;
                const index_t ix = ox * stride - padding + kx;
                if (iy >= 0 && iy < H && ix >= 0 && ix < W)
                  acc += x[((n * C + c) * H + iy) * W + ix] * w[((co * C + c) * k + ky) * k + kx];
              }
          y[((n * Co + co) * Ho + oy) * Wo + ox] = acc;
        }
  return out;
}

// 2x2 max pooling, stride 2. Gradient routes to the argmax position; ties go
// to the first occurrence in row-major scan order.
template <typename S>
Tensor<S> maxpool2d(const Tensor<S>& input) {
  SFUS_CHECK_SHAPE(input.ndim() == 4, "maxpool2d input must be NxCxHxW");
  const index_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  SFUS_CHECK_SHAPE(H % 2 == 0 && W % 2 == 0,
                   "maxpool2d requires even extents, got " << H << "x" << W);
  const index_t Ho = H / 2, Wo = W / 2;

  ArrayX<S> out(N * C * Ho * Wo);
  auto argmax = std::make_shared<std::vector<index_t>>(N * C * Ho * Wo);
  const S* x = input.data();
  parallel_for(N * C, [&](index_t s0, index_t s1) {
    for (index_t s = s0; s < s1; ++s) {
      const S* xs = x + s * H * W;
      S* ys = out.data() + s * Ho * Wo;
      index_t* as = argmax->data() + s * Ho * Wo;
      for (index_t oy = 0; oy < Ho; ++oy)
        for (index_t ox = 0; ox < Wo; ++ox) {
          index_t best = (2 * oy) * W + 2 * ox;
          S best_v = xs[best];
          const index_t cands[3] = {(2 * oy) * W + 2 * ox + 1, (2 * oy + 1) * W + 2 * ox,
                                    (2 * oy + 1) * W + 2 * ox + 1};
          for (index_t cand : cands) {
            if (xs[cand] > best_v) {
              best_v = xs[cand];
              best = cand;
            }
          }
          ys[oy * Wo + ox] = best_v;
          as[oy * Wo + ox] = s * H * W + best;
        }
    }
  });

  return Tensor<S>::make_op({N, C, Ho, Wo}, std::move(out), "maxpool2d", {input},
                            [=](const ArrayX<S>& g) {
                              ArrayX<S> gx = ArrayX<S>::Zero(N * C * H * W);
                              parallel_for(N * C, [&](index_t s0, index_t s1) {
                                for (index_t s = s0; s < s1; ++s)
                                  for (index_t i = s * Ho * Wo; i < (s + 1) * Ho * Wo; ++i)
                                    gx[(*argmax)[i]] += g[i];
                              });
                              return std::vector<ArrayX<S>>{std::move(gx)};
                            });
}

template <typename S>
struct RunningStats {
  ArrayX<S> mean;  // per channel
  ArrayX<S> var;
  index_t tracked = 0;

  static RunningStats fresh(index_t channels) {
    RunningStats s;
    s.mean = ArrayX<S>::Zero(channels);
    s.var = ArrayX<S>::Ones(channels);
    return s;
  }
};

// Batch normalization over N,H,W per channel. Train mode normalizes by batch
// statistics (biased variance) and updates running stats with an exponential
// moving average (unbiased variance, momentum weighting the new batch); eval
// mode uses the running stats and requires at least one tracked batch.
template <typename S>
Tensor<S> batchnorm2d(const Tensor<S>& input, const Tensor<S>& gamma, const Tensor<S>& beta,
                      RunningStats<S>& stats, Mode mode, S momentum = S(0.1), S eps = S(1e-5)) {
  SFUS_CHECK_SHAPE(input.ndim() == 4, "batchnorm2d input must be NxCxHxW");
  const index_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  SFUS_CHECK_SHAPE(gamma.ndim() == 1 && gamma.dim(0) == C && beta.ndim() == 1 && beta.dim(0) == C,
                   "batchnorm2d gamma/beta must have " << C << " entries");
  SFUS_CHECK_SHAPE(stats.mean.size() == C && stats.var.size() == C,
                   "batchnorm2d running stats sized for " << stats.mean.size()
                                                          << " channels, input has " << C);
  const index_t HW = H * W, M = N * HW;

  ArrayX<S> mean(C), inv_std(C);
  if (mode == Mode::kTrain) {
    SFUS_CHECK(M >= 2, "batchnorm2d train mode needs at least 2 values per channel, got " << M);
    parallel_for(C, [&](index_t c0, index_t c1) {
      for (index_t c = c0; c < c1; ++c) {
        S sum = 0;
        for (index_t n = 0; n < N; ++n)
          sum += Eigen::Map<const ArrayX<S>>(input.data() + (n * C + c) * HW, HW).sum();
        const S m = sum / S(M);
        S sq = 0;
        for (index_t n = 0; n < N; ++n) {
          auto seg = Eigen::Map<const ArrayX<S>>(input.data() + (n * C + c) * HW, HW);
          sq += (seg - m).square().sum();
        }
        const S var_biased = sq / S(M);
        mean[c] = m;
        inv_std[c] = S(1) / std::sqrt(var_biased + eps);
        const S var_unbiased = sq / S(M - 1);
        stats.mean[c] = (S(1) - momentum) * stats.mean[c] + momentum * m;
        stats.var[c] = (S(1) - momentum) * stats.var[c] + momentum * var_unbiased;
      }
    });
    stats.tracked += 1;
  } else {
    SFUS_CHECK(stats.tracked > 0,
               "batchnorm2d eval mode before any running statistics were tracked");
    mean = stats.mean;
    inv_std = (stats.var + eps).rsqrt();
  }

  ArrayX<S> out(input.numel());
  parallel_for(N * C, [&](index_t s0, index_t s1) {
    for (index_t s = s0; s < s1; ++s) {
      const index_t c = s % C;
      auto xs = Eigen::Map<const ArrayX<S>>(input.data() + s * HW, HW);
      Eigen::Map<ArrayX<S>>(out.data() + s * HW, HW) =
          (xs - mean[c]) * inv_std[c] * gamma.data()[c] + beta.data()[c];
    }
  });

  const bool train = (mode == Mode::kTrain);
  const bool need_x = input.requires_grad(), need_g = gamma.requires_grad(),
             need_b = beta.requires_grad();
  return Tensor<S>::make_op(
      {N, C, H, W}, std::move(out), "batchnorm2d", {input, gamma, beta},
      [=](const ArrayX<S>& g) {
        std::vector<ArrayX<S>> res(3);
        if (need_x) res[0].resize(input.numel());
        if (need_g) res[1] = ArrayX<S>::Zero(C);
        if (need_b) res[2] = ArrayX<S>::Zero(C);
        parallel_for(C, [&](index_t c0, index_t c1) {
          ArrayX<S> xhat(HW), gs(HW);
          for (index_t c = c0; c < c1; ++c) {
            S s1 = 0, s2 = 0;
            for (index_t n = 0; n < N; ++n) {
              const index_t off = (n * C + c) * HW;
              auto xs = Eigen::Map<const ArrayX<S>>(input.data() + off, HW);
              auto gg = Eigen::Map<const ArrayX<S>>(g.data() + off, HW);
              s1 += gg.sum();
              s2 += (gg * (xs - mean[c]) * inv_std[c]).sum();
            }
            if (need_g) res[1][c] = s2;
            if (need_b) res[2][c] = s1;
            if (need_x) {
              const S gam = gamma.data()[c];
              for (index_t n = 0; n < N; ++n) {
                const index_t off = (n * C + c) * HW;
                auto xs = Eigen::Map<const ArrayX<S>>(input.data() + off, HW);
                auto gg = Eigen::Map<const ArrayX<S>>(g.data() + off, HW);
                auto dst = Eigen::Map<ArrayX<S>>(res[0].data() + off, HW);
                if (train) {
                  dst = gam * inv_std[c] *
                        (gg - s1 / S(M) - (xs - mean[c]) * inv_std[c] * (s2 / S(M)));
                } else {
                  dst = gg * gam * inv_std[c];
                }
              }
            }
          }
        });
        return res;
      });
}

// Exact-erf GELU: 0.5 * x * (1 + erf(x / sqrt(2))).
template <typename S>
Tensor<S> gelu(const Tensor<S>& input) {
  constexpr S kInvSqrt2 = S(0.7071067811865475244);
  constexpr S kInvSqrt2Pi = S(0.3989422804014326779);
  const index_t n = input.numel();
  ArrayX<S> out(n);
  parallel_elems(n, [&](index_t i0, index_t i1) {
    auto xs = input.array().segment(i0, i1 - i0);
    out.segment(i0, i1 - i0) = S(0.5) * xs * (S(1) + (xs * kInvSqrt2).erf());
  });
  return Tensor<S>::make_op(
      input.shape(), std::move(out), "gelu", {input}, [=](const ArrayX<S>& g) {
        ArrayX<S> gx(n);
        parallel_elems(n, [&](index_t i0, index_t i1) {
          auto xs = input.array().segment(i0, i1 - i0);
          auto gs = g.segment(i0, i1 - i0);
          gx.segment(i0, i1 - i0) =
              gs * (S(0.5) * (S(1) + (xs * kInvSqrt2).erf()) +
                    xs * kInvSqrt2Pi * (S(-0.5) * xs.square()).exp());
        });
        return std::vector<ArrayX<S>>{std::move(gx)};
      });
}

// Affine map y = x W^T + b with x: NxF, W: KxF, b: K.
template <typename S>
Tensor<S> linear(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias) {
  SFUS_CHECK_SHAPE(input.ndim() == 2 && weight.ndim() == 2, "linear expects 2-D input and weight");
  const index_t N = input.dim(0), F = input.dim(1), K = weight.dim(0);
  SFUS_CHECK_SHAPE(weight.dim(1) == F,
                   "linear feature mismatch: input F=" << F << ", weight expects " << weight.dim(1));
  SFUS_CHECK_SHAPE(bias.ndim() == 1 && bias.dim(0) == K, "linear bias must have " << K << " entries");

  ArrayX<S> out(N * K);
  {
    Eigen::Map<const RowMat<S>> xm(input.data(), N, F);
    Eigen::Map<const RowMat<S>> wm(weight.data(), K, F);
    Eigen::Map<RowMat<S>> ym(out.data(), N, K);
    ym.noalias() = xm * wm.transpose();
    ym.rowwise() += Eigen::Map<const VecX<S>>(bias.data(), K).transpose();
  }
  const bool need_x = input.requires_grad(), need_w = weight.requires_grad(),
             need_b = bias.requires_grad();
  return Tensor<S>::make_op(
      {N, K}, std::move(out), "linear", {input, weight, bias}, [=](const ArrayX<S>& g) {
        std::vector<ArrayX<S>> res(3);
        Eigen::Map<const RowMat<S>> gm(g.data(), N, K);
        Eigen::Map<const RowMat<S>> xm(input.data(), N, F);
        Eigen::Map<const RowMat<S>> wm(weight.data(), K, F);
        if (need_x) {
          res[0].resize(N * F);
          Eigen::Map<RowMat<S>>(res[0].data(), N, F).noalias() = gm * wm;
        }
        if (need_w) {
          res[1].resize(K * F);
          Eigen::Map<RowMat<S>>(res[1].data(), K, F).noalias() = gm.transpose() * xm;
        }
        if (need_b) {
          res[2].resize(K);
          Eigen::Map<VecX<S>>(res[2].data(), K) = gm.colwise().sum().transpose();
        }
        return res;
      });
}

// Per-channel spatial mean: NxCxHxW -> NxC.
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& input) {
  SFUS_CHECK_SHAPE(input.ndim() == 4, "global_avg_pool input must be NxCxHxW");
  const index_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  SFUS_CHECK_SHAPE(HW >= 1, "global_avg_pool needs nonempty spatial extent");
  ArrayX<S> out(N * C);
  parallel_for(N * C, [&](index_t s0, index_t s1) {
    for (index_t s = s0; s < s1; ++s)
      out[s] = Eigen::Map<const ArrayX<S>>(input.data() + s * HW, HW).mean();
  });
  return Tensor<S>::make_op({N, C}, std::move(out), "global_avg_pool", {input},
                            [=](const ArrayX<S>& g) {
                              ArrayX<S> gx(N * C * HW);
                              parallel_for(N * C, [&](index_t s0, index_t s1) {
                                for (index_t s = s0; s < s1; ++s)
                                  Eigen::Map<ArrayX<S>>(gx.data() + s * HW, HW)
                                      .setConstant(g[s] / S(HW));
                              });
                              return std::vector<ArrayX<S>>{std::move(gx)};
                            });
}

// Mean over the batch of -log softmax(logits)[label], max-stabilized.
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, const std::vector<index_t>& labels) {
  SFUS_CHECK_SHAPE(logits.ndim() == 2, "softmax_cross_entropy expects NxK logits");
  const index_t N = logits.dim(0), K = logits.dim(1);
  SFUS_CHECK_SHAPE(static_cast<index_t>(labels.size()) == N,
                   "softmax_cross_entropy: " << labels.size() << " labels for " << N << " rows");
  for (index_t lab : labels)
    SFUS_CHECK(lab >= 0 && lab < K, "softmax_cross_entropy label " << lab << " outside [0," << K << ")");

  auto probs = std::make_shared<ArrayX<S>>(N * K);
  double loss = 0;
  for (index_t n = 0; n < N; ++n) {
    auto row = Eigen::Map<const ArrayX<S>>(logits.data() + n * K, K);
    auto p = Eigen::Map<ArrayX<S>>(probs->data() + n * K, K);
    const S m = row.maxCoeff();
    p = (row - m).exp();
    const S z = p.sum();
    p /= z;
    loss -= static_cast<double>(row[labels[static_cast<std::size_t>(n)]] - m) -
            std::log(static_cast<double>(z));
  }
  ArrayX<S> out(1);
  out[0] = static_cast<S>(loss / static_cast<double>(N));

  auto labels_copy = std::make_shared<std::vector<index_t>>(labels);
  return Tensor<S>::make_op(
      {1}, std::move(out), "softmax_cross_entropy", {logits}, [=](const ArrayX<S>& g) {
        ArrayX<S> gx = *probs;
        for (index_t n = 0; n < N; ++n)
          gx[n * K + (*labels_copy)[static_cast<std::size_t>(n)]] -= S(1);
        gx *= g[0] / S(N);
        return std::vector<ArrayX<S>>{std::move(gx)};
      });
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  SFUS_CHECK_SHAPE(a.shape() == b.shape(), "add shape mismatch: " << shape_str(a.shape()) << " vs "
                                                                  << shape_str(b.shape()));
  ArrayX<S> out = a.array() + b.array();
  const bool need_a = a.requires_grad(), need_b = b.requires_grad();
  return Tensor<S>::make_op(a.shape(), std::move(out), "add", {a, b}, [=](const ArrayX<S>& g) {
    std::vector<ArrayX<S>> res(2);
    if (need_a) res[0] = g;
    if (need_b) res[1] = g;
    return res;
  });
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  ArrayX<S> out(1);
  out[0] = x.array().sum();
  const index_t n = x.numel();
  return Tensor<S>::make_op({1}, std::move(out), "sum_all", {x}, [=](const ArrayX<S>& g) {
    return std::vector<ArrayX<S>>{ArrayX<S>::Constant(n, g[0])};
  });
}

// Channel slice [c0, c1) of an NxCxHxW tensor.
template <typename S>
Tensor<S> slice_channels(const Tensor<S>& x, index_t c0, index_t c1) {
  SFUS_CHECK_SHAPE(x.ndim() == 4, "slice_channels input must be NxCxHxW");
  const index_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  SFUS_CHECK_SHAPE(0 <= c0 && c0 < c1 && c1 <= C, "slice_channels range [" << c0 << "," << c1
                                                                           << ") outside 0.." << C);
  const index_t Cs = c1 - c0;
  ArrayX<S> out(N * Cs * HW);
  for (index_t n = 0; n < N; ++n)
    out.segment(n * Cs * HW, Cs * HW) = x.array().segment((n * C + c0) * HW, Cs * HW);
  return Tensor<S>::make_op({N, Cs, x.dim(2), x.dim(3)}, std::move(out), "slice_channels", {x},
                            [=](const ArrayX<S>& g) {
                              ArrayX<S> gx = ArrayX<S>::Zero(N * C * HW);
                              for (index_t n = 0; n < N; ++n)
                                gx.segment((n * C + c0) * HW, Cs * HW) = g.segment(n * Cs * HW, Cs * HW);
                              return std::vector<ArrayX<S>>{std::move(gx)};
                            });
}

// Concatenate along the channel axis.
template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  SFUS_CHECK_SHAPE(a.ndim() == 4 && b.ndim() == 4, "concat_channels inputs must be NxCxHxW");
  SFUS_CHECK_SHAPE(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
                   "concat_channels mismatch: " << shape_str(a.shape()) << " vs "
                                                << shape_str(b.shape()));
  const index_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
  ArrayX<S> out(N * (Ca + Cb) * HW);
  for (index_t n = 0; n < N; ++n) {
    out.segment(n * (Ca + Cb) * HW, Ca * HW) = a.array().segment(n * Ca * HW, Ca * HW);
    out.segment(n * (Ca + Cb) * HW + Ca * HW, Cb * HW) = b.array().segment(n * Cb * HW, Cb * HW);
  }
  const bool need_a = a.requires_grad(), need_b = b.requires_grad();
  return Tensor<S>::make_op({N, Ca + Cb, a.dim(2), a.dim(3)}, std::move(out), "concat_channels",
                            {a, b}, [=](const ArrayX<S>& g) {
                              std::vector<ArrayX<S>> res(2);
                              if (need_a) {
                                res[0].resize(N * Ca * HW);
                                for (index_t n = 0; n < N; ++n)
                                  res[0].segment(n * Ca * HW, Ca * HW) =
                                      g.segment(n * (Ca + Cb) * HW, Ca * HW);
                              }
                              if (need_b) {
                                res[1].resize(N * Cb * HW);
                                for (index_t n = 0; n < N; ++n)
                                  res[1].segment(n * Cb * HW, Cb * HW) =
                                      g.segment(n * (Ca + Cb) * HW + Ca * HW, Cb * HW);
                              }
                              return res;
                            });
}

}  // namespace sfus
