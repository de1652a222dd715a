#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "sfusnet/fft.hpp"
#include "sfusnet/ops.hpp"
#include "sfusnet/parallel.hpp"
#include "sfusnet/tensor.hpp"

namespace sfus {

// Self-test corruption hook: multiplies the irfft2 output scale. Anything
// other than 1.0 must make the FFT round-trip checks fail.
inline double& irfft_scale_hook() {
  static double scale = 1.0;
  return scale;
}

namespace detail {

inline bool fft_extent_ok(index_t e) { return e == 1 || e % 2 == 0; }

template <typename S>
constexpr S irfft_residual_tol() {
  return std::is_same_v<S, double> ? S(1e-9) : S(2e-3);
}

}  // namespace detail

// Half-plane spectrum of a real N x C x H x W tensor: real/imaginary parts
// stored as N x C x H x (W/2+1) tensors plus the original spatial width,
// which floor division makes unrecoverable from the stored width alone.
template <typename S = double>
struct ComplexSpectrum {
  Tensor<S> real;
  Tensor<S> imag;
  index_t spatial_width = 0;

  index_t batch() const { return real.dim(0); }
  index_t channels() const { return real.dim(1); }
  index_t height() const { return real.dim(2); }
  index_t stored_width() const { return real.dim(3); }
};

// Forward real FFT over the last two axes with real/imaginary parts stacked
// as channels: N x C x H x W -> N x 2C x H x (W/2+1), channels [Re..., Im...].
// Unnormalized: the (0,0) bin equals the sum over the slice.
template <typename S>
Tensor<S> rfft2_packed(const Tensor<S>& input) {
  SFUS_CHECK_SHAPE(input.ndim() == 4, "rfft2 input must be NxCxHxW, got "
                                          << shape_str(input.shape()));
  const index_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  SFUS_CHECK_SHAPE(detail::fft_extent_ok(H) && detail::fft_extent_ok(W),
                   "rfft2 requires even (or unit) extents, got " << H << "x" << W);
  const index_t Wh = W / 2 + 1;
  fft::plan<S>(W);  // build plans outside the parallel region
  fft::plan<S>(H);

  ArrayX<S> out(N * 2 * C * H * Wh);
  parallel_for(N, [&](index_t n0, index_t n1) {
    fft::Workspace2d<S> ws;
    for (index_t n = n0; n < n1; ++n) {
      S* re = out.data() + ((n * 2 * C) * H) * Wh;
      S* im = out.data() + ((n * 2 * C + C) * H) * Wh;
      fft::rfft2_many(input.data() + n * C * H * W, C, H, W, re, im, ws);
    }
  });

  return Tensor<S>::make_op(
      {N, 2 * C, H, Wh}, std::move(out), "rfft2", {input}, [=](const ArrayX<S>& g) {
        // d/dx of sum_k <g_k, X_k> over stored bins: inverse transform with
        // interior columns halved (they represent two Hermitian bins each).
        ArrayX<S> gx(N * C * H * W);
        parallel_for(N, [&](index_t n0, index_t n1) {
          fft::Workspace2d<S> ws;
          ArrayX<S> wre(C * H * Wh), wim(C * H * Wh);
          for (index_t n = n0; n < n1; ++n) {
            const S* gre = g.data() + ((n * 2 * C) * H) * Wh;
            const S* gim = g.data() + ((n * 2 * C + C) * H) * Wh;
            for (index_t r = 0; r < C * H; ++r) {
              for (index_t v = 0; v < Wh; ++v) {
                const bool edge = (v == 0) || (W % 2 == 0 && v == Wh - 1);
                const S w = edge ? S(1) : S(0.5);
                wre[r * Wh + v] = gre[r * Wh + v] * w;
                wim[r * Wh + v] = gim[r * Wh + v] * w;
              }
            }
            fft::irfft2_many(wre.data(), wim.data(), C, H, W, S(1), gx.data() + n * C * H * W,
                             ws, static_cast<S*>(nullptr));
          }
        });
        return std::vector<ArrayX<S>>{std::move(gx)};
      });
}

// Inverse of rfft2_packed, scaled by 1/(H*W) so the round trip is identity.
// The imaginary residue left after the Hermitian inverse is asserted small.
template <typename S>
Tensor<S> irfft2_packed(const Tensor<S>& packed, index_t spatial_width) {
  SFUS_CHECK_SHAPE(packed.ndim() == 4, "irfft2 input must be Nx2CxHxWh");
  SFUS_CHECK_SHAPE(packed.dim(1) % 2 == 0,
                   "irfft2 packed channel count must be even, got " << packed.dim(1));
  const index_t N = packed.dim(0), C = packed.dim(1) / 2, H = packed.dim(2), Wh = packed.dim(3);
  const index_t W = spatial_width;
  SFUS_CHECK_SHAPE(detail::fft_extent_ok(W) && W / 2 + 1 == Wh,
                   "irfft2 stored width " << Wh << " inconsistent with spatial width " << W);
  SFUS_CHECK_SHAPE(detail::fft_extent_ok(H), "irfft2 height must be even (or 1), got " << H);
  fft::plan<S>(W);
  fft::plan<S>(H);

  const S scale = static_cast<S>(irfft_scale_hook()) / static_cast<S>(H * W);
  ArrayX<S> out(N * C * H * W);
  const index_t nchunks = detail::chunk_count(N);
  std::vector<S> resid(nchunks, S(0));
  ThreadPool::instance().run_chunked(N, nchunks, [&](index_t chunk, index_t n0, index_t n1) {
    fft::Workspace2d<S> ws;
    for (index_t n = n0; n < n1; ++n) {
      const S* re = packed.data() + ((n * 2 * C) * H) * Wh;
      const S* im = packed.data() + ((n * 2 * C + C) * H) * Wh;
      S r = 0;
      fft::irfft2_many(re, im, C, H, W, scale, out.data() + n * C * H * W, ws, &r);
      resid[chunk] = std::max(resid[chunk], r);
    }
  });
  const S worst = *std::max_element(resid.begin(), resid.end());
  if (!(worst <= detail::irfft_residual_tol<S>()))
    SFUS_THROW(NumericError, "irfft2 imaginary residue " << worst << " exceeds tolerance "
                                                         << detail::irfft_residual_tol<S>());

  return Tensor<S>::make_op(
      {N, C, H, W}, std::move(out), "irfft2", {packed}, [=](const ArrayX<S>& g) {
        // Adjoint: forward transform of the output gradient, interior
        // columns doubled, all scaled by 1/(H*W).
        ArrayX<S> gp(N * 2 * C * H * Wh);
        const S inv = S(1) / static_cast<S>(H * W);
        parallel_for(N, [&](index_t n0, index_t n1) {
          fft::Workspace2d<S> ws;
          for (index_t n = n0; n < n1; ++n) {
            S* gre = gp.data() + ((n * 2 * C) * H) * Wh;
            S* gim = gp.data() + ((n * 2 * C + C) * H) * Wh;
            fft::rfft2_many(g.data() + n * C * H * W, C, H, W, gre, gim, ws);
            for (index_t r = 0; r < C * H; ++r) {
              for (index_t v = 0; v < Wh; ++v) {
                const bool edge = (v == 0) || (W % 2 == 0 && v == Wh - 1);
                const S w = (edge ? S(1) : S(2)) * inv;
                gre[r * Wh + v] *= w;
                gim[r * Wh + v] *= w;
              }
            }
          }
        });
        return std::vector<ArrayX<S>>{std::move(gp)};
      });
}

template <typename S>
ComplexSpectrum<S> rfft2(const Tensor<S>& input) {
  const index_t C = input.dim(1);
  Tensor<S> packed = rfft2_packed(input);
  ComplexSpectrum<S> spec;
  spec.real = slice_channels(packed, 0, C);
  spec.imag = slice_channels(packed, C, 2 * C);
  spec.spatial_width = input.dim(3);
  return spec;
}

// Channel layout [Re_0..Re_{C-1}, Im_0..Im_{C-1}].
template <typename S>
Tensor<S> pack_complex(const ComplexSpectrum<S>& spec) {
  SFUS_CHECK_SHAPE(spec.real.shape() == spec.imag.shape(),
                   "pack_complex real/imag shape mismatch");
  return concat_channels(spec.real, spec.imag);
}

template <typename S>
ComplexSpectrum<S> unpack_complex(const Tensor<S>& packed, index_t spatial_width) {
  SFUS_CHECK_SHAPE(packed.ndim() == 4 && packed.dim(1) % 2 == 0,
                   "unpack_complex needs an even channel count, got "
                       << shape_str(packed.shape()));
  SFUS_CHECK_SHAPE(spatial_width / 2 + 1 == packed.dim(3),
                   "unpack_complex stored width " << packed.dim(3)
                                                  << " inconsistent with spatial width "
                                                  << spatial_width);
  const index_t C = packed.dim(1) / 2;
  ComplexSpectrum<S> spec;
  spec.real = slice_channels(packed, 0, C);
  spec.imag = slice_channels(packed, C, 2 * C);
  spec.spatial_width = spatial_width;
  return spec;
}

template <typename S>
Tensor<S> irfft2(const ComplexSpectrum<S>& spec) {
  return irfft2_packed(pack_complex(spec), spec.spatial_width);
}

// Direct evaluation of the full 2-D DFT definition; quadratic in the pixel
// count, double-precision accumulation. Verification oracle only.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> naive_dft2(const Tensor<S>& input) {
  SFUS_CHECK_SHAPE(input.ndim() == 2, "naive_dft2 expects an HxW tensor");
  const index_t H = input.dim(0), W = input.dim(1);
  Tensor<S> re = Tensor<S>::zeros({H, W});
  Tensor<S> im = Tensor<S>::zeros({H, W});
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  for (index_t u = 0; u < H; ++u)
    for (index_t v = 0; v < W; ++v) {
      double acc_re = 0, acc_im = 0;
      for (index_t i = 0; i < H; ++i)
        for (index_t j = 0; j < W; ++j) {
          const double ang = -kTwoPi * (static_cast<double>(u * i) / static_cast<double>(H) +
                                        static_cast<double>(v * j) / static_cast<double>(W));
          const double x = static_cast<double>(input.data()[i * W + j]);
          acc_re += x * std::cos(ang);
          acc_im += x * std::sin(ang);
        }
      re.data()[u * W + v] = static_cast<S>(acc_re);
      im.data()[u * W + v] = static_cast<S>(acc_im);
    }
  return {std::move(re), std::move(im)};
}

}  // namespace sfus
