#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sfusnet/fft.hpp"
#include "sfusnet/image.hpp"
#include "sfusnet/rng.hpp"
#include "sfusnet/tensor.hpp"

namespace sfus {

// Pixels in [0,1], CHW layout, plus the class index and a provenance id.
struct LabeledImage {
  Tensor<double> pixels;  // 3xHxW
  index_t label = -1;
  std::string source_id;
};

struct NormalizationConstants {
  std::array<double, 3> mean{0.2394, 0.2421, 0.2381};
  std::array<double, 3> stddev{0.2173, 0.2177, 0.2155};

  void validate() const {
    for (double s : stddev) SFUS_CHECK(s > 0, "normalization std must be positive");
  }
};

inline Tensor<double> tensor_from_image(const ImageU8& img) {
  const index_t H = img.height, W = img.width, ch = img.channels;
  Tensor<double> t = Tensor<double>::zeros({3, H, W});
  for (index_t y = 0; y < H; ++y)
    for (index_t x = 0; x < W; ++x) {
      const std::uint8_t* px = &img.pixels[static_cast<std::size_t>((y * W + x) * ch)];
      double r, g, b;
      if (ch >= 3) {
        r = px[0] / 255.0;
        g = px[1] / 255.0;
        b = px[2] / 255.0;
      } else {
        r = g = b = px[0] / 255.0;  // gray (alpha, if any, dropped)
      }
      t.data()[0 * H * W + y * W + x] = r;
      t.data()[1 * H * W + y * W + x] = g;
      t.data()[2 * H * W + y * W + x] = b;
    }
  return t;
}

inline ImageU8 image_from_tensor(const Tensor<double>& t) {
  SFUS_CHECK_SHAPE(t.ndim() == 3 && t.dim(0) == 3, "image_from_tensor expects 3xHxW");
  const index_t H = t.dim(1), W = t.dim(2);
  ImageU8 img;
  img.width = W;
  img.height = H;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(H * W * 3));
  for (index_t c = 0; c < 3; ++c)
    for (index_t i = 0; i < H * W; ++i) {
      const double v = std::clamp(t.data()[c * H * W + i], 0.0, 1.0);
      img.pixels[static_cast<std::size_t>(i * 3 + c)] =
          static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return img;
}

// Bilinear resize, half-pixel centers (corner-aligned = false).
inline Tensor<double> resize_bilinear(const Tensor<double>& image, index_t target_h,
                                      index_t target_w) {
  SFUS_CHECK_SHAPE(image.ndim() == 3, "resize_bilinear expects CxHxW");
  const index_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  SFUS_CHECK_SHAPE(H >= 2 && W >= 2, "resize_bilinear needs extents >= 2, got " << H << "x" << W);
  SFUS_CHECK(target_h >= 1 && target_w >= 1, "resize target must be positive");
  Tensor<double> out = Tensor<double>::zeros({C, target_h, target_w});
  const double sy = static_cast<double>(H) / static_cast<double>(target_h);
  const double sx = static_cast<double>(W) / static_cast<double>(target_w);
  for (index_t c = 0; c < C; ++c) {
    const double* src = image.data() + c * H * W;
    double* dst = out.data() + c * target_h * target_w;
    for (index_t y = 0; y < target_h; ++y) {
      double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
      fy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
      const index_t y0 = static_cast<index_t>(fy);
      const index_t y1 = std::min(y0 + 1, H - 1);
      const double wy = fy - static_cast<double>(y0);
      for (index_t x = 0; x < target_w; ++x) {
        double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
        fx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
        const index_t x0 = static_cast<index_t>(fx);
        const index_t x1 = std::min(x0 + 1, W - 1);
        const double wx = fx - static_cast<double>(x0);
        dst[y * target_w + x] = (1 - wy) * ((1 - wx) * src[y0 * W + x0] + wx * src[y0 * W + x1]) +
                                wy * ((1 - wx) * src[y1 * W + x0] + wx * src[y1 * W + x1]);
      }
    }
  }
  return out;
}

// Per-channel (x - mean) / std.
inline Tensor<double> normalize(const Tensor<double>& image, const NormalizationConstants& c) {
  SFUS_CHECK_SHAPE(image.ndim() == 3 && image.dim(0) == 3, "normalize expects a 3xHxW image");
  c.validate();
  const index_t HW = image.dim(1) * image.dim(2);
  Tensor<double> out = Tensor<double>::zeros(image.shape());
  for (index_t ch = 0; ch < 3; ++ch)
    for (index_t i = 0; i < HW; ++i)
      out.data()[ch * HW + i] =
          (image.data()[ch * HW + i] - c.mean[static_cast<std::size_t>(ch)]) /
          c.stddev[static_cast<std::size_t>(ch)];
  return out;
}

// --- synthetic spectral dataset ------------------------------------------
//
// Class c is white noise band-pass filtered to the radial frequency band
// [c/8, (c+1)/8) in cycles/pixel, plus a shared low-contrast elliptical
// "node" blob so all classes carry the same spatial structure. The
// discriminative signal is purely spectral.

constexpr index_t kSynthClasses = 4;

inline std::pair<double, double> synth_band(index_t class_id) {
  return {static_cast<double>(class_id) * 0.125, static_cast<double>(class_id + 1) * 0.125};
}

inline LabeledImage synth_generate(index_t class_id, index_t size, std::uint64_t seed) {
  SFUS_CHECK(class_id >= 0 && class_id < kSynthClasses,
             "synth class_id must be in [0,4), got " << class_id);
  SFUS_CHECK(size >= 8 && size % 2 == 0, "synth size must be even and >= 8, got " << size);
  const index_t H = size, W = size, Wh = W / 2 + 1;
  Rng rng(seed_mix({0x5f3759df, seed, static_cast<std::uint64_t>(class_id)}));

  std::vector<double> noise(static_cast<std::size_t>(H * W));
  for (auto& v : noise) v = rng.normal();

  std::vector<double> re(static_cast<std::size_t>(H * Wh)), im(re.size());
  fft::Workspace2d<double> ws;
  fft::rfft2_slice(noise.data(), H, W, re.data(), im.data(), ws);

  const auto [lo, hi] = synth_band(class_id);
  for (index_t u = 0; u < H; ++u) {
    const double fu = (u <= H / 2 ? static_cast<double>(u) : static_cast<double>(u - H)) /
                      static_cast<double>(H);
    for (index_t v = 0; v < Wh; ++v) {
      const double fv = static_cast<double>(v) / static_cast<double>(W);
      const double r = std::hypot(fu, fv);
      if (!(r >= lo && r < hi)) {
        re[static_cast<std::size_t>(u * Wh + v)] = 0;
        im[static_cast<std::size_t>(u * Wh + v)] = 0;
      }
    }
  }
  std::vector<double> field(static_cast<std::size_t>(H * W));
  fft::irfft2_slice(re.data(), im.data(), H, W, 1.0 / static_cast<double>(H * W), field.data(),
                    ws, static_cast<double*>(nullptr));

  double mean = 0;
  for (double v : field) mean += v;
  mean /= static_cast<double>(field.size());
  double var = 0;
  for (double v : field) var += (v - mean) * (v - mean);
  var /= static_cast<double>(field.size());
  const double inv_std = 1.0 / std::sqrt(std::max(var, 1e-12));

  // shared elliptical node: jittered center/radii/orientation, darker interior
  const double cy = (0.5 + 0.10 * (rng.uniform() - 0.5)) * static_cast<double>(H);
  const double cx = (0.5 + 0.10 * (rng.uniform() - 0.5)) * static_cast<double>(W);
  const double ry = (0.16 + 0.05 * rng.uniform()) * static_cast<double>(H);
  const double rx = (0.24 + 0.06 * rng.uniform()) * static_cast<double>(W);
  const double theta = 3.14159265358979323846 * rng.uniform();
  const double ct = std::cos(theta), st = std::sin(theta);

  LabeledImage out;
  out.label = class_id;
  {
    std::ostringstream oss;
    oss << "synth/band" << class_id << "/" << std::hex << seed;
    out.source_id = oss.str();
  }
  out.pixels = Tensor<double>::zeros({3, H, W});
  for (index_t y = 0; y < H; ++y)
    for (index_t x = 0; x < W; ++x) {
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double ey = (ct * dy - st * dx) / ry;
      const double ex = (st * dy + ct * dx) / rx;
      const double blob = -0.10 * std::exp(-2.0 * (ex * ex + ey * ey));
      const double tex = 0.15 * field[static_cast<std::size_t>(y * W + x)] * inv_std;
      const double v = std::clamp(0.5 + tex + blob, 0.0, 1.0);
      for (index_t c = 0; c < 3; ++c) out.pixels.data()[c * H * W + y * W + x] = v;
    }
  return out;
}

// Band-energy measurement used to certify the synthetic task is solvable:
// fraction of non-DC spectral energy inside each radial band.
inline std::array<double, kSynthClasses> band_energy_fractions(const Tensor<double>& pixels) {
  SFUS_CHECK_SHAPE(pixels.ndim() == 3, "band_energy_fractions expects CxHxW");
  const index_t H = pixels.dim(1), W = pixels.dim(2), Wh = W / 2 + 1;
  std::vector<double> re(static_cast<std::size_t>(H * Wh)), im(re.size());
  fft::Workspace2d<double> ws;
  // channel 0 (the generator writes identical channels)
  fft::rfft2_slice(pixels.data(), H, W, re.data(), im.data(), ws);
  std::array<double, kSynthClasses> band{};
  double total = 0;
  for (index_t u = 0; u < H; ++u) {
    const double fu = (u <= H / 2 ? static_cast<double>(u) : static_cast<double>(u - H)) /
                      static_cast<double>(H);
    for (index_t v = 0; v < Wh; ++v) {
      if (u == 0 && v == 0) continue;  // DC excluded
      const double fv = static_cast<double>(v) / static_cast<double>(W);
      const double r = std::hypot(fu, fv);
      // interior columns stand for a conjugate pair
      const bool edge = (v == 0) || (W % 2 == 0 && v == Wh - 1);
      const double w = edge ? 1.0 : 2.0;
      const std::size_t i = static_cast<std::size_t>(u * Wh + v);
      const double e = w * (re[i] * re[i] + im[i] * im[i]);
      total += e;
      for (index_t c = 0; c < kSynthClasses; ++c) {
        const auto [lo, hi] = synth_band(c);
        if (r >= lo && r < hi) band[static_cast<std::size_t>(c)] += e;
      }
    }
  }
  if (total > 0)
    for (auto& b : band) b /= total;
  return band;
}

struct SynthDataset {
  std::vector<LabeledImage> images;
  std::vector<std::string> class_names;
};

inline SynthDataset synth_dataset(index_t per_class, index_t size, std::uint64_t seed) {
  SFUS_CHECK(per_class >= 1, "per_class must be positive");
  SynthDataset ds;
  for (index_t c = 0; c < kSynthClasses; ++c)
    ds.class_names.push_back("band" + std::to_string(c));
  for (index_t c = 0; c < kSynthClasses; ++c)
    for (index_t i = 0; i < per_class; ++i) {
      LabeledImage img = synth_generate(c, size, seed_mix({seed, static_cast<std::uint64_t>(c),
                                                           static_cast<std::uint64_t>(i)}));
      std::ostringstream oss;
      oss << "band" << c << "/" << std::setw(4) << std::setfill('0') << i << ".png";
      img.source_id = oss.str();
      ds.images.push_back(std::move(img));
    }
  return ds;
}

// --- directory-of-classes loading -----------------------------------------

struct LoadedDataset {
  std::vector<LabeledImage> images;
  std::vector<std::string> class_names;
  index_t skipped = 0;
};

inline bool has_image_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return ext == ".bmp" || ext == ".png";
}

// Class indices follow the lexicographic order of the class directories.
// Undecodable files are skipped with a warning in bulk mode.
inline LoadedDataset load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) SFUS_THROW(DataError, "dataset root is not a directory: " << root);
  LoadedDataset ds;
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  SFUS_CHECK(!class_dirs.empty(), "dataset root has no class directories: " << root);
  for (index_t label = 0; label < static_cast<index_t>(class_dirs.size()); ++label) {
    const auto& dir = class_dirs[static_cast<std::size_t>(label)];
    ds.class_names.push_back(dir.filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && has_image_extension(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        LabeledImage img;
        img.pixels = tensor_from_image(load_image_file(f.string()));
        img.label = label;
        img.source_id = dir.filename().string() + "/" + f.filename().string();
        ds.images.push_back(std::move(img));
      } catch (const DataError& e) {
        std::cerr << "warning: skipping " << f << ": " << e.what() << "\n";
        ++ds.skipped;
      }
    }
  }
  SFUS_CHECK(!ds.images.empty(), "dataset contains no decodable images: " << root);
  return ds;
}

// Single-image load; the label comes from the parent directory's rank among
// its sibling class directories. Hard error on failure.
inline LabeledImage load_image(const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path p(path);
  LabeledImage img;
  img.pixels = tensor_from_image(load_image_file(path));
  img.source_id = path;
  img.label = -1;
  const fs::path class_dir = p.parent_path();
  const fs::path root = class_dir.parent_path();
  if (!class_dir.empty() && fs::is_directory(root)) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    const auto it = std::find(names.begin(), names.end(), class_dir.filename().string());
    if (it != names.end()) img.label = static_cast<index_t>(it - names.begin());
  }
  return img;
}

// --- stratified folds and batches -----------------------------------------

struct FoldPlan {
  index_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<index_t>> folds;  // disjoint, covering

  std::vector<index_t> train_indices(index_t held_out) const {
    std::vector<index_t> out;
    for (index_t f = 0; f < k; ++f)
      if (f != held_out)
        out.insert(out.end(), folds[static_cast<std::size_t>(f)].begin(),
                   folds[static_cast<std::size_t>(f)].end());
    std::sort(out.begin(), out.end());
    return out;
  }
};

// Per-class seeded shuffle, then round-robin assignment: per-class fold
// counts differ by at most one.
inline FoldPlan stratified_kfold(const std::vector<index_t>& labels, index_t k,
                                 std::uint64_t seed) {
  SFUS_CHECK(k >= 2, "stratified_kfold needs k >= 2, got " << k);
  std::map<index_t, std::vector<index_t>> by_class;
  for (index_t i = 0; i < static_cast<index_t>(labels.size()); ++i)
    by_class[labels[static_cast<std::size_t>(i)]].push_back(i);
  for (const auto& [cls, idx] : by_class)
    if (static_cast<index_t>(idx.size()) < k)
      SFUS_THROW(DataError, "class " << cls << " has " << idx.size() << " samples, fewer than k="
                                     << k);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.assign(static_cast<std::size_t>(k), {});
  for (auto& [cls, idx] : by_class) {
    Rng rng(seed_mix({seed, static_cast<std::uint64_t>(cls)}));
    rng.shuffle(idx);
    for (std::size_t pos = 0; pos < idx.size(); ++pos)
      plan.folds[pos % static_cast<std::size_t>(k)].push_back(idx[pos]);
  }
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

// Text manifest (class, source id, fold index) for audit.
inline std::string fold_manifest(const FoldPlan& plan, const std::vector<LabeledImage>& images) {
  std::ostringstream oss;
  oss << "# class\tsource_id\tfold\n";
  for (index_t f = 0; f < plan.k; ++f)
    for (index_t i : plan.folds[static_cast<std::size_t>(f)])
      oss << images[static_cast<std::size_t>(i)].label << "\t"
          << images[static_cast<std::size_t>(i)].source_id << "\t" << f << "\n";
  return oss.str();
}

// Seeded shuffle then chunking; the last partial batch is kept.
inline std::vector<std::vector<index_t>> make_batches(std::vector<index_t> indices,
                                                      index_t batch_size, std::uint64_t seed) {
  SFUS_CHECK(batch_size >= 1, "batch_size must be positive");
  Rng rng(seed);
  rng.shuffle(indices);
  std::vector<std::vector<index_t>> batches;
  for (std::size_t i = 0; i < indices.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(indices.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(i),
                         indices.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace sfus
