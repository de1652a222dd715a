#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sfusnet/common.hpp"

namespace sfus {

// 8-bit image, row-major, interleaved channels (1=gray, 2=gray+alpha,
// 3=RGB, 4=RGBA).
struct ImageU8 {
  index_t width = 0;
  index_t height = 0;
  index_t channels = 0;
  std::vector<std::uint8_t> pixels;
};

namespace imgio {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) SFUS_THROW(DataError, "cannot open file: " << path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) SFUS_THROW(DataError, "cannot write file: " << path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) SFUS_THROW(DataError, "short write: " << path);
}

inline std::uint16_t rd_u16le(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t rd_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint32_t rd_u32be(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}
inline void wr_u16le(std::vector<std::uint8_t>& v, std::uint16_t x) {
  v.push_back(static_cast<std::uint8_t>(x & 0xff));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
}
inline void wr_u32le(std::vector<std::uint8_t>& v, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(static_cast<std::uint8_t>((x >> (8 * i)) & 0xff));
}
inline void wr_u32be(std::vector<std::uint8_t>& v, std::uint32_t x) {
  for (int i = 3; i >= 0; --i) v.push_back(static_cast<std::uint8_t>((x >> (8 * i)) & 0xff));
}

constexpr std::uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

}  // namespace imgio

// --- BMP: uncompressed BI_RGB, 8-bit palette / 24-bit / 32-bit ---

inline ImageU8 decode_bmp(const std::vector<std::uint8_t>& b, const std::string& name) {
  using namespace imgio;
  if (b.size() < 54 || b[0] != 'B' || b[1] != 'M')
    SFUS_THROW(DataError, "not a BMP file: " << name);
  const std::uint32_t data_off = rd_u32le(&b[10]);
  const std::uint32_t hdr_size = rd_u32le(&b[14]);
  if (hdr_size < 40) SFUS_THROW(DataError, "unsupported BMP core header: " << name);
  const std::int32_t w = static_cast<std::int32_t>(rd_u32le(&b[18]));
  const std::int32_t h_raw = static_cast<std::int32_t>(rd_u32le(&b[22]));
  const std::uint16_t bpp = rd_u16le(&b[28]);
  const std::uint32_t compression = rd_u32le(&b[30]);
  if (w <= 0 || h_raw == 0) SFUS_THROW(DataError, "bad BMP dimensions: " << name);
  if (compression != 0)
    SFUS_THROW(DataError, "unsupported BMP compression " << compression << ": " << name);
  if (bpp != 8 && bpp != 24 && bpp != 32)
    SFUS_THROW(DataError, "unsupported BMP bit depth " << bpp << ": " << name);
  const bool top_down = h_raw < 0;
  const index_t H = top_down ? -h_raw : h_raw, W = w;

  const std::uint8_t* palette = nullptr;
  std::uint32_t palette_n = 0;
  if (bpp == 8) {
    palette_n = rd_u32le(&b[46]);
    if (palette_n == 0) palette_n = 256;
    if (14 + hdr_size + 4ull * palette_n > b.size())
      SFUS_THROW(DataError, "truncated BMP palette: " << name);
    palette = &b[14 + hdr_size];
  }

  const index_t row_bytes = ((W * bpp / 8) + 3) / 4 * 4;
  if (data_off + static_cast<std::uint64_t>(row_bytes) * H > b.size())
    SFUS_THROW(DataError, "truncated BMP pixel data: " << name);

  ImageU8 img;
  img.width = W;
  img.height = H;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(W * H * 3));
  for (index_t y = 0; y < H; ++y) {
    const index_t src_y = top_down ? y : H - 1 - y;
    const std::uint8_t* row = &b[data_off + static_cast<std::size_t>(src_y * row_bytes)];
    for (index_t x = 0; x < W; ++x) {
      std::uint8_t r, g, bl;
      if (bpp == 8) {
        const std::uint32_t idx = row[x];
        if (idx >= palette_n) SFUS_THROW(DataError, "BMP palette index out of range: " << name);
        bl = palette[4 * idx + 0];
        g = palette[4 * idx + 1];
        r = palette[4 * idx + 2];
      } else {
        const index_t s = x * (bpp / 8);
        bl = row[s + 0];
        g = row[s + 1];
        r = row[s + 2];
      }
      std::uint8_t* dst = &img.pixels[static_cast<std::size_t>((y * W + x) * 3)];
      dst[0] = r;
      dst[1] = g;
      dst[2] = bl;
    }
  }
  return img;
}

inline std::vector<std::uint8_t> encode_bmp(const ImageU8& img) {
  using namespace imgio;
  SFUS_CHECK(img.channels == 3, "encode_bmp expects a 3-channel image");
  const index_t W = img.width, H = img.height;
  const index_t row_bytes = (W * 3 + 3) / 4 * 4;
  const std::uint32_t data_size = static_cast<std::uint32_t>(row_bytes * H);
  std::vector<std::uint8_t> out;
  out.reserve(54 + data_size);
  out.push_back('B');
  out.push_back('M');
  wr_u32le(out, 54 + data_size);
  wr_u32le(out, 0);
  wr_u32le(out, 54);
  wr_u32le(out, 40);
  wr_u32le(out, static_cast<std::uint32_t>(W));
  wr_u32le(out, static_cast<std::uint32_t>(H));
  wr_u16le(out, 1);
  wr_u16le(out, 24);
  wr_u32le(out, 0);
  wr_u32le(out, data_size);
  wr_u32le(out, 2835);
  wr_u32le(out, 2835);
  wr_u32le(out, 0);
  wr_u32le(out, 0);
  out.resize(54 + data_size, 0);
  for (index_t y = 0; y < H; ++y) {
    std::uint8_t* row = &out[54 + static_cast<std::size_t>((H - 1 - y) * row_bytes)];
    for (index_t x = 0; x < W; ++x) {
      const std::uint8_t* src = &img.pixels[static_cast<std::size_t>((y * W + x) * 3)];
      row[x * 3 + 0] = src[2];
      row[x * 3 + 1] = src[1];
      row[x * 3 + 2] = src[0];
    }
  }
  return out;
}

// --- PNG: 8-bit gray / gray+alpha / RGB / RGBA, non-interlaced ---

inline ImageU8 decode_png(const std::vector<std::uint8_t>& b, const std::string& name) {
  using namespace imgio;
  if (b.size() < 8 + 25 || std::memcmp(b.data(), kPngSig, 8) != 0)
    SFUS_THROW(DataError, "not a PNG file: " << name);
  std::size_t pos = 8;
  index_t W = 0, H = 0, channels = 0;
  std::vector<std::uint8_t> idat;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 8 <= b.size() && !saw_iend) {
    const std::uint32_t len = rd_u32be(&b[pos]);
    if (pos + 12ull + len > b.size()) SFUS_THROW(DataError, "truncated PNG chunk: " << name);
    const char* type = reinterpret_cast<const char*>(&b[pos + 4]);
    const std::uint8_t* data = &b[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) SFUS_THROW(DataError, "bad IHDR: " << name);
      W = rd_u32be(data);
      H = rd_u32be(data + 4);
      const int depth = data[8], color = data[9], interlace = data[12];
      if (depth != 8) SFUS_THROW(DataError, "unsupported PNG bit depth " << depth << ": " << name);
      if (interlace != 0) SFUS_THROW(DataError, "interlaced PNG unsupported: " << name);
      switch (color) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 4: channels = 2; break;
        case 6: channels = 4; break;
        default: SFUS_THROW(DataError, "unsupported PNG color type " << color << ": " << name);
      }
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12ull + len;
  }
  if (!saw_ihdr || W <= 0 || H <= 0) SFUS_THROW(DataError, "PNG without valid IHDR: " << name);
  if (idat.empty()) SFUS_THROW(DataError, "PNG without IDAT: " << name);

  const index_t stride = W * channels;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(H * (stride + 1)));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    SFUS_THROW(DataError, "PNG inflate failed: " << name);

  ImageU8 img;
  img.width = W;
  img.height = H;
  img.channels = channels;
  img.pixels.resize(static_cast<std::size_t>(H * stride));
  const index_t bpp = channels;
  for (index_t y = 0; y < H; ++y) {
    const std::uint8_t filter = raw[static_cast<std::size_t>(y * (stride + 1))];
    const std::uint8_t* src = &raw[static_cast<std::size_t>(y * (stride + 1) + 1)];
    std::uint8_t* cur = &img.pixels[static_cast<std::size_t>(y * stride)];
    const std::uint8_t* up = y > 0 ? &img.pixels[static_cast<std::size_t>((y - 1) * stride)] : nullptr;
    for (index_t i = 0; i < stride; ++i) {
      const int a = i >= bpp ? cur[i - bpp] : 0;
      const int bb = up ? up[i] : 0;
      const int c = (up && i >= bpp) ? up[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += bb; break;
        case 3: v += (a + bb) / 2; break;
        case 4: {
          const int p = a + bb - c;
          const int pa = std::abs(p - a), pb = std::abs(p - bb), pc = std::abs(p - c);
          v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? bb : c);
          break;
        }
        default: SFUS_THROW(DataError, "bad PNG filter type " << int(filter) << ": " << name);
      }
      cur[i] = static_cast<std::uint8_t>(v & 0xff);
    }
  }
  return img;
}

inline std::vector<std::uint8_t> encode_png(const ImageU8& img) {
  using namespace imgio;
  SFUS_CHECK(img.channels == 1 || img.channels == 3, "encode_png expects gray or RGB");
  const index_t W = img.width, H = img.height, ch = img.channels;
  const index_t stride = W * ch;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(H * (stride + 1)));
  for (index_t y = 0; y < H; ++y) {
    raw[static_cast<std::size_t>(y * (stride + 1))] = 0;  // filter: none
    std::memcpy(&raw[static_cast<std::size_t>(y * (stride + 1) + 1)],
                &img.pixels[static_cast<std::size_t>(y * stride)],
                static_cast<std::size_t>(stride));
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(bound);
  if (compress2(packed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    SFUS_THROW(Error, "PNG deflate failed");
  packed.resize(bound);

  std::vector<std::uint8_t> out(imgio::kPngSig, imgio::kPngSig + 8);
  auto chunk = [&out](const char* type, const std::vector<std::uint8_t>& data) {
    wr_u32be(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(0, out.data() + start, static_cast<uInt>(out.size() - start));
    wr_u32be(out, static_cast<std::uint32_t>(crc));
  };
  std::vector<std::uint8_t> ihdr;
  wr_u32be(ihdr, static_cast<std::uint32_t>(W));
  wr_u32be(ihdr, static_cast<std::uint32_t>(H));
  ihdr.push_back(8);
  ihdr.push_back(ch == 3 ? 2 : 0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  chunk("IHDR", ihdr);
  chunk("IDAT", packed);
  chunk("IEND", {});
  return out;
}

// Dispatch on content magic, falling back to the extension for diagnostics.
inline ImageU8 decode_image(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), imgio::kPngSig, 8) == 0)
    return decode_png(bytes, name);
  if (bytes.size() >= 2 && bytes[0] == 'B' && bytes[1] == 'M') return decode_bmp(bytes, name);
  SFUS_THROW(DataError, "unrecognized image format (want BMP or PNG): " << name);
}

inline ImageU8 load_image_file(const std::string& path) {
  return decode_image(imgio::read_file(path), path);
}

inline void save_png(const std::string& path, const ImageU8& img) {
  imgio::write_file(path, encode_png(img));
}

inline void save_bmp(const std::string& path, const ImageU8& img) {
  imgio::write_file(path, encode_bmp(img));
}

}  // namespace sfus
