#pragma once

// Grayscale PNG encode/decode on top of libpng. Encoding settings are fixed
// so identical pixels always produce identical bytes.

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "fringe/image.hpp"

namespace fringe {

class PngError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct PngReadCursor {
  const unsigned char* data;
  std::size_t size;
  std::size_t pos;
};

inline void png_write_to_string(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}

inline void png_flush_noop(png_structp) {}

inline void png_read_from_cursor(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + len > cur->size) png_error(png, "truncated PNG data");
  std::memcpy(out, cur->data + cur->pos, len);
  cur->pos += len;
}

inline void png_warning_silent(png_structp, png_const_charp) {}

// bit_depth 8 or 16; rows are big-endian packed as PNG expects.
inline std::string encode_gray(int width, int height, int bit_depth,
                               const std::vector<unsigned char>& packed) {
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                            png_warning_silent);
  if (!png) throw PngError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw PngError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw PngError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, png_write_to_string, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_SUB);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * (bit_depth / 8);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(packed.data() + static_cast<std::size_t>(y) * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

struct DecodedGray {
  int width = 0;
  int height = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> values;
};

inline DecodedGray decode_gray(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8))
    throw PngError("not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                           png_warning_silent);
  if (!png) throw PngError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw PngError("png_create_info_struct failed");
  }
  DecodedGray result;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buf;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw PngError("corrupt PNG data");
  }
  PngReadCursor cursor{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), 0};
  png_set_read_fn(png, &cursor, png_read_from_cursor);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (depth == 16) png_set_swap(png);  // native little-endian uint16 rows
  png_read_update_info(png, info);
  result.width = static_cast<int>(png_get_image_width(png, info));
  result.height = static_cast<int>(png_get_image_height(png, info));
  depth = png_get_bit_depth(png, info);
  result.bit_depth = depth == 16 ? 16 : 8;
  const std::size_t stride = png_get_rowbytes(png, info);
  buf.resize(stride * static_cast<std::size_t>(result.height));
  rows.resize(static_cast<std::size_t>(result.height));
  for (int y = 0; y < result.height; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  result.values.resize(static_cast<std::size_t>(result.width) * result.height);
  for (int y = 0; y < result.height; ++y) {
    for (int x = 0; x < result.width; ++x) {
      std::uint16_t v;
      if (result.bit_depth == 16) {
        std::memcpy(&v, rows[y] + 2 * x, 2);
      } else {
        v = rows[y][x];
      }
      result.values[static_cast<std::size_t>(y) * result.width + x] = v;
    }
  }
  return result;
}

}  // namespace detail

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

/// Write to a sibling temporary then rename, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

/// 8-bit grayscale PNG of a [0,1] float image (values clamped, rounded).
inline std::string encode_png8(const Image& img) {
  std::vector<unsigned char> packed(img.size());
  auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double v = std::clamp(static_cast<double>(px[i]), 0.0, 1.0);
    packed[i] = static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
  }
  return detail::encode_gray(img.width(), img.height(), 8, packed);
}

inline std::string encode_png16(const Grid<std::uint16_t>& img) {
  std::vector<unsigned char> packed(img.size() * 2);
  auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    packed[2 * i] = static_cast<unsigned char>(px[i] >> 8);
    packed[2 * i + 1] = static_cast<unsigned char>(px[i] & 0xff);
  }
  return detail::encode_gray(img.width(), img.height(), 16, packed);
}

/// Decode any PNG to a grayscale float image in [0,1].
inline Image decode_png(const std::string& bytes) {
  const auto d = detail::decode_gray(bytes);
  Image img(d.width, d.height);
  const double scale = d.bit_depth == 16 ? 65535.0 : 255.0;
  auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(d.values[i] / scale);
  return img;
}

/// Decode a 16-bit grayscale PNG to raw counts.
inline Grid<std::uint16_t> decode_png16(const std::string& bytes) {
  const auto d = detail::decode_gray(bytes);
  if (d.bit_depth != 16) throw PngError("expected a 16-bit PNG");
  Grid<std::uint16_t> img(d.width, d.height);
  std::copy(d.values.begin(), d.values.end(), img.pixels().begin());
  return img;
}

inline Image read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

}  // namespace fringe
