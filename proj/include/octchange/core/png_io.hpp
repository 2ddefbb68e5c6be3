#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "octchange/core/error.hpp"
#include "octchange/core/image.hpp"

namespace octchange::png {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open(const std::filesystem::path& p, const char* mode) {
  FilePtr f(std::fopen(p.string().c_str(), mode));
  if (!f) throw Error("cannot open " + p.string());
  return f;
}

[[noreturn]] inline void on_error(png_structp, png_const_charp msg) { throw Error(std::string("png: ") + msg); }
inline void on_warning(png_structp, png_const_charp) {}

struct Reader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  Reader() {
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
    if (!png) throw Error("png: cannot create read struct");
    info = png_create_info_struct(png);
  }
  ~Reader() { png_destroy_read_struct(&png, &info, nullptr); }
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;
};

struct Writer {
  png_structp png = nullptr;
  png_infop info = nullptr;
  Writer() {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
    if (!png) throw Error("png: cannot create write struct");
    info = png_create_info_struct(png);
  }
  ~Writer() { png_destroy_write_struct(&png, &info); }
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;
};

inline void write_raw(const std::filesystem::path& path, int rows, int cols, int bit_depth, int color_type,
                      const std::vector<std::uint8_t>& bytes, int row_bytes) {
  auto f = open(path, "wb");
  Writer w;
  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Fixed compression settings keep outputs byte-stable across runs.
  png_set_compression_level(w.png, 6);
  png_write_info(w.png, w.info);
  std::vector<png_bytep> rp(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r)
    rp[static_cast<std::size_t>(r)] = const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(r) * row_bytes);
  png_write_image(w.png, rp.data());
  png_write_end(w.png, nullptr);
}

}  // namespace detail

struct RawGray {
  int rows = 0;
  int cols = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> values;
};

// Reads an 8- or 16-bit grayscale PNG (palette/RGB inputs are converted to gray).
inline RawGray read_gray_raw(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("missing file: " + path.string());
  auto f = detail::open(path, "rb");
  detail::Reader r;
  png_init_io(r.png, f.get());
  png_read_info(r.png, r.info);
  const int color = png_get_color_type(r.png, r.info);
  int depth = png_get_bit_depth(r.png, r.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(r.png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(r.png, 1, -1, -1);
  if (depth == 16) png_set_swap(r.png);  // host little-endian rows
  png_read_update_info(r.png, r.info);
  depth = png_get_bit_depth(r.png, r.info);

  RawGray out;
  out.rows = static_cast<int>(png_get_image_height(r.png, r.info));
  out.cols = static_cast<int>(png_get_image_width(r.png, r.info));
  out.bit_depth = depth;
  const std::size_t rb = png_get_rowbytes(r.png, r.info);
  std::vector<std::uint8_t> buf(rb * static_cast<std::size_t>(out.rows));
  std::vector<png_bytep> rows(static_cast<std::size_t>(out.rows));
  for (int i = 0; i < out.rows; ++i) rows[static_cast<std::size_t>(i)] = buf.data() + rb * static_cast<std::size_t>(i);
  png_read_image(r.png, rows.data());

  out.values.resize(static_cast<std::size_t>(out.rows) * static_cast<std::size_t>(out.cols));
  for (int i = 0; i < out.rows; ++i) {
    const std::uint8_t* src = rows[static_cast<std::size_t>(i)];
    for (int j = 0; j < out.cols; ++j) {
      std::uint16_t v;
      if (depth == 16) {
        v = static_cast<std::uint16_t>(src[2 * j] | (src[2 * j + 1] << 8));
      } else {
        v = src[j];
      }
      out.values[static_cast<std::size_t>(i) * out.cols + j] = v;
    }
  }
  return out;
}

// Grayscale image normalized to [0, 1] by the bit depth's full scale.
inline ImageD read_gray(const std::filesystem::path& path) {
  const RawGray raw = read_gray_raw(path);
  const double scale = raw.bit_depth == 16 ? 65535.0 : 255.0;
  ImageD img(raw.rows, raw.cols);
  auto d = img.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = raw.values[i] / scale;
  return img;
}

inline std::uint16_t quantize16(double v) {
  v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<std::uint16_t>(std::lround(v * 65535.0));
}

// 16-bit grayscale; values are clamped to [0, 1]. Reading back an image whose
// values already lie on the k/65535 grid reproduces it exactly.
inline void write_gray16(const std::filesystem::path& path, const ImageD& img) {
  const int row_bytes = img.cols() * 2;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(row_bytes) * img.rows());
  for (int r = 0; r < img.rows(); ++r)
    for (int c = 0; c < img.cols(); ++c) {
      const std::uint16_t q = quantize16(img(r, c));
      const std::size_t o = static_cast<std::size_t>(r) * row_bytes + 2 * c;
      bytes[o] = static_cast<std::uint8_t>(q >> 8);
      bytes[o + 1] = static_cast<std::uint8_t>(q & 0xff);
    }
  detail::write_raw(path, img.rows(), img.cols(), 16, PNG_COLOR_TYPE_GRAY, bytes, row_bytes);
}

inline void write_labels16(const std::filesystem::path& path, const LabelImage& img) {
  const int row_bytes = img.cols() * 2;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(row_bytes) * img.rows());
  for (int r = 0; r < img.rows(); ++r)
    for (int c = 0; c < img.cols(); ++c) {
      const std::uint16_t q = img(r, c);
      const std::size_t o = static_cast<std::size_t>(r) * row_bytes + 2 * c;
      bytes[o] = static_cast<std::uint8_t>(q >> 8);
      bytes[o + 1] = static_cast<std::uint8_t>(q & 0xff);
    }
  detail::write_raw(path, img.rows(), img.cols(), 16, PNG_COLOR_TYPE_GRAY, bytes, row_bytes);
}

inline LabelImage read_labels16(const std::filesystem::path& path) {
  const RawGray raw = read_gray_raw(path);
  LabelImage img(raw.rows, raw.cols);
  auto d = img.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = raw.values[i];
  return img;
}

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

class RgbImage {
 public:
  RgbImage(int rows, int cols) : px_(rows, cols) {}
  int rows() const { return px_.rows(); }
  int cols() const { return px_.cols(); }
  Rgb& operator()(int r, int c) { return px_(r, c); }
  const Rgb& operator()(int r, int c) const { return px_(r, c); }
  bool in_bounds(int r, int c) const { return px_.in_bounds(r, c); }

 private:
  Image<Rgb> px_;
};

inline void write_rgb(const std::filesystem::path& path, const RgbImage& img) {
  const int row_bytes = img.cols() * 3;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(row_bytes) * img.rows());
  for (int r = 0; r < img.rows(); ++r)
    for (int c = 0; c < img.cols(); ++c) {
      const std::size_t o = static_cast<std::size_t>(r) * row_bytes + 3 * c;
      bytes[o] = img(r, c).r;
      bytes[o + 1] = img(r, c).g;
      bytes[o + 2] = img(r, c).b;
    }
  detail::write_raw(path, img.rows(), img.cols(), 8, PNG_COLOR_TYPE_RGB, bytes, row_bytes);
}

}  // namespace octchange::png
