#pragma once

// 8-bit RGBA raster plus lossless PNG I/O.

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

namespace trajvid {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

class Image {
 public:
  Image() = default;
  Image(int width, int height, std::array<std::uint8_t, 4> fill = {0, 0, 0, 255})
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height * 4) {
    if (width < 0 || height < 0) throw std::invalid_argument("negative image size");
    for (std::size_t i = 0; i < data_.size(); i += 4) std::memcpy(&data_[i], fill.data(), 4);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  std::uint8_t* px(int x, int y) { return &data_[(static_cast<std::size_t>(y) * width_ + x) * 4]; }
  const std::uint8_t* px(int x, int y) const {
    return &data_[(static_cast<std::size_t>(y) * width_ + x) * 4];
  }
  Rgb rgb(int x, int y) const {
    const auto* p = px(x, y);
    return {p[0], p[1], p[2]};
  }
  std::uint8_t alpha(int x, int y) const { return px(x, y)[3]; }
  void set(int x, int y, Rgb c, std::uint8_t a = 255) {
    auto* p = px(x, y);
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
    p[3] = a;
  }
  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  const std::vector<std::uint8_t>& bytes() const { return data_; }

  Image crop(int x0, int y0, int w, int h) const {
    Image out(w, h, {0, 0, 0, 0});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (in_bounds(x0 + x, y0 + y)) std::memcpy(out.px(x, y), px(x0 + x, y0 + y), 4);
    return out;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

inline void png_flush_noop(png_structp) {}

struct PngReadCursor {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

inline void png_read_from_cursor(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + len > cur->size) png_error(png, "truncated PNG");
  std::memcpy(out, cur->data + cur->pos, len);
  cur->pos += len;
}

}  // namespace detail

inline bool is_png(const std::uint8_t* data, std::size_t size) {
  return size >= 8 && png_sig_cmp(data, 0, 8) == 0;
}

// RGBA, 8 bit, fixed compression settings so bytes are reproducible.
inline std::vector<std::uint8_t> encode_png(const Image& img) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ImageIoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError("PNG encode failed");
  }
  png_set_write_fn(png, &out, detail::png_write_to_vector, detail::png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()), 8,
               PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (int y = 0; y < img.height(); ++y)
    png_write_row(png, const_cast<png_bytep>(img.px(0, y)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline Image decode_png(const std::uint8_t* data, std::size_t size) {
  if (!is_png(data, size)) throw ImageIoError("not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ImageIoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  Image img;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError("PNG decode failed");
  }
  detail::PngReadCursor cur{data, size, 0};
  png_set_read_fn(png, &cur, detail::png_read_from_cursor);
  png_read_info(png, info);
  const auto w = png_get_image_width(png, info);
  const auto h = png_get_image_height(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_PALETTE)
    png_set_filler(png, 0xFF, PNG_FILLER_AFTER);
  png_read_update_info(png, info);
  img = Image(static_cast<int>(w), static_cast<int>(h));
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.px(0, static_cast<int>(y));
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline Image decode_png(const std::vector<std::uint8_t>& bytes) {
  return decode_png(bytes.data(), bytes.size());
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageIoError("short write to " + path.string());
}

inline Image read_png(const std::filesystem::path& path) { return decode_png(read_file_bytes(path)); }
inline void write_png(const std::filesystem::path& path, const Image& img) {
  write_file_bytes(path, encode_png(img));
}

}  // namespace trajvid
