#include "bionet/dataset_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

namespace bionet {

namespace {

using FilePtr = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode), &std::fclose);
  if (!f) throw DatasetError("cannot open '" + path.string() + "'");
  return f;
}

void write_rows(const fs::path& path, Eigen::Index h, Eigen::Index w, int bit_depth, int color_type,
                const std::vector<png_byte>& buffer, std::size_t row_bytes) {
  auto f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DatasetError("libpng init failed for '" + path.string() + "'");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DatasetError("PNG write failed for '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Eigen::Index y = 0; y < h; ++y) png_write_row(png, buffer.data() + static_cast<std::size_t>(y) * row_bytes);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct Decoded {
  Eigen::Index height = 0, width = 0;
  int bit_depth = 0;
  std::vector<png_byte> data;
  std::size_t row_bytes = 0;
};

Decoded read_gray(const fs::path& path) {
  if (!fs::exists(path)) throw DatasetError("missing file '" + path.string() + "'");
  auto f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DatasetError("libpng init failed for '" + path.string() + "'");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DatasetError("corrupt PNG '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  Decoded d;
  d.width = png_get_image_width(png, info);
  d.height = png_get_image_height(png, info);
  d.bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DatasetError("'" + path.string() + "' is not a single-channel grayscale PNG");
  }
  if (d.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (d.bit_depth == 16) png_set_swap(png);  // little-endian uint16 in memory
  png_read_update_info(png, info);
  d.bit_depth = png_get_bit_depth(png, info);
  d.row_bytes = png_get_rowbytes(png, info);
  d.data.resize(d.row_bytes * static_cast<std::size_t>(d.height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(d.height));
  for (Eigen::Index y = 0; y < d.height; ++y) rows[y] = d.data.data() + static_cast<std::size_t>(y) * d.row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return d;
}

}  // namespace

void write_png_gray16(const fs::path& path, const ImageGrid& image) {
  const Eigen::Index h = image.rows(), w = image.cols();
  const std::size_t row_bytes = static_cast<std::size_t>(w) * 2;
  std::vector<png_byte> buf(row_bytes * static_cast<std::size_t>(h));
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      const float v = std::clamp(image(y, x), 0.0f, 1.0f);
      const auto q = static_cast<std::uint16_t>(std::lround(static_cast<double>(v) * 65535.0));
      png_byte* p = buf.data() + static_cast<std::size_t>(y) * row_bytes + static_cast<std::size_t>(x) * 2;
      p[0] = static_cast<png_byte>(q >> 8);  // PNG is big-endian
      p[1] = static_cast<png_byte>(q & 0xff);
    }
  write_rows(path, h, w, 16, PNG_COLOR_TYPE_GRAY, buf, row_bytes);
}

void write_png_gray8(const fs::path& path, const LabelGrid& labels) {
  const Eigen::Index h = labels.rows(), w = labels.cols();
  const std::size_t row_bytes = static_cast<std::size_t>(w);
  std::vector<png_byte> buf(row_bytes * static_cast<std::size_t>(h));
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) buf[static_cast<std::size_t>(y) * row_bytes + x] = labels(y, x);
  write_rows(path, h, w, 8, PNG_COLOR_TYPE_GRAY, buf, row_bytes);
}

void write_png_rgb(const fs::path& path, const ImageGrid& r, const ImageGrid& g, const ImageGrid& b) {
  const Eigen::Index h = r.rows(), w = r.cols();
  if (g.rows() != h || b.rows() != h || g.cols() != w || b.cols() != w)
    throw std::invalid_argument("write_png_rgb: channel size mismatch");
  const std::size_t row_bytes = static_cast<std::size_t>(w) * 3;
  std::vector<png_byte> buf(row_bytes * static_cast<std::size_t>(h));
  auto q = [](float v) { return static_cast<png_byte>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      png_byte* p = buf.data() + static_cast<std::size_t>(y) * row_bytes + static_cast<std::size_t>(x) * 3;
      p[0] = q(r(y, x));
      p[1] = q(g(y, x));
      p[2] = q(b(y, x));
    }
  write_rows(path, h, w, 8, PNG_COLOR_TYPE_RGB, buf, row_bytes);
}

ImageGrid read_png_gray16(const fs::path& path) {
  const Decoded d = read_gray(path);
  ImageGrid out(d.height, d.width);
  for (Eigen::Index y = 0; y < d.height; ++y) {
    const png_byte* row = d.data.data() + static_cast<std::size_t>(y) * d.row_bytes;
    for (Eigen::Index x = 0; x < d.width; ++x) {
      if (d.bit_depth == 16) {
        std::uint16_t v;
        std::memcpy(&v, row + 2 * x, 2);
        out(y, x) = static_cast<float>(v / 65535.0);
      } else {
        out(y, x) = static_cast<float>(row[x] / 255.0);
      }
    }
  }
  return out;
}

LabelGrid read_png_gray8(const fs::path& path) {
  const Decoded d = read_gray(path);
  if (d.bit_depth != 8) throw DatasetError("'" + path.string() + "' must be an 8-bit PNG");
  LabelGrid out(d.height, d.width);
  for (Eigen::Index y = 0; y < d.height; ++y)
    for (Eigen::Index x = 0; x < d.width; ++x) out(y, x) = d.data[static_cast<std::size_t>(y) * d.row_bytes + x];
  return out;
}

}  // namespace bionet
