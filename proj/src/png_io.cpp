#include "coedge/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace coedge {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Decodes any PNG into packed 8-bit RGB rows.
void read_png_rgb8(const std::filesystem::path& path, std::vector<unsigned char>& out,
                   png_uint_32& width, png_uint_32& height) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw DataError("cannot open PNG: " + path.string());

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  out.resize(std::size_t(width) * height * 3);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y)
    rows[y] = out.data() + std::size_t(y) * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
}

void write_png8(const std::filesystem::path& path, const unsigned char* data,
                png_uint_32 width, png_uint_32 height, int channels) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DataError("cannot write PNG: " + path.string());

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG write failed: " + path.string());
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(data + std::size_t(y) * width * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline unsigned char quantize(float v) {
  float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

}  // namespace

std::array<PlaneF, 3> read_png_rgb(const std::filesystem::path& path) {
  std::vector<unsigned char> buf;
  png_uint_32 w = 0, h = 0;
  read_png_rgb8(path, buf, w, h);
  std::array<PlaneF, 3> rgb;
  for (auto& p : rgb) p.resize(h, w);
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        rgb[c](y, x) = buf[(std::size_t(y) * w + x) * 3 + c] / 255.0f;
  return rgb;
}

PlaneF read_png_gray(const std::filesystem::path& path) {
  auto rgb = read_png_rgb(path);
  return ((rgb[0] + rgb[1] + rgb[2]) / 3.0f).eval();
}

void write_png_rgb(const std::filesystem::path& path,
                   const std::array<PlaneF, 3>& rgb) {
  const Index h = rgb[0].rows(), w = rgb[0].cols();
  std::vector<unsigned char> buf(std::size_t(h) * w * 3);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        buf[(std::size_t(y) * w + x) * 3 + c] = quantize(rgb[c](y, x));
  write_png8(path, buf.data(), png_uint_32(w), png_uint_32(h), 3);
}

void write_png_gray(const std::filesystem::path& path, const PlaneF& gray) {
  const Index h = gray.rows(), w = gray.cols();
  std::vector<unsigned char> buf(std::size_t(h) * w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) buf[std::size_t(y) * w + x] = quantize(gray(y, x));
  write_png8(path, buf.data(), png_uint_32(w), png_uint_32(h), 1);
}

void write_f32_sidecar(const std::filesystem::path& path, const PlaneF& map) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write sidecar: " + path.string());
  const char magic[4] = {'C', 'E', 'D', 'F'};
  std::int32_t h = std::int32_t(map.rows()), w = std::int32_t(map.cols());
  os.write(magic, 4);
  os.write(reinterpret_cast<const char*>(&h), 4);
  os.write(reinterpret_cast<const char*>(&w), 4);
  // Row-major so the file layout matches the PNG preview.
  for (Index y = 0; y < map.rows(); ++y)
    for (Index x = 0; x < map.cols(); ++x) {
      float v = map(y, x);
      os.write(reinterpret_cast<const char*>(&v), 4);
    }
  if (!os) throw DataError("sidecar write failed: " + path.string());
}

PlaneF read_f32_sidecar(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open sidecar: " + path.string());
  char magic[4];
  std::int32_t h = 0, w = 0;
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(&h), 4);
  is.read(reinterpret_cast<char*>(&w), 4);
  if (!is || std::memcmp(magic, "CEDF", 4) != 0 || h <= 0 || w <= 0)
    throw DataError("invalid sidecar header: " + path.string());
  PlaneF map(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      float v;
      is.read(reinterpret_cast<char*>(&v), 4);
      map(y, x) = v;
    }
  if (!is) throw DataError("sidecar truncated: " + path.string());
  return map;
}

}  // namespace coedge
