#include "dh/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace dh {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

// Decodes any PNG into packed 8-bit RGB rows.
std::vector<uint8_t> decode_rgb8(const std::string& path, int64_t* width,
                                 int64_t* height) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw FormatError("cannot open: " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw FormatError("not a PNG file: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("libpng init failed");
  }
  std::vector<uint8_t> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG: " + path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  pixels.resize(static_cast<size_t>(w) * h * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = pixels.data() + static_cast<size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  *width = w;
  *height = h;
  return pixels;
}

void encode_png(const std::string& path, const std::vector<uint8_t>& pixels,
                int64_t width, int64_t height, int color_type) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw FormatError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("PNG write failed: " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int channels = (color_type == PNG_COLOR_TYPE_RGB) ? 3 : 1;
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int64_t y = 0; y < height; ++y)
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(
        pixels.data() + static_cast<size_t>(y) * width * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline uint8_t to_u8(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

}  // namespace

Tensor read_png_rgb(const std::string& path) {
  int64_t w = 0, h = 0;
  const std::vector<uint8_t> px = decode_rgb8(path, &w, &h);
  Tensor img = Tensor::zeros({3, h, w});
  double* d = img.data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        d[c * h * w + y * w + x] =
            static_cast<double>(px[static_cast<size_t>((y * w + x) * 3 + c)]) /
            255.0;
  return img;
}

Tensor read_png_mask(const std::string& path) {
  int64_t w = 0, h = 0;
  const std::vector<uint8_t> px = decode_rgb8(path, &w, &h);
  Tensor mask = Tensor::zeros({1, h, w});
  double* d = mask.data();
  for (int64_t p = 0; p < h * w; ++p) {
    const size_t i = static_cast<size_t>(p) * 3;
    const double luma =
        (0.299 * px[i] + 0.587 * px[i + 1] + 0.114 * px[i + 2]) / 255.0;
    d[p] = luma > 0.5 ? 1.0 : 0.0;
  }
  return mask;
}

void write_png_rgb(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw ShapeError("write_png_rgb expects [3,H,W]");
  const int64_t h = img.dim(1), w = img.dim(2);
  std::vector<uint8_t> px(static_cast<size_t>(h) * w * 3);
  const double* d = img.data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        px[static_cast<size_t>((y * w + x) * 3 + c)] =
            to_u8(d[c * h * w + y * w + x]);
  encode_png(path, px, w, h, PNG_COLOR_TYPE_RGB);
}

void write_png_gray(const std::string& path, const Tensor& map) {
  if (map.rank() != 3 || map.dim(0) != 1)
    throw ShapeError("write_png_gray expects [1,H,W]");
  const int64_t h = map.dim(1), w = map.dim(2);
  std::vector<uint8_t> px(static_cast<size_t>(h) * w);
  const double* d = map.data();
  for (int64_t p = 0; p < h * w; ++p) px[static_cast<size_t>(p)] = to_u8(d[p]);
  encode_png(path, px, w, h, PNG_COLOR_TYPE_GRAY);
}

}  // namespace dh
