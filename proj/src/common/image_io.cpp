#include "lithomt/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "lithomt/error.hpp"

namespace lmt::io {
namespace {

struct File {
  std::FILE* f = nullptr;
  ~File() {
    if (f) std::fclose(f);
  }
};

void write_png(const std::filesystem::path& path, int width, int height, int color_type,
               int channels, const std::uint8_t* data) {
  File file{std::fopen(path.c_str(), "wb")};
  if (!file.f) throw IoError("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing png: " + path.string());
  }
  png_init_io(png, file.f);
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(data + static_cast<size_t>(y) * width * channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_gray_png(const std::filesystem::path& path, const Gray& img) {
  write_png(path, static_cast<int>(img.cols()), static_cast<int>(img.rows()), PNG_COLOR_TYPE_GRAY, 1,
            img.data());
}

void write_rgb_png(const std::filesystem::path& path, const Rgb& img) {
  write_png(path, img.width, img.height, PNG_COLOR_TYPE_RGB, 3, img.data.data());
}

Gray read_gray_png(const std::filesystem::path& path) {
  File file{std::fopen(path.c_str(), "rb")};
  if (!file.f) throw IoError("cannot open for reading: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed reading png: " + path.string());
  }
  png_init_io(png, file.f);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  const int width = png_get_image_width(png, info);
  const int height = png_get_image_height(png, info);
  Gray img(height, width);
  for (int y = 0; y < height; ++y) png_read_row(png, img.data() + static_cast<size_t>(y) * width, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_binary_png(const std::filesystem::path& path, const BinaryRaster& r) {
  Gray g = (r.pixels != 0).cast<std::uint8_t>() * std::uint8_t(255);
  write_gray_png(path, g);
}

BinaryRaster read_binary_png(const std::filesystem::path& path, double pitch_nm) {
  const Gray g = read_gray_png(path);
  return BinaryRaster((g >= 128).cast<std::uint8_t>(), pitch_nm);
}

}  // namespace lmt::io
