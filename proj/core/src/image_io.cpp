#include "mops/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <stdexcept>
#include <vector>

namespace mops::render {

void write_png(const std::string& path, const Observation& obs) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw std::runtime_error("write_png: libpng failure for " + path);
  }

  png_init_io(png, fp);
  png_set_IHDR(png, info, kImageSize, kImageSize, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  const std::vector<uint8_t> bytes = quantize(obs);
  std::vector<png_bytep> rows(kImageSize);
  std::vector<uint8_t> buf(bytes);
  for (int y = 0; y < kImageSize; ++y) {
    rows[y] = buf.data() + static_cast<size_t>(y) * kImageSize * 3;
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace mops::render
