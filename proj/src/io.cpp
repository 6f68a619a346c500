#include "dgs/io.hpp"

#include <png.h>

#include <bit>
#include <cstdio>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "blob formats are little-endian; big-endian hosts are unsupported");

namespace dgs {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint8_t to_byte(float v) {
  const float c = std::min(1.0f, std::max(0.0f, v));
  return uint8_t(std::lround(c * 255.0f));
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image<float>& img) {
  require(img.channels == 1 || img.channels == 3,
          cat("write_png: expected 1 or 3 channels, got ", img.channels));
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  require(fp != nullptr, cat("write_png: cannot open ", path.string()));

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  require(png && info, "write_png: libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error(cat("write_png: libpng error on ", path.string()));
  }
  png_init_io(png, fp.get());
  const int color_type = img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, img.width, img.height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<uint8_t> row(size_t(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        row[size_t(x) * img.channels + c] = to_byte(img.at(c, y, x));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image<float> read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  require(fp != nullptr, cat("read_png: cannot open ", path.string()));

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  require(png && info, "read_png: libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error(cat("read_png: libpng error on ", path.string()));
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const int w = int(png_get_image_width(png, info));
  const int h = int(png_get_image_height(png, info));
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);

  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = int(png_get_channels(png, info));
  require(channels == 1 || channels == 3,
          cat("read_png: unsupported channel count ", channels, " in ", path.string()));

  std::vector<uint8_t> raw(size_t(h) * w * channels);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = raw.data() + size_t(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image<float> img(h, w, channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) = raw[(size_t(y) * w + x) * channels + c] / 255.0f;
  return img;
}

void write_f32_blob(const std::filesystem::path& path, const float* data, size_t count) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), cat("write_f32_blob: cannot open ", path.string()));
  f.write(reinterpret_cast<const char*>(data), std::streamsize(count * sizeof(float)));
  require(f.good(), cat("write_f32_blob: write failed on ", path.string()));
}

std::vector<float> read_f32_blob(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  require(f.good(), cat("read_f32_blob: cannot open ", path.string()));
  const auto bytes = size_t(f.tellg());
  require(bytes % sizeof(float) == 0,
          cat("read_f32_blob: ", path.string(), " size ", bytes, " is not a float array"));
  std::vector<float> out(bytes / sizeof(float));
  f.seekg(0);
  f.read(reinterpret_cast<char*>(out.data()), std::streamsize(bytes));
  require(f.good(), cat("read_f32_blob: read failed on ", path.string()));
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(f.good(), cat("read_text_file: cannot open ", path.string()));
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path);
  require(f.good(), cat("write_text_file: cannot open ", path.string()));
  f << text;
  require(f.good(), cat("write_text_file: write failed on ", path.string()));
}

}  // namespace dgs
