#pragma once

#include <filesystem>

#include "dgs/image.hpp"

namespace dgs {

// 8-bit PNG I/O. Values are clamped to [0,1] on write and scaled by 1/255 on read.
void write_png(const std::filesystem::path& path, const Image<float>& img);
Image<float> read_png(const std::filesystem::path& path);

// Raw little-endian float32 arrays.
void write_f32_blob(const std::filesystem::path& path, const float* data, size_t count);
std::vector<float> read_f32_blob(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Dump helpers for RenderOutput debugging: color PNG + raw float opacity.
template <class S>
void dump_render(const std::filesystem::path& color_png, const std::filesystem::path& alpha_raw,
                 const Image<S>& color, const Image<S>& alpha) {
  write_png(color_png, color.template cast<float>());
  const Image<float> a = alpha.template cast<float>();
  write_f32_blob(alpha_raw, a.data.data(), a.data.size());
}

}  // namespace dgs
