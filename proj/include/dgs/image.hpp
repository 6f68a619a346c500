#pragma once

#include "dgs/common.hpp"

namespace dgs {

// Planar image buffer: data[c * H * W + y * W + x].
template <class S>
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<S> data;

  Image() = default;
  Image(int h, int w, int c, S fill = S(0))
      : height(h), width(w), channels(c), data(size_t(h) * w * c, fill) {}

  size_t size() const { return data.size(); }
  size_t plane() const { return size_t(height) * width; }

  S& at(int c, int y, int x) { return data[size_t(c) * plane() + size_t(y) * width + x]; }
  S at(int c, int y, int x) const { return data[size_t(c) * plane() + size_t(y) * width + x]; }

  S* channel(int c) { return data.data() + size_t(c) * plane(); }
  const S* channel(int c) const { return data.data() + size_t(c) * plane(); }

  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  void fill(S v) { std::fill(data.begin(), data.end(), v); }

  template <class T>
  Image<T> cast() const {
    Image<T> out(height, width, channels);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = T(data[i]);
    return out;
  }
};

template <class S>
void require_same_shape(const Image<S>& a, const Image<S>& b, const char* who) {
  require(a.same_shape(b), cat(who, ": shape mismatch (", a.height, "x", a.width, "x", a.channels,
                               " vs ", b.height, "x", b.width, "x", b.channels, ")"));
}

}  // namespace dgs
