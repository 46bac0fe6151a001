#pragma once

// Channel-major 4D activations (C, D, H, W), batch size 1.

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "fseg/volume.hpp"

namespace fseg {

template <typename T>
struct Tensor {
  std::size_t c = 0;
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(std::size_t channels, std::size_t depth, std::size_t height, std::size_t width, T fill = T{})
      : c(channels), d(depth), h(height), w(width), v(channels * depth * height * width, fill) {}
  Tensor(std::size_t channels, const Shape3& s, T fill = T{}) : Tensor(channels, s.d0, s.d1, s.d2, fill) {}

  [[nodiscard]] std::size_t spatial() const { return d * h * w; }
  [[nodiscard]] std::size_t size() const { return v.size(); }
  [[nodiscard]] bool empty() const { return v.empty(); }
  [[nodiscard]] Shape3 spatial_shape() const { return {d, h, w}; }
  [[nodiscard]] bool same_shape(const Tensor& o) const { return c == o.c && d == o.d && h == o.h && w == o.w; }

  [[nodiscard]] std::size_t index(std::size_t ch, std::size_t z, std::size_t y, std::size_t x) const {
    return ((ch * d + z) * h + y) * w + x;
  }
  T& operator()(std::size_t ch, std::size_t z, std::size_t y, std::size_t x) { return v[index(ch, z, y, x)]; }
  const T& operator()(std::size_t ch, std::size_t z, std::size_t y, std::size_t x) const {
    return v[index(ch, z, y, x)];
  }
  T* channel(std::size_t ch) { return v.data() + ch * spatial(); }
  const T* channel(std::size_t ch) const { return v.data() + ch * spatial(); }
};

template <typename T, typename S>
Tensor<T> tensor_from_grid(const Grid3<S>& g, double scale = 1.0) {
  Tensor<T> t(1, g.shape());
  for (std::size_t n = 0; n < g.size(); ++n) t.v[n] = static_cast<T>(static_cast<double>(g[n]) * scale);
  return t;
}

template <typename T>
FloatGrid grid_from_channel(const Tensor<T>& t, std::size_t ch = 0) {
  if (ch >= t.c) throw std::out_of_range("grid_from_channel: channel out of range");
  FloatGrid g(t.spatial_shape());
  const T* p = t.channel(ch);
  for (std::size_t n = 0; n < g.size(); ++n) g[n] = static_cast<float>(p[n]);
  return g;
}

}  // namespace fseg
