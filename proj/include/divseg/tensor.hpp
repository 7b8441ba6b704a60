#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "divseg/errors.hpp"
#include "divseg/image.hpp"

namespace divseg {

// Channel-major feature map, shape (channels, height, width).
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_, double fill = 0.0)
      : c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(c_) * h_ * w_, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t size() const { return v.size(); }

  double& at(int ci, int y, int x) {
    return v[static_cast<std::size_t>(ci) * plane() + static_cast<std::size_t>(y) * w + x];
  }
  double at(int ci, int y, int x) const {
    return v[static_cast<std::size_t>(ci) * plane() + static_cast<std::size_t>(y) * w + x];
  }

  double* channel(int ci) { return v.data() + static_cast<std::size_t>(ci) * plane(); }
  const double* channel(int ci) const {
    return v.data() + static_cast<std::size_t>(ci) * plane();
  }

  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

  bool finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  void zero() { std::fill(v.begin(), v.end(), 0.0); }
};

inline Tensor image_to_tensor(const PlanarImage& img) {
  Tensor t(3, img.height(), img.width());
  t.v = img.data();
  return t;
}

}  // namespace divseg
