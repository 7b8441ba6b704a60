#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "divseg/errors.hpp"

namespace divseg {

enum class ColorSpace { LinearRGB, ATD };

// Three-plane floating point image. Planes are stored contiguously,
// plane-major: sample(c, y, x) = data[c * w * h + y * w + x].
class PlanarImage {
 public:
  PlanarImage() = default;
  PlanarImage(int width, int height, ColorSpace space)
      : width_(width), height_(height), space_(space),
        data_(static_cast<std::size_t>(3) * width * height, 0.0) {
    if (width <= 0 || height <= 0)
      throw InvalidInput("PlanarImage: dimensions must be positive");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixels() const { return static_cast<std::size_t>(width_) * height_; }
  ColorSpace space() const { return space_; }
  void set_space(ColorSpace s) { space_ = s; }

  double& at(int c, int y, int x) {
    return data_[static_cast<std::size_t>(c) * pixels() + static_cast<std::size_t>(y) * width_ + x];
  }
  double at(int c, int y, int x) const {
    return data_[static_cast<std::size_t>(c) * pixels() + static_cast<std::size_t>(y) * width_ + x];
  }

  double* plane(int c) { return data_.data() + static_cast<std::size_t>(c) * pixels(); }
  const double* plane(int c) const { return data_.data() + static_cast<std::size_t>(c) * pixels(); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  void clip01() {
    for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
  }

  // Fraction of samples that clip01() would change.
  double clipped_fraction() const {
    std::size_t n = 0;
    for (double v : data_)
      if (v < 0.0 || v > 1.0) ++n;
    return static_cast<double>(n) / static_cast<double>(data_.size());
  }

  bool same_dims(const PlanarImage& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  ColorSpace space_ = ColorSpace::LinearRGB;
  std::vector<double> data_;
};

// Per-pixel integer class map shared by ground truth and predictions.
class LabelMask {
 public:
  static constexpr int kNoIgnore = -1;

  LabelMask() = default;
  LabelMask(int width, int height, int fill = 0)
      : width_(width), height_(height),
        labels_(static_cast<std::size_t>(width) * height, fill) {
    if (width <= 0 || height <= 0)
      throw InvalidInput("LabelMask: dimensions must be positive");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return labels_.size(); }

  int& at(int y, int x) { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  int at(int y, int x) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }

  std::vector<int>& labels() { return labels_; }
  const std::vector<int>& labels() const { return labels_; }

  bool same_dims(const LabelMask& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<int> labels_;
};

// Single-channel depth in meters.
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(int width, int height, double fill = 0.0)
      : width_(width), height_(height),
        depth_(static_cast<std::size_t>(width) * height, fill) {
    if (width <= 0 || height <= 0)
      throw InvalidInput("DepthMap: dimensions must be positive");
  }

  int width() const { return width_; }
  int height() const { return height_; }

  double& at(int y, int x) { return depth_[static_cast<std::size_t>(y) * width_ + x]; }
  double at(int y, int x) const { return depth_[static_cast<std::size_t>(y) * width_ + x]; }

  std::vector<double>& data() { return depth_; }
  const std::vector<double>& data() const { return depth_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> depth_;
};

}  // namespace divseg
