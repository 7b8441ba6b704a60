#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "divseg/errors.hpp"
#include "divseg/image.hpp"

namespace divseg {

// Guard below which the mean achromatic level counts as an all-black image.
inline constexpr double kEpsDiv = 1e-6;

// Opponent transform. Row A is Rec. 709 relative luminance; the T (red-green)
// and D (yellow-blue) rows sum to zero so neutral grays map to T = D = 0.
inline constexpr std::array<std::array<double, 3>, 3> kRgbToAtd = {{
    {0.2126, 0.7152, 0.0722},
    {0.5, -0.5, 0.0},
    {0.25, 0.25, -0.5},
}};

namespace detail {

inline std::array<std::array<double, 3>, 3> invert3(
    const std::array<std::array<double, 3>, 3>& m) {
  const double det =
      m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
      m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
      m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  std::array<std::array<double, 3>, 3> inv;
  inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return inv;
}

}  // namespace detail

inline const std::array<std::array<double, 3>, 3>& atd_to_rgb_matrix() {
  static const auto inv = detail::invert3(kRgbToAtd);
  return inv;
}

inline PlanarImage to_atd(const PlanarImage& img) {
  if (img.space() != ColorSpace::LinearRGB)
    throw InvalidInput("to_atd: input must be linear RGB");
  if (!img.finite()) throw InvalidInput("to_atd: non-finite samples");
  PlanarImage out(img.width(), img.height(), ColorSpace::ATD);
  const std::size_t n = img.pixels();
  const double* r = img.plane(0);
  const double* g = img.plane(1);
  const double* b = img.plane(2);
  for (int c = 0; c < 3; ++c) {
    double* dst = out.plane(c);
    const auto& row = kRgbToAtd[c];
    for (std::size_t i = 0; i < n; ++i)
      dst[i] = row[0] * r[i] + row[1] * g[i] + row[2] * b[i];
  }
  return out;
}

inline PlanarImage from_atd(const PlanarImage& img, bool clip_for_export = false) {
  if (img.space() != ColorSpace::ATD)
    throw InvalidInput("from_atd: input must be ATD");
  if (!img.finite()) throw InvalidInput("from_atd: non-finite samples");
  PlanarImage out(img.width(), img.height(), ColorSpace::LinearRGB);
  const auto& m = atd_to_rgb_matrix();
  const std::size_t n = img.pixels();
  const double* a = img.plane(0);
  const double* t = img.plane(1);
  const double* d = img.plane(2);
  for (int c = 0; c < 3; ++c) {
    double* dst = out.plane(c);
    const auto& row = m[c];
    for (std::size_t i = 0; i < n; ++i)
      dst[i] = row[0] * a[i] + row[1] * t[i] + row[2] * d[i];
  }
  if (clip_for_export) out.clip01();
  return out;
}

// (mu_A, C_a, C_chro) descriptor triple of one image.
struct VisualStats {
  double mean_lum = 0.0;  // mu_A
  double achro_ctr = 0.0;  // C_a = sqrt(2) * sigma_A / mu_A
  double chro_ctr = 0.0;   // C_chro = sqrt(2) * sqrt(sigma_T^2 + sigma_D^2) / mu_A
};

enum class StatsFeature { MeanLum, AchroCtr, ChroCtr };

inline double stats_feature(const VisualStats& s, StatsFeature f) {
  switch (f) {
    case StatsFeature::MeanLum: return s.mean_lum;
    case StatsFeature::AchroCtr: return s.achro_ctr;
    case StatsFeature::ChroCtr: return s.chro_ctr;
  }
  return 0.0;
}

namespace detail {

// Population mean and standard deviation of one plane.
inline void plane_moments(const double* p, std::size_t n, double& mean, double& sd) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += p[i];
  mean = sum / static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = p[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  sd = std::sqrt(var);
}

}  // namespace detail

inline VisualStats visual_stats(const PlanarImage& img) {
  const PlanarImage atd = img.space() == ColorSpace::ATD ? img : to_atd(img);
  const std::size_t n = atd.pixels();
  double mu_a, sd_a, mu_t, sd_t, mu_d, sd_d;
  detail::plane_moments(atd.plane(0), n, mu_a, sd_a);
  detail::plane_moments(atd.plane(1), n, mu_t, sd_t);
  detail::plane_moments(atd.plane(2), n, mu_d, sd_d);
  if (mu_a <= kEpsDiv)
    throw DegenerateImage("visual_stats: mean achromatic level below guard");
  const double root2 = std::sqrt(2.0);
  VisualStats s;
  s.mean_lum = mu_a;
  s.achro_ctr = root2 * sd_a / mu_a;
  s.chro_ctr = root2 * std::sqrt(sd_t * sd_t + sd_d * sd_d) / mu_a;
  return s;
}

struct Histogram {
  std::vector<double> edges;   // bins + 1 monotone edges
  std::vector<std::size_t> counts;
  double median = 0.0;
};

inline Histogram stats_histogram(const std::vector<VisualStats>& stats,
                                 StatsFeature feature, int bins) {
  if (stats.empty()) throw EmptyDataset("stats_histogram: empty list");
  if (bins < 2) throw InvalidInput("stats_histogram: bins must be >= 2");
  std::vector<double> v(stats.size());
  for (std::size_t i = 0; i < stats.size(); ++i)
    v[i] = stats_feature(stats[i], feature);
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  double lo = *lo_it, hi = *hi_it;
  if (hi == lo) hi = lo + 1.0;  // single occupied bin for constant data

  Histogram h;
  h.edges.resize(bins + 1);
  for (int b = 0; b <= bins; ++b)
    h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / bins;
  h.counts.assign(bins, 0);
  for (double x : v) {
    int b = static_cast<int>((x - lo) / (hi - lo) * bins);
    b = std::clamp(b, 0, bins - 1);
    ++h.counts[b];
  }

  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  h.median = (n % 2 == 1) ? sorted[n / 2]
                          : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return h;
}

// sRGB transfer curve. Decoded 8/16-bit files pass through srgb_to_linear
// before any statistics or transforms are applied.
inline double srgb_to_linear(double v) {
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

inline double linear_to_srgb(double v) {
  return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

}  // namespace divseg
