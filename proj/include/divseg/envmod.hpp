#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "divseg/cie.hpp"
#include "divseg/colorcore.hpp"
#include "divseg/errors.hpp"
#include "divseg/image.hpp"

namespace divseg {

// ---------------------------------------------------------------------------
// Fog (Koschmieder model)
// ---------------------------------------------------------------------------

enum class FogPreset { Low, Middle, High };

inline double fog_preset_attenuation(FogPreset p) {
  switch (p) {
    case FogPreset::Low: return 0.005;
    case FogPreset::Middle: return 0.1;
    case FogPreset::High: return 0.2;
  }
  return 0.0;
}

struct FogSpec {
  double attenuation = 0.005;  // beta, per meter
  double airlight_a = 0.8;     // achromatic airlight level, ATD A channel
  // Constant depth in meters when set; otherwise a per-pixel map is required.
  std::optional<double> constant_depth;

  static FogSpec preset(FogPreset p, double depth_m = 0.0) {
    FogSpec s;
    s.attenuation = fog_preset_attenuation(p);
    if (depth_m > 0.0) s.constant_depth = depth_m;
    return s;
  }
};

inline PlanarImage apply_fog(const PlanarImage& img, const FogSpec& spec,
                             const DepthMap* depth = nullptr) {
  if (img.space() != ColorSpace::LinearRGB)
    throw InvalidInput("apply_fog: expects linear RGB");
  if (spec.attenuation <= 0.0) throw InvalidSpec("apply_fog: attenuation must be > 0");
  if (spec.airlight_a <= 0.0 || spec.airlight_a > 1.0)
    throw InvalidSpec("apply_fog: airlight A must be in (0,1]");
  if (spec.constant_depth) {
    if (*spec.constant_depth <= 0.0)
      throw InvalidSpec("apply_fog: constant depth must be > 0");
  } else {
    if (!depth) throw DepthRequired("apply_fog: depth map required");
    if (depth->width() != img.width() || depth->height() != img.height())
      throw ShapeError("apply_fog: depth dims mismatch");
    for (double d : depth->data())
      if (!(d > 0.0)) throw DepthRequired("apply_fog: depth values must be > 0");
  }

  // Achromatic airlight (A, 0, 0) in ATD is the gray (A, A, A) in RGB.
  const double air = spec.airlight_a;
  PlanarImage out(img.width(), img.height(), ColorSpace::LinearRGB);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const double d = spec.constant_depth ? *spec.constant_depth : depth->at(y, x);
      const double t = std::exp(-spec.attenuation * d);
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = img.at(c, y, x) * t + air * (1.0 - t);
    }
  out.clip01();
  return out;
}

// ---------------------------------------------------------------------------
// Luminance / contrast factor grid
// ---------------------------------------------------------------------------

inline constexpr double kFactorMin = 0.5;
inline constexpr double kFactorMax = 1.4;

struct ModFactors {
  double f_lum = 1.0;
  double f_actr = 1.0;
  double f_cctr = 1.0;
};

inline void check_factors(const ModFactors& f, bool allow_outside_grid = false) {
  if (allow_outside_grid) {
    if (f.f_lum <= 0.0 || f.f_actr < 0.0 || f.f_cctr < 0.0)
      throw InvalidSpec("modify factors must be non-negative (f_lum > 0)");
    return;
  }
  for (double v : {f.f_lum, f.f_actr, f.f_cctr})
    if (v < kFactorMin || v > kFactorMax)
      throw InvalidSpec("modify factor outside [0.5, 1.4]; pass the override flag");
}

// Scales the three descriptors independently in ATD space: the luminance
// factor first, then achromatic contrast about the recomputed mean, then
// chromatic contrast about the recomputed chromatic means.
inline PlanarImage modify_lum_contrast(const PlanarImage& img, const ModFactors& f,
                                       bool clip = true,
                                       bool allow_outside_grid = false) {
  if (img.space() != ColorSpace::LinearRGB)
    throw InvalidInput("modify_lum_contrast: expects linear RGB");
  check_factors(f, allow_outside_grid);
  if (f.f_lum == 1.0 && f.f_actr == 1.0 && f.f_cctr == 1.0) return img;

  PlanarImage atd = to_atd(img);
  const std::size_t n = atd.pixels();
  double* a = atd.plane(0);
  double* t = atd.plane(1);
  double* d = atd.plane(2);

  for (std::size_t i = 0; i < n; ++i) {
    a[i] *= f.f_lum;
    t[i] *= f.f_lum;
    d[i] *= f.f_lum;
  }

  const auto mean = [n](const double* p) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p[i];
    return s / static_cast<double>(n);
  };

  const double mu_a = mean(a);
  if (mu_a <= kEpsDiv)
    throw DegenerateImage("modify_lum_contrast: degenerate mean luminance");
  for (std::size_t i = 0; i < n; ++i) a[i] = mu_a + f.f_actr * (a[i] - mu_a);

  const double mu_t = mean(t);
  const double mu_d = mean(d);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = mu_t + f.f_cctr * (t[i] - mu_t);
    d[i] = mu_d + f.f_cctr * (d[i] - mu_d);
  }

  PlanarImage out = from_atd(atd);
  if (clip) out.clip01();
  return out;
}

inline std::vector<double> grid_factors(int steps) {
  if (steps < 2) throw InvalidSpec("grid needs at least 2 steps per axis");
  std::vector<double> v(steps);
  for (int i = 0; i < steps; ++i)
    v[i] = kFactorMin + (kFactorMax - kFactorMin) * i / (steps - 1);
  return v;
}

struct GridRecord {
  std::string image_id;
  ModFactors factors;
  std::string out_path;
  double clipped_fraction = 0.0;
  bool grid_center = false;  // factors nearest to 1.0 on every axis
};

// ---------------------------------------------------------------------------
// Spectral relighting
// ---------------------------------------------------------------------------

struct SpectralTable {
  // 31 bands, 400-700 nm at 10 nm. cmf[b] = (xbar, ybar, zbar).
  std::array<std::array<double, 3>, kBands> cmf;
  // Three reflectance basis functions per band.
  std::array<std::array<double, 3>, kBands> basis;
  // M[i][j] = sum_b basis_j(b) * cmf_i(b): tristimulus of each basis
  // function under the equienergetic illuminant. Cached inverse drives the
  // per-pixel reflectance solve.
  std::array<std::array<double, 3>, 3> basis_tristim;
  std::array<std::array<double, 3>, 3> basis_tristim_inv;

  static SpectralTable standard() {
    SpectralTable t;
    t.cmf = kCmf1931;
    for (int b = 0; b < kBands; ++b) {
      const double u = static_cast<double>(b) / (kBands - 1);  // 0..1 over 400-700
      t.basis[b][0] = 1.0;
      t.basis[b][1] = std::cos(0.5 * std::numbers::pi * u);
      t.basis[b][2] = std::sin(0.5 * std::numbers::pi * u);
    }
    t.finalize();
    return t;
  }

  void finalize() {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int b = 0; b < kBands; ++b) s += basis[b][j] * cmf[b][i];
        basis_tristim[i][j] = s;
      }
    const double det =
        basis_tristim[0][0] * (basis_tristim[1][1] * basis_tristim[2][2] -
                               basis_tristim[1][2] * basis_tristim[2][1]) -
        basis_tristim[0][1] * (basis_tristim[1][0] * basis_tristim[2][2] -
                               basis_tristim[1][2] * basis_tristim[2][0]) +
        basis_tristim[0][2] * (basis_tristim[1][0] * basis_tristim[2][1] -
                               basis_tristim[1][1] * basis_tristim[2][0]);
    if (std::abs(det) < 1e-9)
      throw InvalidSpectralTable("reflectance basis is singular under the CMFs");
    basis_tristim_inv = detail::invert3(basis_tristim);
  }

  // Chromaticity of the flat (equienergetic) spectrum under this table.
  std::array<double, 2> white_xy() const {
    std::array<double, 3> xyz{};
    for (int b = 0; b < kBands; ++b)
      for (int i = 0; i < 3; ++i) xyz[i] += cmf[b][i];
    return xyz_to_xy(xyz);
  }
};

struct IlluminantSpec {
  double hue_angle_deg = 0.0;   // [0, 360)
  int saturation_radius = 0;    // 0..5; 0 is the white point itself
  std::optional<std::array<double, 2>> white_point;  // defaults to table white

  static constexpr double kRadiusStepXy = 0.03;
};

// Per-pixel reflectance expressed as basis weights; bands are basis * w,
// clipped to [0,1] after the solve.
struct ReflectanceField {
  int width = 0;
  int height = 0;
  std::vector<std::array<double, 3>> weights;  // row-major
  std::vector<bool> clipped;                   // any band clipped for this pixel

  std::array<double, kBands> bands(const SpectralTable& tbl, std::size_t i) const {
    std::array<double, kBands> r{};
    for (int b = 0; b < kBands; ++b) {
      double v = tbl.basis[b][0] * weights[i][0] + tbl.basis[b][1] * weights[i][1] +
                 tbl.basis[b][2] * weights[i][2];
      r[b] = std::clamp(v, 0.0, 1.0);
    }
    return r;
  }
};

inline ReflectanceField recover_reflectance(const PlanarImage& img,
                                            const SpectralTable& tbl) {
  if (img.space() != ColorSpace::LinearRGB)
    throw InvalidInput("recover_reflectance: expects linear RGB");
  ReflectanceField rf;
  rf.width = img.width();
  rf.height = img.height();
  rf.weights.resize(img.pixels());
  rf.clipped.assign(img.pixels(), false);
  const auto& inv = tbl.basis_tristim_inv;
  std::size_t i = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x, ++i) {
      const auto xyz = rgb_to_xyz({img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)});
      for (int j = 0; j < 3; ++j)
        rf.weights[i][j] =
            inv[j][0] * xyz[0] + inv[j][1] * xyz[1] + inv[j][2] * xyz[2];
      for (int b = 0; b < kBands; ++b) {
        const double v = tbl.basis[b][0] * rf.weights[i][0] +
                         tbl.basis[b][1] * rf.weights[i][1] +
                         tbl.basis[b][2] * rf.weights[i][2];
        if (v < -1e-12 || v > 1.0 + 1e-12) rf.clipped[i] = true;
      }
    }
  return rf;
}

namespace detail {

// Fixed illuminant primaries: three Gaussian band spectra plus the flat
// spectrum. Columns of the returned matrix are per-band energies.
inline std::array<std::array<double, 4>, kBands> illuminant_primaries() {
  std::array<std::array<double, 4>, kBands> p{};
  const std::array<double, 3> centers = {450.0, 550.0, 610.0};
  const double width = 60.0;
  for (int b = 0; b < kBands; ++b) {
    const double lambda = kLambdaMin + b * kLambdaStep;
    for (int j = 0; j < 3; ++j) {
      const double d = (lambda - centers[j]) / width;
      p[b][j] = std::exp(-0.5 * d * d);
    }
    p[b][3] = 1.0;
  }
  return p;
}

// Least squares on an n x k system (k <= 4) via normal equations.
template <int K>
inline bool solve_normal(const std::array<std::array<double, K>, 3>& a,
                         const std::array<double, 3>& t,
                         std::array<double, K>& w) {
  double ata[K][K];
  double atb[K];
  for (int i = 0; i < K; ++i) {
    atb[i] = 0.0;
    for (int r = 0; r < 3; ++r) atb[i] += a[r][i] * t[r];
    for (int j = 0; j < K; ++j) {
      ata[i][j] = 0.0;
      for (int r = 0; r < 3; ++r) ata[i][j] += a[r][i] * a[r][j];
    }
  }
  // Gaussian elimination with partial pivoting.
  int idx[K];
  for (int i = 0; i < K; ++i) idx[i] = i;
  for (int col = 0; col < K; ++col) {
    int piv = col;
    for (int r = col + 1; r < K; ++r)
      if (std::abs(ata[r][col]) > std::abs(ata[piv][col])) piv = r;
    if (std::abs(ata[piv][col]) < 1e-14) return false;
    for (int j = 0; j < K; ++j) std::swap(ata[col][j], ata[piv][j]);
    std::swap(atb[col], atb[piv]);
    for (int r = col + 1; r < K; ++r) {
      const double f = ata[r][col] / ata[col][col];
      for (int j = col; j < K; ++j) ata[r][j] -= f * ata[col][j];
      atb[r] -= f * atb[col];
    }
  }
  for (int i = K - 1; i >= 0; --i) {
    double s = atb[i];
    for (int j = i + 1; j < K; ++j) s -= ata[i][j] * w[j];
    w[i] = s / ata[i][i];
  }
  return true;
}

// The chromaticity diagram is the convex hull of the monochromatic band
// chromaticities (the purple line closes the horseshoe). A target outside
// this hull corresponds to no physical spectrum.
inline bool inside_spectral_locus(const std::array<double, 2>& xy,
                                  const SpectralTable& tbl,
                                  double tol = 1e-9) {
  std::vector<std::array<double, 2>> pts;
  pts.reserve(kBands);
  for (int b = 0; b < kBands; ++b) {
    const double s = tbl.cmf[b][0] + tbl.cmf[b][1] + tbl.cmf[b][2];
    if (s <= 0.0) continue;
    pts.push_back({tbl.cmf[b][0] / s, tbl.cmf[b][1] / s});
  }
  std::sort(pts.begin(), pts.end());
  // Andrew monotone chain convex hull.
  auto cross = [](const std::array<double, 2>& o, const std::array<double, 2>& a,
                  const std::array<double, 2>& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
  };
  std::vector<std::array<double, 2>> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  const std::size_t lower = k + 1;
  for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], *it) <= 0.0) --k;
    hull[k++] = *it;
  }
  hull.resize(k - 1);  // counter-clockwise, last point == first omitted
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    if (cross(a, b, xy) < -tol) return false;
  }
  return true;
}

}  // namespace detail

// Non-negative spectrum matching the target chromaticity at unit luminance.
// Solved by enumerating active sets over the four fixed primaries; ties on
// residual prefer the least colored (smallest Gaussian energy) solution so
// the white target maps to the pure flat spectrum.
inline std::array<double, kBands> synthesize_illuminant(
    const std::array<double, 2>& target_xy, const SpectralTable& tbl) {
  const auto prim = detail::illuminant_primaries();
  // Tristimulus of each primary.
  std::array<std::array<double, 4>, 3> a{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int b = 0; b < kBands; ++b) s += prim[b][j] * tbl.cmf[b][i];
      a[i][j] = s;
    }
  const double x = target_xy[0], y = target_xy[1];
  if (y <= 1e-9) throw InvalidSpec("illuminant target chromaticity has y <= 0");
  if (!detail::inside_spectral_locus(target_xy, tbl))
    throw InvalidSpec("illuminant target chromaticity is outside the spectral locus");
  const std::array<double, 3> t = {x / y, 1.0, (1.0 - x - y) / y};

  std::array<double, 4> best{};
  double best_res = std::numeric_limits<double>::infinity();
  double best_color = std::numeric_limits<double>::infinity();
  bool found = false;
  for (int mask = 1; mask < 16; ++mask) {
    int cols[4], k = 0;
    for (int j = 0; j < 4; ++j)
      if (mask & (1 << j)) cols[k++] = j;
    std::array<std::array<double, 4>, 3> sub{};
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < k; ++c) sub[i][c] = a[i][cols[c]];
    std::array<double, 4> ws{};
    bool ok = false;
    switch (k) {
      case 1: {
        std::array<std::array<double, 1>, 3> m{};
        for (int i = 0; i < 3; ++i) m[i][0] = sub[i][0];
        std::array<double, 1> w1{};
        ok = detail::solve_normal<1>(m, t, w1);
        ws[0] = w1[0];
        break;
      }
      case 2: {
        std::array<std::array<double, 2>, 3> m{};
        for (int i = 0; i < 3; ++i)
          for (int c = 0; c < 2; ++c) m[i][c] = sub[i][c];
        std::array<double, 2> w2{};
        ok = detail::solve_normal<2>(m, t, w2);
        ws[0] = w2[0];
        ws[1] = w2[1];
        break;
      }
      case 3: {
        std::array<std::array<double, 3>, 3> m{};
        for (int i = 0; i < 3; ++i)
          for (int c = 0; c < 3; ++c) m[i][c] = sub[i][c];
        std::array<double, 3> w3{};
        ok = detail::solve_normal<3>(m, t, w3);
        for (int c = 0; c < 3; ++c) ws[c] = w3[c];
        break;
      }
      case 4: {
        ok = detail::solve_normal<4>(sub, t, ws);
        break;
      }
    }
    if (!ok) continue;
    bool nonneg = true;
    for (int c = 0; c < k; ++c)
      if (ws[c] < -1e-12) nonneg = false;
    if (!nonneg) continue;
    std::array<double, 4> w{};
    for (int c = 0; c < k; ++c) w[cols[c]] = std::max(ws[c], 0.0);
    double res = 0.0;
    for (int i = 0; i < 3; ++i) {
      double fit = 0.0;
      for (int j = 0; j < 4; ++j) fit += a[i][j] * w[j];
      const double d = fit - t[i];
      res += d * d;
    }
    const double color = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    if (res < best_res - 1e-12 ||
        (res < best_res + 1e-12 && color < best_color)) {
      best = w;
      best_res = res;
      best_color = color;
      found = true;
    }
  }
  if (!found)
    throw InvalidSpec("illuminant target chromaticity is unreachable");

  std::array<double, kBands> spectrum{};
  for (int b = 0; b < kBands; ++b)
    for (int j = 0; j < 4; ++j) spectrum[b] += prim[b][j] * best[j];
  return spectrum;
}

inline std::array<double, 2> illuminant_target_xy(const IlluminantSpec& ill,
                                                  const SpectralTable& tbl) {
  if (ill.saturation_radius < 0 || ill.saturation_radius > 5)
    throw InvalidSpec("saturation radius index must be in 0..5");
  const auto wp = ill.white_point ? *ill.white_point : tbl.white_xy();
  const double r = ill.saturation_radius * IlluminantSpec::kRadiusStepXy;
  const double th = ill.hue_angle_deg * std::numbers::pi / 180.0;
  return {wp[0] + r * std::cos(th), wp[1] + r * std::sin(th)};
}

// Relights the scene: recovers per-pixel reflectance, swaps the illuminant
// for one matching the requested chromaticity, and renormalizes so the scene
// mean luminance is preserved before gamut clipping.
inline PlanarImage relight(const PlanarImage& img, const IlluminantSpec& ill,
                           const SpectralTable& tbl, bool clip = true) {
  const ReflectanceField rf = recover_reflectance(img, tbl);
  const auto target = illuminant_target_xy(ill, tbl);
  const auto spectrum = synthesize_illuminant(target, tbl);

  // Tristimulus of each basis function under the new illuminant.
  std::array<std::array<double, 3>, 3> m{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int b = 0; b < kBands; ++b) s += tbl.basis[b][j] * tbl.cmf[b][i] * spectrum[b];
      m[i][j] = s;
    }

  PlanarImage out(img.width(), img.height(), ColorSpace::LinearRGB);
  double sum_y_in = 0.0, sum_y_out = 0.0;
  std::size_t i = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x, ++i) {
      std::array<double, 3> xyz{};
      if (rf.clipped[i]) {
        // Clipped reflectances leave the basis span; integrate band by band.
        const auto bands = rf.bands(tbl, i);
        for (int b = 0; b < kBands; ++b)
          for (int c = 0; c < 3; ++c) xyz[c] += bands[b] * tbl.cmf[b][c] * spectrum[b];
      } else {
        for (int c = 0; c < 3; ++c)
          xyz[c] = m[c][0] * rf.weights[i][0] + m[c][1] * rf.weights[i][1] +
                   m[c][2] * rf.weights[i][2];
      }
      const auto rgb = xyz_to_rgb(xyz);
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = rgb[c];
      sum_y_out += xyz[1];
      const auto xyz_in =
          rgb_to_xyz({img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)});
      sum_y_in += xyz_in[1];
    }

  if (sum_y_out > 1e-12) {
    const double gain = sum_y_in / sum_y_out;
    for (double& v : out.data()) v *= gain;
  }
  if (clip) out.clip01();
  return out;
}

}  // namespace divseg
