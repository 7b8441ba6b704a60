#pragma once

#include <array>
#include <cmath>

namespace divseg {

// CIE 1931 2-degree color matching functions, 400-700 nm at 10 nm.
inline constexpr int kBands = 31;
inline constexpr double kLambdaMin = 400.0;
inline constexpr double kLambdaStep = 10.0;

inline constexpr std::array<std::array<double, 3>, kBands> kCmf1931 = {{
    {0.014310, 0.000396, 0.067850},
    {0.043510, 0.001210, 0.207400},
    {0.134380, 0.004000, 0.645600},
    {0.283900, 0.011600, 1.385600},
    {0.348280, 0.023000, 1.747060},
    {0.336200, 0.038000, 1.772110},
    {0.290800, 0.060000, 1.669200},
    {0.195360, 0.090980, 1.287640},
    {0.095640, 0.139020, 0.812950},
    {0.032010, 0.208020, 0.465180},
    {0.004900, 0.323000, 0.272000},
    {0.009300, 0.503000, 0.158200},
    {0.063270, 0.710000, 0.078250},
    {0.165500, 0.862000, 0.042160},
    {0.290400, 0.954000, 0.020300},
    {0.433450, 0.994950, 0.008750},
    {0.594500, 0.995000, 0.003900},
    {0.762100, 0.952000, 0.002100},
    {0.916300, 0.870000, 0.001650},
    {1.026300, 0.757000, 0.001100},
    {1.062200, 0.631000, 0.000800},
    {1.002600, 0.503000, 0.000340},
    {0.854450, 0.381000, 0.000190},
    {0.642400, 0.265000, 0.000050},
    {0.447900, 0.175000, 0.000020},
    {0.283500, 0.107000, 0.000000},
    {0.164900, 0.061000, 0.000000},
    {0.087400, 0.032000, 0.000000},
    {0.046770, 0.017000, 0.000000},
    {0.022700, 0.008210, 0.000000},
    {0.011359, 0.004102, 0.000000},
}};

// Linear sRGB (D65) <-> CIE XYZ.
inline constexpr std::array<std::array<double, 3>, 3> kRgbToXyz = {{
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
}};

// Exact inverse of kRgbToXyz so the round trip is lossless to machine
// precision.
constexpr std::array<std::array<double, 3>, 3> invert3_(
    const std::array<std::array<double, 3>, 3>& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  std::array<std::array<double, 3>, 3> inv{};
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

inline constexpr std::array<std::array<double, 3>, 3> kXyzToRgb =
    invert3_(kRgbToXyz);

inline std::array<double, 3> rgb_to_xyz(const std::array<double, 3>& rgb) {
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i)
    out[i] = kRgbToXyz[i][0] * rgb[0] + kRgbToXyz[i][1] * rgb[1] +
             kRgbToXyz[i][2] * rgb[2];
  return out;
}

inline std::array<double, 3> xyz_to_rgb(const std::array<double, 3>& xyz) {
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i)
    out[i] = kXyzToRgb[i][0] * xyz[0] + kXyzToRgb[i][1] * xyz[1] +
             kXyzToRgb[i][2] * xyz[2];
  return out;
}

inline std::array<double, 2> xyz_to_xy(const std::array<double, 3>& xyz) {
  const double s = xyz[0] + xyz[1] + xyz[2];
  return {xyz[0] / s, xyz[1] / s};
}

}  // namespace divseg
