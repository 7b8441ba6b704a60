#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "divseg/errors.hpp"
#include "divseg/tensor.hpp"

namespace divseg {

inline constexpr double kBetaMin = 1e-3;

// Parameters of one divisive normalization layer. The pool kernel gamma is
// a dense-over-channels 3x3 spatial kernel, indexed (out k, in s, ky, kx).
// The exponents are kept for the record but pinned to 1; only that form is
// differentiated.
struct DnParams {
  int channels = 0;
  std::vector<double> beta;   // per output channel, >= kBetaMin
  std::vector<double> gamma;  // channels * channels * 9, >= 0
  double alpha = 1.0;
  double eps_exp = 1.0;

  DnParams() = default;
  explicit DnParams(int ch)
      : channels(ch), beta(ch, 1.0),
        gamma(static_cast<std::size_t>(ch) * ch * 9, 1.0 / (9.0 * ch)) {}

  double& g(int k, int s, int ky, int kx) {
    return gamma[((static_cast<std::size_t>(k) * channels + s) * 3 + ky) * 3 + kx];
  }
  double g(int k, int s, int ky, int kx) const {
    return gamma[((static_cast<std::size_t>(k) * channels + s) * 3 + ky) * 3 + kx];
  }

  bool valid() const {
    if (channels <= 0 || static_cast<int>(beta.size()) != channels) return false;
    if (gamma.size() != static_cast<std::size_t>(channels) * channels * 9) return false;
    for (double b : beta)
      if (!(b >= kBetaMin)) return false;
    for (double gv : gamma)
      if (!(gv >= 0.0)) return false;
    return true;
  }

  std::size_t param_count() const { return beta.size() + gamma.size(); }
};

// Clamps parameters back into the feasible set after an optimizer step.
inline void project_params(DnParams& p) {
  for (double& b : p.beta) b = std::max(b, kBetaMin);
  for (double& g : p.gamma) g = std::max(g, 0.0);
}

struct DnActivation {
  Tensor input;   // z
  Tensor denom;   // D = beta + gamma * |z| pooled over 3x3, dense channels
  Tensor output;  // y = z / D
};

inline DnActivation dn_forward(const Tensor& z, const DnParams& p) {
  if (!p.valid()) throw InvalidInput("dn_forward: invalid parameters");
  if (z.c != p.channels) throw ShapeError("dn_forward: channel mismatch");
  if (!z.finite()) throw InvalidInput("dn_forward: non-finite input");

  const int H = z.h, W = z.w, C = z.c;
  DnActivation act;
  act.input = z;
  act.denom = Tensor(C, H, W);
  act.output = Tensor(C, H, W);

  // |z| once, reused across output channels.
  Tensor az(C, H, W);
  for (std::size_t i = 0; i < z.v.size(); ++i) az.v[i] = std::abs(z.v[i]);

  for (int k = 0; k < C; ++k) {
    double* d = act.denom.channel(k);
    for (std::size_t i = 0; i < act.denom.plane(); ++i) d[i] = p.beta[k];
    for (int s = 0; s < C; ++s) {
      const double* a = az.channel(s);
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const double gv = p.g(k, s, ky, kx);
          if (gv == 0.0) continue;
          const int dy = ky - 1, dx = kx - 1;
          const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
          for (int y = y0; y < y1; ++y) {
            const double* src = a + static_cast<std::size_t>(y + dy) * W + dx;
            double* dst = d + static_cast<std::size_t>(y) * W;
            for (int x = x0; x < x1; ++x) dst[x] += gv * src[x];
          }
        }
    }
  }
  for (std::size_t i = 0; i < act.output.v.size(); ++i)
    act.output.v[i] = act.input.v[i] / act.denom.v[i];
  return act;
}

struct DnGrads {
  Tensor grad_input;
  std::vector<double> grad_beta;
  std::vector<double> grad_gamma;
};

inline DnGrads dn_backward(const DnActivation& act, const Tensor& grad_out,
                           const DnParams& p) {
  if (!grad_out.same_shape(act.output))
    throw ShapeError("dn_backward: grad shape mismatch");
  const int H = act.input.h, W = act.input.w, C = act.input.c;

  DnGrads g;
  g.grad_input = Tensor(C, H, W);
  g.grad_beta.assign(p.beta.size(), 0.0);
  g.grad_gamma.assign(p.gamma.size(), 0.0);

  // dL/dD_k = grad_out_k * (-z_k / D_k^2); direct term dL/dz_k += grad_out_k / D_k.
  Tensor gd(C, H, W);
  for (std::size_t i = 0; i < gd.v.size(); ++i) {
    const double d = act.denom.v[i];
    gd.v[i] = -grad_out.v[i] * act.input.v[i] / (d * d);
    g.grad_input.v[i] = grad_out.v[i] / d;
  }

  for (int k = 0; k < C; ++k) {
    const double* gdk = gd.channel(k);
    for (std::size_t i = 0; i < gd.plane(); ++i) g.grad_beta[k] += gdk[i];
  }

  for (int k = 0; k < C; ++k) {
    const double* gdk = gd.channel(k);
    for (int s = 0; s < C; ++s) {
      const double* zs = act.input.channel(s);
      double* gis = g.grad_input.channel(s);
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const int dy = ky - 1, dx = kx - 1;
          const double gv = p.g(k, s, ky, kx);
          double* gg = &g.grad_gamma[((static_cast<std::size_t>(k) * C + s) * 3 + ky) * 3 + kx];
          const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
              const double zv = zs[static_cast<std::size_t>(y + dy) * W + (x + dx)];
              const double az = std::abs(zv);
              const double gdv = gdk[static_cast<std::size_t>(y) * W + x];
              *gg += gdv * az;
              // Subgradient of |z| at zero is taken as zero.
              if (zv > 0.0)
                gis[static_cast<std::size_t>(y + dy) * W + (x + dx)] += gv * gdv;
              else if (zv < 0.0)
                gis[static_cast<std::size_t>(y + dy) * W + (x + dx)] -= gv * gdv;
            }
        }
    }
  }
  return g;
}

struct ResponsePoint {
  double surround = 0.0;
  double center_in = 0.0;
  double center_out = 0.0;
};

// Sweeps the center of a 3x3 patch at fixed surround levels and records the
// layer's transformed center value for the requested channel. All input
// channels carry the same pattern.
inline std::vector<ResponsePoint> probe_center_surround(
    const DnParams& p, int channel, const std::vector<double>& surround_levels,
    int center_steps, double range_lo = 0.0, double range_hi = 1.0) {
  if (!p.valid()) throw InvalidInput("probe: invalid parameters");
  if (channel < 0 || channel >= p.channels) throw InvalidInput("probe: bad channel");
  if (center_steps < 2) throw InvalidInput("probe: need at least 2 center steps");

  std::vector<ResponsePoint> curve;
  curve.reserve(surround_levels.size() * center_steps);
  for (double b : surround_levels) {
    for (int i = 0; i < center_steps; ++i) {
      const double c = range_lo + (range_hi - range_lo) * i / (center_steps - 1);
      Tensor patch(p.channels, 3, 3, b);
      for (int ch = 0; ch < p.channels; ++ch) patch.at(ch, 1, 1) = c;
      const DnActivation act = dn_forward(patch, p);
      curve.push_back({b, c, act.output.at(channel, 1, 1)});
    }
  }
  return curve;
}

// mean(beta) / mean(gamma); lower means a stronger nonlinearity. A layer
// with an all-zero pool is purely linear scaling, reported as +inf.
inline double nonlinearity_index(const DnParams& p) {
  if (!p.valid()) throw InvalidInput("nonlinearity_index: invalid parameters");
  double mb = 0.0, mg = 0.0;
  for (double b : p.beta) mb += b;
  mb /= static_cast<double>(p.beta.size());
  for (double g : p.gamma) mg += g;
  mg /= static_cast<double>(p.gamma.size());
  if (mg == 0.0) return std::numeric_limits<double>::infinity();
  return mb / mg;
}

}  // namespace divseg
