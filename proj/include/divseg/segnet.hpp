#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "divseg/divnorm.hpp"
#include "divseg/errors.hpp"
#include "divseg/image.hpp"
#include "divseg/tensor.hpp"

namespace divseg {

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct ConvLayer {
  int in_ch = 0, out_ch = 0, ksize = 3;  // ksize is 3 or 1
  std::vector<double> w;  // (out, in, k, k)
  std::vector<double> b;  // (out)

  ConvLayer() = default;
  ConvLayer(int in, int out, int k) : in_ch(in), out_ch(out), ksize(k),
      w(static_cast<std::size_t>(out) * in * k * k, 0.0), b(out, 0.0) {}

  double& wt(int o, int i, int ky, int kx) {
    return w[((static_cast<std::size_t>(o) * in_ch + i) * ksize + ky) * ksize + kx];
  }
  double wt(int o, int i, int ky, int kx) const {
    return w[((static_cast<std::size_t>(o) * in_ch + i) * ksize + ky) * ksize + kx];
  }

  std::size_t param_count() const { return w.size() + b.size(); }

  void init_he(std::mt19937_64& rng) {
    const double stddev = std::sqrt(2.0 / (in_ch * ksize * ksize));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& x : w) x = dist(rng);
    std::fill(b.begin(), b.end(), 0.0);
  }

  Tensor forward(const Tensor& in) const {
    const int H = in.h, W = in.w;
    Tensor out(out_ch, H, W);
    const int pad = ksize / 2;
    for (int o = 0; o < out_ch; ++o) {
      double* dst = out.channel(o);
      for (std::size_t i = 0; i < out.plane(); ++i) dst[i] = b[o];
      for (int ic = 0; ic < in_ch; ++ic) {
        const double* src = in.channel(ic);
        for (int ky = 0; ky < ksize; ++ky)
          for (int kx = 0; kx < ksize; ++kx) {
            const double wv = wt(o, ic, ky, kx);
            const int dy = ky - pad, dx = kx - pad;
            const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
            for (int y = y0; y < y1; ++y) {
              const double* s = src + static_cast<std::size_t>(y + dy) * W + dx;
              double* d = dst + static_cast<std::size_t>(y) * W;
              for (int x = x0; x < x1; ++x) d[x] += wv * s[x];
            }
          }
      }
    }
    return out;
  }

  // Accumulates parameter gradients into gw/gb and returns grad w.r.t. input.
  Tensor backward(const Tensor& in, const Tensor& grad_out,
                  std::vector<double>& gw, std::vector<double>& gb) const {
    const int H = in.h, W = in.w;
    const int pad = ksize / 2;
    Tensor grad_in(in_ch, H, W);
    for (int o = 0; o < out_ch; ++o) {
      const double* go = grad_out.channel(o);
      for (std::size_t i = 0; i < grad_out.plane(); ++i) gb[o] += go[i];
      for (int ic = 0; ic < in_ch; ++ic) {
        const double* src = in.channel(ic);
        double* gi = grad_in.channel(ic);
        for (int ky = 0; ky < ksize; ++ky)
          for (int kx = 0; kx < ksize; ++kx) {
            const double wv = wt(o, ic, ky, kx);
            double* gwp = &gw[((static_cast<std::size_t>(o) * in_ch + ic) * ksize + ky) * ksize + kx];
            const int dy = ky - pad, dx = kx - pad;
            const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
            double acc = 0.0;
            for (int y = y0; y < y1; ++y) {
              const double* s = src + static_cast<std::size_t>(y + dy) * W + dx;
              double* g = gi + static_cast<std::size_t>(y + dy) * W + dx;
              const double* gorow = go + static_cast<std::size_t>(y) * W;
              for (int x = x0; x < x1; ++x) {
                acc += gorow[x] * s[x];
                g[x] += wv * gorow[x];
              }
            }
            *gwp += acc;
          }
      }
    }
    return grad_in;
  }
};

inline Tensor relu(const Tensor& in) {
  Tensor out = in;
  for (double& x : out.v) x = std::max(x, 0.0);
  return out;
}

inline Tensor relu_backward(const Tensor& pre, const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.v.size(); ++i)
    if (pre.v[i] <= 0.0) g.v[i] = 0.0;
  return g;
}

struct PoolCache {
  std::vector<std::uint32_t> argmax;  // flat index into the input plane
};

inline Tensor maxpool2(const Tensor& in, PoolCache& cache) {
  Tensor out(in.c, in.h / 2, in.w / 2);
  cache.argmax.resize(out.size());
  std::size_t oi = 0;
  for (int c = 0; c < in.c; ++c) {
    const double* src = in.channel(c);
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x, ++oi) {
        double best = -std::numeric_limits<double>::infinity();
        std::uint32_t bi = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::uint32_t idx = static_cast<std::uint32_t>((2 * y + dy) * in.w + 2 * x + dx);
            if (src[idx] > best) {  // ties keep the first (row-major) element
              best = src[idx];
              bi = idx;
            }
          }
        out.v[oi] = best;
        cache.argmax[oi] = bi;
      }
  }
  return out;
}

inline Tensor maxpool2_backward(const Tensor& in, const Tensor& grad_out,
                                const PoolCache& cache) {
  Tensor g(in.c, in.h, in.w);
  std::size_t oi = 0;
  for (int c = 0; c < grad_out.c; ++c) {
    double* gi = g.channel(c);
    for (std::size_t i = 0; i < grad_out.plane(); ++i, ++oi)
      gi[cache.argmax[oi]] += grad_out.v[oi];
  }
  return g;
}

inline Tensor upsample2(const Tensor& in) {
  Tensor out(in.c, in.h * 2, in.w * 2);
  for (int c = 0; c < in.c; ++c) {
    const double* src = in.channel(c);
    double* dst = out.channel(c);
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        dst[static_cast<std::size_t>(y) * out.w + x] =
            src[static_cast<std::size_t>(y / 2) * in.w + x / 2];
  }
  return out;
}

inline Tensor upsample2_backward(const Tensor& grad_out) {
  Tensor g(grad_out.c, grad_out.h / 2, grad_out.w / 2);
  for (int c = 0; c < g.c; ++c) {
    const double* go = grad_out.channel(c);
    double* gi = g.channel(c);
    for (int y = 0; y < grad_out.h; ++y)
      for (int x = 0; x < grad_out.w; ++x)
        gi[static_cast<std::size_t>(y / 2) * g.w + x / 2] +=
            go[static_cast<std::size_t>(y) * grad_out.w + x];
  }
  return g;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  Tensor out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
  return out;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

enum class ModelVariant { NoDN, FourDN };

// Encoder-decoder with three downsampling stages and four optional divisive
// normalization slots: one on the input and one after each encoder block.
struct SegModel {
  static constexpr int kDepth = 3;
  static constexpr std::array<int, 4> kSlotChannels = {3, 16, 32, 64};

  int classes = 0;
  ConvLayer enc1, enc2, enc3, bott, dec3, dec2, dec1, head;
  std::array<std::optional<DnParams>, 4> dn_slots;

  SegModel() = default;
  SegModel(int k, ModelVariant variant, std::uint64_t seed) : classes(k) {
    if (k < 2) throw InvalidInput("SegModel: need at least 2 classes");
    enc1 = ConvLayer(3, 16, 3);
    enc2 = ConvLayer(16, 32, 3);
    enc3 = ConvLayer(32, 64, 3);
    bott = ConvLayer(64, 64, 3);
    dec3 = ConvLayer(128, 32, 3);
    dec2 = ConvLayer(64, 16, 3);
    dec1 = ConvLayer(32, 16, 3);
    head = ConvLayer(16, k, 1);
    std::mt19937_64 rng(seed);
    for (ConvLayer* c : conv_layers()) c->init_he(rng);
    if (variant == ModelVariant::FourDN)
      for (int i = 0; i < 4; ++i) dn_slots[i].emplace(kSlotChannels[i]);
  }

  std::array<ConvLayer*, 8> conv_layers() {
    return {&enc1, &enc2, &enc3, &bott, &dec3, &dec2, &dec1, &head};
  }
  std::array<const ConvLayer*, 8> conv_layers() const {
    return {&enc1, &enc2, &enc3, &bott, &dec3, &dec2, &dec1, &head};
  }

  bool is_four_dn() const {
    return std::all_of(dn_slots.begin(), dn_slots.end(),
                       [](const auto& s) { return s.has_value(); });
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const ConvLayer* c : conv_layers()) n += c->param_count();
    for (const auto& s : dn_slots)
      if (s) n += s->param_count();
    return n;
  }
};

// Closed-form parameter overhead of populating every DN slot.
inline std::size_t dn_slot_param_count() {
  std::size_t n = 0;
  for (int c : SegModel::kSlotChannels)
    n += static_cast<std::size_t>(c) + static_cast<std::size_t>(c) * c * 9;
  return n;
}

struct ForwardCache {
  Tensor input;                 // after dn0 when present
  std::array<std::optional<DnActivation>, 4> dn;
  Tensor e1_pre, e1, e2_pre, e2, e3_pre, e3;   // pre = conv output before relu
  Tensor p1, p2, p3;
  PoolCache pc1, pc2, pc3;
  Tensor bott_pre, bott_out;
  Tensor u3, cat3, d3_pre, d3;
  Tensor u2, cat2, d2_pre, d2;
  Tensor u1, cat1, d1_pre, d1;
  Tensor logits;
};

inline void check_input_dims(const SegModel& model, const Tensor& img) {
  (void)model;
  const int div = 1 << SegModel::kDepth;
  if (img.c != 3) throw ShapeError("forward: expected 3 input channels");
  if (img.h % div != 0 || img.w % div != 0)
    throw ShapeError("forward: input dims must be divisible by " + std::to_string(div) +
                     "; pad to " + std::to_string((img.h + div - 1) / div * div) + "x" +
                     std::to_string((img.w + div - 1) / div * div));
}

inline Tensor forward(const SegModel& m, const Tensor& img, ForwardCache* cache = nullptr) {
  check_input_dims(m, img);
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;

  Tensor x = img;
  if (m.dn_slots[0]) {
    c.dn[0] = dn_forward(x, *m.dn_slots[0]);
    x = c.dn[0]->output;
  }
  c.input = x;

  c.e1_pre = m.enc1.forward(c.input);
  c.e1 = relu(c.e1_pre);
  if (m.dn_slots[1]) {
    c.dn[1] = dn_forward(c.e1, *m.dn_slots[1]);
    c.e1 = c.dn[1]->output;
  }
  c.p1 = maxpool2(c.e1, c.pc1);

  c.e2_pre = m.enc2.forward(c.p1);
  c.e2 = relu(c.e2_pre);
  if (m.dn_slots[2]) {
    c.dn[2] = dn_forward(c.e2, *m.dn_slots[2]);
    c.e2 = c.dn[2]->output;
  }
  c.p2 = maxpool2(c.e2, c.pc2);

  c.e3_pre = m.enc3.forward(c.p2);
  c.e3 = relu(c.e3_pre);
  if (m.dn_slots[3]) {
    c.dn[3] = dn_forward(c.e3, *m.dn_slots[3]);
    c.e3 = c.dn[3]->output;
  }
  c.p3 = maxpool2(c.e3, c.pc3);

  c.bott_pre = m.bott.forward(c.p3);
  c.bott_out = relu(c.bott_pre);

  c.u3 = upsample2(c.bott_out);
  c.cat3 = concat_channels(c.u3, c.e3);
  c.d3_pre = m.dec3.forward(c.cat3);
  c.d3 = relu(c.d3_pre);

  c.u2 = upsample2(c.d3);
  c.cat2 = concat_channels(c.u2, c.e2);
  c.d2_pre = m.dec2.forward(c.cat2);
  c.d2 = relu(c.d2_pre);

  c.u1 = upsample2(c.d2);
  c.cat1 = concat_channels(c.u1, c.e1);
  c.d1_pre = m.dec1.forward(c.cat1);
  c.d1 = relu(c.d1_pre);

  c.logits = m.head.forward(c.d1);
  return c.logits;
}

// Gradient buffers mirroring the model's parameter tensors.
struct ModelGrads {
  std::array<std::vector<double>, 8> conv_w;
  std::array<std::vector<double>, 8> conv_b;
  std::array<std::vector<double>, 4> dn_beta;
  std::array<std::vector<double>, 4> dn_gamma;

  explicit ModelGrads(const SegModel& m) {
    const auto layers = m.conv_layers();
    for (int i = 0; i < 8; ++i) {
      conv_w[i].assign(layers[i]->w.size(), 0.0);
      conv_b[i].assign(layers[i]->b.size(), 0.0);
    }
    for (int i = 0; i < 4; ++i)
      if (m.dn_slots[i]) {
        dn_beta[i].assign(m.dn_slots[i]->beta.size(), 0.0);
        dn_gamma[i].assign(m.dn_slots[i]->gamma.size(), 0.0);
      }
  }

  void scale(double f) {
    for (auto& v : conv_w)
      for (double& x : v) x *= f;
    for (auto& v : conv_b)
      for (double& x : v) x *= f;
    for (auto& v : dn_beta)
      for (double& x : v) x *= f;
    for (auto& v : dn_gamma)
      for (double& x : v) x *= f;
  }
};

inline void backward(const SegModel& m, const ForwardCache& c,
                     const Tensor& grad_logits, ModelGrads& g) {
  // Layer order matches conv_layers(): enc1 enc2 enc3 bott dec3 dec2 dec1 head.
  Tensor gd1 = m.head.backward(c.d1, grad_logits, g.conv_w[7], g.conv_b[7]);
  gd1 = relu_backward(c.d1_pre, gd1);
  Tensor gcat1 = m.dec1.backward(c.cat1, gd1, g.conv_w[6], g.conv_b[6]);

  Tensor gu1(c.u1.c, c.u1.h, c.u1.w);
  Tensor ge1(c.e1.c, c.e1.h, c.e1.w);
  std::copy(gcat1.v.begin(), gcat1.v.begin() + gu1.v.size(), gu1.v.begin());
  std::copy(gcat1.v.begin() + gu1.v.size(), gcat1.v.end(), ge1.v.begin());

  Tensor gd2 = upsample2_backward(gu1);
  gd2 = relu_backward(c.d2_pre, gd2);
  Tensor gcat2 = m.dec2.backward(c.cat2, gd2, g.conv_w[5], g.conv_b[5]);

  Tensor gu2(c.u2.c, c.u2.h, c.u2.w);
  Tensor ge2(c.e2.c, c.e2.h, c.e2.w);
  std::copy(gcat2.v.begin(), gcat2.v.begin() + gu2.v.size(), gu2.v.begin());
  std::copy(gcat2.v.begin() + gu2.v.size(), gcat2.v.end(), ge2.v.begin());

  Tensor gd3 = upsample2_backward(gu2);
  gd3 = relu_backward(c.d3_pre, gd3);
  Tensor gcat3 = m.dec3.backward(c.cat3, gd3, g.conv_w[4], g.conv_b[4]);

  Tensor gu3(c.u3.c, c.u3.h, c.u3.w);
  Tensor ge3(c.e3.c, c.e3.h, c.e3.w);
  std::copy(gcat3.v.begin(), gcat3.v.begin() + gu3.v.size(), gu3.v.begin());
  std::copy(gcat3.v.begin() + gu3.v.size(), gcat3.v.end(), ge3.v.begin());

  Tensor gbott = upsample2_backward(gu3);
  gbott = relu_backward(c.bott_pre, gbott);
  Tensor gp3 = m.bott.backward(c.p3, gbott, g.conv_w[3], g.conv_b[3]);

  // Encoder stage 3: pool grad joins the skip grad on e3.
  {
    Tensor gpool = maxpool2_backward(c.e3, gp3, c.pc3);
    for (std::size_t i = 0; i < ge3.v.size(); ++i) ge3.v[i] += gpool.v[i];
  }
  if (m.dn_slots[3]) {
    DnGrads dg = dn_backward(*c.dn[3], ge3, *m.dn_slots[3]);
    for (std::size_t i = 0; i < dg.grad_beta.size(); ++i) g.dn_beta[3][i] += dg.grad_beta[i];
    for (std::size_t i = 0; i < dg.grad_gamma.size(); ++i) g.dn_gamma[3][i] += dg.grad_gamma[i];
    ge3 = std::move(dg.grad_input);
  }
  ge3 = relu_backward(c.e3_pre, ge3);
  Tensor gp2 = m.enc3.backward(c.p2, ge3, g.conv_w[2], g.conv_b[2]);

  {
    Tensor gpool = maxpool2_backward(c.e2, gp2, c.pc2);
    for (std::size_t i = 0; i < ge2.v.size(); ++i) ge2.v[i] += gpool.v[i];
  }
  if (m.dn_slots[2]) {
    DnGrads dg = dn_backward(*c.dn[2], ge2, *m.dn_slots[2]);
    for (std::size_t i = 0; i < dg.grad_beta.size(); ++i) g.dn_beta[2][i] += dg.grad_beta[i];
    for (std::size_t i = 0; i < dg.grad_gamma.size(); ++i) g.dn_gamma[2][i] += dg.grad_gamma[i];
    ge2 = std::move(dg.grad_input);
  }
  ge2 = relu_backward(c.e2_pre, ge2);
  Tensor gp1 = m.enc2.backward(c.p1, ge2, g.conv_w[1], g.conv_b[1]);

  {
    Tensor gpool = maxpool2_backward(c.e1, gp1, c.pc1);
    for (std::size_t i = 0; i < ge1.v.size(); ++i) ge1.v[i] += gpool.v[i];
  }
  if (m.dn_slots[1]) {
    DnGrads dg = dn_backward(*c.dn[1], ge1, *m.dn_slots[1]);
    for (std::size_t i = 0; i < dg.grad_beta.size(); ++i) g.dn_beta[1][i] += dg.grad_beta[i];
    for (std::size_t i = 0; i < dg.grad_gamma.size(); ++i) g.dn_gamma[1][i] += dg.grad_gamma[i];
    ge1 = std::move(dg.grad_input);
  }
  ge1 = relu_backward(c.e1_pre, ge1);
  Tensor ginput = m.enc1.backward(c.input, ge1, g.conv_w[0], g.conv_b[0]);

  if (m.dn_slots[0]) {
    DnGrads dg = dn_backward(*c.dn[0], ginput, *m.dn_slots[0]);
    for (std::size_t i = 0; i < dg.grad_beta.size(); ++i) g.dn_beta[0][i] += dg.grad_beta[i];
    for (std::size_t i = 0; i < dg.grad_gamma.size(); ++i) g.dn_gamma[0][i] += dg.grad_gamma[i];
  }
}

// ---------------------------------------------------------------------------
// Loss and prediction
// ---------------------------------------------------------------------------

// Mean per-pixel softmax cross-entropy over non-ignored pixels.
inline double seg_loss(const Tensor& logits, const LabelMask& mask,
                       int ignore_label, Tensor* grad_logits = nullptr) {
  const int K = logits.c, H = logits.h, W = logits.w;
  if (mask.width() != W || mask.height() != H)
    throw ShapeError("seg_loss: mask dims mismatch");
  std::size_t n_valid = 0;
  for (int v : mask.labels())
    if (v != ignore_label) {
      if (v < 0 || v >= K) throw InvalidInput("seg_loss: label out of range");
      ++n_valid;
    }
  if (n_valid == 0) throw EmptyTarget("seg_loss: every pixel is ignored");

  if (grad_logits) *grad_logits = Tensor(K, H, W);
  double loss = 0.0;
  std::vector<double> p(K);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int label = mask.at(y, x);
      if (label == ignore_label) continue;
      double mx = logits.at(0, y, x);
      for (int k = 1; k < K; ++k) mx = std::max(mx, logits.at(k, y, x));
      double z = 0.0;
      for (int k = 0; k < K; ++k) {
        p[k] = std::exp(logits.at(k, y, x) - mx);
        z += p[k];
      }
      loss -= std::log(p[label] / z);
      if (grad_logits)
        for (int k = 0; k < K; ++k)
          grad_logits->at(k, y, x) =
              (p[k] / z - (k == label ? 1.0 : 0.0)) / static_cast<double>(n_valid);
    }
  return loss / static_cast<double>(n_valid);
}

inline LabelMask predict_from_logits(const Tensor& logits) {
  LabelMask out(logits.w, logits.h);
  for (int y = 0; y < logits.h; ++y)
    for (int x = 0; x < logits.w; ++x) {
      int best = 0;
      double bv = logits.at(0, y, x);
      for (int k = 1; k < logits.c; ++k)
        if (logits.at(k, y, x) > bv) {  // ties keep the lower class index
          bv = logits.at(k, y, x);
          best = k;
        }
      out.at(y, x) = best;
    }
  return out;
}

inline LabelMask predict(const SegModel& m, const Tensor& img) {
  return predict_from_logits(forward(m, img));
}

inline LabelMask predict(const SegModel& m, const PlanarImage& img) {
  return predict(m, image_to_tensor(img));
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::uint64_t seed = 0;
  int epochs = 6;
  int batch_size = 8;
  double learning_rate = 1e-3;
  int classes = 5;
  int ignore_label = LabelMask::kNoIgnore;
  ModelVariant variant = ModelVariant::FourDN;
};

struct TraceRow {
  int epoch = 0;
  int step = 0;
  double loss = 0.0;
};

struct TrainResult {
  SegModel model;
  std::vector<TraceRow> trace;
  bool diverged = false;
};

namespace detail {

struct AdamState {
  std::vector<double> m, v;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(std::vector<double>& w, const std::vector<double>& g,
                      AdamState& st, double lr, int t) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < w.size(); ++i) {
    st.m[i] = b1 * st.m[i] + (1.0 - b1) * g[i];
    st.v[i] = b2 * st.v[i] + (1.0 - b2) * g[i] * g[i];
    w[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + eps);
  }
}

}  // namespace detail

struct TrainSample {
  Tensor image;
  LabelMask mask;
};

inline TrainResult train(const std::vector<TrainSample>& data, const TrainConfig& cfg) {
  if (data.empty()) throw EmptyDataset("train: no samples");
  for (const auto& s : data) check_input_dims(SegModel{}, s.image);

  TrainResult res;
  res.model = SegModel(cfg.classes, cfg.variant, cfg.seed);
  SegModel& m = res.model;

  const auto layers = m.conv_layers();
  std::vector<detail::AdamState> conv_w_st, conv_b_st, dn_b_st, dn_g_st;
  for (int i = 0; i < 8; ++i) {
    conv_w_st.emplace_back(layers[i]->w.size());
    conv_b_st.emplace_back(layers[i]->b.size());
  }
  for (int i = 0; i < 4; ++i) {
    dn_b_st.emplace_back(m.dn_slots[i] ? m.dn_slots[i]->beta.size() : 0);
    dn_g_st.emplace_back(m.dn_slots[i] ? m.dn_slots[i]->gamma.size() : 0);
  }

  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  SegModel last_good = m;
  int t = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    int step = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size, ++step) {
      const std::size_t end = std::min(pos + cfg.batch_size, order.size());
      ModelGrads grads(m);
      double batch_loss = 0.0;
      for (std::size_t i = pos; i < end; ++i) {
        const TrainSample& s = data[order[i]];
        ForwardCache cache;
        const Tensor logits = forward(m, s.image, &cache);
        Tensor grad_logits;
        batch_loss += seg_loss(logits, s.mask, cfg.ignore_label, &grad_logits);
        backward(m, cache, grad_logits, grads);
      }
      const double inv_n = 1.0 / static_cast<double>(end - pos);
      batch_loss *= inv_n;
      grads.scale(inv_n);

      if (!std::isfinite(batch_loss)) {
        res.model = last_good;
        res.diverged = true;
        return res;
      }

      ++t;
      for (int i = 0; i < 8; ++i) {
        detail::adam_step(layers[i]->w, grads.conv_w[i], conv_w_st[i], cfg.learning_rate, t);
        detail::adam_step(layers[i]->b, grads.conv_b[i], conv_b_st[i], cfg.learning_rate, t);
      }
      for (int i = 0; i < 4; ++i)
        if (m.dn_slots[i]) {
          detail::adam_step(m.dn_slots[i]->beta, grads.dn_beta[i], dn_b_st[i], cfg.learning_rate, t);
          detail::adam_step(m.dn_slots[i]->gamma, grads.dn_gamma[i], dn_g_st[i], cfg.learning_rate, t);
          project_params(*m.dn_slots[i]);
        }

      res.trace.push_back({epoch, step, batch_loss});
    }
    last_good = m;
  }
  return res;
}

}  // namespace divseg
