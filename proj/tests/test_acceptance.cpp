// Acceptance gate: one self-contained check per release criterion, each
// printing a single PASS/FAIL line. The library unit tests cover the same
// ground in finer grain; this binary is the go/no-go summary.

#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "divseg/checkpoint.hpp"
#include "divseg/colorcore.hpp"
#include "divseg/data.hpp"
#include "divseg/divnorm.hpp"
#include "divseg/envmod.hpp"
#include "divseg/gridgen.hpp"
#include "divseg/metrics.hpp"
#include "divseg/segnet.hpp"

namespace fs = std::filesystem;
using namespace divseg;

namespace {

void report(int criterion, const std::string& what, bool ok) {
  std::cout << "criterion " << criterion << " [" << (ok ? "PASS" : "FAIL") << "] "
            << what << std::endl;
}

DnParams random_params(int c, std::mt19937_64& rng) {
  DnParams p(c);
  std::uniform_real_distribution<double> beta_dist(0.1, 2.0);
  std::uniform_real_distribution<double> gamma_dist(0.0, 0.5);
  for (double& b : p.beta) b = beta_dist(rng);
  for (double& g : p.gamma) g = gamma_dist(rng);
  return p;
}

Tensor random_tensor(int c, int h, int w, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(c, h, w);
  std::uniform_real_distribution<double> uni(lo, hi);
  for (double& v : t.v) v = uni(rng);
  return t;
}

// Scalar quadruple-loop reference for the normalization.
Tensor dn_oracle(const Tensor& z, const DnParams& p) {
  Tensor y(z.c, z.h, z.w);
  for (int k = 0; k < z.c; ++k)
    for (int yy = 0; yy < z.h; ++yy)
      for (int xx = 0; xx < z.w; ++xx) {
        double denom = p.beta[k];
        for (int s = 0; s < z.c; ++s)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = yy + ky - 1, sx = xx + kx - 1;
              if (sy < 0 || sy >= z.h || sx < 0 || sx >= z.w) continue;
              denom += p.g(k, s, ky, kx) * std::abs(z.at(s, sy, sx));
            }
        y.at(k, yy, xx) = z.at(k, yy, xx) / denom;
      }
  return y;
}

double weighted_dn_sum(const Tensor& z, const DnParams& p, const Tensor& w) {
  const DnActivation act = dn_forward(z, p);
  double s = 0.0;
  for (std::size_t i = 0; i < act.output.v.size(); ++i) s += w.v[i] * act.output.v[i];
  return s;
}

// ---------------------------------------------------------------------------
// Shared desk experiment: six trained models plus held-out scenes.
// ---------------------------------------------------------------------------

struct DeskExperiment {
  std::vector<TrainSample> train_set;
  std::vector<Scene> held;
  std::array<SegModel, 3> four_dn, no_dn;
  double train_seconds = 0.0;

  DeskExperiment() {
    SceneSpec spec;
    spec.seed = 1234;
    train_set.reserve(500);
    for (int i = 0; i < 500; ++i) {
      const Scene sc = generate_scene(spec, static_cast<std::uint64_t>(i));
      train_set.push_back({image_to_tensor(sc.image), sc.mask});
    }
    for (int i = 0; i < 50; ++i)
      held.push_back(generate_scene(spec, static_cast<std::uint64_t>(100000 + i)));

    const auto t0 = std::chrono::steady_clock::now();
    for (int s = 0; s < 3; ++s) {
      TrainConfig cfg;
      cfg.seed = static_cast<std::uint64_t>(s);
      cfg.epochs = 10;
      cfg.batch_size = 8;
      cfg.classes = 5;
      cfg.variant = ModelVariant::FourDN;
      four_dn[s] = train(train_set, cfg).model;
      cfg.variant = ModelVariant::NoDN;
      no_dn[s] = train(train_set, cfg).model;
      std::cout << "  trained seed " << s << " (both variants)" << std::endl;
    }
    train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

DeskExperiment& desk() {
  static DeskExperiment d;
  return d;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DIVSEG_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("acceptance 1: normalization forward equals the scalar oracle") {
  std::mt19937_64 rng(101);
  bool ok = true;
  for (int trial = 0; trial < 60 && ok; ++trial) {
    const int c = 1 + static_cast<int>(rng() % 3);
    const int h = 2 + static_cast<int>(rng() % 7);
    const int w = 2 + static_cast<int>(rng() % 7);
    const DnParams p = random_params(c, rng);
    const Tensor z = random_tensor(c, h, w, rng, -1.0, 1.0);
    const Tensor want = dn_oracle(z, p);
    const DnActivation act = dn_forward(z, p);
    for (std::size_t i = 0; i < want.v.size(); ++i) {
      const double denom = std::max(std::abs(want.v[i]), 1e-12);
      if (std::abs(act.output.v[i] - want.v[i]) / denom >= 1e-10) ok = false;
    }
  }
  report(1, "forward pass matches a quadruple-loop reference within 1e-10", ok);
  CHECK(ok);
}

TEST_CASE("acceptance 2: normalization gradients match finite differences") {
  std::mt19937_64 rng(202);
  const double h = 1e-4;
  double max_rel = 0.0;
  for (int config = 0; config < 100; ++config) {
    const int c = 1 + static_cast<int>(rng() % 3);
    const DnParams p = random_params(c, rng);
    Tensor z = random_tensor(c, 5, 5, rng, -1.0, 1.0);
    for (double& v : z.v)
      if (std::abs(v) < 1e-2) v = v < 0 ? v - 1e-2 : v + 1e-2;
    const Tensor w = random_tensor(c, 5, 5, rng, -1.0, 1.0);

    const DnActivation act = dn_forward(z, p);
    const DnGrads g = dn_backward(act, w, p);

    const auto rel = [&](double analytic, double plus, double minus) {
      const double fd = (plus - minus) / (2 * h);
      return std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6});
    };
    for (int t = 0; t < 4; ++t) {
      const std::size_t i = rng() % z.v.size();
      Tensor zp = z, zm = z;
      zp.v[i] += h;
      zm.v[i] -= h;
      max_rel = std::max(max_rel, rel(g.grad_input.v[i], weighted_dn_sum(zp, p, w),
                                      weighted_dn_sum(zm, p, w)));
    }
    {
      const std::size_t i = rng() % p.beta.size();
      DnParams pp = p, pm = p;
      pp.beta[i] += h;
      pm.beta[i] -= h;
      max_rel = std::max(max_rel, rel(g.grad_beta[i], weighted_dn_sum(z, pp, w),
                                      weighted_dn_sum(z, pm, w)));
    }
    for (int t = 0; t < 3; ++t) {
      const std::size_t i = rng() % p.gamma.size();
      DnParams pp = p, pm = p;
      pp.gamma[i] += h;
      pm.gamma[i] -= h;
      max_rel = std::max(max_rel, rel(g.grad_gamma[i], weighted_dn_sum(z, pp, w),
                                      weighted_dn_sum(z, pm, w)));
    }
  }
  const bool ok = max_rel < 1e-5;
  report(2, "analytic gradients within 1e-5 of central differences (max rel " +
                std::to_string(max_rel) + ")",
         ok);
  CHECK(ok);
}

TEST_CASE("acceptance 3: single-axis factors move exactly one descriptor") {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> uni(0.25, 0.75);
  bool ok = true;
  for (int img_i = 0; img_i < 20; ++img_i) {
    PlanarImage img(12, 12, ColorSpace::LinearRGB);
    for (double& v : img.data()) v = uni(rng);
    const VisualStats before = visual_stats(img);
    for (const double factor : {0.6, 0.8, 1.2}) {
      for (int axis = 0; axis < 3; ++axis) {
        ModFactors f;
        (axis == 0 ? f.f_lum : axis == 1 ? f.f_actr : f.f_cctr) = factor;
        const PlanarImage mod = modify_lum_contrast(img, f, /*clip=*/false);
        const VisualStats after = visual_stats(mod);
        const double got[3] = {after.mean_lum, after.achro_ctr, after.chro_ctr};
        const double ref[3] = {before.mean_lum, before.achro_ctr, before.chro_ctr};
        for (int d = 0; d < 3; ++d) {
          const double want = d == axis ? ref[d] * factor : ref[d];
          if (std::abs(got[d] - want) > 1e-6 * std::max(1.0, std::abs(want))) ok = false;
        }
      }
    }
  }
  report(3, "luminance/contrast factors change only their descriptor, within 1e-6", ok);
  CHECK(ok);
}

TEST_CASE("acceptance 4: fog density drives luminance up and contrast down") {
  SceneSpec spec;
  spec.seed = 404;
  spec.base_lum_lo = 0.25;
  spec.base_lum_hi = 0.50;  // keeps every pixel below the 0.8 airlight
  bool ok = true;
  for (int i = 0; i < 20; ++i) {
    const Scene sc = generate_scene(spec, static_cast<std::uint64_t>(i));
    double prev_lum = -1.0, prev_ctr = 1e300;
    for (const double beta : {0.005, 0.1, 0.2}) {
      FogSpec fog;
      fog.attenuation = beta;
      const VisualStats s = visual_stats(apply_fog(sc.image, fog, &sc.depth));
      if (!(s.mean_lum > prev_lum) || !(s.achro_ctr < prev_ctr)) ok = false;
      prev_lum = s.mean_lum;
      prev_ctr = s.achro_ctr;
    }
  }
  report(4, "mean luminance strictly rises and achromatic contrast strictly falls "
            "across the three fog densities on 20 scenes",
         ok);
  CHECK(ok);
}

TEST_CASE("acceptance 5: white relighting is an identity; the grid has 120 cells") {
  std::mt19937_64 rng(505);
  const SpectralTable tbl = SpectralTable::standard();
  std::uniform_real_distribution<double> gray(0.3, 0.6);
  std::uniform_real_distribution<double> tint(-0.05, 0.05);

  bool ok = true;
  // Low-chroma images keep every recovered reflectance inside [0, 1].
  for (int img_i = 0; img_i < 5; ++img_i) {
    PlanarImage img(10, 10, ColorSpace::LinearRGB);
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 10; ++x) {
        const double g = gray(rng);
        for (int c = 0; c < 3; ++c)
          img.at(c, y, x) = std::clamp(g + tint(rng), 0.0, 1.0);
      }
    const ReflectanceField rf = recover_reflectance(img, tbl);
    bool clipped = false;
    for (bool b : rf.clipped) clipped = clipped || b;
    if (clipped) continue;  // criterion applies to clip-free recoveries only

    IlluminantSpec white;
    white.saturation_radius = 0;
    const PlanarImage back = relight(img, white, tbl);
    for (int c = 0; c < 3; ++c) {
      double se = 0.0;
      for (std::size_t i = 0; i < img.pixels(); ++i)
        se += (back.plane(c)[i] - img.plane(c)[i]) * (back.plane(c)[i] - img.plane(c)[i]);
      if (std::sqrt(se / static_cast<double>(img.pixels())) >= 1e-3) ok = false;
    }
  }

  const fs::path tmp = fs::temp_directory_path() / "divseg_accept_relight";
  fs::remove_all(tmp);
  DatasetHandle one;
  {
    SceneSpec spec;
    spec.width = 16;
    spec.height = 16;
    spec.seed = 505;
    one = generate_scenes(spec, 1, tmp / "data");
  }
  const auto records = build_illuminant_grid(one, 20, 6, tbl, tmp / "grid");
  if (records.size() != 120) ok = false;
  fs::remove_all(tmp);

  report(5, "radius-0 relighting reproduces inputs within 1e-3 RMSE and the "
            "20x6 grid yields 120 variants",
         ok);
  CHECK(ok);
}

TEST_CASE("acceptance 6: trained response curves are adaptive and saturating") {
  const DeskExperiment& d = desk();
  const SegModel& m = d.four_dn[0];
  const std::vector<double> surrounds = {0.0, 0.25, 0.5, 0.75, 1.0};
  const int steps = 15;

  bool ok = true;
  std::array<double, 4> nl{};
  for (int layer = 0; layer < 4; ++layer) {
    const DnParams& p = *m.dn_slots[layer];
    const auto curve = probe_center_surround(p, 0, surrounds, steps);
    // Non-decreasing in the center value at every surround level.
    for (std::size_t s = 0; s < surrounds.size(); ++s)
      for (int i = 1; i < steps; ++i) {
        const auto& a = curve[s * steps + i - 1];
        const auto& b = curve[s * steps + i];
        if (b.center_out < a.center_out - 1e-12) ok = false;
      }
    // Pointwise non-increasing in the surround level.
    for (int i = 0; i < steps; ++i)
      for (std::size_t s = 1; s < surrounds.size(); ++s) {
        const auto& lo = curve[(s - 1) * steps + i];
        const auto& hi = curve[s * steps + i];
        if (hi.center_out > lo.center_out + 1e-12) ok = false;
      }
    nl[layer] = nonlinearity_index(p);
  }
  const bool decreasing = nl[0] > nl[1] && nl[1] > nl[2] && nl[2] > nl[3];
  std::cout << "  nonlinearity index by layer: " << nl[0] << " " << nl[1] << " "
            << nl[2] << " " << nl[3] << " (monotone decrease with depth: "
            << (decreasing ? "observed" : "not observed") << ")" << std::endl;
  report(6, "every trained layer is center-monotone and surround-suppressive", ok);
  CHECK(ok);
}

TEST_CASE("acceptance 7: normalized models hold their predictions under "
          "environmental change") {
  const DeskExperiment& d = desk();
  const SpectralTable tbl = SpectralTable::standard();

  const auto modified = [&](const Scene& sc, int mod) -> PlanarImage {
    switch (mod) {
      case 0:
        return modify_lum_contrast(sc.image, ModFactors{0.6, 1.0, 1.0});
      case 1:
        return modify_lum_contrast(sc.image, ModFactors{1.0, 0.6, 1.0});
      case 2: {
        FogSpec fog;
        fog.attenuation = 0.1;
        return apply_fog(sc.image, fog, &sc.depth);
      }
      default: {
        IlluminantSpec ill;
        ill.hue_angle_deg = 0.0;
        ill.saturation_radius = 5;
        return relight(sc.image, ill, tbl);
      }
    }
  };
  const char* const mod_names[4] = {"luminance 0.6", "achro contrast 0.6",
                                    "fog middle", "saturated illuminant"};

  int wins = 0;
  for (int mod = 0; mod < 4; ++mod) {
    double mean4 = 0.0, mean0 = 0.0;
    for (const Scene& sc : d.held) {
      const PlanarImage var = modified(sc, mod);
      for (int s = 0; s < 3; ++s) {
        mean4 += invariance_overlap(d.four_dn[s], sc.image, var);
        mean0 += invariance_overlap(d.no_dn[s], sc.image, var);
      }
    }
    mean4 /= 3.0 * d.held.size();
    mean0 /= 3.0 * d.held.size();
    const bool win = mean4 >= mean0;
    wins += win ? 1 : 0;
    std::cout << "  " << mod_names[mod] << ": with-normalization " << mean4
              << " vs plain " << mean0 << (win ? "  (>=)" : "  (<)") << std::endl;
  }
  const bool time_ok = d.train_seconds <= 900.0;
  std::cout << "  six trainings took " << d.train_seconds << " s" << std::endl;
  const bool ok = wins >= 3 && time_ok;
  report(7, "normalized variant at least matches the plain one in " +
                std::to_string(wins) + "/4 modifications, trainings within budget",
         ok);
  CHECK(ok);
}

TEST_CASE("acceptance 8: neutral normalization parameters reproduce the plain "
          "model bit for bit") {
  std::mt19937_64 rng(808);
  const SegModel plain(5, ModelVariant::NoDN, 88);
  SegModel dn(5, ModelVariant::FourDN, 88);
  for (auto& slot : dn.dn_slots) {
    std::fill(slot->beta.begin(), slot->beta.end(), 1.0);
    std::fill(slot->gamma.begin(), slot->gamma.end(), 0.0);
  }
  const Tensor x = random_tensor(3, 16, 16, rng, 0.0, 1.0);
  const Tensor a = forward(plain, x);
  const Tensor b = forward(dn, x);
  bool ok = a.v.size() == b.v.size();
  for (std::size_t i = 0; ok && i < a.v.size(); ++i) ok = a.v[i] == b.v[i];
  report(8, "gamma=0, beta=1 slots leave the logits bit-identical", ok);
  CHECK(ok);
}

TEST_CASE("acceptance 9: training and evaluation are deterministic end to end") {
  const fs::path root = fs::temp_directory_path() / "divseg_accept_det";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path data = root / "data";

  bool ok = run_cli("generate --count 8 --width 16 --height 16 --seed 11 --out " +
                    data.string()) == 0;
  const std::string train_args = "train --data " + data.string() +
                                 " --variant 4dn --seeds 0 --epochs 1 --batch 4 --out ";
  ok = ok && run_cli(train_args + (root / "t1").string()) == 0;
  ok = ok && run_cli(train_args + (root / "t2").string()) == 0;
  ok = ok && read_file(root / "t1" / "model_4dn_s0.ckpt") ==
                 read_file(root / "t2" / "model_4dn_s0.ckpt");
  ok = ok && read_file(root / "t1" / "trace_4dn_s0.csv") ==
                 read_file(root / "t2" / "trace_4dn_s0.csv");
  ok = ok && !read_file(root / "t1" / "model_4dn_s0.ckpt").empty();

  const std::string eval_args = "eval --ckpt " +
                                (root / "t1" / "model_4dn_s0.ckpt").string() +
                                " --data " + data.string() + " --out ";
  ok = ok && run_cli(eval_args + (root / "e1").string()) == 0;
  ok = ok && run_cli(eval_args + (root / "e2").string()) == 0;
  const std::string e1 = read_file(root / "e1" / "eval.csv");
  ok = ok && !e1.empty() && e1 == read_file(root / "e2" / "eval.csv");
  fs::remove_all(root);

  report(9, "repeated training gives bit-identical checkpoints and traces; "
            "repeated evaluation gives byte-identical reports",
         ok);
  CHECK(ok);
}

TEST_CASE("acceptance 10: overlap metric and partition behave like their oracles") {
  std::mt19937_64 rng(1010);
  bool ok = true;

  for (int trial = 0; trial < 50; ++trial) {
    LabelMask a(6, 6), b(6, 6);
    for (int& v : a.labels()) v = static_cast<int>(rng() % 4);
    for (int& v : b.labels()) v = static_cast<int>(rng() % 4);
    const IouResult ab = iou(a, b, 4), ba = iou(b, a, 4);
    if (std::abs(ab.mean - ba.mean) > 1e-12) ok = false;
    if (std::abs(iou(a, a, 4).mean - 1.0) > 1e-12) ok = false;
  }
  {
    LabelMask a(4, 4, 0), b(4, 4, 1);
    if (iou(a, b, 2).mean != 0.0) ok = false;
  }

  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    const std::size_t n = 5 + rng() % 60;
    std::vector<VisualStats> stats;
    for (std::size_t i = 0; i < n; ++i)
      stats.push_back({uni(rng) + 0.01, uni(rng), uni(rng)});
    PartitionSpec spec;
    spec.low_pct = 15.0;
    spec.high_pct = 85.0;
    const Partition p = partition_extremes(stats, spec);

    std::vector<std::pair<double, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; ++i) pairs.emplace_back(stats[i].mean_lum, i);
    std::sort(pairs.begin(), pairs.end());
    const auto n_low = static_cast<std::size_t>(std::ceil(n * 0.15));
    const auto n_high = static_cast<std::size_t>(std::ceil(n * 0.15));
    std::vector<std::size_t> want_low, want_high;
    for (std::size_t i = 0; i < n_low; ++i) want_low.push_back(pairs[i].second);
    for (std::size_t i = n - n_high; i < n; ++i) want_high.push_back(pairs[i].second);
    std::sort(want_low.begin(), want_low.end());
    std::sort(want_high.begin(), want_high.end());
    if (p.low != want_low || p.high != want_high) ok = false;
  }

  report(10, "overlap symmetry/identity/disjointness hold and the percentile "
             "partition equals a full sort on 1000 random lists",
         ok);
  CHECK(ok);
}
