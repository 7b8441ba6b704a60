#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "divseg/errors.hpp"
#include "divseg/image.hpp"
#include "divseg/png_io.hpp"

namespace divseg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Dataset handle
// ---------------------------------------------------------------------------

struct DatasetEntry {
  std::string id;
  std::string image_path;
  std::string mask_path;
  std::string depth_path;  // empty when absent
};

enum class SplitTag { Train, Val, Test, All };

inline const char* split_tag_name(SplitTag t) {
  switch (t) {
    case SplitTag::Train: return "train";
    case SplitTag::Val: return "val";
    case SplitTag::Test: return "test";
    case SplitTag::All: return "all";
  }
  return "all";
}

inline Palette default_palette(int classes) {
  static const Palette base = {
      {{64, 64, 64}},    // background
      {{107, 142, 35}},  // ground
      {{70, 130, 180}},  // sky
      {{220, 20, 60}},   // box object
      {{255, 200, 0}},   // disc object
  };
  Palette p;
  for (int i = 0; i < classes; ++i) {
    if (i < static_cast<int>(base.size()))
      p.push_back(base[i]);
    else
      p.push_back({{static_cast<unsigned char>((i * 67) % 256),
                    static_cast<unsigned char>((i * 151) % 256),
                    static_cast<unsigned char>((i * 211) % 256)}});
  }
  return p;
}

struct DatasetHandle {
  std::vector<DatasetEntry> entries;
  SplitTag split = SplitTag::All;
  Palette palette;
  int class_count = 0;

  std::size_t size() const { return entries.size(); }
};

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

// Class layout: 0 background wall, 1 ground, 2 sky, 3 box, 4 disc. Objects
// carry distinct chromaticities; ground and wall carry achromatic texture;
// every pixel has a strictly positive depth.
struct SceneSpec {
  int width = 32;
  int height = 32;
  int class_count = 5;
  int min_objects = 2;
  int max_objects = 4;
  double base_lum_lo = 0.35;
  double base_lum_hi = 0.75;
  double texture_lo = 0.05;
  double texture_hi = 0.20;
  std::uint64_t seed = 0;
};

struct Scene {
  PlanarImage image;
  LabelMask mask;
  DepthMap depth;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

inline Scene generate_scene(const SceneSpec& spec, std::uint64_t index) {
  if (spec.class_count < 5)
    throw InvalidSpec("generate_scene: class layout needs at least 5 classes");
  const int W = spec.width, H = spec.height;
  std::mt19937_64 rng(detail::splitmix64(spec.seed) ^ detail::splitmix64(index + 1));
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  Scene sc{PlanarImage(W, H, ColorSpace::LinearRGB), LabelMask(W, H), DepthMap(W, H)};

  const double base_lum = spec.base_lum_lo + (spec.base_lum_hi - spec.base_lum_lo) * uni(rng);
  const double tex = spec.texture_lo + (spec.texture_hi - spec.texture_lo) * uni(rng);
  const int horizon = static_cast<int>(H * (0.30 + 0.15 * uni(rng)));
  const int wall_bottom = horizon + static_cast<int>(H * (0.10 + 0.10 * uni(rng)));

  const double sky_lum = std::min(1.0, base_lum * 1.5);
  const double wall_hue = uni(rng) * 0.25;  // mild chroma variation per scene
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double r, g, b, d;
      int label;
      const double noise = 1.0 + tex * (2.0 * uni(rng) - 1.0);
      if (y < horizon) {
        label = 2;  // sky, slightly blue
        r = sky_lum * 0.85 * noise;
        g = sky_lum * 0.92 * noise;
        b = sky_lum * 1.05 * noise;
        d = 2000.0;
      } else if (y < wall_bottom) {
        label = 0;  // background wall
        r = base_lum * (0.9 + wall_hue) * noise;
        g = base_lum * 0.85 * noise;
        b = base_lum * (0.9 - 0.3 * wall_hue) * noise;
        d = 400.0;
      } else {
        label = 1;  // ground, greenish with a near-to-far luminance gradient
        const double depth_frac = static_cast<double>(H - 1 - y) / std::max(1, H - 1 - wall_bottom);
        const double shade = 0.6 + 0.4 * (1.0 - depth_frac);
        r = base_lum * 0.55 * shade * noise;
        g = base_lum * 0.85 * shade * noise;
        b = base_lum * 0.40 * shade * noise;
        d = 5.0 + 295.0 * depth_frac;
      }
      sc.mask.at(y, x) = label;
      sc.image.at(0, y, x) = r;
      sc.image.at(1, y, x) = g;
      sc.image.at(2, y, x) = b;
      sc.depth.at(y, x) = d;
    }

  // Objects sit on or in front of the ground.
  std::uniform_int_distribution<int> n_obj_dist(spec.min_objects, spec.max_objects);
  const int n_obj = n_obj_dist(rng);
  for (int o = 0; o < n_obj; ++o) {
    const bool disc = uni(rng) < 0.5;
    const int label = disc ? 4 : 3;
    const int size = std::max(3, static_cast<int>((0.12 + 0.12 * uni(rng)) * std::min(W, H)));
    const int cx = static_cast<int>(uni(rng) * (W - size)) + size / 2;
    const int cy = horizon + static_cast<int>(uni(rng) * std::max(1, H - horizon - size)) + size / 2;
    const double od = 20.0 + 180.0 * uni(rng);
    // Saturated colors: boxes toward red/magenta, discs toward yellow/cyan.
    double r, g, b;
    const double lum = base_lum * (0.8 + 0.5 * uni(rng));
    if (disc) {
      r = lum * (0.9 + 0.3 * uni(rng));
      g = lum * (0.9 + 0.3 * uni(rng));
      b = lum * 0.25 * uni(rng);
    } else {
      r = lum * (1.0 + 0.4 * uni(rng));
      g = lum * 0.3 * uni(rng);
      b = lum * (0.4 + 0.5 * uni(rng));
    }
    for (int y = std::max(0, cy - size / 2); y < std::min(H, cy + size / 2 + 1); ++y)
      for (int x = std::max(0, cx - size / 2); x < std::min(W, cx + size / 2 + 1); ++x) {
        if (disc) {
          const double dy = y - cy, dx = x - cx;
          if (dx * dx + dy * dy > 0.25 * size * size) continue;
        }
        const double noise = 1.0 + tex * (2.0 * uni(rng) - 1.0);
        sc.mask.at(y, x) = label;
        sc.image.at(0, y, x) = r * noise;
        sc.image.at(1, y, x) = g * noise;
        sc.image.at(2, y, x) = b * noise;
        sc.depth.at(y, x) = od;
      }
  }

  sc.image.clip01();
  return sc;
}

// Writes n scenes (image/mask/depth triples) under root and returns a handle.
inline DatasetHandle generate_scenes(const SceneSpec& spec, std::size_t n,
                                     const fs::path& root) {
  if (n == 0) throw EmptyRequest("generate_scenes: n must be >= 1");
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  fs::create_directories(root / "depth");

  DatasetHandle h;
  h.class_count = spec.class_count;
  h.palette = default_palette(spec.class_count);

  std::vector<std::size_t> class_counts(spec.class_count, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const Scene sc = generate_scene(spec, i);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06zu", i);
    const std::string id = std::string("scene_") + buf;
    DatasetEntry e;
    e.id = id;
    e.image_path = (root / "images" / (id + ".png")).string();
    e.mask_path = (root / "masks" / (id + ".png")).string();
    e.depth_path = (root / "depth" / (id + ".png")).string();
    save_png_image(e.image_path, sc.image, 16);
    save_png_mask(e.mask_path, sc.mask, h.palette);
    save_png_depth(e.depth_path, sc.depth, 0.05);  // 16-bit range covers 3276 m
    for (int v : sc.mask.labels()) ++class_counts[v];
    h.entries.push_back(std::move(e));
  }

  std::ofstream manifest(root / "manifest.csv");
  manifest << "id,image,mask,depth\n";
  for (const auto& e : h.entries)
    manifest << e.id << ',' << e.image_path << ',' << e.mask_path << ','
             << e.depth_path << '\n';
  std::ofstream freq(root / "class_frequency.csv");
  freq << "class,pixels\n";
  for (int c = 0; c < spec.class_count; ++c)
    freq << c << ',' << class_counts[c] << '\n';
  return h;
}

inline constexpr double kSceneDepthScale = 0.05;

// ---------------------------------------------------------------------------
// Ingestion of user-supplied datasets
// ---------------------------------------------------------------------------

struct DatasetLayout {
  std::string images_dir = "images";
  std::string masks_dir = "masks";
  std::string depth_dir;  // optional
  std::string image_suffix = ".png";
  std::string mask_suffix = ".png";
  double depth_scale = 0.001;
  int class_count = 0;  // 0 disables label range validation
};

struct IngestReport {
  std::vector<std::string> warnings;
};

inline DatasetHandle ingest(const fs::path& root, const DatasetLayout& layout,
                            IngestReport* report = nullptr) {
  const fs::path img_dir = root / layout.images_dir;
  const fs::path mask_dir = root / layout.masks_dir;
  if (!fs::is_directory(img_dir))
    throw EmptyDataset("ingest: missing images directory " + img_dir.string());

  const auto warn = [&](const std::string& msg) {
    if (report) report->warnings.push_back(msg);
  };

  DatasetHandle h;
  h.class_count = layout.class_count;
  h.palette = default_palette(layout.class_count > 0 ? layout.class_count : 5);

  std::vector<fs::path> images;
  for (const auto& p : fs::directory_iterator(img_dir))
    if (p.is_regular_file() && p.path().extension() == layout.image_suffix)
      images.push_back(p.path());
  std::sort(images.begin(), images.end());

  for (const auto& img_path : images) {
    const std::string stem = img_path.stem().string();
    const fs::path mask_path = mask_dir / (stem + layout.mask_suffix);
    if (!fs::exists(mask_path)) {
      warn("no mask for image " + img_path.string() + "; excluded");
      continue;
    }
    PlanarImage img;
    LabelMask mask;
    try {
      img = load_png_image(img_path.string());
      mask = load_png_mask(mask_path.string());
    } catch (const IoError& e) {
      warn(std::string(e.what()) + "; pair excluded");
      continue;
    }
    if (mask.width() != img.width() || mask.height() != img.height()) {
      warn("dim mismatch for " + stem + "; pair excluded");
      continue;
    }
    if (layout.class_count > 0) {
      const bool bad = std::any_of(mask.labels().begin(), mask.labels().end(),
                                   [&](int v) { return v >= layout.class_count; });
      if (bad) {
        warn("mask label >= class count in " + stem + "; pair excluded");
        continue;
      }
    }
    DatasetEntry e;
    e.id = stem;
    e.image_path = img_path.string();
    e.mask_path = mask_path.string();
    if (!layout.depth_dir.empty()) {
      const fs::path depth_path = root / layout.depth_dir / (stem + ".png");
      if (fs::exists(depth_path)) e.depth_path = depth_path.string();
    }
    h.entries.push_back(std::move(e));
  }

  if (h.entries.empty()) throw EmptyDataset("ingest: no valid image/mask pairs");
  return h;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

struct SplitResult {
  DatasetHandle train, val, test;
};

// Deterministic shuffle then partition. Val/test sizes are the rounded
// fractions; the remainder goes to train.
inline SplitResult split(const DatasetHandle& h, double f_train, double f_val,
                         double f_test, std::uint64_t seed) {
  if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
    throw InvalidSpec("split: fractions must sum to 1");
  const std::size_t n = h.size();
  const auto n_val = static_cast<std::size_t>(std::llround(n * f_val));
  const auto n_test = static_cast<std::size_t>(std::llround(n * f_test));
  if (n_val + n_test > n) throw SplitError("split: dataset too small");
  const std::size_t n_train = n - n_val - n_test;
  if ((f_train > 0 && n_train == 0) || (f_val > 0 && n_val == 0) ||
      (f_test > 0 && n_test == 0))
    throw SplitError("split: a requested split would be empty");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(detail::splitmix64(seed));
  std::shuffle(order.begin(), order.end(), rng);

  SplitResult r;
  for (DatasetHandle* part : {&r.train, &r.val, &r.test}) {
    part->palette = h.palette;
    part->class_count = h.class_count;
  }
  r.train.split = SplitTag::Train;
  r.val.split = SplitTag::Val;
  r.test.split = SplitTag::Test;
  for (std::size_t i = 0; i < n_train; ++i) r.train.entries.push_back(h.entries[order[i]]);
  for (std::size_t i = 0; i < n_val; ++i) r.val.entries.push_back(h.entries[order[n_train + i]]);
  for (std::size_t i = 0; i < n_test; ++i)
    r.test.entries.push_back(h.entries[order[n_train + n_val + i]]);
  return r;
}

}  // namespace divseg
