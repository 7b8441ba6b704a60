#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "divseg/data.hpp"
#include "divseg/envmod.hpp"
#include "divseg/png_io.hpp"

namespace divseg {

namespace detail {

inline void require_writable(const fs::path& p, bool force) {
  if (fs::exists(p) && !force)
    throw IoError("refusing to overwrite " + p.string() + " without --force");
}

// Manifests are written to a temp file and renamed so an interrupted run
// never leaves a partial manifest behind.
inline void write_atomic(const fs::path& path, const std::string& contents) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << contents;
  }
  fs::rename(tmp, path);
}

}  // namespace detail

// steps^3 luminance/contrast variants per image, factors linearly spaced in
// [0.5, 1.4]. The record whose factors are nearest to 1.0 on every axis is
// flagged as the grid center.
inline std::vector<GridRecord> build_mod_grid(const DatasetHandle& data, int steps,
                                              const fs::path& out_dir, bool force = false) {
  const std::vector<double> factors = grid_factors(steps);
  int center_idx = 0;
  for (int i = 1; i < steps; ++i)
    if (std::abs(factors[i] - 1.0) < std::abs(factors[center_idx] - 1.0)) center_idx = i;

  fs::create_directories(out_dir);
  std::vector<GridRecord> records;
  records.reserve(data.size() * steps * steps * steps);
  for (const auto& entry : data.entries) {
    const PlanarImage img = load_png_image(entry.image_path);
    for (int il = 0; il < steps; ++il)
      for (int ia = 0; ia < steps; ++ia)
        for (int ic = 0; ic < steps; ++ic) {
          ModFactors f{factors[il], factors[ia], factors[ic]};
          char suffix[48];
          std::snprintf(suffix, sizeof suffix, "_l%02d_a%02d_c%02d.png", il, ia, ic);
          const fs::path out_path = out_dir / (entry.id + suffix);
          detail::require_writable(out_path, force);
          PlanarImage mod = modify_lum_contrast(img, f, /*clip=*/false);
          GridRecord rec;
          rec.image_id = entry.id;
          rec.factors = f;
          rec.out_path = out_path.string();
          rec.clipped_fraction = mod.clipped_fraction();
          rec.grid_center = (il == center_idx && ia == center_idx && ic == center_idx);
          mod.clip01();
          save_png_image(out_path.string(), mod, 16);
          records.push_back(std::move(rec));
        }
  }

  std::string manifest = "image_id,f_lum,f_actr,f_cctr,out_path,clipped_fraction\n";
  char line[512];
  for (const auto& r : records) {
    std::snprintf(line, sizeof line, "%s,%.6g,%.6g,%.6g,%s,%.6g%s\n", r.image_id.c_str(),
                  r.factors.f_lum, r.factors.f_actr, r.factors.f_cctr,
                  r.out_path.c_str(), r.clipped_fraction,
                  r.grid_center ? ",center" : "");
    manifest += line;
  }
  detail::write_atomic(out_dir / "mod_manifest.csv", manifest);
  return records;
}

struct FogRecord {
  std::string image_id;
  double attenuation = 0.0;
  std::string out_path;
};

// One foggy variant per image. Depth comes from the paired depth map when
// present, otherwise from the spec's constant depth.
inline std::vector<FogRecord> build_fog_variants(const DatasetHandle& data,
                                                 const FogSpec& spec,
                                                 const fs::path& out_dir,
                                                 double depth_scale = 0.001,
                                                 bool force = false) {
  fs::create_directories(out_dir);
  std::vector<FogRecord> records;
  for (const auto& entry : data.entries) {
    const PlanarImage img = load_png_image(entry.image_path);
    const fs::path out_path = out_dir / (entry.id + "_fog.png");
    detail::require_writable(out_path, force);
    PlanarImage foggy;
    if (!entry.depth_path.empty()) {
      const DepthMap depth = load_png_depth(entry.depth_path, depth_scale);
      FogSpec s = spec;
      s.constant_depth.reset();
      foggy = apply_fog(img, s, &depth);
    } else {
      foggy = apply_fog(img, spec);
    }
    save_png_image(out_path.string(), foggy, 16);
    records.push_back({entry.id, spec.attenuation, out_path.string()});
  }

  std::string manifest = "image_id,attenuation,out_path\n";
  char line[512];
  for (const auto& r : records) {
    std::snprintf(line, sizeof line, "%s,%.6g,%s\n", r.image_id.c_str(),
                  r.attenuation, r.out_path.c_str());
    manifest += line;
  }
  detail::write_atomic(out_dir / "fog_manifest.csv", manifest);
  return records;
}

struct IlluminantRecord {
  std::string image_id;
  double hue_deg = 0.0;
  int radius_idx = 0;
  double xy_x = 0.0;
  double xy_y = 0.0;
  std::string out_path;
};

// hues x radii relit variants per image (the 20x6 grid by default).
inline std::vector<IlluminantRecord> build_illuminant_grid(
    const DatasetHandle& data, int hues, int radii, const SpectralTable& tbl,
    const fs::path& out_dir, bool force = false) {
  if (hues < 1 || radii < 1 || radii > 6)
    throw InvalidSpec("illuminant grid: hues >= 1 and 1 <= radii <= 6");
  fs::create_directories(out_dir);
  std::vector<IlluminantRecord> records;
  for (const auto& entry : data.entries) {
    const PlanarImage img = load_png_image(entry.image_path);
    for (int hi = 0; hi < hues; ++hi)
      for (int ri = 0; ri < radii; ++ri) {
        IlluminantSpec ill;
        ill.hue_angle_deg = 360.0 * hi / hues;
        ill.saturation_radius = ri;
        const auto xy = illuminant_target_xy(ill, tbl);
        char suffix[48];
        std::snprintf(suffix, sizeof suffix, "_h%02d_r%d.png", hi, ri);
        const fs::path out_path = out_dir / (entry.id + suffix);
        detail::require_writable(out_path, force);
        const PlanarImage relit = relight(img, ill, tbl);
        save_png_image(out_path.string(), relit, 16);
        records.push_back({entry.id, ill.hue_angle_deg, ri, xy[0], xy[1],
                           out_path.string()});
      }
  }

  std::string manifest = "image_id,hue_deg,radius_idx,xy_x,xy_y,out_path\n";
  char line[512];
  for (const auto& r : records) {
    std::snprintf(line, sizeof line, "%s,%.6g,%d,%.6g,%.6g,%s\n", r.image_id.c_str(),
                  r.hue_deg, r.radius_idx, r.xy_x, r.xy_y, r.out_path.c_str());
    manifest += line;
  }
  detail::write_atomic(out_dir / "illuminant_manifest.csv", manifest);
  return records;
}

}  // namespace divseg
