// divseg command line: dataset statistics, environmental modifications,
// model training/evaluation and response probing. CSV files are the
// normative outputs; SVG plots are rendered from them as a convenience.

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "divseg/checkpoint.hpp"
#include "divseg/colorcore.hpp"
#include "divseg/data.hpp"
#include "divseg/divnorm.hpp"
#include "divseg/envmod.hpp"
#include "divseg/gridgen.hpp"
#include "divseg/metrics.hpp"
#include "divseg/png_io.hpp"
#include "divseg/segnet.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace divseg;

namespace {

// ---------------------------------------------------------------------------
// Parallelism, capped by DIVNORM_THREADS
// ---------------------------------------------------------------------------

int thread_cap() {
  int cap = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* e = std::getenv("DIVNORM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(e, &end, 10);
    if (*e == '\0' || end == nullptr || *end != '\0' || v < 1)
      throw InvalidSpec("DIVNORM_THREADS must be a positive integer");
    cap = static_cast<int>(std::min<long>(v, 1024));
  }
  return cap;
}

template <class F>
void parallel_for(std::size_t n, F&& f) {
  const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(thread_cap()), n);
  if (t <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr err;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < t; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Small formatting and file helpers
// ---------------------------------------------------------------------------

std::string g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& contents, bool force) {
  detail::require_writable(path, force);
  detail::write_atomic(path, contents);
}

std::vector<std::string> split_str(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string dataset_name(const std::string& dir) {
  fs::path p(dir);
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

// ---------------------------------------------------------------------------
// SVG rendering (convenience views of the CSVs)
// ---------------------------------------------------------------------------

struct Series {
  std::string label;
  std::vector<double> x, y;
};

const char* const kSeriesColors[6] = {"#1f77b4", "#d62728", "#2ca02c",
                                      "#ff7f0e", "#9467bd", "#555555"};

void svg_curves(const fs::path& path, const std::vector<Series>& series,
                const std::string& title, bool force) {
  const int W = 640, H = 420, M = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) y1 = y0 + 1.0;
  const auto px = [&](double x) { return M + (W - 2 * M) * (x - x0) / (x1 - x0); };
  const auto py = [&](double y) { return H - M - (H - 2 * M) * (y - y0) / (y1 - y0); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    std::to_string(W) + "\" height=\"" + std::to_string(H) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + std::to_string(W / 2) + "\" y=\"20\" text-anchor=\"middle\">" +
         title + "</text>\n";
  svg += "<rect x=\"" + std::to_string(M) + "\" y=\"" + std::to_string(M) + "\" width=\"" +
         std::to_string(W - 2 * M) + "\" height=\"" + std::to_string(H - 2 * M) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
  int ci = 0;
  for (const auto& s : series) {
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i)
      pts += g6(px(s.x[i])) + "," + g6(py(s.y[i])) + " ";
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(kSeriesColors[ci % 6]) +
           "\" points=\"" + pts + "\"/>\n";
    svg += "<text x=\"" + std::to_string(W - M + 4) + "\" y=\"" +
           std::to_string(M + 16 * (ci + 1)) + "\" fill=\"" + kSeriesColors[ci % 6] +
           "\" font-size=\"11\">" + s.label + "</text>\n";
    ++ci;
  }
  svg += "<text x=\"8\" y=\"" + std::to_string(M - 6) + "\" font-size=\"11\">" + g6(y1) +
         "</text>\n<text x=\"8\" y=\"" + std::to_string(H - M) + "\" font-size=\"11\">" +
         g6(y0) + "</text>\n";
  svg += "</svg>\n";
  write_file(path, svg, force);
}

void svg_hist(const fs::path& path, const Histogram& h, const std::string& title,
              bool force) {
  const int W = 640, H = 420, M = 50;
  std::size_t peak = 1;
  for (std::size_t c : h.counts) peak = std::max(peak, c);
  const double lo = h.edges.front(), hi = h.edges.back();
  const double span = hi > lo ? hi - lo : 1.0;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    std::to_string(W) + "\" height=\"" + std::to_string(H) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + std::to_string(W / 2) + "\" y=\"20\" text-anchor=\"middle\">" +
         title + " (median " + g6(h.median) + ")</text>\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    const double bx = M + (W - 2 * M) * (h.edges[b] - lo) / span;
    const double bw = (W - 2 * M) * (h.edges[b + 1] - h.edges[b]) / span;
    const double bh = (H - 2 * M) * static_cast<double>(h.counts[b]) / static_cast<double>(peak);
    svg += "<rect x=\"" + g6(bx) + "\" y=\"" + g6(H - M - bh) + "\" width=\"" +
           g6(std::max(bw - 1.0, 0.5)) + "\" height=\"" + g6(bh) +
           "\" fill=\"#1f77b4\"/>\n";
  }
  svg += "<text x=\"8\" y=\"" + std::to_string(H - M) + "\" font-size=\"11\">" + g6(lo) +
         "</text>\n<text x=\"" + std::to_string(W - M) + "\" y=\"" +
         std::to_string(H - M + 14) + "\" font-size=\"11\">" + g6(hi) + "</text>\n";
  svg += "</svg>\n";
  write_file(path, svg, force);
}

void svg_heatmap(const fs::path& path, const std::vector<double>& xs,
                 const std::vector<double>& ys, const std::vector<double>& vals,
                 const std::string& title, bool force) {
  const int cell = 36, M = 60;
  const int W = M * 2 + cell * static_cast<int>(xs.size());
  const int H = M * 2 + cell * static_cast<int>(ys.size());
  double v0 = 1e300, v1 = -1e300;
  for (double v : vals) {
    v0 = std::min(v0, v);
    v1 = std::max(v1, v);
  }
  if (v1 <= v0) v1 = v0 + 1.0;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    std::to_string(W) + "\" height=\"" + std::to_string(H) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + std::to_string(W / 2) + "\" y=\"20\" text-anchor=\"middle\">" +
         title + "</text>\n";
  for (std::size_t j = 0; j < ys.size(); ++j)
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double t = (vals[j * xs.size() + i] - v0) / (v1 - v0);
      const int r = static_cast<int>(255 * (1.0 - t));
      const int g = static_cast<int>(100 + 155 * t);
      svg += "<rect x=\"" + std::to_string(M + cell * static_cast<int>(i)) + "\" y=\"" +
             std::to_string(M + cell * static_cast<int>(j)) + "\" width=\"" +
             std::to_string(cell) + "\" height=\"" + std::to_string(cell) +
             "\" fill=\"rgb(" + std::to_string(r) + "," + std::to_string(g) +
             ",120)\"/>\n";
      svg += "<text x=\"" + std::to_string(M + cell * static_cast<int>(i) + cell / 2) +
             "\" y=\"" + std::to_string(M + cell * static_cast<int>(j) + cell / 2 + 4) +
             "\" text-anchor=\"middle\" font-size=\"9\">" +
             g6(vals[j * xs.size() + i]) + "</text>\n";
    }
  for (std::size_t i = 0; i < xs.size(); ++i)
    svg += "<text x=\"" + std::to_string(M + cell * static_cast<int>(i) + cell / 2) +
           "\" y=\"" + std::to_string(H - M + 16) +
           "\" text-anchor=\"middle\" font-size=\"10\">" + g6(xs[i]) + "</text>\n";
  for (std::size_t j = 0; j < ys.size(); ++j)
    svg += "<text x=\"" + std::to_string(M - 6) + "\" y=\"" +
           std::to_string(M + cell * static_cast<int>(j) + cell / 2 + 4) +
           "\" text-anchor=\"end\" font-size=\"10\">" + g6(ys[j]) + "</text>\n";
  svg += "</svg>\n";
  write_file(path, svg, force);
}

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

struct GlobalOpts {
  std::string config;
  std::string out = "out";
  std::uint64_t seed = 0;
  bool force = false;
};

// Maps config keys to their CLI options so a config value only applies when
// the flag was not given, and unknown keys are rejected.
struct Registry {
  std::map<std::string, std::pair<CLI::Option*, std::function<void(const json&)>>> keys;

  template <class T>
  void add(CLI::Option* opt, const std::string& key, T* dst) {
    keys[key] = {opt, [dst](const json& v) { *dst = v.get<T>(); }};
  }

  void apply(const json& obj, const std::string& scope) const {
    if (!obj.is_object())
      throw InvalidSpec("config: section '" + scope + "' must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      const auto f = keys.find(it.key());
      if (f == keys.end())
        throw InvalidSpec("config: unknown key '" + it.key() + "' in " + scope);
      if (f->second.first->count() == 0) f->second.second(it.value());
    }
  }
};

void write_resolved_config(const GlobalOpts& g, const std::string& cmd, json body) {
  json out;
  out["command"] = cmd;
  out["seed"] = g.seed;
  out["out"] = g.out;
  out["force"] = g.force;
  for (auto it = body.begin(); it != body.end(); ++it) out[it.key()] = it.value();
  fs::create_directories(g.out);
  write_file(fs::path(g.out) / (cmd + "_config.json"), out.dump(2) + "\n", g.force);
}

// ---------------------------------------------------------------------------
// Dataset plumbing
// ---------------------------------------------------------------------------

struct DataOpts {
  std::string data;
  std::string images_dir = "images";
  std::string masks_dir = "masks";
  std::string depth_dir = "depth";
  double depth_scale = kSceneDepthScale;
  int classes = 5;
};

void register_data_opts(CLI::App* sc, Registry& reg, DataOpts& d) {
  reg.add(sc->add_option("--data", d.data, "dataset root (images/ + masks/)"),
          "data", &d.data);
  reg.add(sc->add_option("--images-dir", d.images_dir, "image subdirectory"),
          "images_dir", &d.images_dir);
  reg.add(sc->add_option("--masks-dir", d.masks_dir, "mask subdirectory"),
          "masks_dir", &d.masks_dir);
  reg.add(sc->add_option("--depth-dir", d.depth_dir, "depth subdirectory"),
          "depth_dir", &d.depth_dir);
  reg.add(sc->add_option("--depth-scale", d.depth_scale, "meters per depth PNG unit"),
          "depth_scale", &d.depth_scale);
  reg.add(sc->add_option("--classes", d.classes, "number of classes"),
          "classes", &d.classes);
}

json data_opts_json(const DataOpts& d) {
  json j;
  j["data"] = d.data;
  j["images_dir"] = d.images_dir;
  j["masks_dir"] = d.masks_dir;
  j["depth_dir"] = d.depth_dir;
  j["depth_scale"] = d.depth_scale;
  j["classes"] = d.classes;
  return j;
}

DatasetHandle load_data(const DataOpts& d) {
  if (d.data.empty()) throw InvalidSpec("missing --data (dataset root)");
  DatasetLayout layout;
  layout.images_dir = d.images_dir;
  layout.masks_dir = d.masks_dir;
  layout.depth_dir = d.depth_dir;
  layout.depth_scale = d.depth_scale;
  layout.class_count = d.classes;
  IngestReport report;
  const DatasetHandle h = ingest(d.data, layout, &report);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  return h;
}

std::vector<VisualStats> dataset_stats(const std::vector<std::string>& paths) {
  std::vector<VisualStats> stats(paths.size());
  parallel_for(paths.size(), [&](std::size_t i) {
    stats[i] = visual_stats(load_png_image(paths[i]));
  });
  return stats;
}

// ---------------------------------------------------------------------------
// Checkpoint metadata
// ---------------------------------------------------------------------------

struct CkptInfo {
  SegModel model;
  std::string variant = "unknown";
  std::uint64_t seed = 0;
};

CkptInfo load_ckpt(const std::string& path) {
  const LoadedCheckpoint lc = load_checkpoint(path);
  CkptInfo info;
  info.model = lc.model;
  if (!lc.config_json.empty()) {
    try {
      const json j = json::parse(lc.config_json);
      if (j.contains("variant")) info.variant = j["variant"].get<std::string>();
      if (j.contains("seed")) info.seed = j["seed"].get<std::uint64_t>();
    } catch (const json::exception&) {
      // Leave the defaults; the weights are still usable.
    }
  }
  return info;
}

// ---------------------------------------------------------------------------
// Subcommand implementations
// ---------------------------------------------------------------------------

const std::pair<const char*, StatsFeature> kFeatureList[3] = {
    {"mean_lum", StatsFeature::MeanLum},
    {"achro_ctr", StatsFeature::AchroCtr},
    {"chro_ctr", StatsFeature::ChroCtr}};

StatsFeature feature_by_name(const std::string& name) {
  for (const auto& [n, f] : kFeatureList)
    if (name == n) return f;
  throw InvalidSpec("unknown feature '" + name + "'");
}

struct StatsOpts {
  DataOpts data;
  std::string images;  // flat directory alternative to a dataset root
  int bins = 32;
};

void cmd_stats(const GlobalOpts& g, const StatsOpts& o) {
  std::vector<std::string> paths;
  if (!o.data.data.empty()) {
    for (const auto& e : load_data(o.data).entries) paths.push_back(e.image_path);
  } else if (!o.images.empty()) {
    std::vector<fs::path> files;
    if (!fs::is_directory(o.images))
      throw EmptyDataset("stats: not a directory: " + o.images);
    for (const auto& p : fs::directory_iterator(o.images))
      if (p.is_regular_file() && p.path().extension() == ".png")
        files.push_back(p.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) paths.push_back(p.string());
    if (paths.empty()) throw EmptyDataset("stats: no PNG files in " + o.images);
  } else {
    throw InvalidSpec("stats: need --data or --images");
  }

  const std::vector<VisualStats> stats = dataset_stats(paths);
  fs::create_directories(g.out);

  std::string csv = "path,mean_lum,achro_ctr,chro_ctr\n";
  for (std::size_t i = 0; i < paths.size(); ++i)
    csv += paths[i] + "," + g6(stats[i].mean_lum) + "," + g6(stats[i].achro_ctr) + "," +
           g6(stats[i].chro_ctr) + "\n";
  write_file(fs::path(g.out) / "stats.csv", csv, g.force);

  for (const auto& [name, feature] : kFeatureList) {
    const Histogram h = stats_histogram(stats, feature, o.bins);
    std::string hist = "# median=" + g6(h.median) + "\nbin_low,bin_high,count\n";
    for (std::size_t b = 0; b < h.counts.size(); ++b)
      hist += g6(h.edges[b]) + "," + g6(h.edges[b + 1]) + "," +
              std::to_string(h.counts[b]) + "\n";
    write_file(fs::path(g.out) / ("hist_" + std::string(name) + ".csv"), hist, g.force);
    svg_hist(fs::path(g.out) / ("hist_" + std::string(name) + ".svg"), h, name, g.force);
  }
  std::cout << "stats: " << paths.size() << " images -> " << g.out << "\n";
}

struct ModifyOpts {
  DataOpts data;
  int steps = 10;
};

void cmd_modify(const GlobalOpts& g, const ModifyOpts& o) {
  const DatasetHandle h = load_data(o.data);
  const auto records = build_mod_grid(h, o.steps, g.out, g.force);
  std::cout << "modify: " << records.size() << " variants -> " << g.out << "\n";
}

struct FogOpts {
  DataOpts data;
  std::string preset = "middle";
  double constant_depth = 0.0;  // used when a pair has no depth map
};

FogPreset fog_preset_by_name(const std::string& name) {
  if (name == "low") return FogPreset::Low;
  if (name == "middle") return FogPreset::Middle;
  if (name == "high") return FogPreset::High;
  throw InvalidSpec("unknown fog preset '" + name + "'");
}

void cmd_fog(const GlobalOpts& g, const FogOpts& o) {
  const DatasetHandle h = load_data(o.data);
  FogSpec spec = FogSpec::preset(fog_preset_by_name(o.preset), o.constant_depth);
  if (o.constant_depth <= 0.0) spec.constant_depth.reset();
  const auto records =
      build_fog_variants(h, spec, g.out, o.data.depth_scale, g.force);
  std::cout << "fog: " << records.size() << " variants (beta " << g6(spec.attenuation)
            << ") -> " << g.out << "\n";
}

struct RelightOpts {
  DataOpts data;
  int hues = 20;
  int radii = 6;
};

void cmd_relight(const GlobalOpts& g, const RelightOpts& o) {
  const DatasetHandle h = load_data(o.data);
  const SpectralTable tbl = SpectralTable::standard();
  const auto records = build_illuminant_grid(h, o.hues, o.radii, tbl, g.out, g.force);
  std::cout << "relight: " << records.size() << " variants -> " << g.out << "\n";
}

struct PartitionOpts {
  DataOpts data;
  std::string feature = "mean_lum";
  double low = 15.0;
  double high = 85.0;
};

void cmd_partition(const GlobalOpts& g, const PartitionOpts& o) {
  const DatasetHandle h = load_data(o.data);
  std::vector<std::string> paths;
  for (const auto& e : h.entries) paths.push_back(e.image_path);
  const std::vector<VisualStats> stats = dataset_stats(paths);

  PartitionSpec spec;
  spec.feature = feature_by_name(o.feature);
  spec.low_pct = o.low;
  spec.high_pct = o.high;
  const Partition p = partition_extremes(stats, spec);

  fs::create_directories(g.out);
  std::string csv = "subset,id," + o.feature + "\n";
  for (std::size_t i : p.low)
    csv += "low," + h.entries[i].id + "," + g6(stats_feature(stats[i], spec.feature)) + "\n";
  for (std::size_t i : p.high)
    csv += "high," + h.entries[i].id + "," + g6(stats_feature(stats[i], spec.feature)) + "\n";
  write_file(fs::path(g.out) / "partition.csv", csv, g.force);
  std::cout << "partition: " << p.low.size() << " low / " << p.high.size() << " high -> "
            << g.out << "\n";
}

struct GenerateOpts {
  int count = 100;
  int width = 32;
  int height = 32;
};

void cmd_generate(const GlobalOpts& g, const GenerateOpts& o) {
  if (o.count < 1) throw EmptyRequest("generate: --count must be >= 1");
  SceneSpec spec;
  spec.width = o.width;
  spec.height = o.height;
  spec.seed = g.seed;
  const fs::path root(g.out);
  if (fs::exists(root / "manifest.csv") && !g.force)
    throw IoError("refusing to overwrite " + (root / "manifest.csv").string() +
                  " without --force");
  const DatasetHandle h = generate_scenes(spec, static_cast<std::size_t>(o.count), root);
  std::cout << "generate: " << h.size() << " scenes -> " << g.out << "\n";
}

struct TrainOpts {
  DataOpts data;
  std::string variant = "4dn";
  std::string seeds;  // comma separated; empty means the global seed
  int epochs = 6;
  int batch = 8;
  double lr = 1e-3;
};

ModelVariant variant_by_name(const std::string& name) {
  if (name == "4dn") return ModelVariant::FourDN;
  if (name == "nodn") return ModelVariant::NoDN;
  throw InvalidSpec("unknown variant '" + name + "' (use nodn or 4dn)");
}

void cmd_train(const GlobalOpts& g, const TrainOpts& o) {
  const DatasetHandle h = load_data(o.data);
  std::vector<TrainSample> samples(h.size());
  parallel_for(h.size(), [&](std::size_t i) {
    samples[i].image = image_to_tensor(load_png_image(h.entries[i].image_path));
    samples[i].mask = load_png_mask(h.entries[i].mask_path);
  });

  std::vector<std::uint64_t> seeds;
  if (o.seeds.empty()) {
    seeds.push_back(g.seed);
  } else {
    for (const auto& tok : split_str(o.seeds, ','))
      seeds.push_back(std::stoull(tok));
  }

  fs::create_directories(g.out);
  for (const std::uint64_t seed : seeds) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.epochs = o.epochs;
    cfg.batch_size = o.batch;
    cfg.learning_rate = o.lr;
    cfg.classes = o.data.classes;
    cfg.variant = variant_by_name(o.variant);

    const TrainResult r = train(samples, cfg);
    if (r.diverged)
      std::cerr << "warning: seed " << seed
                << " diverged; checkpoint holds the last finite epoch\n";

    json meta;
    meta["command"] = "train";
    meta["variant"] = o.variant;
    meta["seed"] = seed;
    meta["epochs"] = o.epochs;
    meta["batch_size"] = o.batch;
    meta["learning_rate"] = o.lr;
    meta["classes"] = o.data.classes;
    meta["data"] = o.data.data;
    meta["diverged"] = r.diverged;

    const std::string tag = o.variant + "_s" + std::to_string(seed);
    const fs::path ckpt_path = fs::path(g.out) / ("model_" + tag + ".ckpt");
    detail::require_writable(ckpt_path, g.force);
    save_checkpoint(ckpt_path.string(), r.model, meta.dump());

    std::string trace = "epoch,step,loss\n";
    Series loss_series{"loss", {}, {}};
    for (std::size_t i = 0; i < r.trace.size(); ++i) {
      const TraceRow& row = r.trace[i];
      trace += std::to_string(row.epoch) + "," + std::to_string(row.step) + "," +
               g17(row.loss) + "\n";
      loss_series.x.push_back(static_cast<double>(i));
      loss_series.y.push_back(row.loss);
    }
    write_file(fs::path(g.out) / ("trace_" + tag + ".csv"), trace, g.force);
    if (!loss_series.x.empty())
      svg_curves(fs::path(g.out) / ("trace_" + tag + ".svg"), {loss_series},
                 "training loss " + tag, g.force);
    std::cout << "train: " << tag << " (" << r.trace.size() << " steps, "
              << r.model.param_count() << " params) -> " << ckpt_path.string() << "\n";
  }
}

struct EvalOpts {
  std::vector<std::string> ckpts;
  std::vector<std::string> datasets;
  DataOpts layout;  // shared layout options; layout.data is unused here
  bool save_masks = false;
};

void cmd_eval(const GlobalOpts& g, const EvalOpts& o) {
  if (o.ckpts.empty()) throw InvalidSpec("eval: need at least one --ckpt");
  if (o.datasets.empty()) throw InvalidSpec("eval: need at least one --data");
  fs::create_directories(g.out);

  std::string main_rows, class_rows;
  for (const auto& data_dir : o.datasets) {
    DataOpts d = o.layout;
    d.data = data_dir;
    const DatasetHandle h = load_data(d);
    const std::string ds = dataset_name(data_dir);

    std::vector<Tensor> images(h.size());
    std::vector<LabelMask> gts(h.size());
    parallel_for(h.size(), [&](std::size_t i) {
      images[i] = image_to_tensor(load_png_image(h.entries[i].image_path));
      gts[i] = load_png_mask(h.entries[i].mask_path);
    });

    for (const auto& ckpt_path : o.ckpts) {
      const CkptInfo info = load_ckpt(ckpt_path);
      const int K = info.model.classes;
      std::vector<LabelMask> preds(h.size());
      parallel_for(h.size(), [&](std::size_t i) {
        preds[i] = predict(info.model, images[i]);
      });

      // Dataset-level IoU: pixel counts pooled across all images per class.
      std::vector<double> inter(K, 0.0), uni(K, 0.0);
      for (std::size_t i = 0; i < h.size(); ++i) {
        const auto& pl = preds[i].labels();
        const auto& gl = gts[i].labels();
        for (std::size_t px = 0; px < gl.size(); ++px) {
          const int p = pl[px], t = gl[px];
          if (t < 0 || t >= K)
            throw InvalidInput("eval: mask label out of range in " + h.entries[i].id);
          if (p == t) {
            inter[p] += 1.0;
            uni[p] += 1.0;
          } else {
            uni[p] += 1.0;
            uni[t] += 1.0;
          }
        }
      }
      double sum = 0.0;
      int present = 0;
      const std::string tag = ds + "," + info.variant + "," + std::to_string(info.seed);
      for (int c = 0; c < K; ++c) {
        if (uni[c] <= 0.0) continue;
        const double v = inter[c] / uni[c];
        sum += v;
        ++present;
        class_rows += tag + "," + std::to_string(c) + "," + g6(v) + "\n";
      }
      const double miou = present > 0 ? sum / present : 0.0;
      main_rows += tag + "," + g6(miou) + "\n";

      if (o.save_masks) {
        const fs::path mask_dir =
            fs::path(g.out) / ("pred_" + info.variant + "_s" +
                               std::to_string(info.seed) + "_" + ds);
        fs::create_directories(mask_dir);
        const Palette pal = default_palette(K);
        for (std::size_t i = 0; i < h.size(); ++i) {
          const fs::path mp = mask_dir / (h.entries[i].id + ".png");
          detail::require_writable(mp, g.force);
          save_png_mask(mp.string(), preds[i], pal);
        }
      }
    }
  }

  std::string csv = "dataset,variant,seed,miou\n" + main_rows;
  csv += "# per-class\ndataset,variant,seed,class,iou\n" + class_rows;
  write_file(fs::path(g.out) / "eval.csv", csv, g.force);
  std::cout << "eval -> " << (fs::path(g.out) / "eval.csv").string() << "\n";
}

struct InvarianceOpts {
  std::vector<std::string> ckpts;
  DataOpts data;
  std::string mods = "lum=0.6,actr=0.6,fog=middle,illum=0:5";
  double constant_depth = 0.0;
  int grid_steps = 0;  // >0 adds a lum x actr overlap heatmap
};

struct ModRequest {
  std::string name, param;
  std::function<PlanarImage(const DatasetEntry&, const PlanarImage&)> apply;
};

std::vector<ModRequest> parse_mods(const InvarianceOpts& o) {
  // Shared across relight requests; building it is cheap but do it once.
  static const SpectralTable tbl = SpectralTable::standard();
  std::vector<ModRequest> out;
  for (const auto& tok : split_str(o.mods, ',')) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw InvalidSpec("invariance: modification must be name=param: " + tok);
    const std::string name = tok.substr(0, eq);
    const std::string param = tok.substr(eq + 1);
    ModRequest req;
    req.param = param;
    if (name == "lum" || name == "actr" || name == "cctr") {
      req.name = name == "lum" ? "luminance" : (name == "actr" ? "achro_contrast"
                                                               : "chro_contrast");
      ModFactors f;
      const double v = std::stod(param);
      (name == "lum" ? f.f_lum : name == "actr" ? f.f_actr : f.f_cctr) = v;
      req.apply = [f](const DatasetEntry&, const PlanarImage& img) {
        return modify_lum_contrast(img, f);
      };
    } else if (name == "fog") {
      req.name = "fog";
      const FogSpec base = FogSpec::preset(fog_preset_by_name(param));
      const double depth_scale = o.data.depth_scale;
      const double const_depth = o.constant_depth;
      req.apply = [base, depth_scale, const_depth](const DatasetEntry& e,
                                                   const PlanarImage& img) {
        FogSpec spec = base;
        if (!e.depth_path.empty()) {
          const DepthMap depth = load_png_depth(e.depth_path, depth_scale);
          return apply_fog(img, spec, &depth);
        }
        if (const_depth <= 0.0)
          throw DepthRequired("fog: no depth map for " + e.id +
                              " and no --constant-depth");
        spec.constant_depth = const_depth;
        return apply_fog(img, spec);
      };
    } else if (name == "illum") {
      req.name = "illuminant";
      const auto parts = split_str(param, ':');
      if (parts.size() != 2)
        throw InvalidSpec("invariance: illum wants hue:radius, got " + param);
      IlluminantSpec ill;
      ill.hue_angle_deg = std::stod(parts[0]);
      ill.saturation_radius = std::stoi(parts[1]);
      req.apply = [ill](const DatasetEntry&, const PlanarImage& img) {
        return relight(img, ill, tbl);
      };
    } else {
      throw InvalidSpec("invariance: unknown modification '" + name + "'");
    }
    out.push_back(std::move(req));
  }
  if (out.empty()) throw EmptyRequest("invariance: no modifications requested");
  return out;
}

void cmd_invariance(const GlobalOpts& g, const InvarianceOpts& o) {
  if (o.ckpts.empty()) throw InvalidSpec("invariance: need at least one --ckpt");
  const DatasetHandle h = load_data(o.data);
  const std::vector<ModRequest> mods = parse_mods(o);

  std::vector<PlanarImage> originals(h.size());
  parallel_for(h.size(), [&](std::size_t i) {
    originals[i] = load_png_image(h.entries[i].image_path);
  });

  fs::create_directories(g.out);
  std::string csv = "modification,param,variant,seed,overlap\n";
  for (const auto& ckpt_path : o.ckpts) {
    const CkptInfo info = load_ckpt(ckpt_path);
    for (const auto& mod : mods) {
      std::vector<double> overlaps(h.size());
      parallel_for(h.size(), [&](std::size_t i) {
        const PlanarImage modified = mod.apply(h.entries[i], originals[i]);
        overlaps[i] = invariance_overlap(info.model, originals[i], modified);
      });
      double mean = 0.0;
      for (double v : overlaps) mean += v;
      mean /= static_cast<double>(overlaps.size());
      csv += mod.name + "," + mod.param + "," + info.variant + "," +
             std::to_string(info.seed) + "," + g6(mean) + "\n";
    }

    if (o.grid_steps > 0) {
      const std::vector<double> factors = grid_factors(o.grid_steps);
      std::string grid_csv = "f_lum,f_actr,variant,seed,overlap\n";
      std::vector<double> cells(factors.size() * factors.size());
      for (std::size_t aj = 0; aj < factors.size(); ++aj)
        for (std::size_t li = 0; li < factors.size(); ++li) {
          const ModFactors f{factors[li], factors[aj], 1.0};
          std::vector<double> overlaps(h.size());
          parallel_for(h.size(), [&](std::size_t i) {
            overlaps[i] = invariance_overlap(info.model, originals[i],
                                             modify_lum_contrast(originals[i], f));
          });
          double mean = 0.0;
          for (double v : overlaps) mean += v;
          mean /= static_cast<double>(overlaps.size());
          cells[aj * factors.size() + li] = mean;
          grid_csv += g6(f.f_lum) + "," + g6(f.f_actr) + "," + info.variant + "," +
                      std::to_string(info.seed) + "," + g6(mean) + "\n";
        }
      const std::string tag = info.variant + "_s" + std::to_string(info.seed);
      write_file(fs::path(g.out) / ("invariance_grid_" + tag + ".csv"), grid_csv,
                 g.force);
      svg_heatmap(fs::path(g.out) / ("invariance_grid_" + tag + ".svg"), factors,
                  factors, cells, "overlap, luminance x achro-contrast (" + tag + ")",
                  g.force);
    }
  }
  write_file(fs::path(g.out) / "invariance.csv", csv, g.force);
  std::cout << "invariance -> " << (fs::path(g.out) / "invariance.csv").string() << "\n";
}

struct ProbeOpts {
  std::string ckpt;
  std::string surrounds = "0,0.25,0.5,0.75,1";
  int steps = 17;
  int channel = 0;
};

void cmd_probe(const GlobalOpts& g, const ProbeOpts& o) {
  if (o.ckpt.empty()) throw InvalidSpec("probe: missing --ckpt");
  const CkptInfo info = load_ckpt(o.ckpt);
  if (!info.model.is_four_dn())
    throw InvalidInput("probe: no DN slots present in " + o.ckpt);

  std::vector<double> surrounds;
  for (const auto& tok : split_str(o.surrounds, ','))
    surrounds.push_back(std::stod(tok));
  if (surrounds.empty()) throw EmptyRequest("probe: no surround levels");

  fs::create_directories(g.out);
  std::string csv = "layer,surround,center_in,center_out\n";
  std::string nl_csv = "layer,index\n";
  std::vector<double> nl(4, 0.0);
  for (int layer = 0; layer < 4; ++layer) {
    const DnParams& p = *info.model.dn_slots[layer];
    const auto curve = probe_center_surround(p, o.channel, surrounds, o.steps);
    std::vector<Series> series;
    for (std::size_t s = 0; s < surrounds.size(); ++s)
      series.push_back({"surround " + g6(surrounds[s]), {}, {}});
    for (std::size_t i = 0; i < curve.size(); ++i) {
      const ResponsePoint& pt = curve[i];
      csv += std::to_string(layer) + "," + g6(pt.surround) + "," + g6(pt.center_in) +
             "," + g6(pt.center_out) + "\n";
      series[i / o.steps].x.push_back(pt.center_in);
      series[i / o.steps].y.push_back(pt.center_out);
    }
    svg_curves(fs::path(g.out) / ("probe_layer" + std::to_string(layer) + ".svg"),
               series, "layer " + std::to_string(layer) + " response", g.force);
    nl[layer] = nonlinearity_index(p);
    nl_csv += std::to_string(layer) + "," + g6(nl[layer]) + "\n";
  }
  write_file(fs::path(g.out) / "probe.csv", csv, g.force);
  write_file(fs::path(g.out) / "nonlinearity.csv", nl_csv, g.force);

  const bool decreasing = nl[0] > nl[1] && nl[1] > nl[2] && nl[2] > nl[3];
  std::cout << "probe: nonlinearity index per layer: " << g6(nl[0]) << " " << g6(nl[1])
            << " " << g6(nl[2]) << " " << g6(nl[3])
            << (decreasing ? " (monotone decrease with depth: observed)"
                           : " (monotone decrease with depth: not observed)")
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"divisive-normalization segmentation toolkit"};
  app.require_subcommand(1);

  GlobalOpts g;
  Registry global_reg;
  app.add_option("--config", g.config, "JSON config file");
  global_reg.add(app.add_option("--seed", g.seed, "global random seed"), "seed", &g.seed);
  global_reg.add(app.add_option("--out", g.out, "output directory"), "out", &g.out);
  global_reg.add(app.add_flag("--force", g.force, "overwrite existing outputs"),
                 "force", &g.force);

  StatsOpts stats_o;
  ModifyOpts modify_o;
  FogOpts fog_o;
  RelightOpts relight_o;
  PartitionOpts partition_o;
  GenerateOpts generate_o;
  TrainOpts train_o;
  EvalOpts eval_o;
  InvarianceOpts inv_o;
  ProbeOpts probe_o;
  std::map<std::string, Registry> regs;

  {
    auto* sc = app.add_subcommand("stats", "per-image descriptors and histograms");
    Registry& r = regs["stats"];
    register_data_opts(sc, r, stats_o.data);
    r.add(sc->add_option("--images", stats_o.images, "flat directory of PNGs"),
          "images", &stats_o.images);
    r.add(sc->add_option("--bins", stats_o.bins, "histogram bins"), "bins",
          &stats_o.bins);
  }
  {
    auto* sc = app.add_subcommand("modify", "luminance/contrast variant grid");
    Registry& r = regs["modify"];
    register_data_opts(sc, r, modify_o.data);
    r.add(sc->add_option("--steps", modify_o.steps, "factors per axis"), "steps",
          &modify_o.steps);
  }
  {
    auto* sc = app.add_subcommand("fog", "foggy variants via attenuation + airlight");
    Registry& r = regs["fog"];
    register_data_opts(sc, r, fog_o.data);
    r.add(sc->add_option("--preset", fog_o.preset, "low | middle | high"), "preset",
          &fog_o.preset);
    r.add(sc->add_option("--constant-depth", fog_o.constant_depth,
                         "fallback depth in meters"),
          "constant_depth", &fog_o.constant_depth);
  }
  {
    auto* sc = app.add_subcommand("relight", "spectral illuminant change grid");
    Registry& r = regs["relight"];
    register_data_opts(sc, r, relight_o.data);
    r.add(sc->add_option("--hues", relight_o.hues, "hue angles"), "hues",
          &relight_o.hues);
    r.add(sc->add_option("--radii", relight_o.radii, "saturation radii (1..6)"),
          "radii", &relight_o.radii);
  }
  {
    auto* sc = app.add_subcommand("partition", "extreme-percentile image subsets");
    Registry& r = regs["partition"];
    register_data_opts(sc, r, partition_o.data);
    r.add(sc->add_option("--feature", partition_o.feature,
                         "mean_lum | achro_ctr | chro_ctr"),
          "feature", &partition_o.feature);
    r.add(sc->add_option("--low", partition_o.low, "low percentile"), "low",
          &partition_o.low);
    r.add(sc->add_option("--high", partition_o.high, "high percentile"), "high",
          &partition_o.high);
  }
  {
    auto* sc = app.add_subcommand("generate", "synthetic labeled scenes");
    Registry& r = regs["generate"];
    r.add(sc->add_option("--count", generate_o.count, "number of scenes"), "count",
          &generate_o.count);
    r.add(sc->add_option("--width", generate_o.width, "scene width"), "width",
          &generate_o.width);
    r.add(sc->add_option("--height", generate_o.height, "scene height"), "height",
          &generate_o.height);
  }
  {
    auto* sc = app.add_subcommand("train", "train a segmentation model");
    Registry& r = regs["train"];
    register_data_opts(sc, r, train_o.data);
    r.add(sc->add_option("--variant", train_o.variant, "nodn | 4dn"), "variant",
          &train_o.variant);
    r.add(sc->add_option("--seeds", train_o.seeds, "comma-separated seeds"), "seeds",
          &train_o.seeds);
    r.add(sc->add_option("--epochs", train_o.epochs, "training epochs"), "epochs",
          &train_o.epochs);
    r.add(sc->add_option("--batch", train_o.batch, "batch size"), "batch",
          &train_o.batch);
    r.add(sc->add_option("--lr", train_o.lr, "learning rate"), "lr", &train_o.lr);
  }
  {
    auto* sc = app.add_subcommand("eval", "mIoU report for checkpoints x datasets");
    Registry& r = regs["eval"];
    r.add(sc->add_option("--ckpt", eval_o.ckpts, "checkpoint file(s)"),
          "ckpt", &eval_o.ckpts);
    r.add(sc->add_option("--data", eval_o.datasets, "dataset root(s)"),
          "data", &eval_o.datasets);
    r.add(sc->add_option("--classes", eval_o.layout.classes, "number of classes"),
          "classes", &eval_o.layout.classes);
    r.add(sc->add_flag("--save-masks", eval_o.save_masks, "export predicted masks"),
          "save_masks", &eval_o.save_masks);
  }
  {
    auto* sc = app.add_subcommand("invariance", "prediction overlap under modification");
    Registry& r = regs["invariance"];
    register_data_opts(sc, r, inv_o.data);
    r.add(sc->add_option("--ckpt", inv_o.ckpts, "checkpoint file(s)"),
          "ckpt", &inv_o.ckpts);
    r.add(sc->add_option("--mods", inv_o.mods,
                         "comma list: lum=F actr=F cctr=F fog=PRESET illum=HUE:RADIUS"),
          "mods", &inv_o.mods);
    r.add(sc->add_option("--constant-depth", inv_o.constant_depth,
                         "fallback depth in meters"),
          "constant_depth", &inv_o.constant_depth);
    r.add(sc->add_option("--grid-steps", inv_o.grid_steps,
                         "emit a lum x actr overlap heatmap with this many steps"),
          "grid_steps", &inv_o.grid_steps);
  }
  {
    auto* sc = app.add_subcommand("probe", "center/surround response curves");
    Registry& r = regs["probe"];
    r.add(sc->add_option("--ckpt", probe_o.ckpt, "checkpoint file"),
          "ckpt", &probe_o.ckpt);
    r.add(sc->add_option("--surrounds", probe_o.surrounds, "comma-separated levels"),
          "surrounds", &probe_o.surrounds);
    r.add(sc->add_option("--steps", probe_o.steps, "center sweep steps"), "steps",
          &probe_o.steps);
    r.add(sc->add_option("--channel", probe_o.channel, "probed channel"), "channel",
          &probe_o.channel);
  }

  // Let global options (--config/--seed/--out/--force) appear after the
  // subcommand name as well as before it.
  for (CLI::App* sc : app.get_subcommands([](const CLI::App*) { return true; }))
    sc->fallthrough();

  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    if (!g.config.empty()) {
      std::ifstream f(g.config);
      if (!f) throw IoError("cannot read config " + g.config);
      json cfg;
      try {
        cfg = json::parse(f);
      } catch (const json::exception& e) {
        throw InvalidSpec(std::string("config: ") + e.what());
      }
      if (!cfg.is_object()) throw InvalidSpec("config: top level must be an object");
      for (auto it = cfg.begin(); it != cfg.end(); ++it) {
        if (global_reg.keys.count(it.key())) continue;
        if (!regs.count(it.key()))
          throw InvalidSpec("config: unknown key '" + it.key() + "'");
      }
      json globals = json::object();
      for (const auto& [k, v] : global_reg.keys) {
        (void)v;
        if (cfg.contains(k)) globals[k] = cfg[k];
      }
      global_reg.apply(globals, "globals");
      if (cfg.contains(cmd)) regs[cmd].apply(cfg[cmd], cmd);
    }

    if (cmd == "stats") {
      json body = data_opts_json(stats_o.data);
      body["images"] = stats_o.images;
      body["bins"] = stats_o.bins;
      write_resolved_config(g, cmd, body);
      cmd_stats(g, stats_o);
    } else if (cmd == "modify") {
      json body = data_opts_json(modify_o.data);
      body["steps"] = modify_o.steps;
      write_resolved_config(g, cmd, body);
      cmd_modify(g, modify_o);
    } else if (cmd == "fog") {
      json body = data_opts_json(fog_o.data);
      body["preset"] = fog_o.preset;
      body["constant_depth"] = fog_o.constant_depth;
      write_resolved_config(g, cmd, body);
      cmd_fog(g, fog_o);
    } else if (cmd == "relight") {
      json body = data_opts_json(relight_o.data);
      body["hues"] = relight_o.hues;
      body["radii"] = relight_o.radii;
      write_resolved_config(g, cmd, body);
      cmd_relight(g, relight_o);
    } else if (cmd == "partition") {
      json body = data_opts_json(partition_o.data);
      body["feature"] = partition_o.feature;
      body["low"] = partition_o.low;
      body["high"] = partition_o.high;
      write_resolved_config(g, cmd, body);
      cmd_partition(g, partition_o);
    } else if (cmd == "generate") {
      json body;
      body["count"] = generate_o.count;
      body["width"] = generate_o.width;
      body["height"] = generate_o.height;
      write_resolved_config(g, cmd, body);
      cmd_generate(g, generate_o);
    } else if (cmd == "train") {
      json body = data_opts_json(train_o.data);
      body["variant"] = train_o.variant;
      body["seeds"] = train_o.seeds;
      body["epochs"] = train_o.epochs;
      body["batch"] = train_o.batch;
      body["lr"] = train_o.lr;
      write_resolved_config(g, cmd, body);
      cmd_train(g, train_o);
    } else if (cmd == "eval") {
      json body;
      body["ckpt"] = eval_o.ckpts;
      body["data"] = eval_o.datasets;
      body["classes"] = eval_o.layout.classes;
      body["save_masks"] = eval_o.save_masks;
      write_resolved_config(g, cmd, body);
      cmd_eval(g, eval_o);
    } else if (cmd == "invariance") {
      json body = data_opts_json(inv_o.data);
      body["ckpt"] = inv_o.ckpts;
      body["mods"] = inv_o.mods;
      body["constant_depth"] = inv_o.constant_depth;
      body["grid_steps"] = inv_o.grid_steps;
      write_resolved_config(g, cmd, body);
      cmd_invariance(g, inv_o);
    } else if (cmd == "probe") {
      json body;
      body["ckpt"] = probe_o.ckpt;
      body["surrounds"] = probe_o.surrounds;
      body["steps"] = probe_o.steps;
      body["channel"] = probe_o.channel;
      write_resolved_config(g, cmd, body);
      cmd_probe(g, probe_o);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
