#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "divseg/data.hpp"
#include "divseg/png_io.hpp"

using namespace divseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("divseg_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("png image round trip at 16 bit") {
  TempDir tmp;
  std::mt19937_64 rng(1);
  PlanarImage img(16, 12, ColorSpace::LinearRGB);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (double& v : img.data()) v = uni(rng);
  const std::string path = (tmp.path / "img.png").string();
  save_png_image(path, img, 16);
  const PlanarImage back = load_png_image(path);
  REQUIRE(back.width() == 16);
  REQUIRE(back.height() == 12);
  for (std::size_t i = 0; i < img.data().size(); ++i)
    CHECK(back.data()[i] == Catch::Approx(img.data()[i]).margin(2e-4));
}

TEST_CASE("depth and mask round trips") {
  TempDir tmp;
  DepthMap d(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) d.at(y, x) = 1.0 + y * 8 + x;
  const std::string dpath = (tmp.path / "d.png").string();
  save_png_depth(dpath, d, 0.05);
  const DepthMap dback = load_png_depth(dpath, 0.05);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      CHECK(dback.at(y, x) == Catch::Approx(d.at(y, x)).margin(0.05));

  LabelMask m(8, 8);
  for (int& v : m.labels()) v = static_cast<int>(std::rand() % 5);
  const std::string mpath = (tmp.path / "m.png").string();
  save_png_mask(mpath, m, default_palette(5));
  const LabelMask mback = load_png_mask(mpath);
  CHECK(mback.labels() == m.labels());
}

TEST_CASE("scene generation is byte deterministic") {
  TempDir a, b;
  SceneSpec spec;
  spec.seed = 42;
  generate_scenes(spec, 2, a.path);
  generate_scenes(spec, 2, b.path);
  for (const char* sub : {"images", "masks", "depth"})
    for (const auto& f : fs::directory_iterator(a.path / sub)) {
      const fs::path other = b.path / sub / f.path().filename();
      CHECK(read_bytes(f.path()) == read_bytes(other));
    }
}

TEST_CASE("every class appears across enough scenes and labels stay in range") {
  TempDir tmp;
  SceneSpec spec;
  spec.seed = 7;
  const DatasetHandle h = generate_scenes(spec, 30, tmp.path);
  std::vector<std::size_t> counts(spec.class_count, 0);
  for (const auto& e : h.entries) {
    const LabelMask m = load_png_mask(e.mask_path);
    for (int v : m.labels()) {
      REQUIRE(v >= 0);
      REQUIRE(v < spec.class_count);
      ++counts[v];
    }
  }
  for (int c = 0; c < spec.class_count; ++c) CHECK(counts[c] > 0);
}

TEST_CASE("generated depth is strictly positive") {
  const Scene sc = generate_scene(SceneSpec{}, 3);
  for (double d : sc.depth.data()) CHECK(d > 0.0);
}

TEST_CASE("generate_scenes rejects n = 0") {
  TempDir tmp;
  CHECK_THROWS_AS(generate_scenes(SceneSpec{}, 0, tmp.path), EmptyRequest);
}

TEST_CASE("ingest pairs images with masks and excludes orphans") {
  TempDir tmp;
  SceneSpec spec;
  spec.seed = 3;
  generate_scenes(spec, 10, tmp.path);
  // Orphan: an image without a mask.
  fs::copy(tmp.path / "images" / "scene_000000.png", tmp.path / "images" / "orphan.png");

  DatasetLayout layout;
  layout.depth_dir = "depth";
  layout.class_count = 5;
  IngestReport report;
  const DatasetHandle h = ingest(tmp.path, layout, &report);
  CHECK(h.size() == 10);
  REQUIRE(report.warnings.size() == 1);
  CHECK(report.warnings[0].find("orphan") != std::string::npos);
  for (const auto& e : h.entries) CHECK_FALSE(e.depth_path.empty());
}

TEST_CASE("ingest rejects masks with labels out of range") {
  TempDir tmp;
  SceneSpec spec;
  spec.seed = 4;
  generate_scenes(spec, 3, tmp.path);
  DatasetLayout layout;
  layout.class_count = 2;  // real masks use labels up to 4
  CHECK_THROWS_AS(ingest(tmp.path, layout), EmptyDataset);
}

TEST_CASE("ingest of an empty directory fails") {
  TempDir tmp;
  fs::create_directories(tmp.path / "images");
  fs::create_directories(tmp.path / "masks");
  CHECK_THROWS_AS(ingest(tmp.path, DatasetLayout{}), EmptyDataset);
}

TEST_CASE("split arithmetic and determinism") {
  DatasetHandle h;
  for (int i = 0; i < 10; ++i) h.entries.push_back({std::to_string(i), "", "", ""});
  const SplitResult r = split(h, 0.8, 0.1, 0.1, 5);
  CHECK(r.train.size() == 8);
  CHECK(r.val.size() == 1);
  CHECK(r.test.size() == 1);

  const SplitResult r2 = split(h, 0.8, 0.1, 0.1, 5);
  for (std::size_t i = 0; i < r.train.size(); ++i)
    CHECK(r.train.entries[i].id == r2.train.entries[i].id);

  // Disjoint and exhaustive.
  std::vector<std::string> all;
  for (const auto* part : {&r.train, &r.val, &r.test})
    for (const auto& e : part->entries) all.push_back(e.id);
  std::sort(all.begin(), all.end());
  CHECK(std::unique(all.begin(), all.end()) == all.end());
  CHECK(all.size() == 10);
}

TEST_CASE("large split matches the documented 80/10/10 arithmetic") {
  DatasetHandle h;
  h.entries.resize(20000);
  const SplitResult r = split(h, 0.8, 0.1, 0.1, 0);
  CHECK(r.train.size() == 16000);
  CHECK(r.val.size() == 2000);
  CHECK(r.test.size() == 2000);
}

TEST_CASE("split validation") {
  DatasetHandle h;
  h.entries.resize(4);
  CHECK_THROWS_AS(split(h, 0.5, 0.2, 0.2, 0), InvalidSpec);
  CHECK_THROWS_AS(split(h, 0.9, 0.05, 0.05, 0), SplitError);
}
