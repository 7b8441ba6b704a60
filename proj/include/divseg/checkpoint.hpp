#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "divseg/errors.hpp"
#include "divseg/segnet.hpp"

namespace divseg {

// Flat binary tensor container: magic, entry count, then per entry a name,
// a dtype tag, a shape, and the payload. dtype 0 is f64, dtype 1 raw bytes
// (used for the embedded config record).
struct TensorEntry {
  std::uint8_t dtype = 0;
  std::vector<std::uint64_t> shape;
  std::vector<double> f64;
  std::vector<std::uint8_t> raw;
};

class TensorContainer {
 public:
  static constexpr char kMagic[8] = {'D', 'S', 'T', 'C', '0', '0', '0', '1'};

  void put_f64(const std::string& name, std::vector<std::uint64_t> shape,
               std::vector<double> data) {
    TensorEntry e;
    e.dtype = 0;
    e.shape = std::move(shape);
    e.f64 = std::move(data);
    entries_[name] = std::move(e);
  }

  void put_raw(const std::string& name, std::vector<std::uint8_t> data) {
    TensorEntry e;
    e.dtype = 1;
    e.shape = {data.size()};
    e.raw = std::move(data);
    entries_[name] = std::move(e);
  }

  void put_string(const std::string& name, const std::string& s) {
    put_raw(name, std::vector<std::uint8_t>(s.begin(), s.end()));
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  const TensorEntry& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError("container: missing tensor " + name);
    return it->second;
  }

  std::string get_string(const std::string& name) const {
    const TensorEntry& e = get(name);
    if (e.dtype != 1) throw IoError("container: " + name + " is not raw bytes");
    return std::string(e.raw.begin(), e.raw.end());
  }

  const std::map<std::string, TensorEntry>& entries() const { return entries_; }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write(kMagic, 8);
    write_u32(f, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, e] : entries_) {
      write_u32(f, static_cast<std::uint32_t>(name.size()));
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      f.put(static_cast<char>(e.dtype));
      write_u32(f, static_cast<std::uint32_t>(e.shape.size()));
      for (std::uint64_t d : e.shape) write_u64(f, d);
      if (e.dtype == 0)
        f.write(reinterpret_cast<const char*>(e.f64.data()),
                static_cast<std::streamsize>(e.f64.size() * sizeof(double)));
      else
        f.write(reinterpret_cast<const char*>(e.raw.data()),
                static_cast<std::streamsize>(e.raw.size()));
    }
    if (!f) throw IoError("short write to " + path);
  }

  static TensorContainer load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
      throw IoError("not a tensor container: " + path);
    TensorContainer c;
    const std::uint32_t n = read_u32(f);
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint32_t name_len = read_u32(f);
      std::string name(name_len, '\0');
      f.read(name.data(), name_len);
      TensorEntry e;
      e.dtype = static_cast<std::uint8_t>(f.get());
      const std::uint32_t ndim = read_u32(f);
      std::uint64_t count = 1;
      for (std::uint32_t d = 0; d < ndim; ++d) {
        e.shape.push_back(read_u64(f));
        count *= e.shape.back();
      }
      if (e.dtype == 0) {
        e.f64.resize(count);
        f.read(reinterpret_cast<char*>(e.f64.data()),
               static_cast<std::streamsize>(count * sizeof(double)));
      } else {
        e.raw.resize(count);
        f.read(reinterpret_cast<char*>(e.raw.data()),
               static_cast<std::streamsize>(count));
      }
      if (!f) throw IoError("truncated container: " + path);
      c.entries_[name] = std::move(e);
    }
    return c;
  }

 private:
  static void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  static void write_u64(std::ofstream& f, std::uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  static std::uint32_t read_u32(std::ifstream& f) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  }
  static std::uint64_t read_u64(std::ifstream& f) {
    std::uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  }

  std::map<std::string, TensorEntry> entries_;
};

inline const char* const kConvNames[8] = {"enc1", "enc2", "enc3", "bott",
                                          "dec3", "dec2", "dec1", "head"};

// config_json travels with the weights so a checkpoint is self-describing.
inline void save_checkpoint(const std::string& path, const SegModel& m,
                            const std::string& config_json) {
  TensorContainer c;
  const auto layers = m.conv_layers();
  for (int i = 0; i < 8; ++i) {
    const ConvLayer* l = layers[i];
    c.put_f64(std::string(kConvNames[i]) + ".w",
              {static_cast<std::uint64_t>(l->out_ch), static_cast<std::uint64_t>(l->in_ch),
               static_cast<std::uint64_t>(l->ksize), static_cast<std::uint64_t>(l->ksize)},
              l->w);
    c.put_f64(std::string(kConvNames[i]) + ".b",
              {static_cast<std::uint64_t>(l->out_ch)}, l->b);
  }
  for (int i = 0; i < 4; ++i)
    if (m.dn_slots[i]) {
      const DnParams& p = *m.dn_slots[i];
      const std::string base = "dn" + std::to_string(i);
      c.put_f64(base + ".beta", {static_cast<std::uint64_t>(p.channels)}, p.beta);
      c.put_f64(base + ".gamma",
                {static_cast<std::uint64_t>(p.channels),
                 static_cast<std::uint64_t>(p.channels), 3, 3},
                p.gamma);
    }
  c.put_f64("meta.classes", {1}, {static_cast<double>(m.classes)});
  c.put_string("config.json", config_json);
  c.save(path);
}

struct LoadedCheckpoint {
  SegModel model;
  std::string config_json;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  const TensorContainer c = TensorContainer::load(path);
  LoadedCheckpoint out;
  const int classes = static_cast<int>(c.get("meta.classes").f64.at(0));
  out.model = SegModel(classes, ModelVariant::NoDN, 0);
  const auto layers = out.model.conv_layers();
  for (int i = 0; i < 8; ++i) {
    ConvLayer* l = layers[i];
    const auto& w = c.get(std::string(kConvNames[i]) + ".w");
    const auto& b = c.get(std::string(kConvNames[i]) + ".b");
    if (w.f64.size() != l->w.size() || b.f64.size() != l->b.size())
      throw IoError("checkpoint tensor shape mismatch: " + std::string(kConvNames[i]));
    l->w = w.f64;
    l->b = b.f64;
  }
  for (int i = 0; i < 4; ++i) {
    const std::string base = "dn" + std::to_string(i);
    if (c.has(base + ".beta")) {
      DnParams p(SegModel::kSlotChannels[i]);
      const auto& beta = c.get(base + ".beta");
      const auto& gamma = c.get(base + ".gamma");
      if (beta.f64.size() != p.beta.size() || gamma.f64.size() != p.gamma.size())
        throw IoError("checkpoint DN shape mismatch: " + base);
      p.beta = beta.f64;
      p.gamma = gamma.f64;
      out.model.dn_slots[i] = std::move(p);
    }
  }
  out.config_json = c.has("config.json") ? c.get_string("config.json") : "";
  return out;
}

}  // namespace divseg
