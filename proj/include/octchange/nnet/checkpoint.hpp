#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octchange/core/error.hpp"
#include "octchange/core/hash.hpp"
#include "octchange/nnet/networks.hpp"

namespace octchange::nn {

// Weight container: "OCTW", u32 version, u32 tensor count, then per tensor
// u32 name length, name bytes, u32 rank, i32 dims, little-endian doubles.
// A JSON manifest next to it lists variants, thresholds and provenance and
// pins the container's SHA-256.
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::map<std::string, Tensor>;

namespace ckpt_detail {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

inline void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

inline std::uint32_t get_u32(const std::string& in, std::size_t& off) {
  if (off + 4 > in.size()) throw Error("checkpoint: truncated container");
  std::uint32_t v;
  std::memcpy(&v, in.data() + off, 4);
  off += 4;
  return v;
}

}  // namespace ckpt_detail

inline std::string encode_tensors(const NamedTensors& ts) {
  using namespace ckpt_detail;
  std::string out = "OCTW";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(ts.size()));
  for (const auto& [name, t] : ts) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.v.data()), t.v.size() * sizeof(double));
  }
  return out;
}

inline NamedTensors decode_tensors(const std::string& in) {
  using namespace ckpt_detail;
  if (in.size() < 12 || in.compare(0, 4, "OCTW") != 0) throw Error("checkpoint: bad magic");
  std::size_t off = 4;
  if (get_u32(in, off) != kCheckpointVersion) throw Error("checkpoint: unsupported container version");
  const std::uint32_t n = get_u32(in, off);
  NamedTensors ts;
  for (std::uint32_t k = 0; k < n; ++k) {
    const std::uint32_t len = get_u32(in, off);
    if (off + len > in.size()) throw Error("checkpoint: truncated name");
    std::string name = in.substr(off, len);
    off += len;
    const std::uint32_t rank = get_u32(in, off);
    if (rank > 8) throw Error("checkpoint: implausible rank for " + name);
    std::vector<int> shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<int>(get_u32(in, off)));
    Tensor t(shape);
    const std::size_t bytes = t.size() * sizeof(double);
    if (off + bytes > in.size()) throw Error("checkpoint: truncated data for " + name);
    std::memcpy(t.v.data(), in.data() + off, bytes);
    off += bytes;
    ts.emplace(std::move(name), std::move(t));
  }
  if (off != in.size()) throw Error("checkpoint: trailing bytes");
  return ts;
}

namespace ckpt_detail {

inline void put_params(NamedTensors& ts, const std::string& prefix, const std::vector<const Param*>& ps) {
  for (const Param* p : ps) ts[prefix + p->name] = p->w;
}

inline void get_params(const NamedTensors& ts, const std::string& prefix, const std::vector<Param*>& ps) {
  for (Param* p : ps) {
    const auto it = ts.find(prefix + p->name);
    if (it == ts.end()) throw Error("checkpoint: missing tensor " + prefix + p->name);
    if (it->second.shape != p->w.shape)
      throw Error("checkpoint: tensor " + prefix + p->name + " has shape " + shape_str(it->second.shape) + ", expected " +
                  shape_str(p->w.shape));
    p->w = it->second;
    p->g = Tensor(p->w.shape);
  }
}

}  // namespace ckpt_detail

// Writes <stem>.bin and <stem>.json; returns the manifest path.
inline std::filesystem::path save_checkpoint(const std::map<Variant, Classifier>& cls, const std::filesystem::path& stem,
                                             const nlohmann::json& training = nlohmann::json::object()) {
  using namespace ckpt_detail;
  if (cls.empty()) throw Error("checkpoint: nothing to save");
  NamedTensors ts;
  std::map<const FeatureExtractor*, std::string> fe_keys;
  auto fe_key = [&](const std::shared_ptr<const FeatureExtractor>& fe, const std::string& kind, int fold) {
    if (!fe) return std::string();
    auto it = fe_keys.find(fe.get());
    if (it != fe_keys.end()) return it->second;
    std::string key = "fold" + std::to_string(fold) + "/" + kind + "#" + std::to_string(fe_keys.size());
    put_params(ts, key + "/", fe->params());
    fe_keys.emplace(fe.get(), key);
    return key;
  };
  nlohmann::json variants = nlohmann::json::object();
  int height = 0, width = 0;
  for (const auto& [v, c] : cls) {
    c.check();
    const auto& fe = c.n1 ? c.n1 : c.n2;
    height = fe->height;
    width = fe->width;
    const std::string hk = "head/" + to_string(v);
    put_params(ts, hk + "/", c.head.params());
    variants[to_string(v)] = {{"th", c.th},
                              {"n1", fe_key(c.n1, "n1", c.provenance.fold)},
                              {"n2", fe_key(c.n2, "n2", c.provenance.fold)},
                              {"head", hk},
                              {"provenance",
                               {{"fold", c.provenance.fold},
                                {"epoch", c.provenance.epoch},
                                {"val_f1", c.provenance.val_f1}}}};
  }
  const std::string bin = encode_tensors(ts);
  const std::filesystem::path bin_path = stem.string() + ".bin";
  const std::filesystem::path json_path = stem.string() + ".json";
  write_file_bytes(bin_path, bin);
  nlohmann::json m = {{"format", "octchange-weights"},
                      {"version", kCheckpointVersion},
                      {"weights", bin_path.filename().string()},
                      {"sha256", sha256_hex(bin)},
                      {"patch_height", height},
                      {"patch_width", width},
                      {"variants", variants},
                      {"training", training}};
  write_file_bytes(json_path, m.dump(2) + "\n");
  return json_path;
}

// Loads every variant of a manifest. The container checksum is verified
// before anything else is parsed.
inline std::map<Variant, Classifier> load_checkpoint(const std::filesystem::path& manifest) {
  using namespace ckpt_detail;
  if (!std::filesystem::exists(manifest)) throw Error("checkpoint: missing manifest " + manifest.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file_bytes(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint: invalid manifest: " + std::string(e.what()));
  }
  try {
    if (m.at("format") != "octchange-weights") throw Error("checkpoint: not a weight manifest");
    if (m.at("version").get<std::uint32_t>() != kCheckpointVersion) throw Error("checkpoint: unsupported manifest version");
    const auto bin_path = manifest.parent_path() / m.at("weights").get<std::string>();
    if (!std::filesystem::exists(bin_path)) throw Error("checkpoint: missing weights " + bin_path.string());
    const std::string bin = read_file_bytes(bin_path);
    if (sha256_hex(bin) != m.at("sha256").get<std::string>()) throw Error("checkpoint: weight checksum mismatch");
    const NamedTensors ts = decode_tensors(bin);
    const int H = m.at("patch_height"), W = m.at("patch_width");

    std::map<std::string, std::shared_ptr<const FeatureExtractor>> fes;
    auto fe = [&](const std::string& key, int cin) -> std::shared_ptr<const FeatureExtractor> {
      if (key.empty()) return nullptr;
      if (auto it = fes.find(key); it != fes.end()) return it->second;
      const std::string kind = key.substr(key.find('/') + 1, 2);
      auto f = std::make_shared<FeatureExtractor>(kind, cin, H, W);
      get_params(ts, key + "/", f->params());
      fes.emplace(key, f);
      return f;
    };
    std::map<Variant, Classifier> out;
    for (const auto& [name, e] : m.at("variants").items()) {
      Classifier c;
      c.variant = variant_from_string(name);
      c.th = e.at("th");
      if (!(c.th >= 0.0)) throw Error("checkpoint: invalid threshold for " + name);
      c.n1 = fe(e.at("n1").get<std::string>(), 3);
      c.n2 = fe(e.at("n2").get<std::string>(), 6);
      c.head = Head(c.variant);
      get_params(ts, e.at("head").get<std::string>() + "/", c.head.params());
      const auto& p = e.at("provenance");
      c.provenance = {p.at("fold"), p.at("epoch"), p.at("val_f1")};
      c.check();
      out.emplace(c.variant, std::move(c));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint: malformed manifest: " + std::string(e.what()));
  }
}

inline Classifier load_classifier(const std::filesystem::path& manifest, Variant v) {
  auto all = load_checkpoint(manifest);
  const auto it = all.find(v);
  if (it == all.end()) throw Error("checkpoint has no variant " + to_string(v));
  return it->second;
}

}  // namespace octchange::nn
