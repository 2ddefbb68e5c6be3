#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octchange/columns/patches.hpp"
#include "octchange/core/error.hpp"
#include "octchange/core/hash.hpp"

namespace octchange {

// Sample shard: <stem>.bin holds the prior and current patch tensors of every
// sample as little-endian doubles; <stem>.json indexes centres, labels, ids.
namespace shard_detail {

inline void put_doubles(std::string& out, const std::vector<double>& v) {
  static_assert(std::endian::native == std::endian::little, "shards assume a little-endian host");
  const std::size_t off = out.size();
  out.resize(off + v.size() * sizeof(double));
  std::memcpy(out.data() + off, v.data(), v.size() * sizeof(double));
}

inline void get_doubles(const std::string& in, std::size_t& off, std::vector<double>& v) {
  const std::size_t n = v.size() * sizeof(double);
  if (off + n > in.size()) throw Error("shard: truncated tensor data");
  std::memcpy(v.data(), in.data() + off, n);
  off += n;
}

}  // namespace shard_detail

inline void save_shard(const std::vector<ColumnPairSample>& samples, const std::filesystem::path& stem) {
  std::string bin;
  nlohmann::json idx;
  idx["version"] = 1;
  idx["count"] = samples.size();
  idx["patch_shape"] = samples.empty() ? std::vector<int>{} : samples.front().prior.t.shape;
  idx["samples"] = nlohmann::json::array();
  for (const ColumnPairSample& s : samples) {
    if (!samples.empty() && s.prior.t.shape != samples.front().prior.t.shape) throw Error("shard: mixed patch shapes");
    shard_detail::put_doubles(bin, s.prior.t.v);
    shard_detail::put_doubles(bin, s.current.t.v);
    idx["samples"].push_back({{"prior", {s.prior.slice, s.prior.column}},
                              {"current", {s.current.slice, s.current.column}},
                              {"ir_point", {s.match.ir_point.x, s.match.ir_point.y}},
                              {"labels", {s.prior_bit, s.current_bit}},
                              {"mask", s.mask},
                              {"study_ids", {s.prior.study_id, s.current.study_id}}});
  }
  write_file_bytes(stem.string() + ".bin", bin);
  idx["bin_sha256"] = sha256_hex(bin);
  write_file_bytes(stem.string() + ".json", idx.dump(1) + "\n");
}

inline std::vector<ColumnPairSample> load_shard(const std::filesystem::path& stem) {
  const std::string bin = read_file_bytes(stem.string() + ".bin");
  nlohmann::json idx;
  try {
    idx = nlohmann::json::parse(read_file_bytes(stem.string() + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("shard index: ") + e.what());
  }
  if (idx.at("version").get<int>() != 1) throw Error("shard: unsupported version");
  if (idx.at("bin_sha256").get<std::string>() != sha256_hex(bin)) throw Error("shard: checksum mismatch");
  const auto shape = idx.at("patch_shape").get<std::vector<int>>();
  std::vector<ColumnPairSample> out;
  std::size_t off = 0;
  for (const auto& e : idx.at("samples")) {
    ColumnPairSample s;
    s.prior.t = nn::Tensor(shape);
    s.current.t = nn::Tensor(shape);
    shard_detail::get_doubles(bin, off, s.prior.t.v);
    shard_detail::get_doubles(bin, off, s.current.t.v);
    s.prior.slice = e.at("prior").at(0);
    s.prior.column = e.at("prior").at(1);
    s.current.slice = e.at("current").at(0);
    s.current.column = e.at("current").at(1);
    s.match = {{s.prior.slice, s.prior.column},
               {s.current.slice, s.current.column},
               {e.at("ir_point").at(0).get<double>(), e.at("ir_point").at(1).get<double>()}};
    s.prior_bit = e.at("labels").at(0);
    s.current_bit = e.at("labels").at(1);
    s.mask = e.at("mask").get<MaskFeature>();
    s.prior.study_id = e.at("study_ids").at(0);
    s.current.study_id = e.at("study_ids").at(1);
    out.push_back(std::move(s));
  }
  if (off != bin.size()) throw Error("shard: trailing tensor data");
  return out;
}

}  // namespace octchange
