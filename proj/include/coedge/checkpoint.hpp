#pragma once

// Single-file tensor archive: "CEDGARCH", version, a JSON manifest (tensor
// directory + free-form metadata) and raw little-endian float32 blobs.
// Round-trips are bit-exact, which the resume machinery depends on.

#include "coedge/nets.hpp"
#include "coedge/params.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace coedge::io {

using Json = nlohmann::json;

struct Archive {
  struct Tensor {
    std::string name;
    std::vector<Index> shape;
    std::vector<float> data;
  };

  Json meta = Json::object();
  std::vector<Tensor> tensors;

  Tensor& add(std::string name, std::vector<Index> shape) {
    std::size_t n = 1;
    for (Index d : shape) n *= std::size_t(d);
    tensors.push_back({std::move(name), std::move(shape), std::vector<float>(n)});
    return tensors.back();
  }

  const Tensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  const Tensor& require(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw DataError("archive is missing tensor: " + name);
    return *t;
  }

  void add_params(const std::string& prefix, const ParameterVector<float>& pv) {
    for (const auto& e : pv.entries) {
      auto& t = add(prefix + e.name, e.shape);
      std::memcpy(t.data.data(), e.values.data(), sizeof(float) * e.values.size());
    }
  }

  ParameterVector<float> params(const std::string& prefix) const {
    ParameterVector<float> pv;
    for (const auto& t : tensors) {
      if (t.name.rfind(prefix, 0) != 0) continue;
      auto& e = pv.add(t.name.substr(prefix.size()), t.shape);
      std::memcpy(e.values.data(), t.data.data(), sizeof(float) * t.data.size());
    }
    if (pv.entries.empty())
      throw DataError("archive has no tensors under prefix: " + prefix);
    return pv;
  }

  void add_plane(const std::string& name, const PlaneF& p) {
    auto& t = add(name, {p.rows(), p.cols()});
    std::memcpy(t.data.data(), p.data(), sizeof(float) * p.size());
  }

  PlaneF plane(const std::string& name) const {
    const Tensor& t = require(name);
    if (t.shape.size() != 2) throw DataError("tensor is not a plane: " + name);
    PlaneF p(t.shape[0], t.shape[1]);
    std::memcpy(p.data(), t.data.data(), sizeof(float) * t.data.size());
    return p;
  }
};

inline void save_archive(const std::filesystem::path& path, const Archive& a) {
  Json manifest;
  manifest["meta"] = a.meta;
  manifest["tensors"] = Json::array();
  for (const auto& t : a.tensors) {
    Json entry;
    entry["name"] = t.name;
    entry["shape"] = t.shape;
    manifest["tensors"].push_back(entry);
  }
  const std::string text = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write archive: " + path.string());
  os.write("CEDGARCH", 8);
  const std::uint32_t version = 1;
  const std::uint64_t mlen = text.size();
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&mlen), 8);
  os.write(text.data(), std::streamsize(text.size()));
  for (const auto& t : a.tensors)
    os.write(reinterpret_cast<const char*>(t.data.data()),
             std::streamsize(sizeof(float) * t.data.size()));
  if (!os) throw DataError("archive write failed: " + path.string());
}

inline Archive load_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open archive: " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t mlen = 0;
  is.read(magic, 8);
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&mlen), 8);
  if (!is || std::memcmp(magic, "CEDGARCH", 8) != 0 || version != 1)
    throw DataError("not a parameter archive: " + path.string());
  std::string text(mlen, '\0');
  is.read(text.data(), std::streamsize(mlen));
  Json manifest = Json::parse(text, nullptr, false);
  if (manifest.is_discarded()) throw DataError("corrupt archive manifest");

  Archive a;
  a.meta = manifest.value("meta", Json::object());
  for (const auto& entry : manifest["tensors"]) {
    auto& t = a.add(entry["name"].get<std::string>(),
                    entry["shape"].get<std::vector<Index>>());
    is.read(reinterpret_cast<char*>(t.data.data()),
            std::streamsize(sizeof(float) * t.data.size()));
  }
  if (!is) throw DataError("archive truncated: " + path.string());
  return a;
}

// --- NetConfig <-> JSON -----------------------------------------------------

inline Json net_config_to_json(const nets::NetConfig& c) {
  Json j;
  j["kind"] = c.kind == nets::NetKind::recurrent ? "recurrent" : "nonrecurrent";
  j["steps"] = c.steps;
  j["stage_widths"] = c.stage_widths;
  j["side_channels"] = c.side_channels;
  j["blocks_per_stage"] = c.blocks_per_stage;
  j["dropout_rate"] = c.dropout_rate;
  switch (c.size_class) {
    case nets::SizeClass::tiny: j["size_class"] = "tiny"; break;
    case nets::SizeClass::small: j["size_class"] = "small"; break;
    case nets::SizeClass::normal: j["size_class"] = "normal"; break;
    case nets::SizeClass::large: j["size_class"] = "large"; break;
  }
  return j;
}

inline nets::NetConfig net_config_from_json(const Json& j) {
  nets::NetConfig c;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "recurrent")
    c.kind = nets::NetKind::recurrent;
  else if (kind == "nonrecurrent")
    c.kind = nets::NetKind::nonrecurrent;
  else
    throw ConfigError("unknown net kind: " + kind);
  c.steps = j.at("steps").get<int>();
  c.stage_widths = j.at("stage_widths").get<std::vector<int>>();
  c.side_channels = j.at("side_channels").get<int>();
  c.blocks_per_stage = j.at("blocks_per_stage").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  const std::string sz = j.at("size_class").get<std::string>();
  if (sz == "tiny") c.size_class = nets::SizeClass::tiny;
  else if (sz == "small") c.size_class = nets::SizeClass::small;
  else if (sz == "normal") c.size_class = nets::SizeClass::normal;
  else if (sz == "large") c.size_class = nets::SizeClass::large;
  else throw ConfigError("unknown size class: " + sz);
  c.validate();
  return c;
}

// Model checkpoint: one parameter set plus its architecture and seed.
inline void save_model(const std::filesystem::path& path,
                       const ParameterVector<float>& params,
                       const nets::NetConfig& config, std::uint64_t seed) {
  Archive a;
  a.meta["net_config"] = net_config_to_json(config);
  a.meta["seed"] = seed;
  a.add_params("", params);
  save_archive(path, a);
}

struct LoadedModel {
  ParameterVector<float> params;
  nets::NetConfig config;
  std::uint64_t seed = 0;
};

inline LoadedModel load_model(const std::filesystem::path& path) {
  Archive a = load_archive(path);
  LoadedModel m;
  m.config = net_config_from_json(a.meta.at("net_config"));
  m.seed = a.meta.value("seed", std::uint64_t(0));
  m.params = a.params("");
  return m;
}

}  // namespace coedge::io
