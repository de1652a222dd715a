#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfusnet/config.hpp"
#include "sfusnet/model.hpp"

namespace sfus {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian f64");

// Container layout: 8-byte magic, u32 format version, u64 header length,
// JSON header (config echo + tensor directory), then raw f64 payloads in
// directory order. Parameters and BN running stats always ship; Adam moments
// are optional.
constexpr char kCheckpointMagic[8] = {'S', 'F', 'U', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
struct CheckpointAdam {
  std::map<std::string, AdamState<S>> states;
};

namespace detail {

inline void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  const std::size_t n = out.size();
  out.resize(n + 4);
  std::memcpy(out.data() + n, &v, 4);
}

inline void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  const std::size_t n = out.size();
  out.resize(n + 8);
  std::memcpy(out.data() + n, &v, 8);
}

template <typename S>
void append_f64_payload(std::vector<std::uint8_t>& out, const ArrayX<S>& a) {
  const std::size_t n = out.size();
  out.resize(n + static_cast<std::size_t>(a.size()) * 8);
  double* dst = reinterpret_cast<double*>(out.data() + n);
  for (index_t i = 0; i < a.size(); ++i) dst[i] = static_cast<double>(a[i]);
}

template <typename S>
void read_f64_payload(const std::uint8_t* src, ArrayX<S>& a, index_t n) {
  a.resize(n);
  const double* d = reinterpret_cast<const double*>(src);
  for (index_t i = 0; i < n; ++i) a[i] = static_cast<S>(d[i]);
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, SfusNet<S>& model, const nlohmann::json& meta,
                     const CheckpointAdam<S>* adam = nullptr) {
  nlohmann::json header;
  header["model_config"] = to_json(model.config);
  header["meta"] = meta;

  std::vector<std::uint8_t> payload;
  nlohmann::json dir = nlohmann::json::array();
  auto record = [&](const std::string& name, const std::string& kind, const Shape& shape,
                    const ArrayX<S>& data) {
    dir.push_back({{"name", name},
                   {"kind", kind},
                   {"shape", shape},
                   {"offset", payload.size()},
                   {"dtype", "f64le"}});
    detail::append_f64_payload(payload, data);
  };
  for (auto& p : model.parameters())
    record(p.name, "param", p.tensor->shape(), p.tensor->array());
  nlohmann::json tracked = nlohmann::json::object();
  for (auto& bn : model.batchnorms()) {
    record(bn.name + ".running_mean", "buffer", {bn.layer->stats.mean.size()},
           bn.layer->stats.mean);
    record(bn.name + ".running_var", "buffer", {bn.layer->stats.var.size()}, bn.layer->stats.var);
    tracked[bn.name] = bn.layer->stats.tracked;
  }
  header["bn_tracked"] = std::move(tracked);
  if (adam) {
    nlohmann::json adam_t = nlohmann::json::object();
    for (const auto& [name, state] : adam->states) {
      record(name + ".adam_m", "adam", {state.m.size()}, state.m);
      record(name + ".adam_v", "adam", {state.v.size()}, state.v);
      adam_t[name] = state.t;
    }
    header["adam_t"] = std::move(adam_t);
  }
  header["tensors"] = std::move(dir);

  const std::string hs = header.dump();
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);
  detail::append_u32(out, kCheckpointVersion);
  detail::append_u64(out, hs.size());
  out.insert(out.end(), hs.begin(), hs.end());
  out.insert(out.end(), payload.begin(), payload.end());

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) SFUS_THROW(DataError, "cannot write checkpoint: " << path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) SFUS_THROW(DataError, "short checkpoint write: " << path);
}

template <typename S = double>
struct LoadedCheckpoint {
  SfusNet<S> model;
  nlohmann::json meta;
  bool has_adam = false;
  CheckpointAdam<S> adam;
};

template <typename S = double>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) SFUS_THROW(DataError, "cannot open checkpoint: " << path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    SFUS_THROW(DataError, "not a checkpoint file: " << path);
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 8, 4);
  if (version != kCheckpointVersion)
    SFUS_THROW(DataError, "unsupported checkpoint version " << version << " in " << path);
  std::uint64_t hlen;
  std::memcpy(&hlen, bytes.data() + 12, 8);
  if (20 + hlen > bytes.size()) SFUS_THROW(DataError, "truncated checkpoint header: " << path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 20, bytes.begin() + 20 +
                                                           static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    SFUS_THROW(DataError, "corrupt checkpoint header in " << path << ": " << e.what());
  }
  const std::uint8_t* payload = bytes.data() + 20 + hlen;
  const std::size_t payload_size = bytes.size() - 20 - static_cast<std::size_t>(hlen);

  LoadedCheckpoint<S> out;
  const ModelConfig cfg = model_config_from_json(header.at("model_config"));
  out.model = build_model<S>(cfg, 0);
  out.meta = header.value("meta", nlohmann::json::object());

  std::map<std::string, std::pair<std::size_t, Shape>> directory;
  for (const auto& e : header.at("tensors")) {
    directory[e.at("name").get<std::string>()] = {e.at("offset").get<std::size_t>(),
                                                  e.at("shape").get<Shape>()};
  }
  auto fetch = [&](const std::string& name, index_t expect_numel, ArrayX<S>& dst,
                   Shape* expect_shape) {
    auto it = directory.find(name);
    if (it == directory.end()) SFUS_THROW(DataError, "checkpoint missing tensor: " << name);
    const auto& [offset, shape] = it->second;
    const index_t n = shape_numel(shape);
    SFUS_CHECK_SHAPE(n == expect_numel, "checkpoint tensor " << name << " has "
                                                             << n << " values, expected "
                                                             << expect_numel);
    if (expect_shape)
      SFUS_CHECK_SHAPE(shape == *expect_shape, "checkpoint tensor " << name << " shape "
                                                                    << shape_str(shape)
                                                                    << " != expected "
                                                                    << shape_str(*expect_shape));
    SFUS_CHECK(offset + static_cast<std::size_t>(n) * 8 <= payload_size,
               "checkpoint payload truncated at tensor " << name);
    detail::read_f64_payload(payload + offset, dst, n);
  };

  for (auto& p : out.model.parameters()) {
    Shape shape = p.tensor->shape();
    fetch(p.name, p.tensor->numel(), p.tensor->array(), &shape);
  }
  for (auto& bn : out.model.batchnorms()) {
    fetch(bn.name + ".running_mean", bn.layer->stats.mean.size(), bn.layer->stats.mean, nullptr);
    fetch(bn.name + ".running_var", bn.layer->stats.var.size(), bn.layer->stats.var, nullptr);
    bn.layer->stats.tracked = header.at("bn_tracked").value(bn.name, index_t(0));
  }
  if (header.contains("adam_t")) {
    out.has_adam = true;
    for (auto& p : out.model.parameters()) {
      AdamState<S> st = AdamState<S>::fresh(p.tensor->numel());
      fetch(p.name + ".adam_m", p.tensor->numel(), st.m, nullptr);
      fetch(p.name + ".adam_v", p.tensor->numel(), st.v, nullptr);
      st.t = header.at("adam_t").value(p.name, index_t(0));
      out.adam.states.emplace(p.name, std::move(st));
    }
  }
  return out;
}

}  // namespace sfus
