#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltnode/errors.hpp"
#include "ltnode/model.hpp"
#include "ltnode/version.hpp"

namespace ltnode {

// Checkpoint files store the parameter payload as raw little-endian doubles.
static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");
static_assert(sizeof(double) == 8);

namespace detail {

inline const char* act_name(Act a) {
  switch (a) {
    case Act::none: return "none";
    case Act::tanh: return "tanh";
    case Act::relu: return "relu";
  }
  return "?";
}

inline Act act_from_name(const std::string& s) {
  if (s == "none") return Act::none;
  if (s == "tanh") return Act::tanh;
  if (s == "relu") return Act::relu;
  throw config_error("unknown activation '" + s + "'");
}

}  // namespace detail

inline nlohmann::json spec_to_json(const ModelSpec& spec) {
  nlohmann::json j;
  j["task"] = spec.task == Task::classification ? "classification" : "regression";
  j["variant"] = variant_name(spec.variant);
  j["input_dim"] = spec.input_dim;
  j["input_widths"] = spec.input_widths;
  j["node_widths"] = spec.node_widths;
  j["head_widths"] = spec.head_widths;
  j["inference_hidden"] = spec.inference_hidden;
  j["activation"] = detail::act_name(spec.activation);
  j["num_classes"] = spec.num_classes;
  j["fixed_time"] = spec.fixed_time;
  j["uniform_a"] = spec.uniform_a;
  j["uniform_b"] = spec.uniform_b;
  j["init_posterior"] = {{"alpha", spec.init_posterior.alpha}, {"beta", spec.init_posterior.beta}};
  return j;
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  const std::string task = j.at("task").get<std::string>();
  if (task == "classification") spec.task = Task::classification;
  else if (task == "regression") spec.task = Task::regression;
  else throw config_error("unknown task '" + task + "'");
  spec.variant = variant_from_name(j.at("variant").get<std::string>());
  spec.input_dim = j.at("input_dim").get<int>();
  spec.input_widths = j.at("input_widths").get<std::vector<int>>();
  spec.node_widths = j.at("node_widths").get<std::vector<int>>();
  spec.head_widths = j.at("head_widths").get<std::vector<int>>();
  spec.inference_hidden = j.at("inference_hidden").get<std::vector<int>>();
  spec.activation = detail::act_from_name(j.at("activation").get<std::string>());
  spec.num_classes = j.at("num_classes").get<int>();
  spec.fixed_time = j.at("fixed_time").get<double>();
  spec.uniform_a = j.at("uniform_a").get<double>();
  spec.uniform_b = j.at("uniform_b").get<double>();
  spec.init_posterior.alpha = j.at("init_posterior").at("alpha").get<double>();
  spec.init_posterior.beta = j.at("init_posterior").at("beta").get<double>();
  spec.validate();
  return spec;
}

// First field (if any) on which the two specs disagree, for error messages.
inline std::string spec_mismatch(const ModelSpec& a, const ModelSpec& b) {
  if (a.task != b.task) return "task";
  if (a.variant != b.variant) return "variant";
  if (a.input_dim != b.input_dim) return "input_dim";
  if (a.input_widths != b.input_widths) return "input_widths";
  if (a.node_widths != b.node_widths) return "node_widths";
  if (a.head_widths != b.head_widths) return "head_widths";
  if (a.inference_hidden != b.inference_hidden) return "inference_hidden";
  if (a.activation != b.activation) return "activation";
  if (a.num_classes != b.num_classes) return "num_classes";
  if (a.fixed_time != b.fixed_time) return "fixed_time";
  if (a.uniform_a != b.uniform_a) return "uniform_a";
  if (a.uniform_b != b.uniform_b) return "uniform_b";
  if (a.init_posterior.alpha != b.init_posterior.alpha) return "init_posterior.alpha";
  if (a.init_posterior.beta != b.init_posterior.beta) return "init_posterior.beta";
  return "";
}

struct CheckpointMeta {
  long iteration = 0;
  std::uint64_t rng_digest = 0;
};

inline constexpr char k_checkpoint_magic[4] = {'L', 'T', 'C', 'K'};

// Layout: magic, u64 header length, JSON header, raw f64 payload. The header
// records every parameter's name, shape, and offset (in doubles).
inline void save_checkpoint(const LatentTimeModel& m, const std::string& path,
                            const CheckpointMeta& meta = {}) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["library_version"] = version_string;
  header["model"] = spec_to_json(m.spec());
  header["iteration"] = meta.iteration;
  header["rng_digest"] = meta.rng_digest;

  std::size_t offset = 0;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : m.params()) {
    nlohmann::json e;
    e["name"] = p.name;
    e["shape"] = std::vector<long>(p.tensor.shape().begin(), p.tensor.shape().end());
    e["offset"] = offset;
    params.push_back(std::move(e));
    offset += static_cast<std::size_t>(p.tensor.size());
  }
  header["params"] = std::move(params);
  header["payload_doubles"] = offset;

  const std::string hs = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("save_checkpoint: cannot open " + path);
  f.write(k_checkpoint_magic, 4);
  const std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& p : m.params()) {
    f.write(reinterpret_cast<const char*>(p.tensor.values().data()),
            static_cast<std::streamsize>(p.tensor.size()) * 8);
  }
  if (!f) throw io_error("save_checkpoint: write failure on " + path);
}

namespace detail {

struct RawCheckpoint {
  nlohmann::json header;
  std::vector<double> payload;
};

inline RawCheckpoint read_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("load_checkpoint: cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), k_checkpoint_magic, 4) != 0) {
    throw integrity_error("load_checkpoint: " + path + " is not a checkpoint file");
  }
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, bytes.data() + 4, 8);
  if (12 + hlen > bytes.size()) {
    throw integrity_error("load_checkpoint: truncated header in " + path);
  }
  RawCheckpoint raw;
  try {
    raw.header = nlohmann::json::parse(bytes.begin() + 12,
                                       bytes.begin() + 12 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw integrity_error("load_checkpoint: bad header in " + path + ": " + e.what());
  }
  const auto payload_doubles = raw.header.at("payload_doubles").get<std::uint64_t>();
  const std::size_t expect = 12 + static_cast<std::size_t>(hlen) + payload_doubles * 8;
  if (bytes.size() != expect) {
    throw integrity_error("load_checkpoint: payload length mismatch in " + path + " (" +
                          std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(expect) + ")");
  }
  raw.payload.resize(payload_doubles);
  std::memcpy(raw.payload.data(), bytes.data() + 12 + hlen, payload_doubles * 8);
  return raw;
}

inline void copy_payload(LatentTimeModel& m, const RawCheckpoint& raw, const std::string& path) {
  const auto& params = raw.header.at("params");
  const auto& registry = m.params();
  if (params.size() != registry.size()) {
    throw integrity_error("load_checkpoint: " + path + " holds " +
                          std::to_string(params.size()) + " parameters, model expects " +
                          std::to_string(registry.size()));
  }
  for (std::size_t i = 0; i < registry.size(); ++i) {
    const auto& e = params[i];
    const auto& p = registry[i];
    if (e.at("name").get<std::string>() != p.name) {
      throw integrity_error("load_checkpoint: parameter " + std::to_string(i) + " is '" +
                            e.at("name").get<std::string>() + "', model expects '" + p.name + "'");
    }
    const auto shape = e.at("shape").get<std::vector<long>>();
    const Shape expect(shape.begin(), shape.end());
    if (expect != p.tensor.shape()) {
      throw integrity_error("load_checkpoint: shape mismatch on parameter '" + p.name + "'");
    }
    const auto offset = e.at("offset").get<std::size_t>();
    if (offset + static_cast<std::size_t>(p.tensor.size()) > raw.payload.size()) {
      throw integrity_error("load_checkpoint: parameter '" + p.name + "' overruns the payload");
    }
    Tensor t = p.tensor;
    std::memcpy(t.values().data(), raw.payload.data() + offset,
                static_cast<std::size_t>(p.tensor.size()) * 8);
  }
}

}  // namespace detail

// Rebuilds the model from the stored spec and restores every parameter
// bitwise.
inline LatentTimeModel load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
  const auto raw = detail::read_checkpoint_file(path);
  ModelSpec spec;
  try {
    spec = spec_from_json(raw.header.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw integrity_error("load_checkpoint: bad model header in " + path + ": " + e.what());
  }
  LatentTimeModel m(spec, 0);
  detail::copy_payload(m, raw, path);
  if (meta) {
    meta->iteration = raw.header.value("iteration", 0L);
    meta->rng_digest = raw.header.value("rng_digest", std::uint64_t{0});
  }
  return m;
}

// Restores parameters into an existing model; the stored spec must match.
inline void load_checkpoint_into(LatentTimeModel& m, const std::string& path,
                                 CheckpointMeta* meta = nullptr) {
  const auto raw = detail::read_checkpoint_file(path);
  ModelSpec stored;
  try {
    stored = spec_from_json(raw.header.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw integrity_error("load_checkpoint: bad model header in " + path + ": " + e.what());
  }
  const std::string diff = spec_mismatch(stored, m.spec());
  if (!diff.empty()) {
    throw integrity_error("load_checkpoint: stored spec differs from the model in field '" +
                          diff + "'");
  }
  detail::copy_payload(m, raw, path);
  if (meta) {
    meta->iteration = raw.header.value("iteration", 0L);
    meta->rng_digest = raw.header.value("rng_digest", std::uint64_t{0});
  }
}

}  // namespace ltnode
