#pragma once

// Run configuration: strict JSON with top-level keys
// {protocol, model, optimizer, losses, data, seed}. Unknown keys at any level
// are rejected; missing keys take the desk defaults below.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fscil/digest.hpp"
#include "fscil/error.hpp"
#include "fscil/objectives.hpp"
#include "fscil/projector.hpp"
#include "fscil/ss2d.hpp"

namespace fscil {

using Json = nlohmann::json;

struct ProtocolConfig {
  std::size_t base_classes = 20;
  std::size_t sessions = 4;  // incremental sessions T
  std::size_t ways = 5;
  std::size_t shots = 5;
  std::size_t base_train_per_class = 10;
  std::size_t test_per_class = 10;

  std::size_t total_classes() const { return base_classes + sessions * ways; }
};

enum class BackboneKind { linear, identity };
enum class ProjectorVariant { dual, single };
enum class Precision { float32, float64 };

struct ModelConfig {
  BranchDims dims{16, 64, 8, 4, 4, {0, 1, 2, 3}};
  BackboneKind backbone = BackboneKind::linear;
  ProjectorVariant variant = ProjectorVariant::dual;
  bool freeze_base = true;
  IncrementalInit inc_init = IncrementalInit::fresh;
  Precision precision = Precision::float32;
};

struct OptimizerConfig {
  double base_lr = 0.5;
  double inc_lr = 0.1;
  double min_lr = 0.0;
  double momentum = 0.009;
  double weight_decay = 0.0005;
  std::size_t base_epochs = 200;
  std::size_t base_batch = 64;
  std::size_t inc_iters = 100;
  std::size_t inc_batch = 32;
  long prototypes_per_batch = -1;  // -1: every stored prototype enters each step
};

enum class DataSource { synthetic, files };

struct SessionFiles {
  std::string train_features;
  std::string train_labels;
  std::string test_features;
  std::string test_labels;
};

struct DataConfig {
  DataSource source = DataSource::synthetic;
  double sigma_sep = 1.0;
  double sigma = 0.2;
  std::vector<SessionFiles> files;  // one entry per session, base first
};

struct RunConfig {
  ProtocolConfig protocol;
  ModelConfig model;
  OptimizerConfig optimizer;
  LossWeights losses;
  DataConfig data;
  std::uint64_t seed = 0;

  void validate() const;
  Json to_json() const;
  // SHA-256 of the canonical serialization of the resolved config.
  std::string hash() const { return sha256_hex(to_json().dump()); }
};

namespace config_detail {

inline void check_keys(const Json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename V>
void read(const Json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline void read_count(const Json& j, const char* key, std::size_t& out, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(where + "." + key + ": expected a non-negative integer");
  }
  out = v.get<std::size_t>();
}

template <typename E>
void read_enum(const Json& j, const char* key, E& out, const std::string& where,
               const std::vector<std::pair<std::string, E>>& names) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) throw ConfigError(where + "." + key + ": expected a string");
  const auto s = j.at(key).get<std::string>();
  for (const auto& [name, value] : names) {
    if (name == s) {
      out = value;
      return;
    }
  }
  throw ConfigError(where + "." + key + ": unknown value '" + s + "'");
}

template <typename E>
std::string enum_name(E value, const std::vector<std::pair<std::string, E>>& names) {
  for (const auto& [name, v] : names)
    if (v == value) return name;
  return "?";
}

inline const std::vector<std::pair<std::string, BackboneKind>> kBackbones{{"linear", BackboneKind::linear},
                                                                           {"identity", BackboneKind::identity}};
inline const std::vector<std::pair<std::string, ProjectorVariant>> kVariants{{"dual", ProjectorVariant::dual},
                                                                              {"single", ProjectorVariant::single}};
inline const std::vector<std::pair<std::string, IncrementalInit>> kInits{{"fresh", IncrementalInit::fresh},
                                                                          {"copy", IncrementalInit::copy}};
inline const std::vector<std::pair<std::string, Precision>> kPrecisions{{"float32", Precision::float32},
                                                                         {"float64", Precision::float64}};
inline const std::vector<std::pair<std::string, DataSource>> kSources{{"synthetic", DataSource::synthetic},
                                                                       {"files", DataSource::files}};

}  // namespace config_detail

inline void RunConfig::validate() const {
  const auto& p = protocol;
  if (p.base_classes == 0) throw ConfigError("protocol.base_classes must be positive");
  if (p.sessions > 0 && p.ways * p.shots == 0) throw ConfigError("protocol: ways * shots must be positive");
  if (p.base_train_per_class == 0 || p.test_per_class == 0) throw ConfigError("protocol: per-class counts must be positive");
  if (p.total_classes() < 2) throw ConfigError("protocol: at least two classes are required");
  try {
    model.dims.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  if (model.dims.proj_dim + 1 < p.total_classes()) {
    throw ConfigError("model.proj_dim must be at least total classes - 1 (" + std::to_string(p.total_classes() - 1) + ")");
  }
  if (model.backbone == BackboneKind::identity && model.dims.in_channels == 0) {
    throw ConfigError("model.in_channels must be positive");
  }
  const auto& o = optimizer;
  if (!(o.base_lr >= 0) || !(o.inc_lr >= 0) || !(o.min_lr >= 0)) throw ConfigError("optimizer: learning rates must be >= 0");
  if (!(o.momentum >= 0 && o.momentum < 1)) throw ConfigError("optimizer.momentum must be in [0, 1)");
  if (!(o.weight_decay >= 0)) throw ConfigError("optimizer.weight_decay must be >= 0");
  if (o.base_batch == 0 || o.inc_batch == 0) throw ConfigError("optimizer: batch sizes must be positive");
  if (o.prototypes_per_batch < -1) throw ConfigError("optimizer.prototypes_per_batch must be -1 or >= 0");
  if (!(losses.lambda1 >= 0) || !(losses.lambda2 >= 0) || !(losses.lambda3 >= 0)) {
    throw ConfigError("losses: weights must be >= 0");
  }
  if (data.source == DataSource::synthetic) {
    if (!(data.sigma_sep > 0) || !(data.sigma > 0)) throw ConfigError("data: sigma_sep and sigma must be positive");
  } else if (data.files.size() != p.sessions + 1) {
    throw ConfigError("data.files must list " + std::to_string(p.sessions + 1) + " sessions");
  }
}

inline RunConfig parse_config(const Json& j) {
  using namespace config_detail;
  check_keys(j, "config", {"protocol", "model", "optimizer", "losses", "data", "seed"});
  RunConfig c;
  if (j.contains("protocol")) {
    const auto& p = j.at("protocol");
    const std::string w = "protocol";
    check_keys(p, w, {"base_classes", "sessions", "ways", "shots", "base_train_per_class", "test_per_class"});
    read_count(p, "base_classes", c.protocol.base_classes, w);
    read_count(p, "sessions", c.protocol.sessions, w);
    read_count(p, "ways", c.protocol.ways, w);
    read_count(p, "shots", c.protocol.shots, w);
    read_count(p, "base_train_per_class", c.protocol.base_train_per_class, w);
    read_count(p, "test_per_class", c.protocol.test_per_class, w);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    const std::string w = "model";
    check_keys(m, w, {"in_channels", "proj_dim", "state_dim", "height", "width", "directions", "backbone", "variant",
                      "freeze_base", "inc_init", "precision"});
    read_count(m, "in_channels", c.model.dims.in_channels, w);
    read_count(m, "proj_dim", c.model.dims.proj_dim, w);
    read_count(m, "state_dim", c.model.dims.state_dim, w);
    read_count(m, "height", c.model.dims.height, w);
    read_count(m, "width", c.model.dims.width, w);
    if (m.contains("directions")) {
      std::size_t k = 0;
      read_count(m, "directions", k, w);
      if (k < 1 || k > 4) throw ConfigError("model.directions must be in 1..4");
      c.model.dims.scan_paths = BranchDims::first_paths(k);
    }
    read_enum(m, "backbone", c.model.backbone, w, kBackbones);
    read_enum(m, "variant", c.model.variant, w, kVariants);
    read(m, "freeze_base", c.model.freeze_base, w);
    read_enum(m, "inc_init", c.model.inc_init, w, kInits);
    read_enum(m, "precision", c.model.precision, w, kPrecisions);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    const std::string w = "optimizer";
    check_keys(o, w, {"base_lr", "inc_lr", "min_lr", "momentum", "weight_decay", "base_epochs", "base_batch", "inc_iters",
                      "inc_batch", "prototypes_per_batch"});
    read(o, "base_lr", c.optimizer.base_lr, w);
    read(o, "inc_lr", c.optimizer.inc_lr, w);
    read(o, "min_lr", c.optimizer.min_lr, w);
    read(o, "momentum", c.optimizer.momentum, w);
    read(o, "weight_decay", c.optimizer.weight_decay, w);
    read_count(o, "base_epochs", c.optimizer.base_epochs, w);
    read_count(o, "base_batch", c.optimizer.base_batch, w);
    read_count(o, "inc_iters", c.optimizer.inc_iters, w);
    read_count(o, "inc_batch", c.optimizer.inc_batch, w);
    if (o.contains("prototypes_per_batch")) {
      if (!o.at("prototypes_per_batch").is_number_integer()) {
        throw ConfigError("optimizer.prototypes_per_batch: expected an integer");
      }
      c.optimizer.prototypes_per_batch = o.at("prototypes_per_batch").get<long>();
    }
  }
  if (j.contains("losses")) {
    const auto& l = j.at("losses");
    const std::string w = "losses";
    check_keys(l, w, {"lambda1", "lambda2", "lambda3"});
    read(l, "lambda1", c.losses.lambda1, w);
    read(l, "lambda2", c.losses.lambda2, w);
    read(l, "lambda3", c.losses.lambda3, w);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    const std::string w = "data";
    check_keys(d, w, {"source", "sigma_sep", "sigma", "files"});
    read_enum(d, "source", c.data.source, w, kSources);
    read(d, "sigma_sep", c.data.sigma_sep, w);
    read(d, "sigma", c.data.sigma, w);
    if (d.contains("files")) {
      if (!d.at("files").is_array()) throw ConfigError("data.files: expected an array");
      for (const auto& f : d.at("files")) {
        const std::string fw = "data.files[]";
        check_keys(f, fw, {"train_features", "train_labels", "test_features", "test_labels"});
        SessionFiles sf;
        read(f, "train_features", sf.train_features, fw);
        read(f, "train_labels", sf.train_labels, fw);
        read(f, "test_features", sf.test_features, fw);
        read(f, "test_labels", sf.test_labels, fw);
        c.data.files.push_back(sf);
      }
    }
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ConfigError("seed: expected a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  c.validate();
  return c;
}

inline RunConfig parse_config_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline Json RunConfig::to_json() const {
  using namespace config_detail;
  Json files = Json::array();
  for (const auto& f : data.files) {
    files.push_back({{"train_features", f.train_features},
                     {"train_labels", f.train_labels},
                     {"test_features", f.test_features},
                     {"test_labels", f.test_labels}});
  }
  return {
      {"protocol",
       {{"base_classes", protocol.base_classes},
        {"sessions", protocol.sessions},
        {"ways", protocol.ways},
        {"shots", protocol.shots},
        {"base_train_per_class", protocol.base_train_per_class},
        {"test_per_class", protocol.test_per_class}}},
      {"model",
       {{"in_channels", model.dims.in_channels},
        {"proj_dim", model.dims.proj_dim},
        {"state_dim", model.dims.state_dim},
        {"height", model.dims.height},
        {"width", model.dims.width},
        {"directions", model.dims.scan_paths.size()},
        {"backbone", enum_name(model.backbone, kBackbones)},
        {"variant", enum_name(model.variant, kVariants)},
        {"freeze_base", model.freeze_base},
        {"inc_init", enum_name(model.inc_init, kInits)},
        {"precision", enum_name(model.precision, kPrecisions)}}},
      {"optimizer",
       {{"base_lr", optimizer.base_lr},
        {"inc_lr", optimizer.inc_lr},
        {"min_lr", optimizer.min_lr},
        {"momentum", optimizer.momentum},
        {"weight_decay", optimizer.weight_decay},
        {"base_epochs", optimizer.base_epochs},
        {"base_batch", optimizer.base_batch},
        {"inc_iters", optimizer.inc_iters},
        {"inc_batch", optimizer.inc_batch},
        {"prototypes_per_batch", optimizer.prototypes_per_batch}}},
      {"losses", {{"lambda1", losses.lambda1}, {"lambda2", losses.lambda2}, {"lambda3", losses.lambda3}}},
      {"data",
       {{"source", enum_name(data.source, kSources)},
        {"sigma_sep", data.sigma_sep},
        {"sigma", data.sigma},
        {"files", files}}},
      {"seed", seed},
  };
}

}  // namespace fscil
