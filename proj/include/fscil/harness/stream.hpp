#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fscil/config.hpp"
#include "fscil/ften.hpp"
#include "fscil/rng.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

// Labeled feature maps [n, D, H, W] for one session split.
template <typename T>
struct LabeledSet {
  Tensor<T> features;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
};

template <typename T>
struct Session {
  std::vector<std::size_t> classes;  // ascending
  LabeledSet<T> train;
  LabeledSet<T> test;
};

template <typename T>
struct SessionStream {
  std::size_t base_classes = 0;
  std::size_t ways = 0;
  std::size_t shots = 0;
  std::vector<Session<T>> sessions;  // sessions[0] is the base session

  std::size_t incremental_sessions() const { return sessions.empty() ? 0 : sessions.size() - 1; }

  std::size_t total_classes() const {
    std::size_t n = 0;
    for (const auto& s : sessions) n += s.classes.size();
    return n;
  }

  // Classes revealed in sessions 0..t.
  std::vector<std::size_t> seen_classes(std::size_t t) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j <= t && j < sessions.size(); ++j)
      out.insert(out.end(), sessions[j].classes.begin(), sessions[j].classes.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  bool is_base_class(std::size_t c) const {
    return !sessions.empty() && std::binary_search(sessions[0].classes.begin(), sessions[0].classes.end(), c);
  }

  // Disjoint label spaces; every incremental session holds exactly ways*shots training samples.
  void validate() const {
    std::set<std::size_t> seen;
    for (std::size_t t = 0; t < sessions.size(); ++t) {
      const auto& s = sessions[t];
      for (const auto c : s.classes) {
        if (!seen.insert(c).second) {
          throw ContractError("session stream: class " + std::to_string(c) + " appears in more than one session");
        }
      }
      const std::set<std::size_t> own(s.classes.begin(), s.classes.end());
      for (const auto* split : {&s.train, &s.test}) {
        if (split->features.rank() != 4 || split->features.shape()[0] != split->size()) {
          throw ShapeError("session stream: features must be [n, D, H, W] matching the label count");
        }
        for (const auto y : split->labels) {
          if (!own.count(y)) {
            throw ContractError("session stream: label " + std::to_string(y) + " not among session " +
                                std::to_string(t) + " classes");
          }
        }
      }
      if (t > 0 && s.train.size() != ways * shots) {
        throw ContractError("session stream: session " + std::to_string(t) + " has " + std::to_string(s.train.size()) +
                            " training samples, expected " + std::to_string(ways * shots));
      }
    }
  }
};

struct ClassSpec {
  std::vector<std::size_t> classes;
  std::size_t per_class = 1;
  double sigma_sep = 1.0;  // scale of the class means
  double sigma = 0.1;      // within-class standard deviation
  std::size_t channels = 16;
  std::size_t height = 4;
  std::size_t width = 4;
};

// Class c has mean m_c = sigma_sep * N(0, I) drawn from a per-class stream, and
// samples m_c + sigma * N(0, I). `split` separates train/test sample streams.
template <typename T>
LabeledSet<T> synth_dataset(const ClassSpec& spec, std::uint64_t seed, std::string_view split = "train") {
  if (!(spec.sigma_sep > 0) || !(spec.sigma > 0)) throw ContractError("synth_dataset: sigma and sigma_sep must be positive");
  const std::size_t dim = spec.channels * spec.height * spec.width;
  std::vector<T> data;
  data.reserve(spec.classes.size() * spec.per_class * dim);
  std::vector<std::size_t> labels;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const std::size_t c : spec.classes) {
    auto mean_rng = make_rng(seed, "class_mean", c);
    std::vector<double> mean(dim);
    for (auto& m : mean) m = spec.sigma_sep * normal(mean_rng);
    auto sample_rng = make_rng(seed, std::string("samples_") + std::string(split), c);
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      for (std::size_t k = 0; k < dim; ++k) data.push_back(static_cast<T>(mean[k] + spec.sigma * normal(sample_rng)));
      labels.push_back(c);
    }
  }
  return {Tensor<T>({labels.size(), spec.channels, spec.height, spec.width}, std::move(data)), std::move(labels)};
}

namespace stream_detail {

template <typename T>
LabeledSet<T> load_split(const std::string& features_path, const std::string& labels_path,
                         std::map<long long, std::size_t>& remap, bool allow_new, std::set<std::size_t>& session_classes) {
  auto features = ften::load<T>(features_path);
  const auto raw_labels = ften::load_raw(labels_path);
  if (features.rank() != 4) throw ShapeError(features_path + ": expected [n, D, H, W]");
  if (raw_labels.values.size() != features.shape()[0]) throw ShapeError(labels_path + ": label count mismatch");
  std::vector<std::size_t> labels;
  for (const double v : raw_labels.values) {
    if (v != std::floor(v)) throw FormatError(labels_path + ": labels must be integral");
    const auto key = static_cast<long long>(v);
    auto it = remap.find(key);
    if (it == remap.end()) {
      if (!allow_new) throw ContractError(labels_path + ": test label " + std::to_string(key) + " unseen in training");
      it = remap.emplace(key, remap.size()).first;
    }
    labels.push_back(it->second);
    session_classes.insert(it->second);
  }
  return {std::move(features), std::move(labels)};
}

}  // namespace stream_detail

// Synthetic mode: session 0 holds classes 0..B-1, session t the next `ways`
// class ids. File mode: label ids are remapped to 0..K-1 in first-seen order.
template <typename T>
SessionStream<T> build_session_stream(const RunConfig& config, std::uint64_t seed) {
  const auto& p = config.protocol;
  if (p.sessions > 0 && p.ways * p.shots == 0) throw ContractError("build_session_stream: ways * shots must be positive");
  SessionStream<T> stream;
  stream.base_classes = p.base_classes;
  stream.ways = p.ways;
  stream.shots = p.shots;
  const auto& dims = config.model.dims;
  if (config.data.source == DataSource::synthetic) {
    std::size_t next = 0;
    for (std::size_t t = 0; t <= p.sessions; ++t) {
      const std::size_t count = t == 0 ? p.base_classes : p.ways;
      Session<T> s;
      for (std::size_t i = 0; i < count; ++i) s.classes.push_back(next++);
      ClassSpec spec{s.classes, t == 0 ? p.base_train_per_class : p.shots, config.data.sigma_sep, config.data.sigma,
                     dims.in_channels, dims.height, dims.width};
      s.train = synth_dataset<T>(spec, seed, "train");
      spec.per_class = p.test_per_class;
      s.test = synth_dataset<T>(spec, seed, "test");
      stream.sessions.push_back(std::move(s));
    }
  } else {
    if (config.data.files.size() != p.sessions + 1) throw ConfigError("data.files: wrong session count");
    std::map<long long, std::size_t> remap;
    for (std::size_t t = 0; t <= p.sessions; ++t) {
      const auto& f = config.data.files[t];
      const std::size_t before = remap.size();
      std::set<std::size_t> classes;
      Session<T> s;
      s.train = stream_detail::load_split<T>(f.train_features, f.train_labels, remap, true, classes);
      for (const auto c : classes) {
        if (c < before) throw ContractError("overlapping labels: class reappears in session " + std::to_string(t));
      }
      std::set<std::size_t> test_classes;
      s.test = stream_detail::load_split<T>(f.test_features, f.test_labels, remap, false, test_classes);
      for (const auto c : test_classes) {
        if (!classes.count(c)) throw ContractError("session " + std::to_string(t) + ": test label outside its classes");
      }
      s.classes.assign(classes.begin(), classes.end());
      const auto& fs = s.train.features.shape();
      if (fs[1] != dims.in_channels || fs[2] != dims.height || fs[3] != dims.width) {
        throw ShapeError(f.train_features + ": feature map shape does not match model dims");
      }
      stream.sessions.push_back(std::move(s));
    }
  }
  stream.validate();
  return stream;
}

}  // namespace fscil
