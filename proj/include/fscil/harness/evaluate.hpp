#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fscil/harness/stream.hpp"
#include "fscil/harness/train.hpp"
#include "fscil/objectives.hpp"

namespace fscil {

// Worker count for evaluation: FSCIL_THREADS if set and positive, else hardware parallelism.
inline std::size_t evaluation_threads() {
  if (const char* env = std::getenv("FSCIL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

inline constexpr std::size_t kEvalChunk = 64;

// Applies `fn(begin, end)` to fixed-size chunks of [0, n) across worker threads.
// Chunk boundaries do not depend on the thread count.
template <typename Fn>
void for_each_chunk(std::size_t n, Fn fn) {
  const std::size_t chunks = (n + kEvalChunk - 1) / kEvalChunk;
  const std::size_t workers = std::min(evaluation_threads(), std::max<std::size_t>(chunks, 1));
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    try {
      NoGradGuard guard;
      for (std::size_t c = w; c < chunks; c += workers) fn(c * kEvalChunk, std::min(n, (c + 1) * kEvalChunk));
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Normalized representations [n, D'] of raw inputs, computed chunk-wise.
template <typename T>
std::vector<T> normalized_representations(const Model<T>& model, const Tensor<T>& raw) {
  const std::size_t n = raw.shape()[0];
  const std::size_t d = model.etf.dim();
  std::vector<T> out(n * d);
  for_each_chunk(n, [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto mu = model.represent(index_select(raw, 0, idx));
    const auto v = mu.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double norm = 0;
      for (std::size_t k = 0; k < d; ++k) norm += static_cast<double>(v[i * d + k]) * v[i * d + k];
      norm = std::sqrt(norm);
      for (std::size_t k = 0; k < d; ++k)
        out[(begin + i) * d + k] = norm > 0 ? static_cast<T>(v[i * d + k] / norm) : T{0};
    }
  });
  return out;
}

// argmax_k over `candidates` of w_k . mu_hat; ties go to the lowest class id.
template <typename T>
std::size_t predict(const EtfClassifier<T>& etf, std::span<const T> mu_hat, const std::vector<std::size_t>& candidates) {
  if (candidates.empty()) throw ContractError("predict: no candidate classes");
  std::size_t best = candidates.front();
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto k : candidates) {
    const auto w = etf.prototype(k);
    double s = 0;
    for (std::size_t i = 0; i < w.size(); ++i) s += static_cast<double>(w[i]) * mu_hat[i];
    if (s > best_score || (s == best_score && k < best)) {
      best_score = s;
      best = k;
    }
  }
  return best;
}

// Fractions in [0, 1]. novel is absent when no novel class has been seen.
struct SessionAccuracy {
  std::size_t session = 0;
  double all = 0;
  std::optional<double> base;
  std::optional<double> novel;
};

template <typename T>
struct EvalSet {
  Tensor<T> features;
  std::vector<std::size_t> labels;
};

// Union of the test sets of sessions 0..t.
template <typename T>
EvalSet<T> test_union(const SessionStream<T>& stream, std::size_t t) {
  std::vector<Tensor<T>> parts;
  EvalSet<T> out;
  for (std::size_t j = 0; j <= t && j < stream.sessions.size(); ++j) {
    const auto& test = stream.sessions[j].test;
    if (test.size() == 0) continue;
    parts.push_back(test.features);
    out.labels.insert(out.labels.end(), test.labels.begin(), test.labels.end());
  }
  if (parts.empty()) throw ContractError("evaluate: empty test set");
  out.features = parts.size() == 1 ? parts[0] : concat(parts, 0);
  return out;
}

template <typename T>
SessionAccuracy evaluate(const Model<T>& model, const SessionStream<T>& stream, std::size_t t) {
  const auto set = test_union(stream, t);
  const auto seen = stream.seen_classes(t);
  const auto reps = normalized_representations(model, set.features);
  const std::size_t d = model.etf.dim();
  std::size_t correct = 0, base_total = 0, base_correct = 0, novel_total = 0, novel_correct = 0;
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    const std::span<const T> mu(reps.data() + i * d, d);
    const bool hit = predict(model.etf, mu, seen) == set.labels[i];
    correct += hit;
    if (stream.is_base_class(set.labels[i])) {
      ++base_total;
      base_correct += hit;
    } else {
      ++novel_total;
      novel_correct += hit;
    }
  }
  SessionAccuracy acc;
  acc.session = t;
  acc.all = static_cast<double>(correct) / static_cast<double>(set.labels.size());
  if (base_total) acc.base = static_cast<double>(base_correct) / static_cast<double>(base_total);
  if (novel_total) acc.novel = static_cast<double>(novel_correct) / static_cast<double>(novel_total);
  return acc;
}

// Mean pairwise cosine between normalized representations of base-class and
// novel-class test samples seen through session t.
template <typename T>
double base_novel_cosine(const Model<T>& model, const SessionStream<T>& stream, std::size_t t) {
  const auto set = test_union(stream, t);
  const auto reps = normalized_representations(model, set.features);
  const std::size_t d = model.etf.dim();
  std::vector<double> base_mean(d, 0.0), novel_mean(d, 0.0);
  std::size_t nb = 0, nn = 0;
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    auto& target = stream.is_base_class(set.labels[i]) ? base_mean : novel_mean;
    (stream.is_base_class(set.labels[i]) ? nb : nn) += 1;
    for (std::size_t k = 0; k < d; ++k) target[k] += reps[i * d + k];
  }
  if (nb == 0 || nn == 0) throw ContractError("base_novel_cosine: need both base and novel test samples");
  double dot = 0;
  for (std::size_t k = 0; k < d; ++k) dot += (base_mean[k] / static_cast<double>(nb)) * (novel_mean[k] / static_cast<double>(nn));
  return dot;
}

struct ProtocolMetrics {
  std::vector<double> per_session;
  double avg = 0;
  double pd = 0;
};

// AVG = mean, PD = first - last; no rounding.
inline ProtocolMetrics compute_metrics(const std::vector<double>& per_session) {
  if (per_session.empty()) throw ContractError("compute_metrics: empty accuracy list");
  ProtocolMetrics m;
  m.per_session = per_session;
  double sum = 0;
  for (const double a : per_session) sum += a;
  m.avg = sum / static_cast<double>(per_session.size());
  m.pd = per_session.front() - per_session.back();
  return m;
}

}  // namespace fscil
