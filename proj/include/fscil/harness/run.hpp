#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "fscil/config.hpp"
#include "fscil/harness/checkpoint.hpp"
#include "fscil/harness/evaluate.hpp"
#include "fscil/harness/stream.hpp"
#include "fscil/harness/train.hpp"

namespace fscil {

// Everything fixed by the base session; incremental variants can start from copies of it.
template <typename T>
struct BaseState {
  Model<T> model;
  PrototypeMemory<T> memory;
  SessionAccuracy accuracy;
  TrainReport report;
  std::string frozen_checksum;
};

template <typename T>
struct RunResult {
  std::vector<SessionAccuracy> sessions;
  ProtocolMetrics metrics;  // percent
  TrainReport base_report;
  std::vector<TrainReport> incremental_reports;
  std::string frozen_checksum_after_base;
  std::string frozen_checksum_final;
  std::optional<double> final_base_novel_cosine;
};

// Called after each session is trained and evaluated.
template <typename T>
using SessionObserver = std::function<void(std::size_t session, const Model<T>&, const SessionAccuracy&)>;

template <typename T>
SessionStream<T> make_stream(const RunConfig& config) {
  return build_session_stream<T>(config, derive_seed(config.seed, "stream"));
}

template <typename T>
BaseState<T> run_base_session(const RunConfig& config, const SessionStream<T>& stream,
                              const std::type_identity_t<SessionObserver<T>>& observer = {}) {
  BaseState<T> s{Model<T>::create(config, stream.total_classes(), config.seed), {}, {}, {}, {}};
  s.report = train_base(s.model, stream, config.optimizer, derive_seed(config.seed, "base_training"));
  s.memory = finish_base_session(s.model, stream);
  s.accuracy = evaluate(s.model, stream, 0);
  s.frozen_checksum = parameter_checksum(s.model.base_parameters());
  if (observer) observer(0, s.model, s.accuracy);
  return s;
}

// Runs sessions 1..T on a copy of `base`. Only the incremental settings and the
// projector variant of `config` are consulted.
template <typename T>
RunResult<T> run_incremental_sessions(const BaseState<T>& base, const RunConfig& config, const SessionStream<T>& stream,
                                      const std::type_identity_t<SessionObserver<T>>& observer = {}) {
  Model<T> model = base.model.clone();
  model.variant = config.model.variant;
  PrototypeMemory<T> memory = base.memory;
  RunResult<T> result;
  result.base_report = base.report;
  result.sessions.push_back(base.accuracy);
  result.frozen_checksum_after_base = base.frozen_checksum;
  const auto settings = incremental_settings(config);
  const auto seed = derive_seed(config.seed, "incremental_training");
  for (std::size_t t = 1; t < stream.sessions.size(); ++t) {
    result.incremental_reports.push_back(train_incremental_session(model, stream, memory, t, settings, seed));
    result.sessions.push_back(evaluate(model, stream, t));
    if (observer) observer(t, model, result.sessions.back());
  }
  std::vector<double> accs;
  for (const auto& a : result.sessions) accs.push_back(100.0 * a.all);
  result.metrics = compute_metrics(accs);
  result.frozen_checksum_final = parameter_checksum(model.base_parameters());
  if (stream.sessions.size() > 1) result.final_base_novel_cosine = base_novel_cosine(model, stream, stream.sessions.size() - 1);
  return result;
}

template <typename T>
RunResult<T> run_protocol(const RunConfig& config, const std::type_identity_t<SessionObserver<T>>& observer = {}) {
  const auto stream = make_stream<T>(config);
  const auto base = run_base_session(config, stream, observer);
  return run_incremental_sessions(base, config, stream, observer);
}

namespace run_detail {

inline std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace run_detail

// sessions.csv and summary.json, accuracies in percent.
template <typename T>
void write_run_outputs(const std::filesystem::path& dir, const RunConfig& config, const RunResult<T>& result) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream csv(dir / "sessions.csv");
    if (!csv) throw FormatError("cannot write sessions.csv");
    csv << "session,acc_all,acc_base,acc_novel\n";
    for (const auto& s : result.sessions) {
      csv << s.session << ',' << run_detail::fixed(100.0 * s.all) << ','
          << (s.base ? run_detail::fixed(100.0 * *s.base) : "") << ','
          << (s.novel ? run_detail::fixed(100.0 * *s.novel) : "") << '\n';
    }
  }
  const Json summary{{"avg", result.metrics.avg},
                     {"pd", result.metrics.pd},
                     {"per_session", result.metrics.per_session},
                     {"config_hash", config.hash()},
                     {"seed", config.seed}};
  std::ofstream js(dir / "summary.json");
  if (!js) throw FormatError("cannot write summary.json");
  js << summary.dump(2) << "\n";
}

}  // namespace fscil
