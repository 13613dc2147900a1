#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fscil/config.hpp"
#include "fscil/error.hpp"
#include "fscil/gradcheck_suite.hpp"
#include "fscil/harness/checkpoint.hpp"
#include "fscil/harness/evaluate.hpp"
#include "fscil/harness/run.hpp"
#include "fscil/rng.hpp"
#include "fscil/ssm.hpp"

namespace fscil::cli {

enum ExitCode : int { kSuccess = 0, kFailure = 1, kUsage = 2, kNumeric = 3 };

struct RunOptions {
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

namespace detail {

inline std::string two_decimals(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline bool nonempty_dir(const std::filesystem::path& p) {
  return std::filesystem::is_directory(p) && !std::filesystem::is_empty(p);
}

template <typename T>
void run_with(const RunConfig& config, const RunOptions& opts, std::ostream& out) {
  const auto checkpoints = opts.out / "checkpoints";
  auto observer = [&](std::size_t t, const Model<T>& model, const SessionAccuracy& acc) {
    write_checkpoint(checkpoints / ("session_" + std::to_string(t)), model.named_parameters(), t);
    out << "session " << t << " acc_all " << two_decimals(100.0 * acc.all);
    if (acc.base) out << " acc_base " << two_decimals(100.0 * *acc.base);
    if (acc.novel) out << " acc_novel " << two_decimals(100.0 * *acc.novel);
    out << "\n";
  };
  const auto result = run_protocol<T>(config, observer);
  write_run_outputs(opts.out, config, result);
  if (result.frozen_checksum_after_base != result.frozen_checksum_final && config.model.freeze_base) {
    throw ContractError("frozen parameters changed during incremental sessions");
  }
  out << "AVG " << two_decimals(result.metrics.avg) << " PD " << two_decimals(result.metrics.pd) << "\n";
}

}  // namespace detail

// Trains and evaluates the full protocol, writing sessions.csv, summary.json,
// run.json, config.json and checkpoints/session_<t>/ under opts.out.
inline int cmd_run(const RunOptions& opts, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  RunConfig config;
  try {
    config = load_config(opts.config);
    if (opts.seed) config.seed = *opts.seed;
    config.validate();
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  }
  if (detail::nonempty_dir(opts.out) && !opts.force) {
    err << "output directory " << opts.out.string() << " is not empty (use --force to overwrite)\n";
    return kUsage;
  }
  try {
    std::filesystem::create_directories(opts.out);
    std::filesystem::remove_all(opts.out / "checkpoints");
    {
      std::ofstream cfg(opts.out / "config.json");
      cfg << config.to_json().dump(2) << "\n";
      std::ofstream manifest(opts.out / "run.json");
      manifest << Json{{"config_path", opts.config.string()},
                       {"config_hash", config.hash()},
                       {"out_dir", opts.out.string()},
                       {"seed", config.seed}}
                      .dump(2)
               << "\n";
      if (!cfg || !manifest) throw FormatError("cannot write into " + opts.out.string());
    }
    if (config.model.precision == Precision::float64) {
      detail::run_with<double>(config, opts, out);
    } else {
      detail::run_with<float>(config, opts, out);
    }
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    err << "input error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kSuccess;
}

// Runs the cases selected by `scope` ("all", a group name or a case name).
inline int cmd_gradcheck(const std::string& scope, std::ostream& out = std::cout, std::ostream& err = std::cerr,
                         const std::vector<GradcheckCase>& cases = default_gradcheck_cases(),
                         std::uint64_t seed = 20240601) {
  std::vector<const GradcheckCase*> selected;
  for (const auto& c : cases)
    if (scope_matches(scope, c)) selected.push_back(&c);
  if (selected.empty()) {
    err << "unknown gradcheck scope: " << scope << "\n";
    return kUsage;
  }
  bool all_passed = true;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %14s %7s  %s\n", "case", "max_rel_error", "points", "status");
  out << line;
  for (const auto* c : selected) {
    GradcheckOutcome r;
    try {
      r = run_gradcheck_case(*c, seed);
    } catch (const Error& e) {
      err << c->name << ": " << e.what() << "\n";
      r = {c->name, INFINITY, 0, 0.0, false};
    }
    all_passed = all_passed && r.passed;
    std::snprintf(line, sizeof line, "%-28s %14.3e %7zu  %s\n", r.name.c_str(), r.max_error, r.points,
                  r.passed ? "PASS" : "FAIL");
    out << line;
  }
  return all_passed ? kSuccess : kNumeric;
}

inline constexpr std::size_t kBenchState = 8;
inline constexpr double kBenchTolerance = 1e-10;

namespace detail {

inline ssm::ScanInputs<double> bench_inputs(std::size_t len, std::size_t dim, Rng& rng, bool time_invariant) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0), step(1e-3, 0.5);
  ssm::ScanInputs<double> in{len, dim, kBenchState, {}, {}, {}, {}};
  for (std::size_t i = 0; i < len * dim; ++i) in.x.push_back(unit(rng));
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t s = 0; s < kBenchState; ++s) {
      in.b.push_back(time_invariant && t > 0 ? in.b[s] : unit(rng));
      in.c.push_back(time_invariant && t > 0 ? in.c[s] : unit(rng));
    }
    for (std::size_t ch = 0; ch < dim; ++ch) in.delta.push_back(time_invariant && t > 0 ? in.delta[ch] : step(rng));
  }
  return in;
}

inline ssm::StateMatrix<double> bench_state_matrix(std::size_t dim, Rng& rng) {
  std::uniform_real_distribution<double> mag(0.1, 2.0);
  std::vector<double> a(dim * kBenchState);
  for (auto& v : a) v = -mag(rng);
  return {dim, kBenchState, std::move(a)};
}

inline std::vector<double> batched_scan(const ssm::ScanInputs<double>& in, const ssm::StateMatrix<double>& a) {
  NoGradGuard guard;
  const std::size_t L = in.length, C = in.channels, S = in.state;
  const auto y = ssm::selective_scan(Tensor<double>({1, L, C}, in.x), Tensor<double>({1, L, C}, in.delta),
                                     Tensor<double>({1, L, S}, in.b), Tensor<double>({1, L, S}, in.c),
                                     Tensor<double>({C, S}, std::vector<double>(a.values().begin(), a.values().end())));
  return {y.data().begin(), y.data().end()};
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::size_t bench_chunk(std::size_t len) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(len))));
}

}  // namespace detail

// Throughput of the sequential, chunked and batched scans after checking that
// all of them (and the kernel form, on time-invariant inputs) agree.
inline int cmd_bench_scan(long len, long dim, long reps, std::ostream& out = std::cout, std::ostream& err = std::cerr,
                          std::uint64_t seed = 7) {
  if (len < 1 || dim < 1 || reps < 1) {
    err << "bench-scan: --len, --dim and --reps must be at least 1\n";
    return kUsage;
  }
  const auto L = static_cast<std::size_t>(len), D = static_cast<std::size_t>(dim), R = static_cast<std::size_t>(reps);
  auto rng = make_rng(seed, "bench_scan");
  const auto a = detail::bench_state_matrix(D, rng);
  const auto in = detail::bench_inputs(L, D, rng, false);
  const auto invariant = detail::bench_inputs(L, D, rng, true);
  const std::size_t chunk = detail::bench_chunk(L);

  const auto reference = ssm::selective_scan_sequential(in, a);
  const auto ref_invariant = ssm::selective_scan_sequential(invariant, a);
  const std::vector<std::pair<std::string, double>> checks{
      {"chunked", detail::max_abs_diff(reference, ssm::selective_scan_chunked(in, a, chunk))},
      {"batched", detail::max_abs_diff(reference, detail::batched_scan(in, a))},
      {"kernel_form", detail::max_abs_diff(ref_invariant, ssm::scan_kernel_form(invariant, a))}};
  char line[160];
  for (const auto& [name, diff] : checks) {
    std::snprintf(line, sizeof line, "precheck %-12s max_abs_diff %.3e\n", name.c_str(), diff);
    out << line;
    if (!(diff <= kBenchTolerance)) {
      err << "bench-scan: " << name << " scan disagrees with the sequential scan (" << diff << ")\n";
      return kNumeric;
    }
  }

  auto time_path = [&](const std::string& name, auto&& fn) {
    double sink = 0;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t r = 0; r < R; ++r) sink += fn().back();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double elements = static_cast<double>(L * D * R);
    std::snprintf(line, sizeof line, "%-12s len %zu dim %zu state %zu reps %zu  %.4f s  %.3e elements/s\n",
                  name.c_str(), L, D, kBenchState, R, secs, secs > 0 ? elements / secs : INFINITY);
    out << line;
    return sink;
  };
  time_path("sequential", [&] { return ssm::selective_scan_sequential(in, a); });
  time_path("chunked", [&] { return ssm::selective_scan_chunked(in, a, chunk); });
  time_path("batched", [&] { return detail::batched_scan(in, a); });
  return kSuccess;
}

// Per-session accuracies, either a sessions.csv (acc_all column) or bare
// numbers separated by commas, whitespace or newlines.
inline std::vector<double> read_accuracies(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) lines.push_back(line);
  }
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    return cells;
  };
  auto parse = [&](const std::string& cell) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      throw FormatError("not a number: '" + cell + "' in " + path.string());
    }
    if (cell.find_first_not_of(" \t", used) != std::string::npos) throw FormatError("not a number: '" + cell + "'");
    return v;
  };
  std::vector<double> accs;
  if (!lines.empty() && lines.front().find("acc_all") != std::string::npos) {
    const auto header = split(lines.front());
    std::size_t col = 0;
    while (header[col].find("acc_all") == std::string::npos) ++col;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto cells = split(lines[i]);
      if (col >= cells.size()) throw FormatError("row " + std::to_string(i) + " lacks acc_all");
      accs.push_back(parse(cells[col]));
    }
  } else {
    for (const auto& line : lines) {
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) {
        std::stringstream words(cell);
        for (std::string w; words >> w;) accs.push_back(parse(w));
      }
    }
  }
  if (accs.empty()) throw FormatError("no accuracies in " + path.string());
  return accs;
}

inline int cmd_metrics(const std::filesystem::path& accs_file, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  std::vector<double> accs;
  try {
    accs = read_accuracies(accs_file);
  } catch (const Error& e) {
    err << "metrics: " << e.what() << "\n";
    return kUsage;
  }
  const auto m = compute_metrics(accs);
  out << "AVG " << detail::two_decimals(m.avg) << " PD " << detail::two_decimals(m.pd) << "\n";
  return kSuccess;
}

}  // namespace fscil::cli
