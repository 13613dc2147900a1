// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--config configs/desk.json] [--expect-fail N]...
//
// Exit status is the number of failing criteria not listed with --expect-fail.

#include <malloc.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fscil/cli/commands.hpp"
#include "fscil/gradcheck_suite.hpp"
#include "fscil/harness/run.hpp"
#include "scan_oracles.hpp"

using namespace fscil;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Verdict {
  bool passed = false;
  std::string detail;
};

class Report {
 public:
  explicit Report(std::set<int> expected) : expected_(std::move(expected)) {}

  void record(int id, const std::string& name, const std::function<Verdict()>& body) {
    Verdict v;
    const auto t0 = Clock::now();
    try {
      v = body();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const bool expected = expected_.count(id) > 0;
    std::cout << (v.passed ? "PASS" : "FAIL") << "  " << id << "  " << name << "  " << v.detail
              << fmt("  [%.1f s]", seconds_since(t0));
    if (!v.passed && expected) std::cout << "  (expected)";
    if (v.passed && expected) std::cout << "  (listed as expected failure)";
    std::cout << std::endl;
    if (!v.passed && !expected) ++unexpected_;
  }

  int unexpected() const { return unexpected_; }

 private:
  std::set<int> expected_;
  int unexpected_ = 0;
};

// Criterion 1: sequential recurrence vs convolution-kernel form, time-invariant inputs.
Verdict scan_kernel_equivalence() {
  const auto t0 = Clock::now();
  auto rng = make_rng(101, "acceptance_kernel");
  std::uniform_int_distribution<std::size_t> len(1, 64), state(1, 8), channels(1, 4);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t L = len(rng), S = state(rng), C = channels(rng);
    const auto a = oracle::random_state_matrix(C, S, rng);
    const auto in = oracle::random_inputs(L, C, S, rng, true);
    worst = std::max(worst, oracle::max_abs_diff(ssm::selective_scan_sequential(in, a), ssm::scan_kernel_form(in, a)));
  }
  const double s = seconds_since(t0);
  return {worst <= 1e-10 && s < 10.0, fmt("100 sets, max_abs_diff %.2e (<= 1e-10), %.2f s (< 10 s)", worst, s)};
}

// Criterion 2: time-variant sequential scan vs naive recomputation.
Verdict scan_brute_force_equivalence() {
  auto rng = make_rng(202, "acceptance_brute");
  std::uniform_int_distribution<std::size_t> len(1, 32), state(1, 8), channels(1, 4);
  double worst = 0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t L = len(rng), S = state(rng), C = channels(rng);
    const auto a = oracle::random_state_matrix(C, S, rng);
    const auto in = oracle::random_inputs(L, C, S, rng, false);
    worst = std::max(worst, oracle::max_abs_diff(ssm::selective_scan_sequential(in, a), oracle::brute_force_scan(in, a)));
  }
  return {worst <= 1e-12, fmt("50 cases, max_abs_diff %.2e (<= 1e-12)", worst)};
}

// Criterion 3: finite-difference checks over every op and the incremental objective.
Verdict gradient_checks() {
  const auto t0 = Clock::now();
  const auto cases = default_gradcheck_cases();
  double worst = 0;
  std::size_t failed = 0, min_points = kGradcheckPoints;
  std::string failures;
  for (const auto& c : cases) {
    const auto r = run_gradcheck_case(c, 20240601);
    worst = std::max(worst, r.max_error);
    min_points = std::min(min_points, r.points);
    if (!r.passed) {
      ++failed;
      failures += " " + c.name;
    }
  }
  const double s = seconds_since(t0);
  return {failed == 0 && min_points >= 10 && s < 60.0,
          fmt("%zu cases x %zu points, max rel error %.2e (<= 1e-4), %.1f s (< 60 s)", cases.size(), min_points, worst, s) +
              (failures.empty() ? "" : ", failing:" + failures)};
}

// Criterion 4: simplex ETF geometry.
Verdict etf_geometry() {
  double norm_err = 0, dot_err = 0;
  for (const auto& [k, d] : std::vector<std::pair<std::size_t, std::size_t>>{{2, 8}, {3, 8}, {40, 64}, {100, 512}}) {
    const auto etf = EtfClassifier<double>::build(k, d, 404);
    const double target = -1.0 / static_cast<double>(k - 1);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i; j < k; ++j) {
        double dot = 0;
        for (std::size_t f = 0; f < d; ++f) dot += etf.prototype(i)[f] * etf.prototype(j)[f];
        if (i == j) {
          norm_err = std::max(norm_err, std::abs(std::sqrt(dot) - 1.0));
        } else {
          dot_err = std::max(dot_err, std::abs(dot - target));
        }
      }
    }
  }
  return {norm_err <= 1e-9 && dot_err <= 1e-6,
          fmt("max |norm - 1| %.2e (<= 1e-9), max |dot + 1/(K-1)| %.2e (<= 1e-6)", norm_err, dot_err)};
}

// Criterion 5: spawning the zero-gated branch leaves outputs bitwise unchanged.
Verdict spawn_identity(const RunConfig& config) {
  auto rng = make_rng(505, "acceptance_spawn");
  std::size_t mismatches = 0, nonzero = 0;
  for (int i = 0; i < 20; ++i) {
    auto p = DualProjector<double>::create(config.model.dims, 505 + i);
    const auto& d = config.model.dims;
    const auto input = Tensor<double>::randn({1, d.in_channels, d.height, d.width}, rng);
    const auto before = p.forward_base_phase(input);
    p.spawn_incremental_branch(9000 + i);
    const auto after = p.forward_incremental_phase(input);
    for (std::size_t k = 0; k < before.numel(); ++k) mismatches += after.mu.data()[k] != before.data()[k];
    for (const double v : after.mu_inc.data()) nonzero += v != 0.0;
  }
  return {mismatches == 0 && nonzero == 0,
          fmt("20 inputs, %zu differing outputs, %zu nonzero incremental entries", mismatches, nonzero)};
}

// Criterion 7: metric arithmetic through the metrics command.
Verdict metric_arithmetic() {
  const auto dir = std::filesystem::temp_directory_path() / "fscil_acceptance_metrics";
  std::filesystem::create_directories(dir);
  struct Row {
    const char* name;
    const char* values;
    const char* expected;
  };
  const Row rows[] = {
      {"mini", "84.93, 80.02, 74.61, 71.33, 69.15, 65.62, 62.38, 60.93, 59.36", "AVG 69.81 PD 25.57\n"},
      {"cifar", "82.80, 77.85, 73.69, 69.67, 66.89, 63.66, 61.48, 59.74, 57.51", "AVG 68.14 PD 25.29\n"},
  };
  bool ok = true;
  std::string detail;
  for (const auto& r : rows) {
    const auto path = dir / (std::string(r.name) + ".txt");
    std::ofstream(path) << r.values << "\n";
    std::ostringstream out, err;
    const int code = cli::cmd_metrics(path, out, err);
    const bool hit = code == 0 && out.str() == r.expected;
    ok = ok && hit;
    auto shown = out.str();
    if (!shown.empty() && shown.back() == '\n') shown.pop_back();
    detail += std::string(detail.empty() ? "" : ", ") + r.name + ": " + shown;
  }
  return {ok, detail};
}

struct SeedRuns {
  std::uint64_t seed = 0;
  double full_run_seconds = 0;
  SessionAccuracy base;
  RunResult<float> losses;     // dual + suppression + separation
  RunResult<float> plain;      // dual, all lambda = 0
  RunResult<float> single;     // single branch fine-tuning
  RunResult<float> no_sep;     // dual, lambda3 = 0
  RunResult<float> unfrozen;   // dual + losses, p_iden and g_base left trainable
  std::vector<std::string> checksums;
};

SeedRuns run_seed(const RunConfig& desk, std::uint64_t seed) {
  SeedRuns r;
  r.seed = seed;
  RunConfig c = desk;
  c.seed = seed;
  const auto t0 = Clock::now();
  const auto stream = make_stream<float>(c);
  const auto base = run_base_session(c, stream);
  r.base = base.accuracy;
  r.checksums.push_back(base.frozen_checksum);
  r.losses = run_incremental_sessions(base, c, stream, [&](std::size_t, const Model<float>& m, const SessionAccuracy&) {
    r.checksums.push_back(parameter_checksum(m.base_parameters()));
  });
  r.full_run_seconds = seconds_since(t0);

  RunConfig plain = c;
  plain.losses = {0, 0, 0};
  r.plain = run_incremental_sessions(base, plain, stream);
  RunConfig single = plain;
  single.model.variant = ProjectorVariant::single;
  r.single = run_incremental_sessions(base, single, stream);
  RunConfig no_sep = c;
  no_sep.losses.lambda3 = 0;
  r.no_sep = run_incremental_sessions(base, no_sep, stream);
  RunConfig unfrozen = c;
  unfrozen.model.freeze_base = false;
  r.unfrozen = run_incremental_sessions(base, unfrozen, stream);
  return r;
}

double final_base(const RunResult<float>& r) { return r.sessions.back().base.value_or(0.0); }

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  CLI::App app{"acceptance"};
  std::string config_path = FSCIL_DESK_CONFIG;
  std::vector<int> expect_fail;
  std::size_t seeds = 5;
  app.add_option("--config", config_path, "desk run configuration");
  app.add_option("--expect-fail", expect_fail, "criteria known to fail");
  app.add_option("--seeds", seeds, "seeds for the protocol criteria")->check(CLI::Range(1, 100));
  CLI11_PARSE(app, argc, argv);

  Report report(std::set<int>(expect_fail.begin(), expect_fail.end()));
  const auto desk = load_config(config_path);

  report.record(1, "scan_kernel_equivalence", scan_kernel_equivalence);
  report.record(2, "scan_brute_force_equivalence", scan_brute_force_equivalence);
  report.record(3, "gradient_checks", gradient_checks);
  report.record(4, "etf_geometry", etf_geometry);
  report.record(5, "spawn_identity", [&] { return spawn_identity(desk); });

  std::vector<SeedRuns> runs;
  std::string run_error;
  try {
    for (std::size_t i = 0; i < seeds; ++i) {
      runs.push_back(run_seed(desk, desk.seed + i));
      const auto& r = runs.back();
      std::cout << fmt("      seed %llu: base %.2f | AVG losses %.2f dual %.2f single %.2f | cos losses %.5f no_sep %.5f |"
                       " final base frozen %.2f unfrozen %.2f | %.1f s",
                       static_cast<unsigned long long>(r.seed), 100 * r.base.all, r.losses.metrics.avg,
                       r.plain.metrics.avg, r.single.metrics.avg, *r.losses.final_base_novel_cosine,
                       *r.no_sep.final_base_novel_cosine, 100 * final_base(r.losses), 100 * final_base(r.unfrozen),
                       r.full_run_seconds)
                << std::endl;
    }
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  auto need_runs = [&] {
    if (!run_error.empty()) throw std::runtime_error("protocol run failed: " + run_error);
  };

  report.record(6, "frozen_stability", [&] {
    need_runs();
    const auto& r = runs.front();
    bool same = r.losses.frozen_checksum_final == r.checksums.front();
    for (const auto& h : r.checksums) same = same && h == r.checksums.front();
    return Verdict{same, fmt("%zu checksums over sessions 0..%zu, %s", r.checksums.size(), r.checksums.size() - 1,
                             same ? "all identical" : "changed")};
  });

  report.record(7, "metric_arithmetic", metric_arithmetic);

  report.record(8, "protocol_sanity", [&] {
    need_runs();
    const double chance = 1.0 / static_cast<double>(desk.protocol.total_classes());
    double final_all = 0, retention = 0, slowest = 0;
    for (const auto& r : runs) {
      final_all += r.losses.sessions.back().all / static_cast<double>(runs.size());
      retention += final_base(r.losses) / *r.base.base / static_cast<double>(runs.size());
      slowest = std::max(slowest, r.full_run_seconds);
    }
    const bool ok = final_all >= 5 * chance && retention >= 0.8 && slowest < 300 &&
                    desk.data.sigma_sep / desk.data.sigma >= 5;
    return Verdict{ok, fmt("mean final acc %.3f (>= %.3f), base retention %.3f (>= 0.8), slowest run %.1f s (< 300 s), "
                           "sigma ratio %.1f (>= 5)",
                           final_all, 5 * chance, retention, slowest, desk.data.sigma_sep / desk.data.sigma)};
  });

  report.record(9, "ablation_trend", [&] {
    need_runs();
    double losses = 0, plain = 0, single = 0, cos_sep = 0, cos_none = 0;
    const double n = static_cast<double>(runs.size());
    for (const auto& r : runs) {
      losses += r.losses.metrics.avg / n;
      plain += r.plain.metrics.avg / n;
      single += r.single.metrics.avg / n;
      cos_sep += *r.losses.final_base_novel_cosine / n;
      cos_none += *r.no_sep.final_base_novel_cosine / n;
    }
    const bool order = losses >= plain && plain >= single;
    const bool cosine = cos_sep < cos_none;
    return Verdict{order && cosine, fmt("mean AVG dual+losses %.2f, dual %.2f, single %.2f (%s); mean cosine %.5f vs "
                                        "%.5f without separation (%s)",
                                        losses, plain, single, order ? "ordered" : "not ordered", cos_sep, cos_none,
                                        cosine ? "lower" : "not lower")};
  });

  report.record(10, "freezing_ablation", [&] {
    need_runs();
    std::size_t wins = 0;
    for (const auto& r : runs) wins += final_base(r.losses) >= final_base(r.unfrozen);
    return Verdict{wins >= 4 * runs.size() / 5 && runs.size() >= 1,
                   fmt("frozen >= unfrozen final base accuracy on %zu of %zu seeds (need >= 4 of 5)", wins, runs.size())};
  });

  return report.unexpected();
}
