#pragma once

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fscil/cli/commands.hpp"

namespace fscil::cli {

// Parses argv and dispatches to one command. Usage errors exit with 2.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Few-shot class-incremental learning with a dual selective SSM projector"};
  app.require_subcommand(1);

  RunOptions run_opts;
  std::uint64_t seed = 0;
  auto* run = app.add_subcommand("run", "Train and evaluate the full session protocol");
  run->add_option("--config", run_opts.config, "Run config JSON")->required();
  run->add_option("--out", run_opts.out, "Output directory")->required();
  auto* seed_opt = run->add_option("--seed", seed, "Override the config seed");
  run->add_flag("--force", run_opts.force, "Allow writing into a non-empty output directory");

  std::string scope = "all";
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--scope", scope, "all, a group (ops, ssm, branch, objective) or a case name");

  long len = 256, dim = 16, reps = 10;
  auto* bench = app.add_subcommand("bench-scan", "Scan throughput after an equivalence precheck");
  bench->alias("bench_scan");
  bench->add_option("--len", len, "Sequence length");
  bench->add_option("--dim", dim, "Channels");
  bench->add_option("--reps", reps, "Repetitions per path");

  std::string accs;
  auto* metrics = app.add_subcommand("metrics", "AVG and PD from per-session accuracies");
  metrics->add_option("--accs", accs, "CSV of per-session accuracies")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n" << "run with --help for usage\n";
    return kUsage;
  }

  if (*run) {
    if (*seed_opt) run_opts.seed = seed;
    return cmd_run(run_opts, out, err);
  }
  if (*gc) return cmd_gradcheck(scope, out, err);
  if (*bench) return cmd_bench_scan(len, dim, reps, out, err);
  return cmd_metrics(accs, out, err);
}

}  // namespace fscil::cli
