// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point. Exit codes: 0 all checks pass, 1 some check
// failed, 2 usage or runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mrl/diagnostics.hpp"
#include "mrl/errors.hpp"
#include "mrl/experiment.hpp"
#include "mrl/oracle.hpp"

namespace fs = std::filesystem;
using namespace mrl;
using namespace mrl::harness;

namespace {

int print_checks(const std::vector<Check>& checks) {
  bool ok = true;
  for (const auto& c : checks) {
    std::cerr << (c.pass ? "PASS " : "FAIL ") << c.name;
    if (!c.detail.empty()) std::cerr << " (" << c.detail << ")";
    std::cerr << "\n";
    ok = ok && c.pass;
  }
  return ok ? 0 : 1;
}

int cmd_run(const std::string& config_path, std::size_t workers,
            const std::string& out_override) {
  const auto cfg = load_config(config_path);
  const std::string dir =
      out_override.empty() ? (fs::path(output_root()) / cfg.output_dir).string()
                           : out_override;
  RunOptions opts;
  opts.run_dir = dir;
  if (workers > 0) opts.workers = workers;
  const auto result = run_experiment(cfg, opts);

  std::vector<Check> checks;
  std::size_t gated_updates = 0, violations = 0;
  for (const auto& st : result.steps)
    for (const auto& p : st.policies)
      for (const auto& q : p.perturbations) {
        ++gated_updates;
        violations += !q.holds;
      }
  checks.push_back({"perturbation_bound", violations == 0,
                    std::to_string(violations) + " of " +
                        std::to_string(gated_updates) + " gated updates exceed it"});
  const RunView view(result);
  if (cfg.regime == RegimeKind::kSgt) {
    const auto cost = cost_report(view);
    checks.push_back({"sgt_cost_bound", cost.within_bound,
                      "max step fraction " + format_number(cost.max_step_fraction) +
                          " vs bound " + format_number(cost.bound)});
  }
  const auto ch = channel_decomposition(view, cfg.diagnostics.band_lo,
                                        cfg.diagnostics.band_hi);
  checks.push_back({"sgt_implies_xgrpo", ch.violations == 0,
                    std::to_string(ch.violations) + " violations"});
  const auto comp = complementarity_report(view, cfg.diagnostics.decode_stage);
  checks.push_back({"complementarity_identities",
                    comp.any_ge_max_single && comp.exactly_one_identity, ""});
  std::cout << "run written to " << dir << " (" << result.metrics.size()
            << " metrics rows)\n";
  return print_checks(checks);
}

int cmd_oracle(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : oracle::run_suite(seed)) {
    std::printf("%s %-40s value=%s expected=%s  %s\n", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), format_number(r.value).c_str(),
                format_number(r.expected).c_str(), r.detail.c_str());
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

int cmd_diagnose_thl(const std::string& config_path, const std::string& out_override) {
  const auto cfg = load_config(config_path);
  const auto diag = diagnose_thl(cfg);
  const std::string csv = diag.table.to_csv();
  const fs::path out = out_override.empty()
                           ? fs::path(output_root()) / cfg.output_dir / "thl_diagnosis.csv"
                           : fs::path(out_override);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream(out, std::ios::binary) << csv;
  std::cout << csv;
  return print_checks(diag.checks);
}

int cmd_report(const std::string& run_dir, const std::string& table) {
  fs::path dir(run_dir);
  if (!fs::is_directory(dir) && fs::is_directory(fs::path(output_root()) / dir))
    dir = fs::path(output_root()) / dir;
  const auto run = load_run_dir(dir.string());
  const RunView view(run);
  const auto rep = build_report(view, table);
  const std::string csv = rep.table.to_csv();
  fs::create_directories(dir / "reports");
  std::ofstream(dir / "reports" / (table + ".csv"), std::ios::binary) << csv;
  std::cout << csv;
  return print_checks(rep.checks);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mrl: mutual reinforcement learning desk-scale toolkit"};
  app.require_subcommand(1);

  std::string config_path, run_dir, table, out;
  std::size_t workers = 0;
  std::uint64_t seed = 7;

  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  run->add_option("config", config_path, "Config JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--workers", workers, "Worker slots (overrides the config)");
  run->add_option("--out", out, "Run directory (defaults to $MRL_OUTPUT_ROOT/<output_dir>)");

  auto* orc = app.add_subcommand("oracle", "Run the closed-form oracle suite");
  orc->add_option("--seed", seed, "Suite seed");

  auto* thl = app.add_subcommand("diagnose-thl", "Cross-tokenizer alignment error table");
  thl->add_option("config", config_path, "Config JSON")->required()->check(CLI::ExistingFile);
  thl->add_option("--out", out, "CSV path");

  auto* rep = app.add_subcommand("report", "Diagnostic table over a run directory");
  rep->add_option("run-dir", run_dir, "Run directory")->required();
  rep->add_option("--table", table, "Table name")
      ->required()
      ->check(CLI::IsMember(kReportTables));

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_path, workers, out);
    if (*orc) return cmd_oracle(seed);
    if (*thl) return cmd_diagnose_thl(config_path, out);
    if (*rep) return cmd_report(run_dir, table);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
