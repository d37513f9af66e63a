#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "xrlad/harness.hpp"

namespace fs = std::filesystem;
using xrlad::config::ExperimentConfig;

namespace {

ExperimentConfig load_config(const std::string& path, std::uint64_t* seed_override,
                             const std::string* out_override, const std::string* agents_override) {
  ExperimentConfig cfg =
      path.empty() ? ExperimentConfig{} : ExperimentConfig::load(path);
  if (path.empty()) cfg.apply_env_overrides();
  if (seed_override) cfg.seed = *seed_override;
  if (out_override && !out_override->empty()) cfg.out_dir = *out_override;
  if (agents_override && !agents_override->empty()) {
    std::vector<xrlad::agents::AgentConfig> selected;
    std::stringstream ss(*agents_override);
    std::string name;
    while (std::getline(ss, name, ',')) {
      const auto kind = xrlad::agents::agent_kind_from_string(name);
      bool found = false;
      for (const auto& a : cfg.agent_configs) {
        if (a.kind == kind) {
          selected.push_back(a);
          found = true;
          break;
        }
      }
      if (!found) {
        xrlad::agents::AgentConfig a;
        a.kind = kind;
        selected.push_back(a);
      }
    }
    cfg.agent_configs = std::move(selected);
  }
  return cfg;
}

int check_config(const ExperimentConfig& cfg) {
  const auto errors = cfg.validate();
  if (errors.empty()) return 0;
  std::cerr << "configuration errors:\n";
  for (const auto& e : errors) std::cerr << "  - " << e << "\n";
  return 2;
}

int cmd_generate(const ExperimentConfig& cfg, const std::string& out_file) {
  if (!cfg.synth) {
    std::cerr << "generate requires a synthetic cohort spec in the config\n";
    return 2;
  }
  xrlad::cohort::SynthSpec spec = *cfg.synth;
  spec.score_kind = cfg.score_kind;
  spec.env = cfg.env;
  spec.lambda_tradeoff = cfg.lambda_tradeoff;
  spec.c_task = cfg.c_task;
  const auto cohort = xrlad::cohort::generate_synthetic_cohort(
      spec, xrlad::Rng(cfg.seed).derive("cohort").seed());
  xrlad::cohort::save_cohort(cohort, out_file);

  double base_min = 1e9, base_max = -1e9, final_min = 1e9, final_max = -1e9;
  int declining = 0;
  for (const auto& r : cohort.records) {
    const double c0 = xrlad::cohort::normalize_score(*r.scores[0], r.score_kind);
    const double c10 = xrlad::cohort::normalize_score(*r.scores[10], r.score_kind);
    base_min = std::min(base_min, c0);
    base_max = std::max(base_max, c0);
    final_min = std::min(final_min, c10);
    final_max = std::max(final_max, c10);
    if (c10 < c0 - 1.0) ++declining;
  }
  std::cout << "wrote " << cohort.records.size() << " patients to " << out_file << "\n"
            << "score kind: " << xrlad::cohort::to_string(cohort.score_kind) << "\n"
            << "baseline cognition (0-10): [" << base_min << ", " << base_max << "]\n"
            << "year-10 cognition (0-10): [" << final_min << ", " << final_max << "]\n"
            << "patients declining > 1 point: " << declining << "\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  if (const int rc = check_config(cfg)) return rc;
  const auto result = xrlad::harness::run_experiment(cfg);
  std::cout << xrlad::harness::summary_table(result);
  if (result.summaries.size() >= 2) std::cout << "\n" << xrlad::harness::compare_agents(result);
  int failed = 0;
  for (const auto& run : result.runs) {
    if (run.failed) {
      ++failed;
      std::cerr << "run failed: " << xrlad::agents::to_string(run.agent) << " fold " << run.fold
                << " seed " << run.seed_index << ": " << run.error << "\n";
    }
  }
  if (failed > 0) {
    std::cerr << failed << " of " << result.runs.size() << " runs failed\n";
    return 1;
  }
  std::cout << "artifacts written to " << cfg.out_dir << "\n";
  return 0;
}

int cmd_explain(const ExperimentConfig& cfg, bool check_efficiency) {
  if (const int rc = check_config(cfg)) return rc;
  const long rows = xrlad::harness::explain_runs(cfg, check_efficiency);
  std::cout << "wrote " << rows << " attribution rows under " << cfg.out_dir << "/shap\n";
  if (check_efficiency) std::cout << "per-row efficiency verified (|phi0 + sum(phi) - f(x)| <= 1e-6)\n";
  return 0;
}

int cmd_report(const std::string& out_dir) {
  const fs::path summary_path = fs::path(out_dir) / "summary.csv";
  if (!fs::exists(summary_path)) {
    std::cerr << "no summary.csv under " << out_dir << " (run `xrlad train` first)\n";
    return 2;
  }
  std::ifstream in(summary_path);
  std::string line;
  std::getline(in, line);  // header
  struct Row {
    std::string agent, kind;
    double mae_mean, mae_std, mse_mean, mse_std;
    int runs, failed;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[12];
    for (auto& field : f) std::getline(ss, field, ',');
    rows.push_back({f[0], f[1], std::stod(f[4]), std::stod(f[5]), std::stod(f[7]), std::stod(f[8]),
                    std::stoi(f[2]), std::stoi(f[3])});
  }
  if (rows.empty()) {
    std::cerr << "summary.csv has no completed runs\n";
    return 2;
  }
  std::printf("Method  %s MAE          %s MSE          (mean (std), normalized 0-10 scale)\n",
              rows[0].kind.c_str(), rows[0].kind.c_str());
  for (const auto& r : rows) {
    char mae[64], mse[64];
    std::snprintf(mae, sizeof mae, "%.3f (%.3f)", r.mae_mean, r.mae_std);
    std::snprintf(mse, sizeof mse, "%.3f (%.3f)", r.mse_mean, r.mse_std);
    std::printf("%-7s %-18s %-18s\n", r.agent.c_str(), mae, mse);
    if (r.failed > 0)
      std::printf("        warning: %d of %d runs failed; means cover completed runs only\n",
                  r.failed, r.runs);
  }
  std::printf("\nCSV: %s\n", summary_path.string().c_str());

  for (const auto& r : rows) {
    const fs::path ranking = fs::path(out_dir) / "shap" / r.agent / "ranking.csv";
    if (!fs::exists(ranking)) {
      std::printf("\n%s: no attribution ranking (run `xrlad explain`)\n", r.agent.c_str());
      continue;
    }
    std::printf("\n%s feature importance (mean |phi| across actions, descending):\n",
                r.agent.c_str());
    std::ifstream rank_in(ranking);
    std::getline(rank_in, line);  // header
    while (std::getline(rank_in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string rank, feature, scorev;
      std::getline(ss, rank, ',');
      std::getline(ss, feature, ',');
      std::getline(ss, scorev, ',');
      std::printf("  %2s. %-12s %.6g\n", rank.c_str(), feature.c_str(), std::stod(scorev));
    }
    std::printf("CSV: %s\n", ranking.string().c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differential-equation brain simulator, policy-optimization agents and "
               "Shapley-value explanations for 10-year cognition trajectory prediction"};
  app.require_subcommand(1);

  std::string config_path, out_dir, agents_list, patient_id, scope, cohort_out = "cohort.csv";
  std::uint64_t seed = 0;
  bool have_seed = false, check_efficiency = false;

  auto add_common = [&](CLI::App* cmd, bool config_required) {
    auto* opt = cmd->add_option("--config", config_path, "JSON experiment config");
    if (config_required) opt->required();
    cmd->add_option("--seed", seed, "override the experiment seed")
        ->each([&](const std::string&) { have_seed = true; });
    cmd->add_option("--out", out_dir, "override the output directory");
    cmd->add_option("--agents", agents_list, "comma-separated agent list, e.g. TRPO,PPO");
  };

  auto* generate = app.add_subcommand("generate", "write a synthetic cohort CSV");
  add_common(generate, false);
  generate->add_option("--cohort-out", cohort_out, "cohort CSV path to write");

  auto* train = app.add_subcommand("train", "run the cross-validated experiment");
  add_common(train, true);

  auto* explain = app.add_subcommand("explain", "attribute trained policies over a scope");
  add_common(explain, true);
  explain->add_option("--scope", scope, "test | cohort | patient");
  explain->add_option("--patient", patient_id, "patient id for --scope patient");
  explain->add_flag("--check-efficiency", check_efficiency,
                    "re-verify phi0 + sum(phi) = f(x) for every attribution row");

  auto* report = app.add_subcommand("report", "print the summary table and feature rankings");
  report->add_option("--out", out_dir, "run directory to report on")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) return cmd_report(out_dir);
    ExperimentConfig cfg = load_config(config_path, have_seed ? &seed : nullptr, &out_dir,
                                       &agents_list);
    if (!scope.empty()) cfg.explain.scope = xrlad::config::explain_scope_from_string(scope);
    if (!patient_id.empty()) {
      cfg.explain.patient_id = patient_id;
      cfg.explain.scope = xrlad::config::ExplainScope::Patient;
    }
    if (generate->parsed()) return cmd_generate(cfg, cohort_out);
    if (train->parsed()) return cmd_train(cfg);
    if (explain->parsed()) return cmd_explain(cfg, check_efficiency);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
