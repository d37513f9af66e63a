#pragma once

#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "xrlad/agents.hpp"

namespace xrlad::config {

enum class ExplainScope { Test, Cohort, Patient };

std::string to_string(ExplainScope scope);
ExplainScope explain_scope_from_string(const std::string& s);

struct ExplainSettings {
  bool enabled = true;
  ExplainScope scope = ExplainScope::Test;
  int background_rows = 32;
  std::string patient_id;  // required when scope == Patient
};

/// Whole-experiment configuration. Exactly one cohort source (file path or
/// synthetic spec) must be set. The synthetic generator inherits the
/// experiment-level environment, lambda and c_task so that ground truth and
/// training always share one simulator configuration.
struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "out";
  cohort::ScoreKind score_kind = cohort::ScoreKind::MMSE;
  std::optional<std::string> cohort_path;
  std::optional<cohort::SynthSpec> synth;
  brainsim::Mat adjacency;  // defaults to the 2-region unit-weight graph
  brainsim::EnvConfig env;
  double lambda_tradeoff = 0.8;
  double c_task = 10.0;
  cohort::ParamMap param_map = cohort::ParamMap::defaults();
  int k_folds = 5;
  int n_seeds = 5;
  int workers = 1;
  std::vector<agents::AgentConfig> agent_configs;
  ExplainSettings explain;

  ExperimentConfig();

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);

  /// Reads a JSON config file; `apply_env` also applies XRLAD_* environment
  /// overrides (XRLAD_SEED, XRLAD_OUT_DIR, XRLAD_K_FOLDS, XRLAD_N_SEEDS,
  /// XRLAD_WORKERS).
  static ExperimentConfig load(const std::string& path, bool apply_env = true);
  void save(const std::string& path) const;
  void apply_env_overrides();

  /// Returns every validation problem at once; empty means valid.
  std::vector<std::string> validate() const;
};

}  // namespace xrlad::config
