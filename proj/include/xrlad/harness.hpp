#pragma once

#include <string>
#include <vector>

#include "xrlad/config.hpp"
#include "xrlad/explain.hpp"

namespace xrlad::harness {

using brainsim::Mat;
using brainsim::Vec;

/// One patient's predicted 10-year trajectory: horizon entries, year 0 fixed
/// at the ground-truth baseline, plus per-year region logs.
struct TrajectoryPrediction {
  std::string patient_id;
  std::vector<double> pred_norm;
  std::vector<double> pred_raw;
  Mat info;
  Mat size;
  Mat amyloid;
  Mat activity;
  bool degenerate = false;
};

TrajectoryPrediction rollout_prediction(const agents::PolicySnapshot& snapshot,
                                        const cohort::PatientRecord& patient,
                                        const brainsim::ModelParams& params,
                                        const brainsim::BrainGraph& graph,
                                        const brainsim::EnvConfig& env_config);

struct Scores {
  double mae = 0.0;
  double mse = 0.0;
  long n_points = 0;
};

struct ScorePair {
  Scores norm;  // 0..10 ability scale (the scale agents train on)
  Scores raw;   // clinical score scale, for interpretability
};

/// MAE/MSE over every (patient, year) pair with ground truth, year 0 excluded
/// since the baseline is given, not predicted. Throws when nothing overlaps.
ScorePair score(const std::vector<TrajectoryPrediction>& predictions,
                const cohort::Cohort& cohort);

struct RunRecord {
  agents::AgentKind agent = agents::AgentKind::TRPO;
  int fold = 0;
  int seed_index = 0;
  ScorePair scores;
  int best_epoch = -1;
  bool failed = false;
  std::string error;
};

struct AgentSummary {
  agents::AgentKind agent = agents::AgentKind::TRPO;
  int n_runs = 0;
  int n_failed = 0;
  double mae_mean = 0.0;
  double mae_std_runs = 0.0;       // std across all completed runs
  double mae_std_fold_means = 0.0; // std across per-fold means
  double mse_mean = 0.0;
  double mse_std_runs = 0.0;
  double mse_std_fold_means = 0.0;
  double mae_raw_mean = 0.0;
  double mse_raw_mean = 0.0;
};

struct ExperimentResult {
  std::vector<RunRecord> runs;
  std::vector<AgentSummary> summaries;
  std::string cohort_tag;
  cohort::ScoreKind score_kind = cohort::ScoreKind::MMSE;
  bool complete = true;  // false if any run failed
};

/// Trains every (agent, fold, seed) combination, scores the held-out test
/// patients, writes runs/<agent>/<fold>/<seed>/{metrics.csv, curve.csv,
/// trajectories.csv, snapshot.txt}, summary.csv and shap/<agent>/ exports
/// under config.out_dir. Deterministic under the experiment seed.
ExperimentResult run_experiment(const config::ExperimentConfig& config);

/// Agents sorted by aggregated MAE with pairwise mean differences and
/// run-level spreads. Throws unless at least two agents were scored on the
/// same cohort.
std::string compare_agents(const ExperimentResult& result);

/// Merges several experiment results into one ranking; throws when the
/// results were scored on different cohorts.
std::string compare_agents(const std::vector<ExperimentResult>& results);

/// The Table-1-shaped "mean (std)" text table for a finished experiment.
std::string summary_table(const ExperimentResult& result);

/// Re-runs the explanation stage against an existing run directory (used by
/// the explain CLI command); returns the number of attribution rows written.
long explain_runs(const config::ExperimentConfig& config, bool check_efficiency);

}  // namespace xrlad::harness
