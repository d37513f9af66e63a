#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xrlad/agents.hpp"

namespace xrlad::explain {

using brainsim::Mat;
using brainsim::Vec;

/// Batched model under explanation: maps a matrix whose columns are inputs to
/// a matrix whose columns are the corresponding outputs.
using ModelFn = std::function<Mat(const Mat&)>;

/// Reference observations used to impute features absent from a coalition.
struct BackgroundSet {
  Mat rows;   // n_rows x n_features
  Vec means;  // per-feature mean over rows

  int n_features() const { return static_cast<int>(rows.cols()); }
  int n_rows() const { return static_cast<int>(rows.rows()); }

  /// Subsamples at most `max_rows` rows (without replacement) from the given
  /// observation matrix.
  static BackgroundSet from_observations(const Mat& observations, int max_rows, Rng& rng);
};

/// The Kernel SHAP coalition weight (N-1) / (C(N,k) * k * (N-k)).
/// Throws for k in {0, N}: those coalitions are handled as constraints.
double shapley_kernel_weight(int n_features, int coalition_size);

/// Exact Shapley values of one model output by full 2^N coalition
/// enumeration; the payoff p(C) imputes absent features per background row
/// and averages the outputs. N is capped at 20.
Vec exact_shapley(const ModelFn& model, const Vec& x, const BackgroundSet& background,
                  int action_index);

struct ShapResult {
  Mat phi;       // n_features x n_outputs
  Vec phi0;      // expected model output on the background, per output
  bool ridge_used = false;
  int coalitions = 0;
};

/// Kernel SHAP for every model output at once. With n_samples <= 0 and
/// N <= 12 all coalitions are enumerated (exact mode); otherwise coalitions
/// are sampled proportionally to the kernel weight (rng required).
ShapResult kernel_shap_all(const ModelFn& model, const Vec& x, const BackgroundSet& background,
                           int n_samples = 0, Rng* rng = nullptr);

/// Single-output convenience wrapper; returns (phi, phi0).
std::pair<Vec, double> kernel_shap(const ModelFn& model, const Vec& x,
                                   const BackgroundSet& background, int n_samples,
                                   int action_index, Rng* rng = nullptr);

/// Shapley values of every feature for every action output at one simulator
/// step, with the context needed to trace the value back to its run.
struct Attribution {
  Mat phi;   // n_features x n_actions
  Vec phi0;  // per action
  Vec model_output;  // explained model output per action (for efficiency checks)
  Vec obs_scaled;
  Vec obs_raw;
  std::string patient_id;
  int year = 0;
  int fold = 0;
  int seed = 0;
  std::string agent;
  std::vector<std::string> feature_names;
  std::vector<std::string> action_names;
};

/// Rolls the deterministic policy through a full episode and explains the
/// mean action head at every step: one Attribution per transition.
std::vector<Attribution> explain_trajectory(const agents::PolicySnapshot& snapshot,
                                            const cohort::PatientRecord& patient,
                                            const brainsim::ModelParams& params,
                                            const brainsim::BrainGraph& graph,
                                            const brainsim::EnvConfig& env_config,
                                            const BackgroundSet& background, int fold, int seed);

struct GlobalAttribution {
  Mat sum_phi;       // n_features x n_actions
  Mat mean_abs_phi;  // n_features x n_actions
  long count = 0;
  std::vector<int> ranking;  // feature indices, descending total mean |phi|
  std::vector<std::string> feature_names;
  std::vector<std::string> action_names;
};

GlobalAttribution aggregate_global(const std::vector<Attribution>& attributions);

/// Long-format CSV: patient_id, year, agent, action_name, feature_name,
/// feature_value (unscaled), phi, phi0 — sorted by (patient, year, action,
/// feature). Values are printed with enough digits to round-trip bit-exactly.
void export_attributions(const std::vector<Attribution>& attributions, const std::string& path);

/// Reads an exported attribution file back; the inverse of export_attributions
/// up to the columns the CSV carries (context fold/seed and scaled
/// observations are not part of the file format).
std::vector<Attribution> import_attributions(const std::string& path);

}  // namespace xrlad::explain
