#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "xrlad/brainsim.hpp"
#include "xrlad/rng.hpp"

namespace xrlad::cohort {

using brainsim::Mat;
using brainsim::Vec;

inline constexpr int kTrajectoryYears = 11;  // years 0..10

enum class ScoreKind { MMSE, ADAS13 };

std::string to_string(ScoreKind kind);
ScoreKind score_kind_from_string(const std::string& s);

/// Maps a raw clinical score to the 0..10 ability scale. ADAS13 is inverted
/// because higher raw ADAS13 means worse cognition. Throws on out-of-range input.
double normalize_score(double raw, ScoreKind kind);
double denormalize_score(double normalized, ScoreKind kind);
/// Valid raw range per score kind: MMSE [0,30], ADAS13 [0,85].
std::pair<double, double> raw_score_range(ScoreKind kind);

struct Demographics {
  double age = 70.0;
  int gender = 0;  // 0 = M, 1 = F
  double education = 16.0;
  bool apoe4 = false;
};

/// Per-patient differential-equation constants when known exactly (synthetic
/// cohorts embed their generating values here).
struct ParamOverride {
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  double beta = 0.0;
  double gamma_act = 0.0;
};

struct PatientRecord {
  std::string patient_id;
  Demographics z0;
  Vec baseline_size;
  Vec baseline_amyloid;
  std::array<std::optional<double>, kTrajectoryYears> scores;  // raw scale
  ScoreKind score_kind = ScoreKind::MMSE;
  std::optional<ParamOverride> params_override;

  /// Throws with a descriptive message on any invariant violation.
  void validate() const;
  int follow_up_count() const;
  double baseline_cognition_norm() const;
};

struct Cohort {
  std::vector<PatientRecord> records;
  ScoreKind score_kind = ScoreKind::MMSE;

  const PatientRecord& by_id(const std::string& id) const;
  Cohort subset(const std::vector<std::string>& ids) const;
  void validate() const;
};

/// Reads the cohort CSV schema:
/// patient_id,age,gender,education,apoe4,score_kind,x_hc,x_pfc,d_hc,d_pfc,
/// alpha1,alpha2,beta,gamma,score_y0,...,score_y10
/// Param columns may be blank (demographic map applies); score columns are
/// blank where unobserved. Throws, listing every row-level problem at once.
Cohort load_cohort(const std::string& path);
void save_cohort(const Cohort& cohort, const std::string& path);

/// Affine map from demographics to one DE constant. Age and education enter
/// standardized ((age-70)/10, (education-16)/4); gender and APOE4 enter as
/// 0/1 indicators. Output is clamped at zero.
struct LinearParamMap {
  double intercept = 0.0;
  double age_coef = 0.0;
  double gender_coef = 0.0;
  double edu_coef = 0.0;
  double apoe4_coef = 0.0;

  double eval(const Demographics& z0) const;
};

/// Stand-in for the demographic parameter regression of prior work: one
/// configurable affine map per constant, with per-patient overrides winning.
struct ParamMap {
  LinearParamMap alpha1;
  LinearParamMap alpha2;
  LinearParamMap beta;
  LinearParamMap gamma_act;

  static ParamMap defaults();
};

brainsim::ModelParams demographic_params(const Demographics& z0, const ParamMap& map,
                                         const std::optional<ParamOverride>& override_params,
                                         double lambda_tradeoff, double c_task);

brainsim::ModelParams params_for(const PatientRecord& patient, const ParamMap& map,
                                 double lambda_tradeoff, double c_task);

brainsim::Baseline baseline_of(const PatientRecord& patient);

struct FoldSplit {
  int fold_index = 0;
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

/// Shuffled k-fold partition; per fold the non-test 80% is split 80/20 into
/// train/validation, 64:16:20 overall. Deterministic under seed.
std::vector<FoldSplit> kfold_split(const Cohort& cohort, int k, std::uint64_t seed);

/// Min-max bounds over baseline observations of the given records, widened by
/// a 5% margin per side; constant features widen to +-0.5 around the constant.
brainsim::ObservationScaler fit_scaler(const Cohort& cohort, const brainsim::BrainGraph& graph,
                                       const brainsim::EnvConfig& env_config);

/// Everything needed to manufacture a cohort from the generative model.
struct SynthSpec {
  int n_patients = 160;
  ScoreKind score_kind = ScoreKind::MMSE;
  // Baseline sampling ranges. Sizes are on the normalized volume scale
  // (within [1, 8]); amyloid on a SUVR-like scale; cognition on the 0..10
  // ability scale.
  std::vector<std::array<double, 2>> size_ranges = {{1.3, 3.5}, {1.5, 5.0}};
  std::array<double, 2> amyloid_range = {0.8, 2.5};
  std::array<double, 2> cognition_range = {6.0, 10.0};
  // Per-patient DE constant ranges (embedded as params_override).
  std::array<double, 2> alpha1_range = {0.02, 0.10};
  std::array<double, 2> alpha2_range = {0.005, 0.02};
  std::array<double, 2> beta_range = {0.03, 0.15};
  std::array<double, 2> gamma_range = {1.0, 1.0};
  double noise_std = 0.1;  // Gaussian observation noise on recorded scores, 0..10 scale
  double lambda_tradeoff = 0.8;
  double c_task = 10.0;
  brainsim::EnvConfig env;

  void validate() const;
};

/// The fixed allocation policy used to manufacture ground truth: request the
/// full action limit into every cost-efficient region (lambda > gamma/X_v)
/// and the full negative limit out of every inefficient one, then let the
/// simulator's projection enforce feasibility.
brainsim::Action allocation_policy(const brainsim::BrainState& state,
                                   const brainsim::ModelParams& params, double action_limit);

/// Rolls the generative model forward per patient and records yearly
/// cognition with observation noise. True constants are embedded in
/// params_override so the mapping from observations to trajectories is
/// learnable by construction.
Cohort generate_synthetic_cohort(const SynthSpec& spec, std::uint64_t seed);

/// BrainGraph used by synthetic cohorts: two regions, unit tract weight.
brainsim::BrainGraph default_graph();

}  // namespace xrlad::cohort
