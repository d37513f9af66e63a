#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace xrlad::brainsim {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Graph Laplacian H = degree - adjacency. Throws on non-square, asymmetric,
/// negative-weight or nonzero-diagonal input.
Mat laplacian(const Mat& adjacency);

/// Brain connectivity graph: nodes are regions, weighted edges are tracts.
struct BrainGraph {
  int n_regions = 0;
  Mat adjacency;
  Mat laplacian;
  std::vector<std::string> region_names;

  static BrainGraph from_adjacency(const Mat& adjacency);
};

/// Constants of the differential-equation model plus the reward trade-off.
struct ModelParams {
  double alpha1 = 0.05;           // atrophy per unit amyloid, 1/year
  double alpha2 = 0.02;           // atrophy per unit activity, 1/year
  double beta = 0.08;             // amyloid diffusion rate, 1/year
  double gamma_act = 1.0;         // activity per unit information / size
  double lambda_tradeoff = 0.8;   // mismatch-vs-cost weight in the reward
  double c_task = 10.0;           // cognitive demand ceiling

  void validate() const;
};

/// Simulator state at an integer year t.
struct BrainState {
  int year = 0;
  Vec size;           // X_v(t)
  Vec amyloid;        // D_v(t)
  Vec info_prev;      // I_v(t-1)
  Vec amyloid_total;  // phi_v(t), time integral of D_v
};

struct Action {
  Vec delta_info;  // requested change in information processing per region
};

/// Per-step derived quantities kept for logging and attribution.
struct Derived {
  double cognition = 0.0;  // C(t)
  double cost = 0.0;       // M(t)
  Vec activity;            // Y_v(t)
};

struct EnvConfig {
  int horizon = 11;             // time points: years 0 .. horizon-1
  int substeps_per_year = 100;  // Euler substeps for the diffusion ODE
  double action_limit = 2.0;
  double reward_clip = 2000.0;
  double size_floor = 1e-6;
  bool uniform_info_split = false;  // reset splits cognition uniformly instead of by size
};

struct StepOutcome {
  BrainState next;
  double reward = 0.0;
  Derived derived;
  bool done = false;
  bool degenerate = false;  // every region at the size floor
};

/// Baseline quantities needed to start an episode. `cognition_norm` is on the
/// normalized 0..10 ability scale.
struct Baseline {
  Vec size;
  Vec amyloid;
  double cognition_norm = 0.0;
};

/// Integrates dD/dt = -beta * H * D over `dt` years with forward Euler.
Vec diffuse_amyloid(const Vec& amyloid, const Mat& laplacian, double beta, double dt, int substeps);

/// Exact eigen-decomposition solution of the 2-node diffusion ODE; test oracle
/// for diffuse_amyloid.
Vec closed_form_diffusion_2node(const Vec& d0, double edge_weight, double beta, double t);

/// Y_v = gamma * I_v / X_v. Throws if any size is not positive.
Vec activity(const Vec& info, const Vec& size, double gamma_act);

/// C(t) = sum_v I_v(t).
double cognition(const Vec& info);

/// M(t) = sum_v Y_v(t).
double energetic_cost(const Vec& activity);

/// One Euler step of dX_v/dt = -alpha1*D_v - alpha2*Y_v, floored at `floor`.
Vec update_size(const Vec& size, const Vec& amyloid, const Vec& activity, double alpha1,
                double alpha2, double dt, double floor);

/// R(t) = -[lambda*(c_task - C) + M], clipped to +-clip.
double reward(double cognition_now, double cost_now, const ModelParams& params, double clip);

/// Clips the requested delta to +-limit, floors the candidate I at zero and
/// rescales it multiplicatively when its sum exceeds c_task.
Vec project_action(const Vec& info_prev, const Vec& delta, const ModelParams& params, double limit);

BrainState env_reset(const Baseline& baseline, const ModelParams& params, const BrainGraph& graph,
                     const EnvConfig& config);

StepOutcome env_step(const BrainState& state, const Action& action, const ModelParams& params,
                     const BrainGraph& graph, const EnvConfig& config);

/// Min-max bounds over observation features; fitted by cohort::fit_scaler.
struct ObservationScaler {
  Vec min_bound;
  Vec max_bound;
  bool fitted = false;

  /// Maps features to [0,1], clamping values outside the fitted bounds.
  Vec apply(const Vec& features) const;
  /// Inverse map for reporting; does not undo clamping.
  Vec invert(const Vec& scaled) const;
};

/// Unscaled observation (X_v.., D_v.., I_v(t-1)..) for all regions.
Vec raw_observation(const BrainState& state);

/// Scaled observation per the fitted min-max bounds. Throws if unfitted.
Vec observe(const BrainState& state, const ObservationScaler& scaler);

/// Feature names in observation order, e.g. X_HC, X_PFC, D_HC, D_PFC, I_HC_prev, I_PFC_prev.
std::vector<std::string> feature_names(const BrainGraph& graph);
/// Action output names, e.g. dI_HC, dI_PFC.
std::vector<std::string> action_names(const BrainGraph& graph);

/// Owns the mutable episode state. One instance per logical thread.
class Environment {
 public:
  Environment(Baseline baseline, ModelParams params, BrainGraph graph, EnvConfig config);

  const BrainState& reset();
  StepOutcome step(const Action& action);

  const BrainState& state() const { return state_; }
  const ModelParams& params() const { return params_; }
  const BrainGraph& graph() const { return graph_; }
  const EnvConfig& config() const { return config_; }
  bool done() const { return done_; }

 private:
  Baseline baseline_;
  ModelParams params_;
  BrainGraph graph_;
  EnvConfig config_;
  BrainState state_;
  bool done_ = false;
};

}  // namespace xrlad::brainsim
