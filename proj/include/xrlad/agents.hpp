#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xrlad/cohort.hpp"
#include "xrlad/neural.hpp"

namespace xrlad::agents {

using brainsim::Mat;
using brainsim::Vec;

enum class AgentKind { TRPO, PPO, DDPG, SAC };

std::string to_string(AgentKind kind);
AgentKind agent_kind_from_string(const std::string& s);

struct AgentConfig {
  AgentKind kind = AgentKind::TRPO;
  double gamma_disc = 0.99;
  double lambda_gae = 0.97;
  double kl_bound = 0.01;      // TRPO trust-region radius
  double clip_eps = 0.2;       // PPO clip range
  double entropy_coef = 0.02;  // PPO entropy bonus
  int epochs_per_update = 10;  // PPO passes per batch
  int minibatch = 64;          // PPO minibatch
  int batch_size = 1000;       // env steps per iteration
  int total_epochs = 1000;
  std::size_t replay_capacity = 1000000;
  double tau_polyak = 0.005;
  double sac_alpha = 0.2;
  bool sac_auto_alpha = true;
  double lr_policy = 3e-4;
  double lr_value = 1e-3;
  double lr_critic = 3e-4;
  double lr_alpha = 3e-4;
  int cg_iters = 10;
  double cg_damping = 0.1;
  double backtrack_coef = 0.8;
  int backtrack_steps = 10;
  int value_train_epochs = 5;
  int warmup_steps = 1000;       // off-policy uniform exploration prefix
  double exploration_noise = 0.1;  // DDPG additive Gaussian noise
  int offpolicy_minibatch = 256;
  double updates_per_step = 1.0;
  std::vector<int> hidden = {32, 32};
  std::uint64_t seed = 0;

  void validate() const;
};

/// On-policy experience grouped by episode, plus GAE results.
struct RolloutBatch {
  Mat obs;      // n x obs_dim, row per step
  Mat actions;  // n x act_dim
  Vec rewards;
  Vec logprobs;
  Vec values;
  Vec advantages;
  Vec returns;
  std::vector<int> episode_starts;       // index of each episode's first step
  std::vector<int> episode_lengths;
  std::vector<bool> episode_terminated;  // false when cut by the batch boundary
  std::vector<double> bootstrap_values;  // value of the state after the last step
  std::vector<double> episode_returns;   // undiscounted, completed episodes only

  int size() const { return static_cast<int>(rewards.size()); }
};

/// delta_t = r_t + gamma*V(s_{t+1}) - V(s_t); A_t = sum_l (gamma*lambda)^l delta_{t+l}.
std::pair<Vec, Vec> gae_advantages(const Vec& rewards, const Vec& values, double bootstrap,
                                   double gamma_disc, double lambda_gae);

/// Fills advantages/returns episode by episode and standardizes advantages to
/// mean 0 / std 1 across the batch.
void finalize_batch(RolloutBatch& batch, double gamma_disc, double lambda_gae);

struct Transition {
  Vec obs;
  Vec action;
  double reward = 0.0;
  Vec next_obs;
  bool done = false;
};

/// Fixed-capacity ring buffer; minibatches sample uniformly without
/// replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return data_[i]; }
  std::vector<std::size_t> sample_indices(std::size_t count, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<Transition> data_;
};

/// Episodic training environment over a cohort split: every reset draws a
/// training patient and starts a fresh simulator episode.
class TrainEnv {
 public:
  TrainEnv(const cohort::Cohort* cohort, std::vector<std::string> patient_ids,
           brainsim::BrainGraph graph, brainsim::EnvConfig env_config, cohort::ParamMap param_map,
           double lambda_tradeoff, double c_task, const brainsim::ObservationScaler* scaler);

  Vec reset(Rng& rng);

  struct Step {
    Vec obs;
    double reward = 0.0;
    bool done = false;
  };
  Step step(const Vec& action);

  int obs_dim() const;
  int act_dim() const { return graph_.n_regions; }
  double action_limit() const { return env_config_.action_limit; }
  const brainsim::ObservationScaler& scaler() const { return *scaler_; }

 private:
  const cohort::Cohort* cohort_;
  std::vector<std::string> patient_ids_;
  brainsim::BrainGraph graph_;
  brainsim::EnvConfig env_config_;
  cohort::ParamMap param_map_;
  double lambda_tradeoff_;
  double c_task_;
  const brainsim::ObservationScaler* scaler_;
  std::optional<brainsim::Environment> env_;
};

/// Runs the stochastic policy for exactly `steps` environment steps; the
/// final partial episode is bootstrapped with the value estimate.
RolloutBatch collect_rollouts(TrainEnv& env, const neural::GaussianPolicy& policy,
                              const neural::Network& value_net, int steps, Rng& rng);

struct UpdateStats {
  bool accepted = false;   // TRPO line search found an acceptable step
  bool aborted = false;    // non-finite gradient/loss, update skipped
  double kl = 0.0;         // measured mean KL(new || old)
  double surrogate_improvement = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double cg_residual = 0.0;
  int line_search_steps = 0;
  double clip_fraction = 0.0;  // PPO
  double q_loss = 0.0;         // DDPG/SAC critic loss
  double alpha = 0.0;          // SAC temperature after the update
};

/// Approximate solve of A x = b for symmetric positive definite A given as a
/// matrix-vector product. Stops at `tol` on the residual norm.
Vec conjugate_gradient(const std::function<Vec(const Vec&)>& apply_A, const Vec& b, int iters,
                       double tol, double* residual_out = nullptr);

/// Per-state mean Jacobians and old distribution parameters captured before a
/// TRPO update; also reused by the Fisher-vector product.
struct TrpoWorkspace {
  Mat mu_old;                    // n x act_dim
  Vec log_std_old;
  std::vector<Mat> jacobians;    // per state: act_dim x mean-net params
};

TrpoWorkspace build_trpo_workspace(const neural::GaussianPolicy& policy, const RolloutBatch& batch);

/// Average KL Hessian-vector product (Gauss-Newton form, exact for diagonal
/// Gaussians at the expansion point) plus damping.
Vec fisher_vector_product(const neural::GaussianPolicy& policy, const TrpoWorkspace& ws,
                          const Vec& v, double damping);

/// Gradient of mean KL(policy || old) at the current parameters; the
/// finite-difference oracle for fisher_vector_product differentiates this.
Vec kl_gradient(const neural::GaussianPolicy& policy, const RolloutBatch& batch,
                const TrpoWorkspace& ws);

UpdateStats trpo_update(neural::GaussianPolicy& policy, neural::Network& value_net,
                        neural::AdamState& value_adam, const RolloutBatch& batch,
                        const AgentConfig& config);

UpdateStats ppo_update(neural::GaussianPolicy& policy, neural::AdamState& policy_adam,
                       neural::Network& value_net, neural::AdamState& value_adam,
                       const RolloutBatch& batch, const AgentConfig& config, Rng& rng);

/// targ <- (1 - tau) * targ + tau * online.
void polyak_update(Vec& target_params, const Vec& online_params, double tau);

/// Deterministic tanh actor for DDPG: a = limit * tanh(net(s)).
struct DeterministicActor {
  neural::Network net;
  double limit = 2.0;

  Vec act(const Vec& obs) const;
};

/// State-dependent squashed-Gaussian actor for SAC. The network emits
/// [mu, log_std] with log_std hard-clamped to [-20, 2].
struct SquashedActor {
  neural::Network net;
  double limit = 2.0;

  int act_dim() const { return net.output_dim() / 2; }
  std::pair<Vec, Vec> mean_logstd(const Vec& obs) const;
  Vec act_deterministic(const Vec& obs) const;
  neural::SquashedSample sample(const Vec& obs, Rng& rng) const;
};

struct DdpgNets {
  DeterministicActor actor;
  neural::Network critic;  // input [obs; act]
  DeterministicActor actor_target;
  neural::Network critic_target;
};

UpdateStats ddpg_update(DdpgNets& nets, neural::AdamState& actor_adam,
                        neural::AdamState& critic_adam, const ReplayBuffer& buffer,
                        const AgentConfig& config, Rng& rng);

struct SacNets {
  SquashedActor actor;
  neural::Network q1, q2;
  neural::Network q1_target, q2_target;
  double log_alpha = 0.0;
};

UpdateStats sac_update(SacNets& nets, neural::AdamState& actor_adam, neural::AdamState& q1_adam,
                       neural::AdamState& q2_adam, neural::AdamState& alpha_adam,
                       const ReplayBuffer& buffer, const AgentConfig& config, Rng& rng);

/// Everything a trained policy needs for deterministic evaluation and
/// explanation. Save/load round-trips bit-exactly (hex float text format).
struct PolicySnapshot {
  AgentKind kind = AgentKind::TRPO;
  std::vector<int> layer_sizes;
  Vec params;    // flat action-net parameters
  Vec log_std;   // TRPO/PPO only, empty otherwise
  double action_limit = 2.0;
  brainsim::ObservationScaler scaler;

  Vec act(const Vec& scaled_obs) const;
  Mat act_batch(const Mat& scaled_obs_cols) const;
  int act_dim() const;

  void save(const std::string& path) const;
  static PolicySnapshot load(const std::string& path);
};

struct EpochStats {
  int epoch = 0;
  double mean_return = 0.0;
  double validation_mae = 0.0;
  UpdateStats update;
};

struct TrainResult {
  PolicySnapshot snapshot;  // best by validation MAE
  std::vector<EpochStats> curve;
  int best_epoch = -1;
  int aborted_updates = 0;
};

struct TrainInputs {
  const cohort::Cohort* cohort = nullptr;
  const cohort::FoldSplit* fold = nullptr;
  brainsim::BrainGraph graph;
  brainsim::EnvConfig env_config;
  cohort::ParamMap param_map;
  double lambda_tradeoff = 0.8;
  double c_task = 10.0;
  brainsim::ObservationScaler scaler;  // fitted on the fold's training split
};

/// Deterministic mean-action rollout from a patient baseline; returns the
/// predicted normalized cognition per year (horizon entries, year 0 = given
/// baseline) plus per-year region logs.
struct DeterministicRollout {
  std::vector<double> cognition_norm;
  Mat info;      // horizon x n_regions
  Mat size;      // horizon x n_regions
  Mat amyloid;   // horizon x n_regions
  Mat activity;  // horizon x n_regions (year 0 row is zero; no action taken yet)
  bool degenerate = false;
};

DeterministicRollout deterministic_rollout(const std::function<Vec(const Vec&)>& act,
                                           const brainsim::Baseline& baseline,
                                           const brainsim::ModelParams& params,
                                           const brainsim::BrainGraph& graph,
                                           const brainsim::EnvConfig& env_config,
                                           const brainsim::ObservationScaler& scaler);

/// Trains one agent on the fold's training split. The returned snapshot is
/// the epoch with the best validation MAE; the curve has one entry per epoch.
TrainResult train(const AgentConfig& config, const TrainInputs& inputs, Rng rng);

}  // namespace xrlad::agents
