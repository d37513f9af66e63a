#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include "xrlad/agents.hpp"

namespace xrlad::agents {

std::string to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::TRPO: return "TRPO";
    case AgentKind::PPO: return "PPO";
    case AgentKind::DDPG: return "DDPG";
    case AgentKind::SAC: return "SAC";
  }
  return "?";
}

AgentKind agent_kind_from_string(const std::string& s) {
  if (s == "TRPO") return AgentKind::TRPO;
  if (s == "PPO") return AgentKind::PPO;
  if (s == "DDPG") return AgentKind::DDPG;
  if (s == "SAC") return AgentKind::SAC;
  throw std::invalid_argument("unknown agent kind: '" + s + "'");
}

void AgentConfig::validate() const {
  if (gamma_disc < 0.0 || gamma_disc >= 1.0)
    throw std::invalid_argument("AgentConfig: discount must be in [0,1)");
  if (clip_eps <= 0.0) throw std::invalid_argument("AgentConfig: clip_eps must be positive");
  if (kl_bound <= 0.0) throw std::invalid_argument("AgentConfig: kl_bound must be positive");
  if (batch_size <= 0 || total_epochs <= 0)
    throw std::invalid_argument("AgentConfig: batch_size and total_epochs must be positive");
  if (replay_capacity < static_cast<std::size_t>(offpolicy_minibatch) ||
      replay_capacity < static_cast<std::size_t>(batch_size))
    throw std::invalid_argument("AgentConfig: replay capacity must hold at least one batch");
  if (tau_polyak < 0.0 || tau_polyak > 1.0)
    throw std::invalid_argument("AgentConfig: tau must be in [0,1]");
}

std::pair<Vec, Vec> gae_advantages(const Vec& rewards, const Vec& values, double bootstrap,
                                   double gamma_disc, double lambda_gae) {
  if (rewards.size() != values.size())
    throw std::invalid_argument("gae_advantages: rewards/values length mismatch");
  const Eigen::Index n = rewards.size();
  Vec adv(n), ret(n);
  double acc = 0.0;
  for (Eigen::Index t = n; t-- > 0;) {
    const double next_value = (t + 1 < n) ? values(t + 1) : bootstrap;
    const double delta = rewards(t) + gamma_disc * next_value - values(t);
    acc = delta + gamma_disc * lambda_gae * acc;
    adv(t) = acc;
  }
  ret = adv + values;
  return {adv, ret};
}

void finalize_batch(RolloutBatch& batch, double gamma_disc, double lambda_gae) {
  const int n = batch.size();
  batch.advantages = Vec(n);
  batch.returns = Vec(n);
  for (std::size_t e = 0; e < batch.episode_starts.size(); ++e) {
    const int start = batch.episode_starts[e];
    const int len = batch.episode_lengths[e];
    const double bootstrap = batch.episode_terminated[e] ? 0.0 : batch.bootstrap_values[e];
    auto [adv, ret] = gae_advantages(batch.rewards.segment(start, len),
                                     batch.values.segment(start, len), bootstrap, gamma_disc,
                                     lambda_gae);
    batch.advantages.segment(start, len) = adv;
    batch.returns.segment(start, len) = ret;
  }
  const double mean = batch.advantages.mean();
  const double sd =
      std::sqrt((batch.advantages.array() - mean).square().sum() / std::max(n - 1, 1));
  batch.advantages = (batch.advantages.array() - mean) / std::max(sd, 1e-8);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  data_.reserve(std::min<std::size_t>(capacity, 1 << 20));
}

void ReplayBuffer::push(Transition t) {
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
  } else {
    data_[cursor_] = std::move(t);
  }
  cursor_ = (cursor_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t count, Rng& rng) const {
  if (data_.empty()) throw std::logic_error("ReplayBuffer: sampling from an empty buffer");
  if (count > data_.size()) count = data_.size();
  // Floyd's algorithm: distinct indices, O(count) expected.
  std::vector<std::size_t> out;
  out.reserve(count);
  std::vector<bool> taken(data_.size(), false);
  for (std::size_t j = data_.size() - count; j < data_.size(); ++j) {
    std::size_t t = rng.uniform_index(j + 1);
    if (taken[t]) t = j;
    taken[t] = true;
    out.push_back(t);
  }
  return out;
}

TrainEnv::TrainEnv(const cohort::Cohort* cohort, std::vector<std::string> patient_ids,
                   brainsim::BrainGraph graph, brainsim::EnvConfig env_config,
                   cohort::ParamMap param_map, double lambda_tradeoff, double c_task,
                   const brainsim::ObservationScaler* scaler)
    : cohort_(cohort),
      patient_ids_(std::move(patient_ids)),
      graph_(std::move(graph)),
      env_config_(env_config),
      param_map_(param_map),
      lambda_tradeoff_(lambda_tradeoff),
      c_task_(c_task),
      scaler_(scaler) {
  if (patient_ids_.empty()) throw std::invalid_argument("TrainEnv: no training patients");
}

int TrainEnv::obs_dim() const { return 3 * graph_.n_regions; }

Vec TrainEnv::reset(Rng& rng) {
  const auto& id = patient_ids_[rng.uniform_index(patient_ids_.size())];
  const auto& patient = cohort_->by_id(id);
  const auto params = cohort::params_for(patient, param_map_, lambda_tradeoff_, c_task_);
  env_.emplace(cohort::baseline_of(patient), params, graph_, env_config_);
  return brainsim::observe(env_->state(), *scaler_);
}

TrainEnv::Step TrainEnv::step(const Vec& action) {
  if (!env_) throw std::logic_error("TrainEnv: step before reset");
  const auto out = env_->step(brainsim::Action{action});
  return {brainsim::observe(out.next, *scaler_), out.reward, out.done};
}

RolloutBatch collect_rollouts(TrainEnv& env, const neural::GaussianPolicy& policy,
                              const neural::Network& value_net, int steps, Rng& rng) {
  RolloutBatch batch;
  batch.obs = Mat(steps, env.obs_dim());
  batch.actions = Mat(steps, policy.act_dim());
  batch.rewards = Vec(steps);
  batch.logprobs = Vec(steps);
  batch.values = Vec(steps);

  Vec obs = env.reset(rng);
  int episode_start = 0;
  double episode_return = 0.0;
  for (int t = 0; t < steps; ++t) {
    batch.obs.row(t) = obs.transpose();
    const auto [action, logprob] = neural::gaussian_sample(policy, obs, rng);
    batch.actions.row(t) = action.transpose();
    batch.logprobs(t) = logprob;
    batch.values(t) = neural::forward(value_net, obs)(0);

    const auto step = env.step(action);
    batch.rewards(t) = step.reward;
    episode_return += step.reward;
    obs = step.obs;

    const bool last = (t + 1 == steps);
    if (step.done || last) {
      batch.episode_starts.push_back(episode_start);
      batch.episode_lengths.push_back(t + 1 - episode_start);
      batch.episode_terminated.push_back(step.done);
      batch.bootstrap_values.push_back(step.done ? 0.0 : neural::forward(value_net, obs)(0));
      if (step.done) batch.episode_returns.push_back(episode_return);
      episode_start = t + 1;
      episode_return = 0.0;
      if (step.done && !last) obs = env.reset(rng);
    }
  }
  return batch;
}

Vec conjugate_gradient(const std::function<Vec(const Vec&)>& apply_A, const Vec& b, int iters,
                       double tol, double* residual_out) {
  Vec x = Vec::Zero(b.size());
  Vec r = b;
  Vec p = b;
  double rs = r.squaredNorm();
  for (int i = 0; i < iters && std::sqrt(rs) > tol; ++i) {
    const Vec Ap = apply_A(p);
    const double pAp = p.dot(Ap);
    if (pAp <= 0.0) break;  // not PSD along p; keep the current iterate
    const double alpha = rs / pAp;
    x += alpha * p;
    r -= alpha * Ap;
    const double rs_new = r.squaredNorm();
    p = r + (rs_new / rs) * p;
    rs = rs_new;
  }
  if (residual_out) *residual_out = std::sqrt(rs);
  return x;
}

void polyak_update(Vec& target_params, const Vec& online_params, double tau) {
  if (target_params.size() != online_params.size())
    throw std::invalid_argument("polyak_update: shape mismatch");
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("polyak_update: tau must be in [0,1]");
  target_params = (1.0 - tau) * target_params + tau * online_params;
}

DeterministicRollout deterministic_rollout(const std::function<Vec(const Vec&)>& act,
                                           const brainsim::Baseline& baseline,
                                           const brainsim::ModelParams& params,
                                           const brainsim::BrainGraph& graph,
                                           const brainsim::EnvConfig& env_config,
                                           const brainsim::ObservationScaler& scaler) {
  DeterministicRollout out;
  const int horizon = env_config.horizon;
  const int n = graph.n_regions;
  out.cognition_norm.assign(horizon, 0.0);
  out.info = Mat::Zero(horizon, n);
  out.size = Mat::Zero(horizon, n);
  out.amyloid = Mat::Zero(horizon, n);
  out.activity = Mat::Zero(horizon, n);

  brainsim::Environment env(baseline, params, graph, env_config);
  out.cognition_norm[0] = brainsim::cognition(env.state().info_prev);
  out.info.row(0) = env.state().info_prev.transpose();
  out.size.row(0) = env.state().size.transpose();
  out.amyloid.row(0) = env.state().amyloid.transpose();

  int year = 1;
  for (; year < horizon && !env.done(); ++year) {
    const Vec obs = brainsim::observe(env.state(), scaler);
    const auto step = env.step(brainsim::Action{act(obs)});
    out.cognition_norm[year] = step.derived.cognition;
    out.info.row(year) = step.next.info_prev.transpose();
    out.size.row(year) = step.next.size.transpose();
    out.amyloid.row(year) = step.next.amyloid.transpose();
    out.activity.row(year) = step.derived.activity.transpose();
    if (step.degenerate) out.degenerate = true;
  }
  // A degenerate episode ends early; pad with the last valid values.
  for (; year < horizon; ++year) {
    out.cognition_norm[year] = out.cognition_norm[year - 1];
    out.info.row(year) = out.info.row(year - 1);
    out.size.row(year) = out.size.row(year - 1);
    out.amyloid.row(year) = out.amyloid.row(year - 1);
    out.activity.row(year) = out.activity.row(year - 1);
  }
  return out;
}

namespace {

void write_vec(std::ofstream& out, const char* name, const Vec& v) {
  out << name << ' ' << v.size();
  char buf[40];
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, " %a", v(i));
    out << buf;
  }
  out << '\n';
}

Vec read_vec(std::ifstream& in, const std::string& expected) {
  std::string name;
  Eigen::Index n = 0;
  in >> name >> n;
  if (name != expected || n < 0)
    throw std::runtime_error("snapshot: expected field '" + expected + "'");
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::string tok;
    in >> tok;
    v(i) = std::strtod(tok.c_str(), nullptr);
  }
  return v;
}

}  // namespace

int PolicySnapshot::act_dim() const {
  return kind == AgentKind::SAC ? layer_sizes.back() / 2 : layer_sizes.back();
}

Vec PolicySnapshot::act(const Vec& scaled_obs) const {
  Mat col(scaled_obs.size(), 1);
  col.col(0) = scaled_obs;
  return act_batch(col).col(0);
}

Mat PolicySnapshot::act_batch(const Mat& scaled_obs_cols) const {
  neural::Network net;
  net.layer_sizes = layer_sizes;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    net.weights.emplace_back(layer_sizes[l + 1], layer_sizes[l]);
    net.biases.emplace_back(Vec::Zero(layer_sizes[l + 1]));
  }
  net.set_flat_params(params);
  Mat raw = neural::forward_batch(net, scaled_obs_cols);
  switch (kind) {
    case AgentKind::TRPO:
    case AgentKind::PPO:
      return raw;  // unbounded mean head; the simulator clips actions itself
    case AgentKind::DDPG:
      return action_limit * raw.array().tanh();
    case AgentKind::SAC: {
      const int a = act_dim();
      return action_limit * raw.topRows(a).array().tanh();
    }
  }
  throw std::logic_error("PolicySnapshot: unknown agent kind");
}

void PolicySnapshot::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write snapshot: " + path);
  out << "xrlad-snapshot v1\n";
  out << "agent " << to_string(kind) << '\n';
  out << "layers " << layer_sizes.size();
  for (int s : layer_sizes) out << ' ' << s;
  out << '\n';
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", action_limit);
  out << "action_limit " << buf << '\n';
  write_vec(out, "params", params);
  write_vec(out, "log_std", log_std);
  write_vec(out, "scaler_min", scaler.min_bound);
  write_vec(out, "scaler_max", scaler.max_bound);
}

PolicySnapshot PolicySnapshot::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open snapshot: " + path);
  std::string magic, version;
  in >> magic >> version;
  if (magic != "xrlad-snapshot" || version != "v1")
    throw std::runtime_error(path + ": not an xrlad snapshot");
  PolicySnapshot s;
  std::string field, value;
  in >> field >> value;
  if (field != "agent") throw std::runtime_error(path + ": expected agent field");
  s.kind = agent_kind_from_string(value);
  std::size_t n_layers = 0;
  in >> field >> n_layers;
  if (field != "layers") throw std::runtime_error(path + ": expected layers field");
  s.layer_sizes.resize(n_layers);
  for (auto& l : s.layer_sizes) in >> l;
  in >> field >> value;
  if (field != "action_limit") throw std::runtime_error(path + ": expected action_limit field");
  s.action_limit = std::strtod(value.c_str(), nullptr);
  s.params = read_vec(in, "params");
  s.log_std = read_vec(in, "log_std");
  s.scaler.min_bound = read_vec(in, "scaler_min");
  s.scaler.max_bound = read_vec(in, "scaler_max");
  s.scaler.fitted = s.scaler.min_bound.size() > 0;
  return s;
}

}  // namespace xrlad::agents
