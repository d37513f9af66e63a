#include <cmath>
#include <limits>
#include <stdexcept>

#include "xrlad/agents.hpp"

namespace xrlad::agents {

namespace {

double validation_mae(const std::function<Vec(const Vec&)>& act, const TrainInputs& in,
                      const std::vector<std::string>& ids) {
  double total = 0.0;
  long count = 0;
  for (const auto& id : ids) {
    const auto& patient = in.cohort->by_id(id);
    const auto params = cohort::params_for(patient, in.param_map, in.lambda_tradeoff, in.c_task);
    const auto roll = deterministic_rollout(act, cohort::baseline_of(patient), params, in.graph,
                                            in.env_config, in.scaler);
    for (int y = 1; y < in.env_config.horizon && y < cohort::kTrajectoryYears; ++y) {
      if (!patient.scores[y]) continue;
      const double truth = cohort::normalize_score(*patient.scores[y], patient.score_kind);
      total += std::abs(roll.cognition_norm[y] - truth);
      ++count;
    }
  }
  return count > 0 ? total / count : std::numeric_limits<double>::infinity();
}

std::vector<int> policy_layers(int obs_dim, const std::vector<int>& hidden, int out_dim) {
  std::vector<int> sizes;
  sizes.push_back(obs_dim);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out_dim);
  return sizes;
}

double mean_or(const std::vector<double>& xs, double fallback) {
  if (xs.empty()) return fallback;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / xs.size();
}

TrainResult train_onpolicy(const AgentConfig& config, const TrainInputs& in, Rng& rng) {
  TrainEnv env(in.cohort, in.fold->train, in.graph, in.env_config, in.param_map,
               in.lambda_tradeoff, in.c_task, &in.scaler);
  auto policy = neural::make_gaussian_policy(
      policy_layers(env.obs_dim(), config.hidden, env.act_dim()), rng.derive("policy_init").seed());
  auto value_net =
      neural::mlp_init(policy_layers(env.obs_dim(), config.hidden, 1), rng.derive("value_init").seed());
  neural::AdamState policy_adam(policy.param_count());
  neural::AdamState value_adam(value_net.param_count());
  Rng rollout_rng = rng.derive("rollout");
  Rng update_rng = rng.derive("update");

  const auto act = [&](const Vec& obs) { return policy.mean(obs); };
  auto snapshot_now = [&]() {
    PolicySnapshot s;
    s.kind = config.kind;
    s.layer_sizes = policy.mean_net.layer_sizes;
    s.params = policy.mean_net.flat_params();
    s.log_std = policy.log_std;
    s.action_limit = in.env_config.action_limit;
    s.scaler = in.scaler;
    return s;
  };

  TrainResult result;
  result.snapshot = snapshot_now();
  double best_mae = std::numeric_limits<double>::infinity();
  double last_return = 0.0;
  for (int epoch = 0; epoch < config.total_epochs; ++epoch) {
    RolloutBatch batch = collect_rollouts(env, policy, value_net, config.batch_size, rollout_rng);
    finalize_batch(batch, config.gamma_disc, config.lambda_gae);
    UpdateStats stats;
    if (config.kind == AgentKind::TRPO) {
      stats = trpo_update(policy, value_net, value_adam, batch, config);
    } else {
      stats = ppo_update(policy, policy_adam, value_net, value_adam, batch, config, update_rng);
    }
    if (stats.aborted) ++result.aborted_updates;

    EpochStats es;
    es.epoch = epoch;
    es.mean_return = mean_or(batch.episode_returns, last_return);
    last_return = es.mean_return;
    es.validation_mae = validation_mae(act, in, in.fold->validation);
    es.update = stats;
    if (es.validation_mae < best_mae) {
      best_mae = es.validation_mae;
      result.snapshot = snapshot_now();
      result.best_epoch = epoch;
    }
    result.curve.push_back(es);
  }
  return result;
}

TrainResult train_offpolicy(const AgentConfig& config, const TrainInputs& in, Rng& rng) {
  TrainEnv env(in.cohort, in.fold->train, in.graph, in.env_config, in.param_map,
               in.lambda_tradeoff, in.c_task, &in.scaler);
  const int obs_dim = env.obs_dim();
  const int act_dim = env.act_dim();
  const double limit = in.env_config.action_limit;

  DdpgNets ddpg;
  SacNets sac;
  neural::AdamState actor_adam(1), critic_adam(1), q2_adam(1), alpha_adam(1);
  if (config.kind == AgentKind::DDPG) {
    ddpg.actor.net = neural::mlp_init(policy_layers(obs_dim, config.hidden, act_dim),
                                      rng.derive("policy_init").seed());
    ddpg.actor.limit = limit;
    ddpg.critic = neural::mlp_init(policy_layers(obs_dim + act_dim, config.hidden, 1),
                                   rng.derive("critic_init").seed());
    ddpg.actor_target = ddpg.actor;
    ddpg.critic_target = ddpg.critic;
    actor_adam = neural::AdamState(ddpg.actor.net.param_count());
    critic_adam = neural::AdamState(ddpg.critic.param_count());
  } else {
    sac.actor.net = neural::mlp_init(policy_layers(obs_dim, config.hidden, 2 * act_dim),
                                     rng.derive("policy_init").seed());
    sac.actor.limit = limit;
    sac.q1 = neural::mlp_init(policy_layers(obs_dim + act_dim, config.hidden, 1),
                              rng.derive("critic_init").seed());
    sac.q2 = neural::mlp_init(policy_layers(obs_dim + act_dim, config.hidden, 1),
                              rng.derive("critic2_init").seed());
    sac.q1_target = sac.q1;
    sac.q2_target = sac.q2;
    sac.log_alpha = std::log(std::max(config.sac_alpha, 1e-8));
    actor_adam = neural::AdamState(sac.actor.net.param_count());
    critic_adam = neural::AdamState(sac.q1.param_count());
    q2_adam = neural::AdamState(sac.q2.param_count());
    alpha_adam = neural::AdamState(1);
  }

  ReplayBuffer buffer(config.replay_capacity);
  Rng rollout_rng = rng.derive("rollout");
  Rng update_rng = rng.derive("update");

  const auto act = [&](const Vec& obs) {
    return config.kind == AgentKind::DDPG ? ddpg.actor.act(obs) : sac.actor.act_deterministic(obs);
  };
  auto snapshot_now = [&]() {
    PolicySnapshot s;
    s.kind = config.kind;
    const neural::Network& net = config.kind == AgentKind::DDPG ? ddpg.actor.net : sac.actor.net;
    s.layer_sizes = net.layer_sizes;
    s.params = net.flat_params();
    s.log_std = Vec(0);
    s.action_limit = limit;
    s.scaler = in.scaler;
    return s;
  };

  TrainResult result;
  result.snapshot = snapshot_now();
  double best_mae = std::numeric_limits<double>::infinity();
  double last_return = 0.0;
  long total_steps = 0;
  double update_budget = 0.0;
  Vec obs = env.reset(rollout_rng);
  double episode_return = 0.0;
  for (int epoch = 0; epoch < config.total_epochs; ++epoch) {
    std::vector<double> epoch_returns;
    UpdateStats stats;
    for (int i = 0; i < config.batch_size; ++i) {
      Vec action(act_dim);
      if (total_steps < config.warmup_steps) {
        for (int d = 0; d < act_dim; ++d) action(d) = rollout_rng.uniform(-limit, limit);
      } else if (config.kind == AgentKind::DDPG) {
        action = ddpg.actor.act(obs);
        for (int d = 0; d < act_dim; ++d)
          action(d) = std::clamp(action(d) + config.exploration_noise * rollout_rng.normal(),
                                 -limit, limit);
      } else {
        action = sac.actor.sample(obs, rollout_rng).action;
      }
      const auto step = env.step(action);
      buffer.push({obs, action, step.reward, step.obs, step.done});
      episode_return += step.reward;
      obs = step.obs;
      ++total_steps;
      if (step.done) {
        epoch_returns.push_back(episode_return);
        episode_return = 0.0;
        obs = env.reset(rollout_rng);
      }
      if (total_steps >= config.warmup_steps &&
          buffer.size() >= static_cast<std::size_t>(config.offpolicy_minibatch)) {
        update_budget += config.updates_per_step;
        while (update_budget >= 1.0) {
          update_budget -= 1.0;
          if (config.kind == AgentKind::DDPG) {
            stats = ddpg_update(ddpg, actor_adam, critic_adam, buffer, config, update_rng);
          } else {
            stats = sac_update(sac, actor_adam, critic_adam, q2_adam, alpha_adam, buffer, config,
                               update_rng);
          }
          if (stats.aborted) ++result.aborted_updates;
        }
      }
    }

    EpochStats es;
    es.epoch = epoch;
    es.mean_return = mean_or(epoch_returns, last_return);
    last_return = es.mean_return;
    es.validation_mae = validation_mae(act, in, in.fold->validation);
    es.update = stats;
    if (es.validation_mae < best_mae) {
      best_mae = es.validation_mae;
      result.snapshot = snapshot_now();
      result.best_epoch = epoch;
    }
    result.curve.push_back(es);
  }
  return result;
}

}  // namespace

TrainResult train(const AgentConfig& config, const TrainInputs& inputs, Rng rng) {
  config.validate();
  if (!inputs.cohort || !inputs.fold) throw std::invalid_argument("train: missing cohort or fold");
  if (!inputs.scaler.fitted) throw std::invalid_argument("train: scaler must be fitted");
  if (config.kind == AgentKind::TRPO || config.kind == AgentKind::PPO)
    return train_onpolicy(config, inputs, rng);
  return train_offpolicy(config, inputs, rng);
}

}  // namespace xrlad::agents
