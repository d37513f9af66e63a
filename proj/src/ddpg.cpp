#include <cmath>

#include "xrlad/agents.hpp"

namespace xrlad::agents {

Vec DeterministicActor::act(const Vec& obs) const {
  return limit * neural::forward(net, obs).array().tanh();
}

UpdateStats ddpg_update(DdpgNets& nets, neural::AdamState& actor_adam,
                        neural::AdamState& critic_adam, const ReplayBuffer& buffer,
                        const AgentConfig& config, Rng& rng) {
  if (buffer.size() == 0) throw std::logic_error("ddpg_update: empty replay buffer");
  UpdateStats stats;
  const auto idx = buffer.sample_indices(config.offpolicy_minibatch, rng);
  const int m = static_cast<int>(idx.size());
  const int obs_dim = nets.actor.net.input_dim();
  const int act_dim = nets.actor.net.output_dim();

  // Critic regression toward the frozen-target Bellman backup.
  neural::ForwardCache cache;
  Vec critic_grad = Vec::Zero(nets.critic.param_count());
  double q_loss = 0.0;
  for (int k = 0; k < m; ++k) {
    const Transition& tr = buffer[idx[k]];
    Vec in(obs_dim + act_dim);
    double target = tr.reward;
    if (!tr.done) {
      in.head(obs_dim) = tr.next_obs;
      in.tail(act_dim) = nets.actor_target.act(tr.next_obs);
      target += config.gamma_disc * neural::forward(nets.critic_target, in)(0);
    }
    in.head(obs_dim) = tr.obs;
    in.tail(act_dim) = tr.action;
    const double q = neural::forward(nets.critic, in, &cache)(0);
    const double err = q - target;
    q_loss += err * err;
    Vec dy(1);
    dy(0) = 2.0 * err / m;
    critic_grad += neural::backward(nets.critic, cache, dy).flat();
  }
  if (!critic_grad.allFinite()) {
    stats.aborted = true;
    return stats;
  }
  Vec critic_params = nets.critic.flat_params();
  neural::adam_step(critic_params, critic_grad, critic_adam, config.lr_critic);
  nets.critic.set_flat_params(critic_params);
  stats.q_loss = q_loss / m;

  // Actor ascends Q(s, mu(s)) through the critic's action-input gradient.
  neural::ForwardCache actor_cache;
  Vec actor_grad = Vec::Zero(nets.actor.net.param_count());
  double mean_q = 0.0;
  Vec dy(1);
  dy(0) = 1.0;
  for (int k = 0; k < m; ++k) {
    const Transition& tr = buffer[idx[k]];
    const Vec raw = neural::forward(nets.actor.net, tr.obs, &actor_cache);
    const Vec tanh_raw = raw.array().tanh();
    Vec in(obs_dim + act_dim);
    in.head(obs_dim) = tr.obs;
    in.tail(act_dim) = nets.actor.limit * tanh_raw;
    const double q = neural::forward(nets.critic, in, &cache)(0);
    mean_q += q;
    const Vec dq_da = neural::backward(nets.critic, cache, dy).d_input.tail(act_dim);
    const Vec d_raw =
        dq_da.cwiseProduct(nets.actor.limit * (1.0 - tanh_raw.array().square()).matrix());
    actor_grad += neural::backward(nets.actor.net, actor_cache, d_raw).flat();
  }
  actor_grad = -actor_grad / m;  // ascend
  if (!actor_grad.allFinite()) {
    stats.aborted = true;
    return stats;
  }
  Vec actor_params = nets.actor.net.flat_params();
  neural::adam_step(actor_params, actor_grad, actor_adam, config.lr_policy);
  nets.actor.net.set_flat_params(actor_params);
  stats.policy_loss = -mean_q / m;

  Vec at = nets.actor_target.net.flat_params();
  polyak_update(at, nets.actor.net.flat_params(), config.tau_polyak);
  nets.actor_target.net.set_flat_params(at);
  Vec ct = nets.critic_target.flat_params();
  polyak_update(ct, nets.critic.flat_params(), config.tau_polyak);
  nets.critic_target.set_flat_params(ct);

  stats.accepted = true;
  return stats;
}

}  // namespace xrlad::agents
