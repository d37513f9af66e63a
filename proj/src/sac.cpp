#include <cmath>

#include "xrlad/agents.hpp"

namespace xrlad::agents {

namespace {

constexpr double kLogStdMin = -20.0;
constexpr double kLogStdMax = 2.0;

}  // namespace

std::pair<Vec, Vec> SquashedActor::mean_logstd(const Vec& obs) const {
  const Vec out = neural::forward(net, obs);
  const int a = act_dim();
  Vec mu = out.head(a);
  Vec ls = out.tail(a).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  return {mu, ls};
}

Vec SquashedActor::act_deterministic(const Vec& obs) const {
  const auto [mu, ls] = mean_logstd(obs);
  return limit * mu.array().tanh();
}

neural::SquashedSample SquashedActor::sample(const Vec& obs, Rng& rng) const {
  const auto [mu, ls] = mean_logstd(obs);
  return neural::squashed_gaussian_sample(mu, ls, rng, limit);
}

UpdateStats sac_update(SacNets& nets, neural::AdamState& actor_adam, neural::AdamState& q1_adam,
                       neural::AdamState& q2_adam, neural::AdamState& alpha_adam,
                       const ReplayBuffer& buffer, const AgentConfig& config, Rng& rng) {
  if (buffer.size() == 0) throw std::logic_error("sac_update: empty replay buffer");
  UpdateStats stats;
  const auto idx = buffer.sample_indices(config.offpolicy_minibatch, rng);
  const int m = static_cast<int>(idx.size());
  const int obs_dim = nets.actor.net.input_dim();
  const int act_dim = nets.actor.act_dim();
  const double alpha = config.sac_auto_alpha ? std::exp(nets.log_alpha) : config.sac_alpha;
  const double target_entropy = -static_cast<double>(act_dim);

  // Bellman targets from the twin frozen critics with a fresh squashed sample.
  Vec targets(m);
  for (int k = 0; k < m; ++k) {
    const Transition& tr = buffer[idx[k]];
    double y = tr.reward;
    if (!tr.done) {
      const auto next = nets.actor.sample(tr.next_obs, rng);
      Vec in(obs_dim + act_dim);
      in.head(obs_dim) = tr.next_obs;
      in.tail(act_dim) = next.action;
      const double q1 = neural::forward(nets.q1_target, in)(0);
      const double q2 = neural::forward(nets.q2_target, in)(0);
      y += config.gamma_disc * (std::min(q1, q2) - alpha * next.logprob);
    }
    targets(k) = y;
  }

  neural::ForwardCache cache;
  Vec dy(1);
  auto critic_pass = [&](neural::Network& q, neural::AdamState& adam) {
    Vec grad = Vec::Zero(q.param_count());
    double loss = 0.0;
    for (int k = 0; k < m; ++k) {
      const Transition& tr = buffer[idx[k]];
      Vec in(obs_dim + act_dim);
      in.head(obs_dim) = tr.obs;
      in.tail(act_dim) = tr.action;
      const double value = neural::forward(q, in, &cache)(0);
      const double err = value - targets(k);
      loss += err * err;
      dy(0) = 2.0 * err / m;
      grad += neural::backward(q, cache, dy).flat();
    }
    Vec params = q.flat_params();
    neural::adam_step(params, grad, adam, config.lr_critic);
    q.set_flat_params(params);
    return loss / m;
  };
  stats.q_loss = 0.5 * (critic_pass(nets.q1, q1_adam) + critic_pass(nets.q2, q2_adam));

  // Policy: reparameterized ascent of min_j Q_j(s, a_theta) - alpha*log pi.
  neural::ForwardCache actor_cache;
  Vec actor_grad = Vec::Zero(nets.actor.net.param_count());
  double mean_logprob = 0.0;
  double mean_obj = 0.0;
  dy(0) = 1.0;
  const double limit = nets.actor.limit;
  for (int k = 0; k < m; ++k) {
    const Transition& tr = buffer[idx[k]];
    const Vec raw = neural::forward(nets.actor.net, tr.obs, &actor_cache);
    const Vec mu = raw.head(act_dim);
    const Vec raw_ls = raw.tail(act_dim);
    const Vec ls = raw_ls.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
    const Vec sigma = ls.array().exp();
    Vec xi(act_dim);
    for (int i = 0; i < act_dim; ++i) xi(i) = rng.normal();
    const Vec u = mu + sigma.cwiseProduct(xi);
    const Vec t = u.array().tanh();
    const double logprob = neural::squashed_logprob_from_u(mu, ls, u, limit);
    mean_logprob += logprob;

    Vec in(obs_dim + act_dim);
    in.head(obs_dim) = tr.obs;
    in.tail(act_dim) = limit * t;
    neural::ForwardCache q1_cache, q2_cache;
    const double q1 = neural::forward(nets.q1, in, &q1_cache)(0);
    const double q2 = neural::forward(nets.q2, in, &q2_cache)(0);
    const bool use_q1 = q1 <= q2;
    mean_obj += std::min(q1, q2) - alpha * logprob;
    const Vec dq_da = use_q1 ? neural::backward(nets.q1, q1_cache, dy).d_input.tail(act_dim)
                             : neural::backward(nets.q2, q2_cache, dy).d_input.tail(act_dim);

    Vec d_out(2 * act_dim);
    for (int i = 0; i < act_dim; ++i) {
      const double da_du = limit * (1.0 - t(i) * t(i));
      const double d_mu = dq_da(i) * da_du - alpha * 2.0 * t(i);
      const double du_dls = sigma(i) * xi(i);
      double d_ls = dq_da(i) * da_du * du_dls - alpha * (-1.0 + 2.0 * t(i) * du_dls);
      if (raw_ls(i) < kLogStdMin || raw_ls(i) > kLogStdMax) d_ls = 0.0;  // clamp kills the gradient
      d_out(i) = d_mu;
      d_out(act_dim + i) = d_ls;
    }
    actor_grad += neural::backward(nets.actor.net, actor_cache, d_out).flat();
  }
  actor_grad = -actor_grad / m;  // ascend
  if (!actor_grad.allFinite()) {
    stats.aborted = true;
    return stats;
  }
  Vec actor_params = nets.actor.net.flat_params();
  neural::adam_step(actor_params, actor_grad, actor_adam, config.lr_policy);
  nets.actor.net.set_flat_params(actor_params);
  stats.policy_loss = -mean_obj / m;
  mean_logprob /= m;

  if (config.sac_auto_alpha) {
    // J(alpha) = -alpha * mean(log pi + target entropy), optimized in log space.
    Vec la(1);
    la(0) = nets.log_alpha;
    Vec grad(1);
    grad(0) = -std::exp(nets.log_alpha) * (mean_logprob + target_entropy);
    neural::adam_step(la, grad, alpha_adam, config.lr_alpha);
    nets.log_alpha = la(0);
  }
  stats.alpha = config.sac_auto_alpha ? std::exp(nets.log_alpha) : config.sac_alpha;

  Vec t1 = nets.q1_target.flat_params();
  polyak_update(t1, nets.q1.flat_params(), config.tau_polyak);
  nets.q1_target.set_flat_params(t1);
  Vec t2 = nets.q2_target.flat_params();
  polyak_update(t2, nets.q2.flat_params(), config.tau_polyak);
  nets.q2_target.set_flat_params(t2);

  stats.accepted = true;
  return stats;
}

}  // namespace xrlad::agents
