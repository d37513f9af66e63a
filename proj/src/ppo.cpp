#include <cmath>
#include <numeric>

#include "xrlad/agents.hpp"

namespace xrlad::agents {

UpdateStats ppo_update(neural::GaussianPolicy& policy, neural::AdamState& policy_adam,
                       neural::Network& value_net, neural::AdamState& value_adam,
                       const RolloutBatch& batch, const AgentConfig& config, Rng& rng) {
  UpdateStats stats;
  const int n = batch.size();
  const int act_dim = policy.act_dim();
  const int mean_params = policy.mean_net.param_count();
  const double eps = config.clip_eps;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  neural::ForwardCache cache;
  long clipped = 0, seen = 0;
  double last_loss = 0.0;
  for (int pass = 0; pass < config.epochs_per_update; ++pass) {
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_index(static_cast<std::size_t>(i) + 1)]);
    for (int start = 0; start < n; start += config.minibatch) {
      const int count = std::min(config.minibatch, n - start);
      Vec g_mean = Vec::Zero(mean_params);
      Vec g_logstd = Vec::Zero(act_dim);
      double loss = 0.0;
      const Vec sigma = policy.std_dev();
      for (int k = 0; k < count; ++k) {
        const int t = order[start + k];
        const Vec obs = batch.obs.row(t).transpose();
        const Vec a = batch.actions.row(t).transpose();
        const double adv = batch.advantages(t);
        const Vec mu = neural::forward(policy.mean_net, obs, &cache);
        const double lp = neural::gaussian_logprob(mu, policy.log_std, a);
        const double ratio = std::exp(lp - batch.logprobs(t));
        const bool outside = (ratio > 1.0 + eps && adv > 0.0) || (ratio < 1.0 - eps && adv < 0.0);
        loss -= std::min(ratio * adv,
                         std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv);
        ++seen;
        if (outside) {
          // Clipped: this sample contributes no policy gradient.
          ++clipped;
          continue;
        }
        Vec dmu(act_dim);
        for (int d = 0; d < act_dim; ++d) {
          const double z = (a(d) - mu(d)) / sigma(d);
          dmu(d) = ratio * adv * z / sigma(d);
          g_logstd(d) += ratio * adv * (z * z - 1.0);
        }
        g_mean += neural::backward(policy.mean_net, cache, dmu).flat();
      }
      // Ascend surrogate + entropy bonus; the diagonal-Gaussian entropy only
      // depends on log_std, contributing a constant gradient of 1 per dim.
      Vec grad(mean_params + act_dim);
      grad.head(mean_params) = -g_mean / count;
      grad.tail(act_dim) = -(g_logstd / count).array() - config.entropy_coef;
      if (!grad.allFinite()) {
        stats.aborted = true;
        return stats;
      }
      Vec params = policy.flat_params();
      neural::adam_step(params, grad, policy_adam, config.lr_policy);
      policy.set_flat_params(params);
      last_loss = loss / count;
    }
  }
  stats.policy_loss = last_loss;
  stats.clip_fraction = seen > 0 ? static_cast<double>(clipped) / seen : 0.0;
  stats.accepted = true;

  // Approximate KL(new || old) diagnostic: mean(ratio - 1 - log ratio).
  double approx_kl = 0.0;
  for (int t = 0; t < n; ++t) {
    const Vec mu = policy.mean(batch.obs.row(t).transpose());
    const double lp = neural::gaussian_logprob(mu, policy.log_std, batch.actions.row(t).transpose());
    const double log_ratio = lp - batch.logprobs(t);
    approx_kl += std::exp(log_ratio) - 1.0 - log_ratio;
  }
  stats.kl = approx_kl / n;

  double value_loss = 0.0;
  for (int epoch = 0; epoch < config.value_train_epochs; ++epoch) {
    Vec grad = Vec::Zero(value_net.param_count());
    value_loss = 0.0;
    for (int t = 0; t < n; ++t) {
      const Vec obs = batch.obs.row(t).transpose();
      const double v = neural::forward(value_net, obs, &cache)(0);
      const double err = v - batch.returns(t);
      value_loss += err * err;
      Vec dy(1);
      dy(0) = 2.0 * err / n;
      grad += neural::backward(value_net, cache, dy).flat();
    }
    Vec params = value_net.flat_params();
    neural::adam_step(params, grad, value_adam, config.lr_value);
    value_net.set_flat_params(params);
  }
  stats.value_loss = value_loss / n;
  return stats;
}

}  // namespace xrlad::agents
