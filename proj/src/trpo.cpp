#include <cmath>
#include <stdexcept>

#include "xrlad/agents.hpp"

namespace xrlad::agents {

TrpoWorkspace build_trpo_workspace(const neural::GaussianPolicy& policy,
                                   const RolloutBatch& batch) {
  const int n = batch.size();
  const int act_dim = policy.act_dim();
  const int mean_params = policy.mean_net.param_count();
  TrpoWorkspace ws;
  ws.mu_old = Mat(n, act_dim);
  ws.log_std_old = policy.log_std;
  ws.jacobians.reserve(n);
  neural::ForwardCache cache;
  for (int t = 0; t < n; ++t) {
    const Vec obs = batch.obs.row(t).transpose();
    ws.mu_old.row(t) = neural::forward(policy.mean_net, obs, &cache).transpose();
    Mat jac(act_dim, mean_params);
    for (int a = 0; a < act_dim; ++a) {
      Vec dy = Vec::Zero(act_dim);
      dy(a) = 1.0;
      jac.row(a) = neural::backward(policy.mean_net, cache, dy).flat().transpose();
    }
    ws.jacobians.push_back(std::move(jac));
  }
  return ws;
}

namespace {

/// Surrogate objective mean[exp(lp_new - lp_old) * A] at the current policy.
double surrogate(const neural::GaussianPolicy& policy, const RolloutBatch& batch) {
  double total = 0.0;
  const int n = batch.size();
  for (int t = 0; t < n; ++t) {
    const Vec mu = policy.mean(batch.obs.row(t).transpose());
    const double lp = neural::gaussian_logprob(mu, policy.log_std, batch.actions.row(t).transpose());
    total += std::exp(lp - batch.logprobs(t)) * batch.advantages(t);
  }
  return total / n;
}

/// Mean KL(new || old) over batch states.
double mean_kl(const neural::GaussianPolicy& policy, const RolloutBatch& batch,
               const TrpoWorkspace& ws) {
  const Vec sigma_new = policy.std_dev();
  const Vec sigma_old = ws.log_std_old.array().exp();
  double total = 0.0;
  const int n = batch.size();
  for (int t = 0; t < n; ++t) {
    const Vec mu = policy.mean(batch.obs.row(t).transpose());
    total += neural::diag_gauss_kl(mu, sigma_new, ws.mu_old.row(t).transpose(), sigma_old);
  }
  return total / n;
}

/// Policy gradient of the surrogate at the old parameters (ratio = 1 there).
Vec surrogate_gradient(const neural::GaussianPolicy& policy, const RolloutBatch& batch,
                       const TrpoWorkspace& ws) {
  const int n = batch.size();
  const int act_dim = policy.act_dim();
  const int mean_params = policy.mean_net.param_count();
  const Vec sigma = policy.std_dev();
  Vec g_mean = Vec::Zero(mean_params);
  Vec g_logstd = Vec::Zero(act_dim);
  for (int t = 0; t < n; ++t) {
    const Vec mu = ws.mu_old.row(t).transpose();
    const Vec a = batch.actions.row(t).transpose();
    const double adv = batch.advantages(t);
    Vec dmu(act_dim);
    for (int i = 0; i < act_dim; ++i) {
      const double z = (a(i) - mu(i)) / sigma(i);
      dmu(i) = adv * z / sigma(i);
      g_logstd(i) += adv * (z * z - 1.0);
    }
    g_mean += ws.jacobians[t].transpose() * dmu;
  }
  Vec g(mean_params + act_dim);
  g.head(mean_params) = g_mean / n;
  g.tail(act_dim) = g_logstd / n;
  return g;
}

}  // namespace

Vec fisher_vector_product(const neural::GaussianPolicy& policy, const TrpoWorkspace& ws,
                          const Vec& v, double damping) {
  const int act_dim = policy.act_dim();
  const int mean_params = policy.mean_net.param_count();
  if (v.size() != mean_params + act_dim)
    throw std::invalid_argument("fisher_vector_product: dimension mismatch");
  const Vec v_mean = v.head(mean_params);
  const Vec inv_var = ws.log_std_old.array().exp().square().inverse();

  Vec out_mean = Vec::Zero(mean_params);
  for (const Mat& jac : ws.jacobians) {
    const Vec jv = jac * v_mean;
    out_mean += jac.transpose() * jv.cwiseProduct(inv_var);
  }
  Vec out(v.size());
  out.head(mean_params) = out_mean / static_cast<double>(ws.jacobians.size());
  // KL Hessian for a state-independent log-std block is 2*I at the expansion point.
  out.tail(act_dim) = 2.0 * v.tail(act_dim);
  return out + damping * v;
}

Vec kl_gradient(const neural::GaussianPolicy& policy, const RolloutBatch& batch,
                const TrpoWorkspace& ws) {
  const int n = batch.size();
  const int act_dim = policy.act_dim();
  const int mean_params = policy.mean_net.param_count();
  const Vec sigma_old_sq = ws.log_std_old.array().exp().square();
  const Vec sigma_new_sq = policy.log_std.array().exp().square();

  Vec g_mean = Vec::Zero(mean_params);
  Vec g_logstd = Vec::Zero(act_dim);
  neural::ForwardCache cache;
  for (int t = 0; t < n; ++t) {
    const Vec obs = batch.obs.row(t).transpose();
    const Vec mu = neural::forward(policy.mean_net, obs, &cache);
    Vec dmu(act_dim);
    for (int i = 0; i < act_dim; ++i)
      dmu(i) = (mu(i) - ws.mu_old(t, i)) / sigma_old_sq(i);
    g_mean += neural::backward(policy.mean_net, cache, dmu).flat();
  }
  for (int i = 0; i < act_dim; ++i)
    g_logstd(i) = -1.0 + sigma_new_sq(i) / sigma_old_sq(i);

  Vec g(mean_params + act_dim);
  g.head(mean_params) = g_mean / n;
  g.tail(act_dim) = g_logstd;
  return g;
}

UpdateStats trpo_update(neural::GaussianPolicy& policy, neural::Network& value_net,
                        neural::AdamState& value_adam, const RolloutBatch& batch,
                        const AgentConfig& config) {
  UpdateStats stats;
  const TrpoWorkspace ws = build_trpo_workspace(policy, batch);
  const Vec g = surrogate_gradient(policy, batch, ws);
  if (!g.allFinite()) {
    stats.aborted = true;
    return stats;
  }

  // lr_policy == 0 disables the trust-region step entirely; the step size
  // itself comes from kl_bound, not from a learning rate.
  if (config.lr_policy > 0.0 && g.norm() > 1e-12) {
    const auto fvp = [&](const Vec& v) {
      return fisher_vector_product(policy, ws, v, config.cg_damping);
    };
    const Vec dir = conjugate_gradient(fvp, g, config.cg_iters, 1e-10, &stats.cg_residual);
    const double dir_h_dir = dir.dot(fvp(dir));
    if (dir_h_dir > 0.0) {
      const Vec full_step = std::sqrt(2.0 * config.kl_bound / dir_h_dir) * dir;
      const Vec old_params = policy.flat_params();
      const double loss_old = surrogate(policy, batch);

      double scale = 1.0;
      for (int j = 0; j < config.backtrack_steps; ++j, scale *= config.backtrack_coef) {
        policy.set_flat_params(old_params + scale * full_step);
        const double loss_new = surrogate(policy, batch);
        const double kl = mean_kl(policy, batch, ws);
        if (std::isfinite(loss_new) && std::isfinite(kl) && loss_new > loss_old &&
            kl <= config.kl_bound) {
          stats.accepted = true;
          stats.kl = kl;
          stats.surrogate_improvement = loss_new - loss_old;
          stats.policy_loss = -loss_new;
          stats.line_search_steps = j + 1;
          break;
        }
      }
      if (!stats.accepted) policy.set_flat_params(old_params);
    }
  }

  // Value function regression on the empirical returns.
  double value_loss = 0.0;
  const int n = batch.size();
  neural::ForwardCache cache;
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
