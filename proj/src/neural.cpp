#include "xrlad/neural.hpp"

#include <cmath>
#include <stdexcept>

namespace xrlad::neural {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// log(1 - tanh(u)^2), stable for large |u|.
double log_one_minus_tanh_sq(double u) { return 2.0 * (std::log(2.0) - u - softplus(-2.0 * u)); }

}  // namespace

int Network::param_count() const {
  int n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    n += static_cast<int>(weights[l].size() + biases[l].size());
  return n;
}

Vec Network::flat_params() const {
  Vec flat(param_count());
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    flat.segment(k, weights[l].size()) = Eigen::Map<const Vec>(weights[l].data(), weights[l].size());
    k += weights[l].size();
    flat.segment(k, biases[l].size()) = biases[l];
    k += biases[l].size();
  }
  return flat;
}

void Network::set_flat_params(const Vec& flat) {
  if (flat.size() != param_count())
    throw std::invalid_argument("Network: flat parameter size mismatch");
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Eigen::Map<Vec>(weights[l].data(), weights[l].size()) = flat.segment(k, weights[l].size());
    k += weights[l].size();
    biases[l] = flat.segment(k, biases[l].size());
    k += biases[l].size();
  }
}

Network mlp_init(const std::vector<int>& layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2)
    throw std::invalid_argument("mlp_init: need at least an input and an output layer");
  for (int s : layer_sizes)
    if (s <= 0) throw std::invalid_argument("mlp_init: zero-width layer");
  Network net;
  net.layer_sizes = layer_sizes;
  Rng rng = Rng(seed).derive("mlp_init");
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int n_in = layer_sizes[l], n_out = layer_sizes[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(n_in));
    Mat w(n_out, n_in);
    for (int i = 0; i < n_out; ++i)
      for (int j = 0; j < n_in; ++j) w(i, j) = rng.uniform(-bound, bound);
    net.weights.push_back(std::move(w));
    net.biases.push_back(Vec::Zero(n_out));
  }
  return net;
}

Vec forward(const Network& net, const Vec& x, ForwardCache* cache) {
  if (x.size() != net.input_dim()) throw std::invalid_argument("forward: input dimension mismatch");
  if (cache) {
    cache->input = x;
    cache->pre.clear();
    cache->post.clear();
  }
  Vec h = x;
  const std::size_t L = net.weights.size();
  for (std::size_t l = 0; l < L; ++l) {
    Vec z = net.weights[l] * h + net.biases[l];
    if (cache) cache->pre.push_back(z);
    h = (l + 1 < L) ? Vec(z.array().tanh()) : z;
    if (cache) cache->post.push_back(h);
  }
  return h;
}

Mat forward_batch(const Network& net, const Mat& xs) {
  if (xs.rows() != net.input_dim())
    throw std::invalid_argument("forward_batch: input dimension mismatch");
  Mat h = xs;
  const std::size_t L = net.weights.size();
  for (std::size_t l = 0; l < L; ++l) {
    Mat z = (net.weights[l] * h).colwise() + net.biases[l];
    h = (l + 1 < L) ? Mat(z.array().tanh()) : z;
  }
  return h;
}

Vec Gradients::flat() const {
  int n = 0;
  for (std::size_t l = 0; l < d_weights.size(); ++l)
    n += static_cast<int>(d_weights[l].size() + d_biases[l].size());
  Vec flat(n);
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < d_weights.size(); ++l) {
    flat.segment(k, d_weights[l].size()) =
        Eigen::Map<const Vec>(d_weights[l].data(), d_weights[l].size());
    k += d_weights[l].size();
    flat.segment(k, d_biases[l].size()) = d_biases[l];
    k += d_biases[l].size();
  }
  return flat;
}

Gradients backward(const Network& net, const ForwardCache& cache, const Vec& dy) {
  const std::size_t L = net.weights.size();
  if (cache.pre.size() != L || cache.post.size() != L)
    throw std::invalid_argument("backward: cache does not match the network");
  if (dy.size() != net.output_dim())
    throw std::invalid_argument("backward: output gradient dimension mismatch");

  Gradients g;
  g.d_weights.resize(L);
  g.d_biases.resize(L);
  Vec delta = dy;  // gradient w.r.t. the post-activation of the current layer
  for (std::size_t li = L; li-- > 0;) {
    if (li + 1 < L) delta = delta.cwiseProduct(Vec(1.0 - cache.post[li].array().square()));
    const Vec& layer_input = (li == 0) ? cache.input : cache.post[li - 1];
    g.d_weights[li] = delta * layer_input.transpose();
    g.d_biases[li] = delta;
    delta = net.weights[li].transpose() * delta;
  }
  g.d_input = delta;
  return g;
}

double finite_diff_check(const Network& net, const Vec& x, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be positive");
  const Vec dy = Vec::Ones(net.output_dim());
  ForwardCache cache;
  forward(net, x, &cache);
  const Vec analytic = backward(net, cache, dy).flat();

  Network probe = net;
  Vec params = net.flat_params();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double orig = params(i);
    params(i) = orig + eps;
    probe.set_flat_params(params);
    const double f_plus = forward(probe, x).sum();
    params(i) = orig - eps;
    probe.set_flat_params(params);
    const double f_minus = forward(probe, x).sum();
    params(i) = orig;
    const double fd = (f_plus - f_minus) / (2.0 * eps);
    const double rel = std::abs(fd - analytic(i)) / std::max(std::abs(analytic(i)), 1e-6);
    worst = std::max(worst, rel);
  }
  return worst;
}

void adam_step(Vec& params, const Vec& grads, AdamState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  if (!grads.allFinite()) throw std::runtime_error("adam_step: non-finite gradient");
  state.step += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const Vec m_hat = state.m / bc1;
  const Vec v_hat = state.v / bc2;
  params -= lr * (m_hat.array() / (v_hat.array().sqrt() + state.eps)).matrix();
}

Vec GaussianPolicy::flat_params() const {
  Vec flat(param_count());
  flat.head(mean_net.param_count()) = mean_net.flat_params();
  flat.tail(log_std.size()) = log_std;
  return flat;
}

void GaussianPolicy::set_flat_params(const Vec& flat) {
  if (flat.size() != param_count())
    throw std::invalid_argument("GaussianPolicy: flat parameter size mismatch");
  mean_net.set_flat_params(flat.head(mean_net.param_count()));
  log_std = flat.tail(log_std.size());
}

GaussianPolicy make_gaussian_policy(const std::vector<int>& layer_sizes, std::uint64_t seed,
                                    double initial_std) {
  GaussianPolicy p;
  p.mean_net = mlp_init(layer_sizes, seed);
  p.log_std = Vec::Constant(layer_sizes.back(), std::log(initial_std));
  return p;
}

std::pair<Vec, double> gaussian_sample(const GaussianPolicy& policy, const Vec& obs, Rng& rng) {
  const Vec mu = policy.mean(obs);
  const Vec sigma = policy.std_dev();
  Vec a(mu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i) a(i) = mu(i) + sigma(i) * rng.normal();
  return {a, gaussian_logprob(mu, policy.log_std, a)};
}

double gaussian_logprob(const Vec& mean, const Vec& log_std, const Vec& action) {
  double lp = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double z = (action(i) - mean(i)) / std::exp(log_std(i));
    lp += -0.5 * z * z - log_std(i) - 0.5 * kLog2Pi;
  }
  return lp;
}

double diag_gauss_kl(const Vec& mu1, const Vec& sigma1, const Vec& mu2, const Vec& sigma2) {
  if (mu1.size() != mu2.size() || sigma1.size() != sigma2.size() || mu1.size() != sigma1.size())
    throw std::invalid_argument("diag_gauss_kl: dimension mismatch");
  if ((sigma1.array() <= 0.0).any() || (sigma2.array() <= 0.0).any())
    throw std::domain_error("diag_gauss_kl: sigmas must be positive");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < mu1.size(); ++i) {
    const double v1 = sigma1(i) * sigma1(i), v2 = sigma2(i) * sigma2(i);
    const double dm = mu1(i) - mu2(i);
    kl += std::log(sigma2(i) / sigma1(i)) + (v1 + dm * dm) / (2.0 * v2) - 0.5;
  }
  return kl;
}

SquashedSample squashed_gaussian_sample(const Vec& mean, const Vec& log_std, Rng& rng,
                                        double limit) {
  SquashedSample s;
  s.u = Vec(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i)
    s.u(i) = mean(i) + std::exp(log_std(i)) * rng.normal();
  s.action = limit * s.u.array().tanh();
  s.logprob = squashed_logprob_from_u(mean, log_std, s.u, limit);
  return s;
}

double squashed_logprob_from_u(const Vec& mean, const Vec& log_std, const Vec& u, double limit) {
  if (limit <= 0.0) throw std::invalid_argument("squashed logprob: limit must be positive");
  double lp = gaussian_logprob(mean, log_std, u);
  for (Eigen::Index i = 0; i < u.size(); ++i)
    lp -= std::log(limit) + log_one_minus_tanh_sq(u(i));
  return lp;
}

double squashed_gaussian_logprob(const Vec& mean, const Vec& log_std, const Vec& action,
                                 double limit) {
  Vec u(action.size());
  for (Eigen::Index i = 0; i < action.size(); ++i) {
    const double r = std::clamp(action(i) / limit, -1.0 + 1e-15, 1.0 - 1e-15);
    u(i) = 0.5 * std::log((1.0 + r) / (1.0 - r));  // atanh
  }
  return squashed_logprob_from_u(mean, log_std, u, limit);
}

}  // namespace xrlad::neural
