#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "xrlad/rng.hpp"

namespace xrlad::neural {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Fixed-topology multilayer perceptron: affine layers with tanh hidden
/// activations and an identity output. All math is 64-bit; the networks are
/// tiny and reproducibility matters more than speed.
struct Network {
  std::vector<int> layer_sizes;
  std::vector<Mat> weights;  // weights[l]: (out x in)
  std::vector<Vec> biases;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int param_count() const;
  Vec flat_params() const;
  void set_flat_params(const Vec& flat);
};

/// Scaled-uniform initialization (bound 1/sqrt(n_in)), zero biases.
Network mlp_init(const std::vector<int>& layer_sizes, std::uint64_t seed);

struct ForwardCache {
  Vec input;
  std::vector<Vec> pre;   // pre-activation per layer
  std::vector<Vec> post;  // post-activation per layer (post.back() is the output)
};

Vec forward(const Network& net, const Vec& x, ForwardCache* cache = nullptr);

/// Batched forward over column-major inputs; used by the explanation solver.
Mat forward_batch(const Network& net, const Mat& xs);

struct Gradients {
  std::vector<Mat> d_weights;
  std::vector<Vec> d_biases;
  Vec d_input;

  Vec flat() const;
};

/// Exact reverse-mode gradients of dot(y, dy) with respect to every parameter
/// and the input, for the forward pass captured in `cache`.
Gradients backward(const Network& net, const ForwardCache& cache, const Vec& dy);

/// Central-difference check of backward() over every parameter; returns the
/// worst relative error. The scalar objective is dot(y, 1).
double finite_diff_check(const Network& net, const Vec& x, double eps);

struct AdamState {
  Vec m;
  Vec v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(int n) : m(Vec::Zero(n)), v(Vec::Zero(n)) {}
};

/// Bias-corrected Adam update in place. Throws on non-finite gradients.
void adam_step(Vec& params, const Vec& grads, AdamState& state, double lr);

/// Diagonal-Gaussian policy head with a state-independent log standard
/// deviation, used by the on-policy agents.
struct GaussianPolicy {
  Network mean_net;
  Vec log_std;

  int obs_dim() const { return mean_net.input_dim(); }
  int act_dim() const { return mean_net.output_dim(); }
  Vec mean(const Vec& obs) const { return forward(mean_net, obs); }
  Vec std_dev() const { return log_std.array().exp(); }
  int param_count() const { return mean_net.param_count() + static_cast<int>(log_std.size()); }
  Vec flat_params() const;
  void set_flat_params(const Vec& flat);
};

GaussianPolicy make_gaussian_policy(const std::vector<int>& layer_sizes, std::uint64_t seed,
                                    double initial_std = 1.0);

/// a = mu(obs) + sigma .* xi with xi standard normal; returns the sample and
/// its diagonal-Gaussian log density.
std::pair<Vec, double> gaussian_sample(const GaussianPolicy& policy, const Vec& obs, Rng& rng);

double gaussian_logprob(const Vec& mean, const Vec& log_std, const Vec& action);

/// KL(N(mu1, diag sigma1^2) || N(mu2, diag sigma2^2)).
double diag_gauss_kl(const Vec& mu1, const Vec& sigma1, const Vec& mu2, const Vec& sigma2);

struct SquashedSample {
  Vec action;      // limit * tanh(u)
  Vec u;           // pre-squash Gaussian sample
  double logprob;  // density of `action` including the change of variables
};

/// a = limit * tanh(mu + sigma .* xi); the log density subtracts the tanh
/// change-of-variables correction with the limit folded in.
SquashedSample squashed_gaussian_sample(const Vec& mean, const Vec& log_std, Rng& rng,
                                        double limit);

/// Log density of the squashed-Gaussian sample given its pre-squash value u.
double squashed_logprob_from_u(const Vec& mean, const Vec& log_std, const Vec& u, double limit);

/// Log density evaluated at an action inside (-limit, limit), via atanh.
double squashed_gaussian_logprob(const Vec& mean, const Vec& log_std, const Vec& action,
                                 double limit);

}  // namespace xrlad::neural
