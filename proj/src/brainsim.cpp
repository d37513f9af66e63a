#include "xrlad/brainsim.hpp"

#include <cmath>
#include <stdexcept>

namespace xrlad::brainsim {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

Mat laplacian(const Mat& adjacency) {
  require(adjacency.rows() == adjacency.cols(), "laplacian: adjacency must be square");
  const auto n = adjacency.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    require(adjacency(i, i) == 0.0, "laplacian: adjacency diagonal must be zero");
    for (Eigen::Index j = 0; j < n; ++j) {
      require(adjacency(i, j) >= 0.0, "laplacian: edge weights must be nonnegative");
      require(std::abs(adjacency(i, j) - adjacency(j, i)) <= 1e-12,
              "laplacian: adjacency must be symmetric");
    }
  }
  Mat H = -adjacency;
  for (Eigen::Index i = 0; i < n; ++i) H(i, i) = adjacency.row(i).sum();
  return H;
}

BrainGraph BrainGraph::from_adjacency(const Mat& adjacency) {
  BrainGraph g;
  g.adjacency = adjacency;
  g.laplacian = brainsim::laplacian(adjacency);
  g.n_regions = static_cast<int>(adjacency.rows());
  if (g.n_regions == 2) {
    g.region_names = {"HC", "PFC"};
  } else {
    for (int i = 0; i < g.n_regions; ++i) g.region_names.push_back("R" + std::to_string(i));
  }
  return g;
}

void ModelParams::validate() const {
  require(alpha1 >= 0.0 && alpha2 >= 0.0 && beta >= 0.0 && gamma_act >= 0.0,
          "ModelParams: rates must be nonnegative");
  require(c_task > 0.0, "ModelParams: c_task must be positive");
  require(lambda_tradeoff >= 0.0, "ModelParams: lambda must be nonnegative");
}

Vec diffuse_amyloid(const Vec& amyloid, const Mat& H, double beta, double dt, int substeps) {
  require(substeps >= 1, "diffuse_amyloid: substeps must be >= 1");
  require(dt > 0.0, "diffuse_amyloid: dt must be positive");
  require(H.rows() == amyloid.size(), "diffuse_amyloid: dimension mismatch");
  const double h = dt / substeps;
  Vec d = amyloid;
  for (int s = 0; s < substeps; ++s) d -= (h * beta) * (H * d);
  return d;
}

Vec closed_form_diffusion_2node(const Vec& d0, double edge_weight, double beta, double t) {
  require(d0.size() == 2, "closed_form_diffusion_2node: exactly two regions required");
  // Eigenmodes of the 2-node Laplacian: (1,1) with eigenvalue 0 and (1,-1)
  // with eigenvalue 2w. The mean is conserved; the difference decays.
  const double mean = 0.5 * (d0(0) + d0(1));
  const double decay = std::exp(-2.0 * beta * edge_weight * t);
  Vec out(2);
  out(0) = mean + (d0(0) - mean) * decay;
  out(1) = mean + (d0(1) - mean) * decay;
  return out;
}

Vec activity(const Vec& info, const Vec& size, double gamma_act) {
  require(info.size() == size.size(), "activity: dimension mismatch");
  if ((size.array() <= 0.0).any())
    throw std::domain_error("activity: degenerate state, region size must be positive");
  return gamma_act * (info.array() / size.array()).matrix();
}

double cognition(const Vec& info) { return info.sum(); }

double energetic_cost(const Vec& activity) { return activity.sum(); }

Vec update_size(const Vec& size, const Vec& amyloid, const Vec& activity, double alpha1,
                double alpha2, double dt, double floor) {
  require(dt > 0.0, "update_size: dt must be positive");
  Vec next = size - dt * (alpha1 * amyloid + alpha2 * activity);
  return next.cwiseMax(floor);
}

double reward(double cognition_now, double cost_now, const ModelParams& params, double clip) {
  const double r = -(params.lambda_tradeoff * (params.c_task - cognition_now) + cost_now);
  return std::clamp(r, -clip, clip);
}

Vec project_action(const Vec& info_prev, const Vec& delta, const ModelParams& params,
                   double limit) {
  require(info_prev.size() == delta.size(), "project_action: dimension mismatch");
  Vec candidate = info_prev + delta.cwiseMax(-limit).cwiseMin(limit);
  candidate = candidate.cwiseMax(0.0);
  const double total = candidate.sum();
  if (total > params.c_task) candidate *= params.c_task / total;
  return candidate;
}

BrainState env_reset(const Baseline& baseline, const ModelParams& params, const BrainGraph& graph,
                     const EnvConfig& config) {
  params.validate();
  require(baseline.size.size() == graph.n_regions && baseline.amyloid.size() == graph.n_regions,
          "env_reset: baseline dimensions do not match the graph");
  require((baseline.size.array() > 0.0).all(), "env_reset: baseline sizes must be positive");
  require((baseline.amyloid.array() >= 0.0).all(),
          "env_reset: baseline amyloid must be nonnegative");
  require(baseline.cognition_norm >= 0.0, "env_reset: baseline cognition must be nonnegative");

  BrainState s;
  s.year = 0;
  s.size = baseline.size;
  s.amyloid = baseline.amyloid;
  s.amyloid_total = Vec::Zero(graph.n_regions);
  if (config.uniform_info_split) {
    s.info_prev = Vec::Constant(graph.n_regions, baseline.cognition_norm / graph.n_regions);
  } else {
    s.info_prev = baseline.cognition_norm * baseline.size / baseline.size.sum();
  }
  // Baseline cognition above the demand ceiling is projected back onto it.
  const double total = s.info_prev.sum();
  if (total > params.c_task) s.info_prev *= params.c_task / total;
  return s;
}

StepOutcome env_step(const BrainState& state, const Action& action, const ModelParams& params,
                     const BrainGraph& graph, const EnvConfig& config) {
  if (state.year >= config.horizon - 1)
    throw std::logic_error("env_step: episode horizon already reached");
  require(action.delta_info.size() == graph.n_regions, "env_step: action dimension mismatch");

  const double dt = 1.0;
  StepOutcome out;
  const Vec info = project_action(state.info_prev, action.delta_info, params, config.action_limit);
  out.derived.activity = activity(info, state.size, params.gamma_act);
  out.derived.cognition = cognition(info);
  out.derived.cost = energetic_cost(out.derived.activity);
  out.reward = reward(out.derived.cognition, out.derived.cost, params, config.reward_clip);

  out.next.amyloid =
      diffuse_amyloid(state.amyloid, graph.laplacian, params.beta, dt, config.substeps_per_year);
  out.next.size = update_size(state.size, state.amyloid, out.derived.activity, params.alpha1,
                              params.alpha2, dt, config.size_floor);
  out.next.amyloid_total = state.amyloid_total + 0.5 * dt * (state.amyloid + out.next.amyloid);
  out.next.info_prev = info;
  out.next.year = state.year + 1;

  out.degenerate = (out.next.size.array() <= config.size_floor).all();
  out.done = out.degenerate || out.next.year == config.horizon - 1;
  return out;
}

Vec raw_observation(const BrainState& state) {
  const auto n = state.size.size();
  Vec f(3 * n);
  f.segment(0, n) = state.size;
  f.segment(n, n) = state.amyloid;
  f.segment(2 * n, n) = state.info_prev;
  return f;
}

Vec ObservationScaler::apply(const Vec& features) const {
  if (!fitted) throw std::logic_error("ObservationScaler: apply called before fitting");
  if (features.size() != min_bound.size())
    throw std::invalid_argument("ObservationScaler: feature dimension mismatch");
  Vec scaled = (features - min_bound).array() / (max_bound - min_bound).array();
  return scaled.cwiseMax(0.0).cwiseMin(1.0);
}

Vec ObservationScaler::invert(const Vec& scaled) const {
  if (!fitted) throw std::logic_error("ObservationScaler: invert called before fitting");
  return min_bound.array() + scaled.array() * (max_bound - min_bound).array();
}

Vec observe(const BrainState& state, const ObservationScaler& scaler) {
  return scaler.apply(raw_observation(state));
}

std::vector<std::string> feature_names(const BrainGraph& graph) {
  std::vector<std::string> names;
  for (const auto& r : graph.region_names) names.push_back("X_" + r);
  for (const auto& r : graph.region_names) names.push_back("D_" + r);
  for (const auto& r : graph.region_names) names.push_back("I_" + r + "_prev");
  return names;
}

std::vector<std::string> action_names(const BrainGraph& graph) {
  std::vector<std::string> names;
  for (const auto& r : graph.region_names) names.push_back("dI_" + r);
  return names;
}

Environment::Environment(Baseline baseline, ModelParams params, BrainGraph graph, EnvConfig config)
    : baseline_(std::move(baseline)),
      params_(params),
      graph_(std::move(graph)),
      config_(config) {
  state_ = env_reset(baseline_, params_, graph_, config_);
}

const BrainState& Environment::reset() {
  state_ = env_reset(baseline_, params_, graph_, config_);
  done_ = false;
  return state_;
}

StepOutcome Environment::step(const Action& action) {
  if (done_) throw std::logic_error("Environment: step after episode end");
  StepOutcome out = env_step(state_, action, params_, graph_, config_);
  state_ = out.next;
  done_ = out.done;
  return out;
}

}  // namespace xrlad::brainsim
