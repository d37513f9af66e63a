#include "xrlad/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace xrlad::explain {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double binom(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r *= static_cast<double>(n - i + 1) / i;
  return r;
}

/// Payoff of every requested coalition: absent features are imputed per
/// background row and the model outputs averaged. One batched model call.
Mat coalition_payoffs(const ModelFn& model, const Vec& x, const BackgroundSet& background,
                      const std::vector<std::uint32_t>& masks) {
  const int n_feat = background.n_features();
  const int n_rows = background.n_rows();
  Mat inputs(n_feat, static_cast<Eigen::Index>(masks.size()) * n_rows);
  for (std::size_t m = 0; m < masks.size(); ++m) {
    for (int r = 0; r < n_rows; ++r) {
      Vec col = background.rows.row(r).transpose();
      for (int f = 0; f < n_feat; ++f)
        if (masks[m] & (1u << f)) col(f) = x(f);
      inputs.col(static_cast<Eigen::Index>(m) * n_rows + r) = col;
    }
  }
  const Mat outputs = model(inputs);
  Mat p(outputs.rows(), static_cast<Eigen::Index>(masks.size()));
  for (std::size_t m = 0; m < masks.size(); ++m)
    p.col(static_cast<Eigen::Index>(m)) =
        outputs.middleCols(static_cast<Eigen::Index>(m) * n_rows, n_rows).rowwise().mean();
  return p;  // n_outputs x n_masks
}

struct WeightedCoalitions {
  std::vector<std::uint32_t> masks;  // proper non-empty coalitions
  std::vector<double> weights;
};

WeightedCoalitions enumerate_coalitions(int n_feat) {
  WeightedCoalitions wc;
  const std::uint32_t full = (1u << n_feat) - 1u;
  for (std::uint32_t m = 1; m < full; ++m) {
    wc.masks.push_back(m);
    wc.weights.push_back(shapley_kernel_weight(n_feat, __builtin_popcount(m)));
  }
  return wc;
}

WeightedCoalitions sample_coalitions(int n_feat, int n_samples, Rng& rng) {
  // Sample sizes proportionally to the total kernel mass per size, then a
  // uniform subset of that size. Duplicates accumulate weight.
  std::vector<double> size_mass(n_feat, 0.0);  // index k-1 for size k in 1..n-1
  double total = 0.0;
  for (int k = 1; k < n_feat; ++k) {
    size_mass[k - 1] = shapley_kernel_weight(n_feat, k) * binom(n_feat, k);
    total += size_mass[k - 1];
  }
  std::map<std::uint32_t, double> acc;
  for (int s = 0; s < n_samples; ++s) {
    double u = rng.uniform() * total;
    int k = 1;
    for (; k < n_feat - 1; ++k) {
      if (u < size_mass[k - 1]) break;
      u -= size_mass[k - 1];
    }
    // Uniform k-subset via partial Fisher-Yates over feature indices.
    std::vector<int> idx(n_feat);
    for (int i = 0; i < n_feat; ++i) idx[i] = i;
    std::uint32_t mask = 0;
    for (int i = 0; i < k; ++i) {
      const std::size_t j = i + rng.uniform_index(n_feat - i);
      std::swap(idx[i], idx[j]);
      mask |= 1u << idx[i];
    }
    acc[mask] += 1.0;
  }
  WeightedCoalitions wc;
  for (const auto& [mask, w] : acc) {
    wc.masks.push_back(mask);
    wc.weights.push_back(w);
  }
  return wc;
}

}  // namespace

BackgroundSet BackgroundSet::from_observations(const Mat& observations, int max_rows, Rng& rng) {
  if (observations.rows() == 0) throw std::invalid_argument("BackgroundSet: no observations");
  BackgroundSet bg;
  const int n = static_cast<int>(observations.rows());
  if (n <= max_rows) {
    bg.rows = observations;
  } else {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < max_rows; ++i)
      std::swap(idx[i], idx[i + rng.uniform_index(n - i)]);
    bg.rows = Mat(max_rows, observations.cols());
    for (int i = 0; i < max_rows; ++i) bg.rows.row(i) = observations.row(idx[i]);
  }
  bg.means = bg.rows.colwise().mean().transpose();
  return bg;
}

double shapley_kernel_weight(int n_features, int coalition_size) {
  if (coalition_size <= 0 || coalition_size >= n_features)
    throw std::domain_error("shapley_kernel_weight: full and empty coalitions have infinite weight");
  return (n_features - 1.0) /
         (binom(n_features, coalition_size) * coalition_size * (n_features - coalition_size));
}

Vec exact_shapley(const ModelFn& model, const Vec& x, const BackgroundSet& background,
                  int action_index) {
  const int n = background.n_features();
  if (n > 20) throw std::invalid_argument("exact_shapley: more than 20 features");
  if (x.size() != n) throw std::invalid_argument("exact_shapley: input dimension mismatch");

  std::vector<std::uint32_t> masks(1u << n);
  for (std::uint32_t m = 0; m < masks.size(); ++m) masks[m] = m;
  const Mat p = coalition_payoffs(model, x, background, masks);
  if (action_index < 0 || action_index >= p.rows())
    throw std::out_of_range("exact_shapley: action index out of range");

  // Coalition weight |C|!(N-|C|-1)!/N! = 1/(N * C(N-1,|C|)).
  std::vector<double> weight(n);
  for (int k = 0; k < n; ++k) weight[k] = 1.0 / (n * binom(n - 1, k));

  Vec phi = Vec::Zero(n);
  for (std::uint32_t m = 0; m < masks.size(); ++m) {
    for (int s = 0; s < n; ++s) {
      if (m & (1u << s)) continue;
      const double w = weight[__builtin_popcount(m)];
      phi(s) += w * (p(action_index, m | (1u << s)) - p(action_index, m));
    }
  }
  return phi;
}

ShapResult kernel_shap_all(const ModelFn& model, const Vec& x, const BackgroundSet& background,
                           int n_samples, Rng* rng) {
  const int n = background.n_features();
  if (x.size() != n) throw std::invalid_argument("kernel_shap: input dimension mismatch");
  const bool exact = n_samples <= 0 && n <= 12;
  if (!exact && n_samples <= 0)
    throw std::invalid_argument("kernel_shap: sampling mode requires n_samples > 0");
  if (!exact && n_samples < n + 2)
    throw std::invalid_argument("kernel_shap: need at least N+2 samples");
  if (!exact && !rng) throw std::invalid_argument("kernel_shap: sampling mode requires an rng");

  WeightedCoalitions wc = exact ? enumerate_coalitions(n) : sample_coalitions(n, n_samples, *rng);

  // Payoffs for the constraint coalitions (empty, full) and all regression rows.
  std::vector<std::uint32_t> masks;
  masks.push_back(0);
  masks.push_back((1u << n) - 1u);
  masks.insert(masks.end(), wc.masks.begin(), wc.masks.end());
  const Mat p = coalition_payoffs(model, x, background, masks);
  const int n_out = static_cast<int>(p.rows());
  const int rows = static_cast<int>(wc.masks.size());

  ShapResult result;
  result.coalitions = rows;
  result.phi0 = p.col(0);
  result.phi = Mat(n, n_out);

  // Weighted least squares on g(z) = phi0 + sum phi_s z_s with the efficiency
  // constraint folded in by eliminating the last feature.
  Mat A(rows, n - 1);
  Vec w(rows);
  for (int r = 0; r < rows; ++r) {
    const std::uint32_t m = wc.masks[r];
    const double z_last = (m >> (n - 1)) & 1u ? 1.0 : 0.0;
    for (int s = 0; s + 1 < n; ++s) A(r, s) = (((m >> s) & 1u) ? 1.0 : 0.0) - z_last;
    w(r) = wc.weights[r];
  }
  const Mat AtW = A.transpose() * w.asDiagonal();
  Mat normal = AtW * A;
  for (int out = 0; out < n_out; ++out) {
    const double delta = p(out, 1) - p(out, 0);  // f(x) - E[f]
    Vec y(rows);
    for (int r = 0; r < rows; ++r) {
      const std::uint32_t m = wc.masks[r];
      const double z_last = (m >> (n - 1)) & 1u ? 1.0 : 0.0;
      y(r) = p(out, 2 + r) - result.phi0(out) - z_last * delta;
    }
    const Vec rhs = AtW * y;
    Eigen::LDLT<Mat> solver(normal);
    Vec head;
    if (solver.info() == Eigen::Success) head = solver.solve(rhs);
    if (solver.info() != Eigen::Success || !head.allFinite()) {
      // Duplicate coalitions can make the system singular; fall back to a
      // tiny ridge and report it.
      result.ridge_used = true;
      Mat ridged = normal + 1e-10 * Mat::Identity(n - 1, n - 1);
      head = Eigen::LDLT<Mat>(ridged).solve(rhs);
    }
    result.phi.col(out).head(n - 1) = head;
    result.phi(n - 1, out) = delta - head.sum();
  }
  return result;
}

std::pair<Vec, double> kernel_shap(const ModelFn& model, const Vec& x,
                                   const BackgroundSet& background, int n_samples,
                                   int action_index, Rng* rng) {
  const ShapResult r = kernel_shap_all(model, x, background, n_samples, rng);
  if (action_index < 0 || action_index >= r.phi.cols())
    throw std::out_of_range("kernel_shap: action index out of range");
  return {r.phi.col(action_index), r.phi0(action_index)};
}

std::vector<Attribution> explain_trajectory(const agents::PolicySnapshot& snapshot,
                                            const cohort::PatientRecord& patient,
                                            const brainsim::ModelParams& params,
                                            const brainsim::BrainGraph& graph,
                                            const brainsim::EnvConfig& env_config,
                                            const BackgroundSet& background, int fold, int seed) {
  if (!snapshot.scaler.fitted)
    throw std::invalid_argument("explain_trajectory: snapshot has no fitted scaler");
  const ModelFn model = [&](const Mat& cols) { return snapshot.act_batch(cols); };
  const auto features = brainsim::feature_names(graph);
  const auto actions = brainsim::action_names(graph);

  std::vector<Attribution> out;
  brainsim::Environment env(cohort::baseline_of(patient), params, graph, env_config);
  while (!env.done()) {
    const Vec obs_raw = brainsim::raw_observation(env.state());
    const Vec obs = snapshot.scaler.apply(obs_raw);
    const ShapResult shap = kernel_shap_all(model, obs, background);
    Attribution a;
    a.phi = shap.phi;
    a.phi0 = shap.phi0;
    a.model_output = snapshot.act(obs);
    a.obs_scaled = obs;
    a.obs_raw = obs_raw;
    a.patient_id = patient.patient_id;
    a.year = env.state().year;
    a.fold = fold;
    a.seed = seed;
    a.agent = agents::to_string(snapshot.kind);
    a.feature_names = features;
    a.action_names = actions;
    out.push_back(std::move(a));
    env.step(brainsim::Action{snapshot.act(obs)});
  }
  return out;
}

GlobalAttribution aggregate_global(const std::vector<Attribution>& attributions) {
  if (attributions.empty()) throw std::invalid_argument("aggregate_global: no attributions");
  const auto& first = attributions.front();
  GlobalAttribution g;
  g.sum_phi = Mat::Zero(first.phi.rows(), first.phi.cols());
  g.mean_abs_phi = Mat::Zero(first.phi.rows(), first.phi.cols());
  g.feature_names = first.feature_names;
  g.action_names = first.action_names;
  for (const auto& a : attributions) {
    if (a.phi.rows() != g.sum_phi.rows() || a.phi.cols() != g.sum_phi.cols())
      throw std::invalid_argument("aggregate_global: inconsistent attribution shapes");
    g.sum_phi += a.phi;
    g.mean_abs_phi += a.phi.cwiseAbs();
    ++g.count;
  }
  g.mean_abs_phi /= static_cast<double>(g.count);

  // Rank features by total mean |phi| across actions; ties break on index so
  // the ranking does not depend on input order.
  const Vec score = g.mean_abs_phi.rowwise().sum();
  g.ranking.resize(score.size());
  for (int i = 0; i < score.size(); ++i) g.ranking[i] = i;
  std::stable_sort(g.ranking.begin(), g.ranking.end(), [&](int a, int b) {
    if (score(a) != score(b)) return score(a) > score(b);
    return a < b;
  });
  return g;
}

void export_attributions(const std::vector<Attribution>& attributions, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write attributions: " + path);
  out << "patient_id,year,agent,action_name,feature_name,feature_value,phi,phi0\n";
  std::vector<const Attribution*> sorted;
  for (const auto& a : attributions) sorted.push_back(&a);
  std::stable_sort(sorted.begin(), sorted.end(), [](const Attribution* a, const Attribution* b) {
    if (a->patient_id != b->patient_id) return a->patient_id < b->patient_id;
    return a->year < b->year;
  });
  for (const Attribution* a : sorted) {
    for (int act = 0; act < a->phi.cols(); ++act) {
      for (int f = 0; f < a->phi.rows(); ++f) {
        out << a->patient_id << ',' << a->year << ',' << a->agent << ',' << a->action_names[act]
            << ',' << a->feature_names[f] << ',' << format_double(a->obs_raw(f)) << ','
            << format_double(a->phi(f, act)) << ',' << format_double(a->phi0(act)) << "\n";
      }
    }
  }
}

std::vector<Attribution> import_attributions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open attributions: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error(path + ": empty attribution file");

  struct Key {
    std::string patient;
    int year;
    std::string agent;
    bool operator<(const Key& o) const {
      return std::tie(patient, year, agent) < std::tie(o.patient, o.year, o.agent);
    }
  };
  std::map<Key, Attribution> grouped;
  std::map<Key, std::map<std::string, int>> action_index;
  std::map<Key, std::map<std::string, int>> feature_index;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string patient, year_s, agent, action, feature, value_s, phi_s, phi0_s;
    std::getline(ss, patient, ',');
    std::getline(ss, year_s, ',');
    std::getline(ss, agent, ',');
    std::getline(ss, action, ',');
    std::getline(ss, feature, ',');
    std::getline(ss, value_s, ',');
    std::getline(ss, phi_s, ',');
    std::getline(ss, phi0_s, ',');
    const Key key{patient, std::stoi(year_s), agent};
    auto& att = grouped[key];
    auto& ai = action_index[key];
    auto& fi = feature_index[key];
    if (!ai.count(action)) {
      ai[action] = static_cast<int>(att.action_names.size());
      att.action_names.push_back(action);
    }
    if (!fi.count(feature)) {
      fi[feature] = static_cast<int>(att.feature_names.size());
      att.feature_names.push_back(feature);
    }
    att.patient_id = patient;
    att.year = key.year;
    att.agent = agent;
    const int a = ai[action], f = fi[feature];
    if (att.phi.rows() <= f || att.phi.cols() <= a) {
      Mat grown = Mat::Zero(std::max<Eigen::Index>(att.phi.rows(), f + 1),
                            std::max<Eigen::Index>(att.phi.cols(), a + 1));
      grown.topLeftCorner(att.phi.rows(), att.phi.cols()) = att.phi;
      att.phi = grown;
      Vec grown0 = Vec::Zero(grown.cols());
      grown0.head(att.phi0.size()) = att.phi0;
      att.phi0 = grown0;
      Vec grown_raw = Vec::Zero(grown.rows());
      grown_raw.head(att.obs_raw.size()) = att.obs_raw;
      att.obs_raw = grown_raw;
    }
    att.phi(f, a) = std::stod(phi_s);
    att.phi0(a) = std::stod(phi0_s);
    att.obs_raw(f) = std::stod(value_s);
  }
  std::vector<Attribution> out;
  for (auto& [key, att] : grouped) out.push_back(std::move(att));
  return out;
}

}  // namespace xrlad::explain
