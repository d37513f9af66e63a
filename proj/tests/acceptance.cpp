// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Run all criteria or pass the numbers to run as arguments.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <vector>

#include "xrlad/harness.hpp"

using namespace xrlad;
using brainsim::Mat;
using brainsim::Vec;
namespace fs = std::filesystem;

namespace {

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

struct Prepared {
  cohort::Cohort cohort;
  std::vector<cohort::FoldSplit> folds;
  brainsim::BrainGraph graph = cohort::default_graph();
  brainsim::EnvConfig env;
  agents::TrainInputs inputs;

  explicit Prepared(std::uint64_t seed = 42, int fold = 0) {
    cohort::SynthSpec spec;  // the default synthetic cohort: 160 patients
    cohort = cohort::generate_synthetic_cohort(spec, Rng(seed).derive("cohort").seed());
    folds = cohort::kfold_split(cohort, 5, Rng(seed).derive("folds").seed());
    inputs.cohort = &cohort;
    inputs.fold = &folds[fold];
    inputs.graph = graph;
    inputs.env_config = env;
    inputs.param_map = cohort::ParamMap::defaults();
    inputs.lambda_tradeoff = spec.lambda_tradeoff;
    inputs.c_task = spec.c_task;
    inputs.scaler = cohort::fit_scaler(cohort.subset(folds[fold].train), graph, env);
  }
};

double test_mae(const agents::PolicySnapshot& snapshot, const Prepared& prep) {
  std::vector<harness::TrajectoryPrediction> preds;
  for (const auto& id : prep.inputs.fold->test) {
    const auto& patient = prep.cohort.by_id(id);
    const auto params = cohort::params_for(patient, prep.inputs.param_map,
                                           prep.inputs.lambda_tradeoff, prep.inputs.c_task);
    preds.push_back(harness::rollout_prediction(snapshot, patient, params, prep.graph, prep.env));
  }
  return harness::score(preds, prep.cohort).norm.mae;
}

// ---------------------------------------------------------------------------

bool criterion1_diffusion(std::string& detail) {
  const double t0 = now_seconds();
  Rng rng(1001);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double beta = rng.uniform(0.0, 0.5);
    const double w = rng.uniform(0.5, 2.0);
    const double t = rng.uniform(0.0, 10.0);
    Vec d0(2);
    d0 << rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5);
    Mat adj(2, 2);
    adj << 0, w, w, 0;
    const Mat H = brainsim::laplacian(adj);
    const int substeps = std::max(1, static_cast<int>(std::ceil(1000.0 * t)));
    const Vec euler = brainsim::diffuse_amyloid(d0, H, beta, std::max(t, 1e-12), substeps);
    const Vec exact = brainsim::closed_form_diffusion_2node(d0, w, beta, t);
    const double rel =
        (euler - exact).cwiseAbs().maxCoeff() / std::max(exact.cwiseAbs().maxCoeff(), 1e-12);
    worst = std::max(worst, rel);
  }
  const double elapsed = now_seconds() - t0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "max rel err %.3g over 100 cases in %.2f s", worst, elapsed);
  detail = buf;
  return worst < 1e-4 && elapsed < 1.0;
}

bool criterion2_gradients(std::string& detail) {
  Rng rng(1002);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto net = neural::mlp_init({6, 32, 32, 2}, 5000 + trial);
    Vec x(6);
    for (int i = 0; i < 6; ++i) x(i) = rng.normal();
    worst = std::max(worst, neural::finite_diff_check(net, x, 1e-5));
  }

  // Squashed-Gaussian density integrates to one in 1-D.
  Vec mu(1), ls(1);
  mu << 0.4;
  ls << -0.1;
  const double limit = 2.0;
  const int grid = 40001;
  const double a0 = -limit + 1e-9, a1 = limit - 1e-9, h = (a1 - a0) / (grid - 1);
  double integral = 0.0;
  for (int i = 0; i < grid; ++i) {
    Vec a(1);
    a << a0 + i * h;
    const double p = std::exp(neural::squashed_gaussian_logprob(mu, ls, a, limit));
    integral += (i == 0 || i == grid - 1) ? 0.5 * p : p;
  }
  integral *= h;

  char buf[160];
  std::snprintf(buf, sizeof buf, "max grad rel err %.3g; squashed density integral %.5f", worst,
                integral);
  detail = buf;
  return worst < 1e-4 && std::abs(integral - 1.0) < 0.01;
}

bool criterion3_shapley(std::string& detail) {
  Rng rng(1003);
  double worst_axiom = 0.0, worst_kernel = 0.0, worst_linear = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 3 + static_cast<int>(rng.uniform_index(4));  // 3..6
    Mat rows(6, n);
    Vec x(n);
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < n; ++c) rows(r, c) = rng.normal();
    for (int c = 0; c < n; ++c) x(c) = rng.normal();
    explain::BackgroundSet bg;
    bg.rows = rows;
    bg.means = rows.colwise().mean().transpose();

    const auto net = neural::mlp_init({n, 8, 1}, 9000 + trial);
    const explain::ModelFn f = [&](const Mat& xs) { return neural::forward_batch(net, xs); };
    const Vec phi = explain::exact_shapley(f, x, bg, 0);

    // Efficiency.
    Mat x_col(n, 1);
    x_col.col(0) = x;
    const double fx = f(x_col)(0, 0);
    const double phi0 = f(Mat(rows.transpose())).row(0).mean();
    worst_axiom = std::max(worst_axiom, std::abs(phi0 + phi.sum() - fx));

    // Dummy: append an ignored feature.
    const explain::ModelFn g = [&](const Mat& xs) { return f(Mat(xs.topRows(n))); };
    Mat rows_pad(6, n + 1);
    rows_pad.leftCols(n) = rows;
    rows_pad.col(n).setConstant(0.25);
    explain::BackgroundSet bg_pad;
    bg_pad.rows = rows_pad;
    bg_pad.means = rows_pad.colwise().mean().transpose();
    Vec x_pad(n + 1);
    x_pad.head(n) = x;
    x_pad(n) = 1.5;
    const Vec phi_pad = explain::exact_shapley(g, x_pad, bg_pad, 0);
    worst_axiom = std::max(worst_axiom, std::abs(phi_pad(n)));

    // Symmetry: a model symmetric in features 0/1 with identical columns.
    const explain::ModelFn sym = [&](const Mat& xs) {
      Mat swapped = xs;
      swapped.row(0) = xs.row(1);
      swapped.row(1) = xs.row(0);
      return Mat(f(xs) + f(swapped));
    };
    Mat rows_sym = rows;
    rows_sym.col(1) = rows_sym.col(0);
    explain::BackgroundSet bg_sym;
    bg_sym.rows = rows_sym;
    bg_sym.means = rows_sym.colwise().mean().transpose();
    Vec x_sym = x;
    x_sym(1) = x_sym(0);
    const Vec phi_sym = explain::exact_shapley(sym, x_sym, bg_sym, 0);
    worst_axiom = std::max(worst_axiom, std::abs(phi_sym(0) - phi_sym(1)));

    // Linearity.
    const auto net2 = neural::mlp_init({n, 8, 1}, 9500 + trial);
    const explain::ModelFn f2 = [&](const Mat& xs) { return neural::forward_batch(net2, xs); };
    const explain::ModelFn fsum = [&](const Mat& xs) { return Mat(f(xs) + f2(xs)); };
    const Vec phi2 = explain::exact_shapley(f2, x, bg, 0);
    const Vec phis = explain::exact_shapley(fsum, x, bg, 0);
    worst_axiom = std::max(worst_axiom, (phis - phi - phi2).cwiseAbs().maxCoeff());

    // Kernel SHAP exact mode equals enumeration.
    const auto ks = explain::kernel_shap_all(f, x, bg);
    worst_kernel = std::max(worst_kernel, (ks.phi.col(0) - phi).cwiseAbs().maxCoeff());

    // Linear closed form phi_i = w_i (x_i - mean_i).
    Vec wvec(n);
    for (int i = 0; i < n; ++i) wvec(i) = rng.normal();
    const explain::ModelFn lin = [&](const Mat& xs) {
      Mat out(1, xs.cols());
      out.row(0) = wvec.transpose() * xs;
      return out;
    };
    const Vec phi_lin = explain::exact_shapley(lin, x, bg, 0);
    for (int i = 0; i < n; ++i)
      worst_linear =
          std::max(worst_linear, std::abs(phi_lin(i) - wvec(i) * (x(i) - bg.means(i))));
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "axiom gap %.3g; kernel-vs-exact gap %.3g; linear gap %.3g",
                worst_axiom, worst_kernel, worst_linear);
  detail = buf;
  return worst_axiom < 1e-6 && worst_kernel < 1e-6 && worst_linear < 1e-9;
}

bool criterion4_trust_region(std::string& detail) {
  // Conjugate gradient on random SPD systems.
  Rng rng(1004);
  double worst_residual = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Mat B(20, 20);
    for (int i = 0; i < 20; ++i)
      for (int j = 0; j < 20; ++j) B(i, j) = rng.normal();
    const Mat A = B.transpose() * B / 40.0 + Mat::Identity(20, 20);
    Vec b(20);
    for (int i = 0; i < 20; ++i) b(i) = rng.normal();
    const Vec x = agents::conjugate_gradient([&](const Vec& v) { return Vec(A * v); }, b, 20,
                                             1e-10, nullptr);
    worst_residual = std::max(worst_residual, (A * x - b).norm());
  }

  // 50-epoch TRPO run: every accepted step inside the trust region with a
  // non-negative surrogate improvement.
  Prepared prep;
  agents::AgentConfig cfg;
  cfg.kind = agents::AgentKind::TRPO;
  cfg.total_epochs = 50;
  const auto result = agents::train(cfg, prep.inputs, Rng(42).derive("train-TRPO", 0, 0));
  int accepted = 0;
  double worst_kl = 0.0;
  double worst_improvement = std::numeric_limits<double>::infinity();
  for (const auto& e : result.curve) {
    if (!e.update.accepted) continue;
    ++accepted;
    worst_kl = std::max(worst_kl, e.update.kl);
    worst_improvement = std::min(worst_improvement, e.update.surrogate_improvement);
  }
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "CG residual %.2g; %d/50 accepted; max KL %.4g (bound %.4g); min improvement %.3g",
                worst_residual, accepted, worst_kl, 1.5 * cfg.kl_bound, worst_improvement);
  detail = buf;
  return worst_residual < 1e-8 && accepted >= 25 && worst_kl <= 1.5 * cfg.kl_bound &&
         worst_improvement >= 0.0;
}

bool criterion5_env_invariants(std::string& detail) {
  const auto graph = cohort::default_graph();
  brainsim::EnvConfig env;
  Rng rng(1005);
  double worst_mass = 0.0;
  long violations = 0;
  const int calls = 100000;
  for (int i = 0; i < calls; ++i) {
    brainsim::ModelParams p;
    p.alpha1 = rng.uniform(0.0, 0.2);
    p.alpha2 = rng.uniform(0.0, 0.1);
    p.beta = rng.uniform(0.0, 0.5);
    p.gamma_act = rng.uniform(0.5, 1.5);
    p.lambda_tradeoff = rng.uniform(0.0, 2.0);

    brainsim::BrainState s;
    s.year = static_cast<int>(rng.uniform_index(env.horizon - 1));
    s.size = Vec(2);
    s.size << rng.uniform(0.2, 8.0), rng.uniform(0.2, 8.0);
    s.amyloid = Vec(2);
    s.amyloid << rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0);
    s.info_prev = Vec(2);
    s.info_prev << rng.uniform(0.0, 6.0), rng.uniform(0.0, 6.0);
    s.amyloid_total = Vec::Zero(2);

    brainsim::Action a;
    a.delta_info = Vec(2);
    a.delta_info << rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0);

    const auto out = brainsim::env_step(s, a, p, graph, env);
    if (out.next.info_prev.sum() > p.c_task + 1e-9) ++violations;
    if (out.next.info_prev.minCoeff() < 0.0) ++violations;
    if (std::abs(out.reward) > env.reward_clip) ++violations;
    if (((out.next.size - s.size).array() > 1e-12).any()) ++violations;
    worst_mass = std::max(worst_mass, std::abs(out.next.amyloid.sum() - s.amyloid.sum()));
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d calls, %ld violations, mass drift %.2g", calls, violations,
                worst_mass);
  detail = buf;
  return violations == 0 && worst_mass < 1e-9;
}

bool criterion6_end_to_end(std::string& detail) {
  const double t0 = now_seconds();
  Prepared prep;
  agents::AgentConfig cfg;
  cfg.kind = agents::AgentKind::TRPO;
  cfg.total_epochs = 200;
  cfg.batch_size = 1000;
  const auto result = agents::train(cfg, prep.inputs, Rng(42).derive("train-TRPO", 0, 0));
  const double mae = test_mae(result.snapshot, prep);
  const double first_return = result.curve.front().mean_return;
  double best_return = first_return;
  for (const auto& e : result.curve) best_return = std::max(best_return, e.mean_return);

  // Four-agent comparison table at smoke scale (the paper ordering is
  // reported, not asserted).
  const fs::path table_dir = fs::temp_directory_path() / "xrlad_acceptance_table";
  fs::remove_all(table_dir);
  config::ExperimentConfig table_cfg;
  table_cfg.seed = 42;
  table_cfg.out_dir = table_dir.string();
  table_cfg.k_folds = 2;
  table_cfg.n_seeds = 1;
  table_cfg.synth->n_patients = 40;
  table_cfg.explain.enabled = false;
  table_cfg.agent_configs.clear();
  for (const auto kind : {agents::AgentKind::TRPO, agents::AgentKind::PPO, agents::AgentKind::DDPG,
                          agents::AgentKind::SAC}) {
    agents::AgentConfig a;
    a.kind = kind;
    a.total_epochs = 5;
    a.batch_size = 500;
    a.warmup_steps = 500;
    a.updates_per_step = 0.25;
    table_cfg.agent_configs.push_back(a);
  }
  const auto table = harness::run_experiment(table_cfg);
  std::cout << "  four-agent comparison (smoke scale):\n";
  std::istringstream lines(harness::summary_table(table));
  for (std::string line; std::getline(lines, line);) std::cout << "    " << line << "\n";
  std::istringstream rank_lines(harness::compare_agents(table));
  for (std::string line; std::getline(rank_lines, line);) std::cout << "    " << line << "\n";
  fs::remove_all(table_dir);

  const double elapsed = now_seconds() - t0;
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "test MAE %.4f (bound 1.0); return %.1f -> %.1f; %.0f s (limit 1800)", mae,
                first_return, best_return, elapsed);
  detail = buf;
  return mae <= 1.0 && best_return > first_return && elapsed <= 1800.0;
}

bool criterion7_reproducibility(std::string& detail) {
  const double t0 = now_seconds();
  const fs::path tmp = fs::temp_directory_path() / "xrlad_acceptance_repro";
  fs::remove_all(tmp);

  auto make_cfg = [&](const std::string& sub) {
    config::ExperimentConfig cfg;
    cfg.seed = 7;
    cfg.out_dir = (tmp / sub).string();
    cfg.k_folds = 2;
    cfg.n_seeds = 1;
    cfg.synth->n_patients = 40;
    cfg.agent_configs.clear();
    agents::AgentConfig trpo;
    trpo.kind = agents::AgentKind::TRPO;
    trpo.total_epochs = 10;
    trpo.batch_size = 500;
    cfg.agent_configs.push_back(trpo);
    cfg.explain.scope = config::ExplainScope::Patient;
    cfg.explain.patient_id = "SYN0001";
    cfg.explain.background_rows = 8;
    return cfg;
  };
  harness::run_experiment(make_cfg("a"));
  harness::run_experiment(make_cfg("b"));

  const std::vector<std::string> files = {
      "runs/TRPO/0/0/metrics.csv",      "runs/TRPO/1/0/metrics.csv",
      "runs/TRPO/0/0/curve.csv",        "runs/TRPO/0/0/trajectories.csv",
      "runs/TRPO/0/0/snapshot.txt",     "summary.csv",
      "shap/TRPO/attributions.csv",     "shap/TRPO/ranking.csv",
      "cohort.csv"};
  int mismatched = 0;
  for (const auto& rel : files)
    if (slurp(tmp / "a" / rel) != slurp(tmp / "b" / rel) || slurp(tmp / "a" / rel).empty())
      ++mismatched;
  fs::remove_all(tmp);
  const double elapsed = now_seconds() - t0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu files compared, %d mismatched; %.1f s (limit 60)",
                files.size(), mismatched, elapsed);
  detail = buf;
  return mismatched == 0 && elapsed < 60.0;
}

bool criterion8_explanations(std::string& detail) {
  Prepared prep;
  agents::AgentConfig cfg;
  cfg.kind = agents::AgentKind::TRPO;
  cfg.total_epochs = 10;
  const auto trained = agents::train(cfg, prep.inputs, Rng(42).derive("train-TRPO", 0, 0));

  Rng bg_rng(1008);
  Mat obs_rows(static_cast<Eigen::Index>(prep.inputs.fold->train.size()), 6);
  brainsim::ModelParams neutral;
  Eigen::Index row = 0;
  for (const auto& id : prep.inputs.fold->train) {
    const auto st = brainsim::env_reset(cohort::baseline_of(prep.cohort.by_id(id)), neutral,
                                        prep.graph, prep.env);
    obs_rows.row(row++) = prep.inputs.scaler.apply(brainsim::raw_observation(st)).transpose();
  }
  const auto bg = explain::BackgroundSet::from_observations(obs_rows, 16, bg_rng);

  std::vector<explain::Attribution> all;
  double worst_gap = 0.0;
  for (const auto& rec : prep.cohort.records) {  // cohort scope: all 160 patients
    const auto params = cohort::params_for(rec, prep.inputs.param_map,
                                           prep.inputs.lambda_tradeoff, prep.inputs.c_task);
    auto attrs =
        explain::explain_trajectory(trained.snapshot, rec, params, prep.graph, prep.env, bg, 0, 0);
    for (auto& a : attrs) {
      for (int act = 0; act < a.phi.cols(); ++act)
        worst_gap = std::max(
            worst_gap, std::abs(a.phi0(act) + a.phi.col(act).sum() - a.model_output(act)));
      all.push_back(std::move(a));
    }
  }

  // Global sums must equal the sum of locals exactly (fixed accumulation order).
  const auto global = explain::aggregate_global(all);
  Mat manual = Mat::Zero(6, 2);
  for (const auto& a : all) manual += a.phi;
  const bool sums_exact = (global.sum_phi == manual);
  const bool six_features = global.ranking.size() == 6 && global.feature_names.size() == 6;

  // Degenerate episodes terminate early, so the row count may fall slightly
  // short of patients * 10 transitions.
  const std::size_t max_rows = prep.cohort.records.size() * 10;
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "%zu/%zu attributions; worst efficiency gap %.2g; global sum exact: %s; ranking "
                "%zu features",
                all.size(), max_rows, worst_gap, sums_exact ? "yes" : "no", global.ranking.size());
  detail = buf;
  return worst_gap < 1e-6 && sums_exact && six_features && all.size() >= max_rows * 9 / 10 &&
         all.size() <= max_rows;
}

struct Criterion {
  int id;
  const char* name;
  std::function<bool(std::string&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "diffusion oracle", criterion1_diffusion},
      {2, "gradient suite", criterion2_gradients},
      {3, "shapley axioms", criterion3_shapley},
      {4, "trust region", criterion4_trust_region},
      {5, "environment invariants", criterion5_env_invariants},
      {6, "end-to-end learning", criterion6_end_to_end},
      {7, "experiment reproducibility", criterion7_reproducibility},
      {8, "explanation pipeline", criterion8_explanations},
  };
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    std::string detail;
    bool ok = false;
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::printf("[%s] %d. %s: %s\n", ok ? "PASS" : "FAIL", c.id, c.name, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  return failures;
}
