#include "xrlad/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace xrlad::harness {

namespace fs = std::filesystem;

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_cell(double mean, double sd) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.3f (%.3f)", mean, sd);
  return buf;
}

double std_dev(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / (xs.size() - 1));
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / xs.size();
}

struct PreparedExperiment {
  cohort::Cohort cohort;
  std::vector<cohort::FoldSplit> folds;
  brainsim::BrainGraph graph;
  std::vector<brainsim::ObservationScaler> scalers;  // per fold, fitted on train
  std::string cohort_tag;
};

PreparedExperiment prepare(const config::ExperimentConfig& cfg) {
  PreparedExperiment prep;
  const Rng root(cfg.seed);
  if (cfg.cohort_path) {
    prep.cohort = cohort::load_cohort(*cfg.cohort_path);
    prep.cohort_tag = *cfg.cohort_path;
  } else {
    cohort::SynthSpec spec = *cfg.synth;
    spec.score_kind = cfg.score_kind;
    spec.env = cfg.env;
    spec.lambda_tradeoff = cfg.lambda_tradeoff;
    spec.c_task = cfg.c_task;
    const std::uint64_t cohort_seed = root.derive("cohort").seed();
    prep.cohort = cohort::generate_synthetic_cohort(spec, cohort_seed);
    prep.cohort_tag = "synthetic:" + std::to_string(cohort_seed) + ":" +
                      std::to_string(spec.n_patients) + ":" + cohort::to_string(spec.score_kind);
  }
  if (prep.cohort.score_kind != cfg.score_kind)
    throw std::runtime_error("cohort score kind does not match the configured score_kind");
  prep.graph = brainsim::BrainGraph::from_adjacency(cfg.adjacency);
  prep.folds = cohort::kfold_split(prep.cohort, cfg.k_folds, root.derive("folds").seed());
  for (const auto& fold : prep.folds)
    prep.scalers.push_back(
        cohort::fit_scaler(prep.cohort.subset(fold.train), prep.graph, cfg.env));
  return prep;
}

void run_jobs(int workers, std::vector<std::function<void()>>& jobs) {
  if (workers <= 1) {
    for (auto& job : jobs) job();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const int n = std::min<int>(workers, static_cast<int>(jobs.size()));
  for (int w = 0; w < n; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) jobs[i]();
    });
  }
  for (auto& t : pool) t.join();
}

void write_curve(const std::string& path, const std::vector<agents::EpochStats>& curve) {
  std::ofstream out(path);
  out << "epoch,mean_return,validation_mae\n";
  for (const auto& e : curve)
    out << e.epoch << ',' << format_double(e.mean_return) << ','
        << format_double(e.validation_mae) << "\n";
}

void write_trajectories(const std::string& path, const std::vector<TrajectoryPrediction>& preds,
                        const cohort::Cohort& cohort, const brainsim::BrainGraph& graph) {
  std::ofstream out(path);
  out << "patient_id,year,pred_norm,pred_raw,truth_raw,truth_norm";
  for (const auto& r : graph.region_names) out << ",i_" << r;
  for (const auto& r : graph.region_names) out << ",x_" << r;
  for (const auto& r : graph.region_names) out << ",d_" << r;
  for (const auto& r : graph.region_names) out << ",y_" << r;
  out << "\n";
  for (const auto& p : preds) {
    const auto& rec = cohort.by_id(p.patient_id);
    for (std::size_t y = 0; y < p.pred_norm.size(); ++y) {
      out << p.patient_id << ',' << y << ',' << format_double(p.pred_norm[y]) << ','
          << format_double(p.pred_raw[y]);
      if (y < cohort::kTrajectoryYears && rec.scores[y]) {
        out << ',' << format_double(*rec.scores[y]) << ','
            << format_double(cohort::normalize_score(*rec.scores[y], rec.score_kind));
      } else {
        out << ",,";
      }
      for (int r = 0; r < graph.n_regions; ++r) out << ',' << format_double(p.info(y, r));
      for (int r = 0; r < graph.n_regions; ++r) out << ',' << format_double(p.size(y, r));
      for (int r = 0; r < graph.n_regions; ++r) out << ',' << format_double(p.amyloid(y, r));
      for (int r = 0; r < graph.n_regions; ++r) out << ',' << format_double(p.activity(y, r));
      out << "\n";
    }
  }
}

void write_metrics(const std::string& path, const RunRecord& run) {
  std::ofstream out(path);
  out << "agent,fold,seed,mae_norm,mse_norm,mae_raw,mse_raw,n_points,best_epoch,failed\n";
  out << agents::to_string(run.agent) << ',' << run.fold << ',' << run.seed_index << ','
      << format_double(run.scores.norm.mae) << ',' << format_double(run.scores.norm.mse) << ','
      << format_double(run.scores.raw.mae) << ',' << format_double(run.scores.raw.mse) << ','
      << run.scores.norm.n_points << ',' << run.best_epoch << ',' << (run.failed ? 1 : 0) << "\n";
}

/// Background observations for the explainer: scaled baseline states of the
/// fold's training patients.
explain::BackgroundSet make_background(const cohort::Cohort& cohort,
                                       const std::vector<std::string>& train_ids,
                                       const brainsim::BrainGraph& graph,
                                       const brainsim::EnvConfig& env,
                                       const brainsim::ObservationScaler& scaler, int max_rows,
                                       Rng rng) {
  brainsim::ModelParams neutral;
  Mat rows(static_cast<Eigen::Index>(train_ids.size()), 3 * graph.n_regions);
  Eigen::Index i = 0;
  for (const auto& id : train_ids) {
    const auto state =
        brainsim::env_reset(cohort::baseline_of(cohort.by_id(id)), neutral, graph, env);
    rows.row(i++) = scaler.apply(brainsim::raw_observation(state)).transpose();
  }
  return explain::BackgroundSet::from_observations(rows, max_rows, rng);
}

void write_ranking(const std::string& path, const explain::GlobalAttribution& global) {
  std::ofstream out(path);
  out << "rank,feature,total_mean_abs_phi";
  for (const auto& a : global.action_names) out << ",mean_abs_phi_" << a;
  for (const auto& a : global.action_names) out << ",sum_phi_" << a;
  out << "\n";
  for (std::size_t rank = 0; rank < global.ranking.size(); ++rank) {
    const int f = global.ranking[rank];
    out << rank + 1 << ',' << global.feature_names[f] << ','
        << format_double(global.mean_abs_phi.row(f).sum());
    for (int a = 0; a < global.mean_abs_phi.cols(); ++a)
      out << ',' << format_double(global.mean_abs_phi(f, a));
    for (int a = 0; a < global.sum_phi.cols(); ++a)
      out << ',' << format_double(global.sum_phi(f, a));
    out << "\n";
  }
}

struct ExplainStats {
  long rows = 0;
  double worst_efficiency_gap = 0.0;
};

ExplainStats explain_agent(const config::ExperimentConfig& cfg, const PreparedExperiment& prep,
                           agents::AgentKind kind, bool check_efficiency) {
  const fs::path out_root(cfg.out_dir);
  const std::string agent_name = agents::to_string(kind);
  std::vector<explain::Attribution> all;
  ExplainStats stats;

  auto explain_patients = [&](int fold, const std::vector<std::string>& ids) {
    const fs::path snap_path =
        out_root / "runs" / agent_name / std::to_string(fold) / "0" / "snapshot.txt";
    if (!fs::exists(snap_path))
      throw std::runtime_error("missing snapshot: " + snap_path.string());
    const auto snapshot = agents::PolicySnapshot::load(snap_path.string());
    const auto background = make_background(
        prep.cohort, prep.folds[fold].train, prep.graph, cfg.env, snapshot.scaler,
        cfg.explain.background_rows, Rng(cfg.seed).derive("background", fold));
    for (const auto& id : ids) {
      const auto& patient = prep.cohort.by_id(id);
      const auto params =
          cohort::params_for(patient, cfg.param_map, cfg.lambda_tradeoff, cfg.c_task);
      auto attrs = explain::explain_trajectory(snapshot, patient, params, prep.graph, cfg.env,
                                               background, fold, 0);
      if (check_efficiency) {
        for (const auto& a : attrs) {
          for (int act = 0; act < a.phi.cols(); ++act) {
            const double gap =
                std::abs(a.phi0(act) + a.phi.col(act).sum() - a.model_output(act));
            stats.worst_efficiency_gap = std::max(stats.worst_efficiency_gap, gap);
            if (gap > 1e-6)
              throw std::runtime_error("efficiency violation for " + a.patient_id + " year " +
                                       std::to_string(a.year) + ": gap " + format_double(gap));
          }
        }
      }
      for (auto& a : attrs) all.push_back(std::move(a));
    }
  };

  switch (cfg.explain.scope) {
    case config::ExplainScope::Test:
      for (const auto& fold : prep.folds) explain_patients(fold.fold_index, fold.test);
      break;
    case config::ExplainScope::Cohort: {
      std::vector<std::string> ids;
      for (const auto& r : prep.cohort.records) ids.push_back(r.patient_id);
      explain_patients(0, ids);
      break;
    }
    case config::ExplainScope::Patient:
      explain_patients(0, {cfg.explain.patient_id});
      break;
  }

  const fs::path shap_dir = out_root / "shap" / agent_name;
  fs::create_directories(shap_dir);
  explain::export_attributions(all, (shap_dir / "attributions.csv").string());
  write_ranking((shap_dir / "ranking.csv").string(), explain::aggregate_global(all));
  stats.rows = static_cast<long>(all.size()) *
               (all.empty() ? 0 : all.front().phi.rows() * all.front().phi.cols());
  return stats;
}

}  // namespace

TrajectoryPrediction rollout_prediction(const agents::PolicySnapshot& snapshot,
                                        const cohort::PatientRecord& patient,
                                        const brainsim::ModelParams& params,
                                        const brainsim::BrainGraph& graph,
                                        const brainsim::EnvConfig& env_config) {
  const auto act = [&](const Vec& obs) { return snapshot.act(obs); };
  const auto roll = agents::deterministic_rollout(act, cohort::baseline_of(patient), params, graph,
                                                  env_config, snapshot.scaler);
  TrajectoryPrediction pred;
  pred.patient_id = patient.patient_id;
  pred.pred_norm = roll.cognition_norm;
  pred.pred_norm[0] = patient.baseline_cognition_norm();  // year 0 is given
  for (double c : pred.pred_norm)
    pred.pred_raw.push_back(cohort::denormalize_score(std::clamp(c, 0.0, 10.0), patient.score_kind));
  pred.info = roll.info;
  pred.size = roll.size;
  pred.amyloid = roll.amyloid;
  pred.activity = roll.activity;
  pred.degenerate = roll.degenerate;
  return pred;
}

ScorePair score(const std::vector<TrajectoryPrediction>& predictions,
                const cohort::Cohort& cohort) {
  ScorePair out;
  double abs_norm = 0.0, sq_norm = 0.0, abs_raw = 0.0, sq_raw = 0.0;
  long n = 0;
  for (const auto& p : predictions) {
    const auto& rec = cohort.by_id(p.patient_id);
    const int years = std::min<int>(static_cast<int>(p.pred_norm.size()), cohort::kTrajectoryYears);
    for (int y = 1; y < years; ++y) {
      if (!rec.scores[y]) continue;
      const double truth_norm = cohort::normalize_score(*rec.scores[y], rec.score_kind);
      const double e_norm = p.pred_norm[y] - truth_norm;
      const double e_raw = p.pred_raw[y] - *rec.scores[y];
      abs_norm += std::abs(e_norm);
      sq_norm += e_norm * e_norm;
      abs_raw += std::abs(e_raw);
      sq_raw += e_raw * e_raw;
      ++n;
    }
  }
  if (n == 0) throw std::runtime_error("score: no overlapping observations to score");
  out.norm = {abs_norm / n, sq_norm / n, n};
  out.raw = {abs_raw / n, sq_raw / n, n};
  return out;
}

ExperimentResult run_experiment(const config::ExperimentConfig& cfg) {
  const auto errors = cfg.validate();
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw std::runtime_error(msg);
  }
  const PreparedExperiment prep = prepare(cfg);
  const fs::path out_root(cfg.out_dir);
  fs::create_directories(out_root);
  cfg.save((out_root / "config.json").string());
  if (!cfg.cohort_path) cohort::save_cohort(prep.cohort, (out_root / "cohort.csv").string());

  ExperimentResult result;
  result.cohort_tag = prep.cohort_tag;
  result.score_kind = prep.cohort.score_kind;
  result.runs.resize(cfg.agent_configs.size() * cfg.k_folds * cfg.n_seeds);

  std::vector<std::function<void()>> jobs;
  for (std::size_t ai = 0; ai < cfg.agent_configs.size(); ++ai) {
    for (int fold = 0; fold < cfg.k_folds; ++fold) {
      for (int seed_idx = 0; seed_idx < cfg.n_seeds; ++seed_idx) {
        const std::size_t slot = (ai * cfg.k_folds + fold) * cfg.n_seeds + seed_idx;
        jobs.push_back([&, ai, fold, seed_idx, slot] {
          const auto& agent_cfg = cfg.agent_configs[ai];
          RunRecord& run = result.runs[slot];
          run.agent = agent_cfg.kind;
          run.fold = fold;
          run.seed_index = seed_idx;
          const fs::path run_dir = out_root / "runs" / agents::to_string(agent_cfg.kind) /
                                   std::to_string(fold) / std::to_string(seed_idx);
          fs::create_directories(run_dir);
          try {
            agents::TrainInputs inputs;
            inputs.cohort = &prep.cohort;
            inputs.fold = &prep.folds[fold];
            inputs.graph = prep.graph;
            inputs.env_config = cfg.env;
            inputs.param_map = cfg.param_map;
            inputs.lambda_tradeoff = cfg.lambda_tradeoff;
            inputs.c_task = cfg.c_task;
            inputs.scaler = prep.scalers[fold];
            const Rng run_rng = Rng(cfg.seed).derive(
                "train-" + agents::to_string(agent_cfg.kind), fold, seed_idx);
            const auto trained = agents::train(agent_cfg, inputs, run_rng);
            run.best_epoch = trained.best_epoch;

            std::vector<TrajectoryPrediction> preds;
            for (const auto& id : prep.folds[fold].test) {
              const auto& patient = prep.cohort.by_id(id);
              const auto params =
                  cohort::params_for(patient, cfg.param_map, cfg.lambda_tradeoff, cfg.c_task);
              preds.push_back(
                  rollout_prediction(trained.snapshot, patient, params, prep.graph, cfg.env));
            }
            run.scores = score(preds, prep.cohort);

            trained.snapshot.save((run_dir / "snapshot.txt").string());
            write_curve((run_dir / "curve.csv").string(), trained.curve);
            write_trajectories((run_dir / "trajectories.csv").string(), preds, prep.cohort,
                               prep.graph);
          } catch (const std::exception& e) {
            run.failed = true;
            run.error = e.what();
          }
          write_metrics((run_dir / "metrics.csv").string(), run);
        });
      }
    }
  }
  run_jobs(cfg.workers, jobs);

  for (const auto& agent_cfg : cfg.agent_configs) {
    AgentSummary s;
    s.agent = agent_cfg.kind;
    std::vector<double> maes, mses, maes_raw, mses_raw;
    std::vector<std::vector<double>> fold_maes(cfg.k_folds), fold_mses(cfg.k_folds);
    for (const auto& run : result.runs) {
      if (run.agent != agent_cfg.kind) continue;
      ++s.n_runs;
      if (run.failed) {
        ++s.n_failed;
        result.complete = false;
        continue;
      }
      maes.push_back(run.scores.norm.mae);
      mses.push_back(run.scores.norm.mse);
      maes_raw.push_back(run.scores.raw.mae);
      mses_raw.push_back(run.scores.raw.mse);
      fold_maes[run.fold].push_back(run.scores.norm.mae);
      fold_mses[run.fold].push_back(run.scores.norm.mse);
    }
    s.mae_mean = mean_of(maes);
    s.mae_std_runs = std_dev(maes, s.mae_mean);
    s.mse_mean = mean_of(mses);
    s.mse_std_runs = std_dev(mses, s.mse_mean);
    s.mae_raw_mean = mean_of(maes_raw);
    s.mse_raw_mean = mean_of(mses_raw);
    std::vector<double> fm, fs2;
    for (int f = 0; f < cfg.k_folds; ++f) {
      if (fold_maes[f].empty()) continue;
      fm.push_back(mean_of(fold_maes[f]));
      fs2.push_back(mean_of(fold_mses[f]));
    }
    s.mae_std_fold_means = std_dev(fm, mean_of(fm));
    s.mse_std_fold_means = std_dev(fs2, mean_of(fs2));
    result.summaries.push_back(s);
  }

  {
    std::ofstream out(out_root / "summary.csv");
    out << "agent,score_kind,runs,failed,mae_mean,mae_std_runs,mae_std_fold_means,"
           "mse_mean,mse_std_runs,mse_std_fold_means,mae_raw_mean,mse_raw_mean\n";
    for (const auto& s : result.summaries) {
      out << agents::to_string(s.agent) << ',' << cohort::to_string(result.score_kind) << ','
          << s.n_runs << ',' << s.n_failed << ',' << format_double(s.mae_mean) << ','
          << format_double(s.mae_std_runs) << ',' << format_double(s.mae_std_fold_means) << ','
          << format_double(s.mse_mean) << ',' << format_double(s.mse_std_runs) << ','
          << format_double(s.mse_std_fold_means) << ',' << format_double(s.mae_raw_mean) << ','
          << format_double(s.mse_raw_mean) << "\n";
    }
  }

  if (cfg.explain.enabled) {
    for (const auto& agent_cfg : cfg.agent_configs)
      explain_agent(cfg, prep, agent_cfg.kind, /*check_efficiency=*/false);
  }
  return result;
}

std::string summary_table(const ExperimentResult& result) {
  std::ostringstream out;
  const std::string kind = cohort::to_string(result.score_kind);
  out << "Method  " << kind << " MAE        " << kind << " MSE        (normalized 0-10 scale; "
      << "mean (std) over runs)\n";
  for (const auto& s : result.summaries) {
    char line[160];
    std::snprintf(line, sizeof line, "%-7s %-16s %-16s\n", agents::to_string(s.agent).c_str(),
                  format_cell(s.mae_mean, s.mae_std_runs).c_str(),
                  format_cell(s.mse_mean, s.mse_std_runs).c_str());
    out << line;
  }
  return out.str();
}

std::string compare_agents(const ExperimentResult& result) {
  if (result.summaries.size() < 2)
    throw std::invalid_argument("compare_agents: need at least two scored agents");
  std::vector<AgentSummary> ranked = result.summaries;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const AgentSummary& a, const AgentSummary& b) { return a.mae_mean < b.mae_mean; });
  std::ostringstream out;
  out << "Agents ranked by MAE (" << cohort::to_string(result.score_kind)
      << ", normalized scale) on cohort " << result.cohort_tag << ":\n";
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    char line[160];
    std::snprintf(line, sizeof line, "%zu. %-5s MAE %s  MSE %s\n", i + 1,
                  agents::to_string(ranked[i].agent).c_str(),
                  format_cell(ranked[i].mae_mean, ranked[i].mae_std_runs).c_str(),
                  format_cell(ranked[i].mse_mean, ranked[i].mse_std_runs).c_str());
    out << line;
  }
  out << "Pairwise MAE differences:\n";
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    for (std::size_t j = i + 1; j < ranked.size(); ++j) {
      char line[160];
      std::snprintf(line, sizeof line, "  %-5s - %-5s = %+.3f\n",
                    agents::to_string(ranked[i].agent).c_str(),
                    agents::to_string(ranked[j].agent).c_str(),
                    ranked[i].mae_mean - ranked[j].mae_mean);
      out << line;
    }
  }
  return out.str();
}

std::string compare_agents(const std::vector<ExperimentResult>& results) {
  if (results.empty()) throw std::invalid_argument("compare_agents: no results");
  ExperimentResult merged = results.front();
  for (std::size_t i = 1; i < results.size(); ++i) {
    if (results[i].cohort_tag != merged.cohort_tag ||
        results[i].score_kind != merged.score_kind)
      throw std::invalid_argument("compare_agents: results come from different cohorts");
    merged.summaries.insert(merged.summaries.end(), results[i].summaries.begin(),
                            results[i].summaries.end());
  }
  return compare_agents(merged);
}

long explain_runs(const config::ExperimentConfig& cfg, bool check_efficiency) {
  const auto errors = cfg.validate();
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw std::runtime_error(msg);
  }
  const PreparedExperiment prep = prepare(cfg);
  long rows = 0;
  for (const auto& agent_cfg : cfg.agent_configs)
    rows += explain_agent(cfg, prep, agent_cfg.kind, check_efficiency).rows;
  return rows;
}

}  // namespace xrlad::harness
