#include "xrlad/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

namespace xrlad::config {

namespace {

using nlohmann::json;

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

json range_to_json(const std::array<double, 2>& r) { return json::array({r[0], r[1]}); }

std::array<double, 2> range_from_json(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

json linear_map_to_json(const cohort::LinearParamMap& m) {
  return {{"intercept", m.intercept}, {"age", m.age_coef},     {"gender", m.gender_coef},
          {"education", m.edu_coef},  {"apoe4", m.apoe4_coef}};
}

cohort::LinearParamMap linear_map_from_json(const json& j, const cohort::LinearParamMap& fallback) {
  cohort::LinearParamMap m = fallback;
  m.intercept = get_or(j, "intercept", m.intercept);
  m.age_coef = get_or(j, "age", m.age_coef);
  m.gender_coef = get_or(j, "gender", m.gender_coef);
  m.edu_coef = get_or(j, "education", m.edu_coef);
  m.apoe4_coef = get_or(j, "apoe4", m.apoe4_coef);
  return m;
}

json agent_to_json(const agents::AgentConfig& a) {
  return {{"kind", agents::to_string(a.kind)},
          {"gamma_disc", a.gamma_disc},
          {"lambda_gae", a.lambda_gae},
          {"kl_bound", a.kl_bound},
          {"clip_eps", a.clip_eps},
          {"entropy_coef", a.entropy_coef},
          {"epochs_per_update", a.epochs_per_update},
          {"minibatch", a.minibatch},
          {"batch_size", a.batch_size},
          {"total_epochs", a.total_epochs},
          {"replay_capacity", a.replay_capacity},
          {"tau_polyak", a.tau_polyak},
          {"sac_alpha", a.sac_alpha},
          {"sac_auto_alpha", a.sac_auto_alpha},
          {"lr_policy", a.lr_policy},
          {"lr_value", a.lr_value},
          {"lr_critic", a.lr_critic},
          {"lr_alpha", a.lr_alpha},
          {"cg_iters", a.cg_iters},
          {"cg_damping", a.cg_damping},
          {"backtrack_coef", a.backtrack_coef},
          {"backtrack_steps", a.backtrack_steps},
          {"value_train_epochs", a.value_train_epochs},
          {"warmup_steps", a.warmup_steps},
          {"exploration_noise", a.exploration_noise},
          {"offpolicy_minibatch", a.offpolicy_minibatch},
          {"updates_per_step", a.updates_per_step},
          {"hidden", a.hidden}};
}

agents::AgentConfig agent_from_json(const json& j) {
  agents::AgentConfig a;
  a.kind = agents::agent_kind_from_string(j.at("kind").get<std::string>());
  a.gamma_disc = get_or(j, "gamma_disc", a.gamma_disc);
  a.lambda_gae = get_or(j, "lambda_gae", a.lambda_gae);
  a.kl_bound = get_or(j, "kl_bound", a.kl_bound);
  a.clip_eps = get_or(j, "clip_eps", a.clip_eps);
  a.entropy_coef = get_or(j, "entropy_coef", a.entropy_coef);
  a.epochs_per_update = get_or(j, "epochs_per_update", a.epochs_per_update);
  a.minibatch = get_or(j, "minibatch", a.minibatch);
  a.batch_size = get_or(j, "batch_size", a.batch_size);
  a.total_epochs = get_or(j, "total_epochs", a.total_epochs);
  a.replay_capacity = get_or(j, "replay_capacity", a.replay_capacity);
  a.tau_polyak = get_or(j, "tau_polyak", a.tau_polyak);
  a.sac_alpha = get_or(j, "sac_alpha", a.sac_alpha);
  a.sac_auto_alpha = get_or(j, "sac_auto_alpha", a.sac_auto_alpha);
  a.lr_policy = get_or(j, "lr_policy", a.lr_policy);
  a.lr_value = get_or(j, "lr_value", a.lr_value);
  a.lr_critic = get_or(j, "lr_critic", a.lr_critic);
  a.lr_alpha = get_or(j, "lr_alpha", a.lr_alpha);
  a.cg_iters = get_or(j, "cg_iters", a.cg_iters);
  a.cg_damping = get_or(j, "cg_damping", a.cg_damping);
  a.backtrack_coef = get_or(j, "backtrack_coef", a.backtrack_coef);
  a.backtrack_steps = get_or(j, "backtrack_steps", a.backtrack_steps);
  a.value_train_epochs = get_or(j, "value_train_epochs", a.value_train_epochs);
  a.warmup_steps = get_or(j, "warmup_steps", a.warmup_steps);
  a.exploration_noise = get_or(j, "exploration_noise", a.exploration_noise);
  a.offpolicy_minibatch = get_or(j, "offpolicy_minibatch", a.offpolicy_minibatch);
  a.updates_per_step = get_or(j, "updates_per_step", a.updates_per_step);
  a.hidden = get_or(j, "hidden", a.hidden);
  return a;
}

}  // namespace

std::string to_string(ExplainScope scope) {
  switch (scope) {
    case ExplainScope::Test: return "test";
    case ExplainScope::Cohort: return "cohort";
    case ExplainScope::Patient: return "patient";
  }
  return "?";
}

ExplainScope explain_scope_from_string(const std::string& s) {
  if (s == "test") return ExplainScope::Test;
  if (s == "cohort") return ExplainScope::Cohort;
  if (s == "patient") return ExplainScope::Patient;
  throw std::invalid_argument("unknown explanation scope: '" + s + "'");
}

ExperimentConfig::ExperimentConfig() {
  adjacency = brainsim::Mat(2, 2);
  adjacency << 0.0, 1.0, 1.0, 0.0;
  synth = cohort::SynthSpec{};
  agent_configs.push_back(agents::AgentConfig{});
}

nlohmann::json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["score_kind"] = cohort::to_string(score_kind);
  if (cohort_path) j["cohort_path"] = *cohort_path;
  if (synth) {
    json s;
    s["n_patients"] = synth->n_patients;
    json ranges = json::array();
    for (const auto& r : synth->size_ranges) ranges.push_back(range_to_json(r));
    s["size_ranges"] = ranges;
    s["amyloid_range"] = range_to_json(synth->amyloid_range);
    s["cognition_range"] = range_to_json(synth->cognition_range);
    s["alpha1_range"] = range_to_json(synth->alpha1_range);
    s["alpha2_range"] = range_to_json(synth->alpha2_range);
    s["beta_range"] = range_to_json(synth->beta_range);
    s["gamma_range"] = range_to_json(synth->gamma_range);
    s["noise_std"] = synth->noise_std;
    j["synth"] = s;
  }
  json adj = json::array();
  for (Eigen::Index r = 0; r < adjacency.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < adjacency.cols(); ++c) row.push_back(adjacency(r, c));
    adj.push_back(row);
  }
  j["adjacency"] = adj;
  j["env"] = {{"horizon", env.horizon},
              {"substeps_per_year", env.substeps_per_year},
              {"action_limit", env.action_limit},
              {"reward_clip", env.reward_clip},
              {"size_floor", env.size_floor},
              {"uniform_info_split", env.uniform_info_split}};
  j["lambda_tradeoff"] = lambda_tradeoff;
  j["c_task"] = c_task;
  j["param_map"] = {{"alpha1", linear_map_to_json(param_map.alpha1)},
                    {"alpha2", linear_map_to_json(param_map.alpha2)},
                    {"beta", linear_map_to_json(param_map.beta)},
                    {"gamma", linear_map_to_json(param_map.gamma_act)}};
  j["k_folds"] = k_folds;
  j["n_seeds"] = n_seeds;
  j["workers"] = workers;
  json agent_list = json::array();
  for (const auto& a : agent_configs) agent_list.push_back(agent_to_json(a));
  j["agents"] = agent_list;
  j["explain"] = {{"enabled", explain.enabled},
                  {"scope", to_string(explain.scope)},
                  {"background_rows", explain.background_rows},
                  {"patient_id", explain.patient_id}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.agent_configs.clear();
  c.synth.reset();
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.out_dir = get_or<std::string>(j, "out_dir", c.out_dir);
  c.score_kind = cohort::score_kind_from_string(
      get_or<std::string>(j, "score_kind", cohort::to_string(c.score_kind)));
  if (j.contains("cohort_path")) c.cohort_path = j.at("cohort_path").get<std::string>();
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    cohort::SynthSpec spec;
    spec.score_kind = c.score_kind;
    spec.n_patients = get_or(s, "n_patients", spec.n_patients);
    if (s.contains("size_ranges")) {
      spec.size_ranges.clear();
      for (const auto& r : s.at("size_ranges")) spec.size_ranges.push_back(range_from_json(r));
    }
    if (s.contains("amyloid_range")) spec.amyloid_range = range_from_json(s.at("amyloid_range"));
    if (s.contains("cognition_range"))
      spec.cognition_range = range_from_json(s.at("cognition_range"));
    if (s.contains("alpha1_range")) spec.alpha1_range = range_from_json(s.at("alpha1_range"));
    if (s.contains("alpha2_range")) spec.alpha2_range = range_from_json(s.at("alpha2_range"));
    if (s.contains("beta_range")) spec.beta_range = range_from_json(s.at("beta_range"));
    if (s.contains("gamma_range")) spec.gamma_range = range_from_json(s.at("gamma_range"));
    spec.noise_std = get_or(s, "noise_std", spec.noise_std);
    c.synth = spec;
  } else if (!j.contains("cohort_path")) {
    c.synth = cohort::SynthSpec{};  // default cohort source
  }
  if (j.contains("adjacency")) {
    const json& adj = j.at("adjacency");
    const auto rows = adj.size();
    c.adjacency = brainsim::Mat(rows, rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t col = 0; col < adj.at(r).size(); ++col)
        c.adjacency(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) =
            adj.at(r).at(col).get<double>();
  }
  if (j.contains("env")) {
    const json& e = j.at("env");
    c.env.horizon = get_or(e, "horizon", c.env.horizon);
    c.env.substeps_per_year = get_or(e, "substeps_per_year", c.env.substeps_per_year);
    c.env.action_limit = get_or(e, "action_limit", c.env.action_limit);
    c.env.reward_clip = get_or(e, "reward_clip", c.env.reward_clip);
    c.env.size_floor = get_or(e, "size_floor", c.env.size_floor);
    c.env.uniform_info_split = get_or(e, "uniform_info_split", c.env.uniform_info_split);
  }
  c.lambda_tradeoff = get_or(j, "lambda_tradeoff", c.lambda_tradeoff);
  c.c_task = get_or(j, "c_task", c.c_task);
  if (j.contains("param_map")) {
    const json& m = j.at("param_map");
    if (m.contains("alpha1")) c.param_map.alpha1 = linear_map_from_json(m.at("alpha1"), c.param_map.alpha1);
    if (m.contains("alpha2")) c.param_map.alpha2 = linear_map_from_json(m.at("alpha2"), c.param_map.alpha2);
    if (m.contains("beta")) c.param_map.beta = linear_map_from_json(m.at("beta"), c.param_map.beta);
    if (m.contains("gamma")) c.param_map.gamma_act = linear_map_from_json(m.at("gamma"), c.param_map.gamma_act);
  }
  c.k_folds = get_or(j, "k_folds", c.k_folds);
  c.n_seeds = get_or(j, "n_seeds", c.n_seeds);
  c.workers = get_or(j, "workers", c.workers);
  if (j.contains("agents")) {
    for (const auto& a : j.at("agents")) c.agent_configs.push_back(agent_from_json(a));
  } else {
    c.agent_configs.push_back(agents::AgentConfig{});
  }
  if (j.contains("explain")) {
    const json& e = j.at("explain");
    c.explain.enabled = get_or(e, "enabled", c.explain.enabled);
    c.explain.scope =
        explain_scope_from_string(get_or<std::string>(e, "scope", to_string(c.explain.scope)));
    c.explain.background_rows = get_or(e, "background_rows", c.explain.background_rows);
    c.explain.patient_id = get_or<std::string>(e, "patient_id", c.explain.patient_id);
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path, bool apply_env) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": invalid JSON: " + e.what());
  }
  ExperimentConfig c = from_json(j);
  if (apply_env) c.apply_env_overrides();
  return c;
}

void ExperimentConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config: " + path);
  out << to_json().dump(2) << '\n';
}

void ExperimentConfig::apply_env_overrides() {
  if (const char* v = std::getenv("XRLAD_SEED")) seed = std::strtoull(v, nullptr, 10);
  if (const char* v = std::getenv("XRLAD_OUT_DIR")) out_dir = v;
  if (const char* v = std::getenv("XRLAD_K_FOLDS")) k_folds = std::atoi(v);
  if (const char* v = std::getenv("XRLAD_N_SEEDS")) n_seeds = std::atoi(v);
  if (const char* v = std::getenv("XRLAD_WORKERS")) workers = std::atoi(v);
}

std::vector<std::string> ExperimentConfig::validate() const {
  std::vector<std::string> errors;
  if (cohort_path.has_value() == synth.has_value())
    errors.push_back("exactly one cohort source (cohort_path or synth) must be configured");
  if (cohort_path && !std::filesystem::exists(*cohort_path))
    errors.push_back("cohort_path does not exist: " + *cohort_path);
  if (synth) {
    try {
      synth->validate();
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
  }
  if (k_folds < 2) errors.push_back("k_folds must be >= 2");
  if (n_seeds < 1) errors.push_back("n_seeds must be >= 1");
  if (workers < 1) errors.push_back("workers must be >= 1");
  if (env.horizon < 2) errors.push_back("env.horizon must be >= 2");
  if (agent_configs.empty()) errors.push_back("at least one agent must be configured");
  for (const auto& a : agent_configs) {
    try {
      a.validate();
    } catch (const std::exception& e) {
      errors.push_back(std::string(agents::to_string(a.kind)) + ": " + e.what());
    }
  }
  try {
    brainsim::laplacian(adjacency);
  } catch (const std::exception& e) {
    errors.push_back(std::string("adjacency: ") + e.what());
  }
  if (explain.enabled && explain.scope == ExplainScope::Patient && explain.patient_id.empty())
    errors.push_back("explain scope 'patient' requires a patient_id");
  if (explain.enabled && explain.background_rows < 1)
    errors.push_back("explain.background_rows must be >= 1");
  return errors;
}

}  // namespace xrlad::config
