#include "xrlad/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace xrlad::cohort {

namespace {

constexpr double kAgeMean = 70.0, kAgeSd = 10.0;
constexpr double kEduMean = 16.0, kEduSd = 4.0;

const char* kHeader =
    "patient_id,age,gender,education,apoe4,score_kind,x_hc,x_pfc,d_hc,d_pfc,"
    "alpha1,alpha2,beta,gamma,score_y0,score_y1,score_y2,score_y3,score_y4,"
    "score_y5,score_y6,score_y7,score_y8,score_y9,score_y10";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& field, const std::string& what) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(field, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument(what + ": not a number: '" + field + "'");
  }
  if (pos != field.size()) throw std::invalid_argument(what + ": trailing junk in '" + field + "'");
  return v;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(ScoreKind kind) { return kind == ScoreKind::MMSE ? "MMSE" : "ADAS13"; }

ScoreKind score_kind_from_string(const std::string& s) {
  if (s == "MMSE") return ScoreKind::MMSE;
  if (s == "ADAS13") return ScoreKind::ADAS13;
  throw std::invalid_argument("unknown score kind: '" + s + "'");
}

std::pair<double, double> raw_score_range(ScoreKind kind) {
  return kind == ScoreKind::MMSE ? std::pair{0.0, 30.0} : std::pair{0.0, 85.0};
}

double normalize_score(double raw, ScoreKind kind) {
  const auto [lo, hi] = raw_score_range(kind);
  if (raw < lo - 1e-12 || raw > hi + 1e-12)
    throw std::out_of_range("score " + format_double(raw) + " outside valid " + to_string(kind) +
                            " range [" + format_double(lo) + "," + format_double(hi) + "]");
  if (kind == ScoreKind::MMSE) return raw / 3.0;
  return 10.0 * (1.0 - raw / 85.0);
}

double denormalize_score(double normalized, ScoreKind kind) {
  if (normalized < -1e-12 || normalized > 10.0 + 1e-12)
    throw std::out_of_range("normalized score outside [0,10]: " + format_double(normalized));
  if (kind == ScoreKind::MMSE) return normalized * 3.0;
  return 85.0 * (1.0 - normalized / 10.0);
}

void PatientRecord::validate() const {
  if (patient_id.empty()) throw std::invalid_argument("patient_id must be non-empty");
  const std::string tag = "patient " + patient_id + ": ";
  if (baseline_size.size() == 0 || baseline_size.size() != baseline_amyloid.size())
    throw std::invalid_argument(tag + "baseline size/amyloid dimensions invalid");
  if ((baseline_size.array() <= 0.0).any())
    throw std::invalid_argument(tag + "baseline sizes must be positive");
  if ((baseline_amyloid.array() < 0.0).any())
    throw std::invalid_argument(tag + "baseline amyloid must be nonnegative");
  if (!scores[0].has_value()) throw std::invalid_argument(tag + "missing year-0 score");
  if (follow_up_count() < 2) throw std::invalid_argument(tag + "fewer than 2 follow-ups");
  const auto [lo, hi] = raw_score_range(score_kind);
  for (int y = 0; y < kTrajectoryYears; ++y) {
    if (scores[y] && (*scores[y] < lo - 1e-12 || *scores[y] > hi + 1e-12))
      throw std::invalid_argument(tag + "year " + std::to_string(y) + " score out of range");
  }
}

int PatientRecord::follow_up_count() const {
  int n = 0;
  for (int y = 1; y < kTrajectoryYears; ++y)
    if (scores[y]) ++n;
  return n;
}

double PatientRecord::baseline_cognition_norm() const {
  return normalize_score(scores[0].value(), score_kind);
}

const PatientRecord& Cohort::by_id(const std::string& id) const {
  for (const auto& r : records)
    if (r.patient_id == id) return r;
  throw std::out_of_range("no such patient: " + id);
}

Cohort Cohort::subset(const std::vector<std::string>& ids) const {
  std::set<std::string> wanted(ids.begin(), ids.end());
  Cohort out;
  out.score_kind = score_kind;
  for (const auto& r : records)
    if (wanted.count(r.patient_id)) out.records.push_back(r);
  if (out.records.size() != wanted.size())
    throw std::out_of_range("subset: some requested patient ids are missing from the cohort");
  return out;
}

void Cohort::validate() const {
  if (records.empty()) throw std::invalid_argument("cohort is empty");
  std::set<std::string> seen;
  for (const auto& r : records) {
    r.validate();
    if (r.score_kind != score_kind)
      throw std::invalid_argument("patient " + r.patient_id + ": mixed score kinds in cohort");
    if (!seen.insert(r.patient_id).second)
      throw std::invalid_argument("duplicate patient_id: " + r.patient_id);
  }
}

Cohort load_cohort(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open cohort file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader)
    throw std::runtime_error(path + ": malformed header; expected the documented cohort schema");

  Cohort cohort;
  std::vector<std::string> problems;
  std::set<std::string> seen_ids;
  bool kind_set = false;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = "row " + std::to_string(row);
    try {
      auto f = split_csv(line);
      if (f.size() != 25)
        throw std::invalid_argument(where + ": expected 25 fields, got " + std::to_string(f.size()));
      PatientRecord r;
      r.patient_id = f[0];
      r.z0.age = parse_number(f[1], where + " age");
      if (f[2] == "M")
        r.z0.gender = 0;
      else if (f[2] == "F")
        r.z0.gender = 1;
      else
        throw std::invalid_argument(where + ": gender must be M or F");
      r.z0.education = parse_number(f[3], where + " education");
      const double apoe = parse_number(f[4], where + " apoe4");
      if (apoe != 0.0 && apoe != 1.0) throw std::invalid_argument(where + ": apoe4 must be 0 or 1");
      r.z0.apoe4 = apoe == 1.0;
      r.score_kind = score_kind_from_string(f[5]);
      r.baseline_size = Vec(2);
      r.baseline_amyloid = Vec(2);
      r.baseline_size << parse_number(f[6], where + " x_hc"), parse_number(f[7], where + " x_pfc");
      r.baseline_amyloid << parse_number(f[8], where + " d_hc"), parse_number(f[9], where + " d_pfc");
      const bool any_param = !f[10].empty() || !f[11].empty() || !f[12].empty() || !f[13].empty();
      if (any_param) {
        if (f[10].empty() || f[11].empty() || f[12].empty() || f[13].empty())
          throw std::invalid_argument(where + ": param override must give all of alpha1,alpha2,beta,gamma");
        ParamOverride o;
        o.alpha1 = parse_number(f[10], where + " alpha1");
        o.alpha2 = parse_number(f[11], where + " alpha2");
        o.beta = parse_number(f[12], where + " beta");
        o.gamma_act = parse_number(f[13], where + " gamma");
        r.params_override = o;
      }
      for (int y = 0; y < kTrajectoryYears; ++y) {
        const std::string& field = f[14 + y];
        if (!field.empty())
          r.scores[y] = parse_number(field, where + " score_y" + std::to_string(y));
      }
      r.validate();
      if (!seen_ids.insert(r.patient_id).second)
        throw std::invalid_argument(where + ": duplicate patient_id: " + r.patient_id);
      if (!kind_set) {
        cohort.score_kind = r.score_kind;
        kind_set = true;
      } else if (r.score_kind != cohort.score_kind) {
        throw std::invalid_argument(where + ": score_kind differs from the rest of the cohort");
      }
      cohort.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      problems.push_back(where + ": " + e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = path + ": " + std::to_string(problems.size()) + " invalid row(s):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw std::runtime_error(msg);
  }
  if (cohort.records.empty()) throw std::runtime_error(path + ": no data rows");
  return cohort;
}

void save_cohort(const Cohort& cohort, const std::string& path) {
  cohort.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write cohort file: " + path);
  out << kHeader << "\n";
  for (const auto& r : cohort.records) {
    out << r.patient_id << ',' << format_double(r.z0.age) << ',' << (r.z0.gender == 0 ? 'M' : 'F')
        << ',' << format_double(r.z0.education) << ',' << (r.z0.apoe4 ? 1 : 0) << ','
        << to_string(r.score_kind) << ',' << format_double(r.baseline_size(0)) << ','
        << format_double(r.baseline_size(1)) << ',' << format_double(r.baseline_amyloid(0)) << ','
        << format_double(r.baseline_amyloid(1)) << ',';
    if (r.params_override) {
      const auto& o = *r.params_override;
      out << format_double(o.alpha1) << ',' << format_double(o.alpha2) << ','
          << format_double(o.beta) << ',' << format_double(o.gamma_act);
    } else {
      out << ",,,";
    }
    for (int y = 0; y < kTrajectoryYears; ++y) {
      out << ',';
      if (r.scores[y]) out << format_double(*r.scores[y]);
    }
    out << "\n";
  }
}

double LinearParamMap::eval(const Demographics& z0) const {
  const double age_std = (z0.age - kAgeMean) / kAgeSd;
  const double edu_std = (z0.education - kEduMean) / kEduSd;
  const double v = intercept + age_coef * age_std + gender_coef * z0.gender + edu_coef * edu_std +
                   apoe4_coef * (z0.apoe4 ? 1.0 : 0.0);
  return std::max(v, 0.0);
}

ParamMap ParamMap::defaults() {
  ParamMap m;
  m.alpha1 = {0.05, 0.01, 0.0, -0.005, 0.02};
  m.alpha2 = {0.012, 0.002, 0.0, -0.001, 0.004};
  m.beta = {0.08, 0.0, 0.0, 0.0, 0.02};
  m.gamma_act = {1.0, 0.0, 0.0, 0.0, 0.0};
  return m;
}

brainsim::ModelParams demographic_params(const Demographics& z0, const ParamMap& map,
                                         const std::optional<ParamOverride>& override_params,
                                         double lambda_tradeoff, double c_task) {
  brainsim::ModelParams p;
  p.lambda_tradeoff = lambda_tradeoff;
  p.c_task = c_task;
  if (override_params) {
    p.alpha1 = override_params->alpha1;
    p.alpha2 = override_params->alpha2;
    p.beta = override_params->beta;
    p.gamma_act = override_params->gamma_act;
  } else {
    p.alpha1 = map.alpha1.eval(z0);
    p.alpha2 = map.alpha2.eval(z0);
    p.beta = map.beta.eval(z0);
    p.gamma_act = map.gamma_act.eval(z0);
  }
  p.validate();
  return p;
}

brainsim::ModelParams params_for(const PatientRecord& patient, const ParamMap& map,
                                 double lambda_tradeoff, double c_task) {
  return demographic_params(patient.z0, map, patient.params_override, lambda_tradeoff, c_task);
}

brainsim::Baseline baseline_of(const PatientRecord& patient) {
  brainsim::Baseline b;
  b.size = patient.baseline_size;
  b.amyloid = patient.baseline_amyloid;
  b.cognition_norm = patient.baseline_cognition_norm();
  return b;
}

std::vector<FoldSplit> kfold_split(const Cohort& cohort, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
  const int n = static_cast<int>(cohort.records.size());
  if (n < k) throw std::invalid_argument("kfold_split: cohort smaller than k");

  std::vector<std::string> ids;
  for (const auto& r : cohort.records) ids.push_back(r.patient_id);
  std::sort(ids.begin(), ids.end());
  Rng rng = Rng(seed).derive("kfold");
  for (int i = n - 1; i > 0; --i)
    std::swap(ids[i], ids[rng.uniform_index(static_cast<std::size_t>(i) + 1)]);

  std::vector<FoldSplit> folds;
  int offset = 0;
  for (int f = 0; f < k; ++f) {
    const int block = n / k + (f < n % k ? 1 : 0);
    FoldSplit fold;
    fold.fold_index = f;
    fold.test.assign(ids.begin() + offset, ids.begin() + offset + block);
    std::vector<std::string> rest;
    rest.insert(rest.end(), ids.begin(), ids.begin() + offset);
    rest.insert(rest.end(), ids.begin() + offset + block, ids.end());
    const int train_n = static_cast<int>(std::llround(0.8 * rest.size()));
    fold.train.assign(rest.begin(), rest.begin() + train_n);
    fold.validation.assign(rest.begin() + train_n, rest.end());
    folds.push_back(std::move(fold));
    offset += block;
  }
  return folds;
}

brainsim::ObservationScaler fit_scaler(const Cohort& cohort, const brainsim::BrainGraph& graph,
                                       const brainsim::EnvConfig& env_config) {
  if (cohort.records.empty()) throw std::invalid_argument("fit_scaler: empty cohort");
  brainsim::ModelParams neutral;  // only the info split depends on params at reset
  Vec lo, hi;
  bool first = true;
  for (const auto& r : cohort.records) {
    const auto state = brainsim::env_reset(baseline_of(r), neutral, graph, env_config);
    const Vec obs = brainsim::raw_observation(state);
    if (first) {
      lo = obs;
      hi = obs;
      first = false;
    } else {
      lo = lo.cwiseMin(obs);
      hi = hi.cwiseMax(obs);
    }
  }
  brainsim::ObservationScaler scaler;
  scaler.min_bound = Vec(lo.size());
  scaler.max_bound = Vec(hi.size());
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    const double range = hi(i) - lo(i);
    if (range <= 0.0) {
      scaler.min_bound(i) = lo(i) - 0.5;
      scaler.max_bound(i) = hi(i) + 0.5;
    } else {
      scaler.min_bound(i) = lo(i) - 0.05 * range;
      scaler.max_bound(i) = hi(i) + 0.05 * range;
    }
  }
  scaler.fitted = true;
  return scaler;
}

void SynthSpec::validate() const {
  if (n_patients <= 0) throw std::invalid_argument("SynthSpec: n_patients must be positive");
  if (size_ranges.size() < 2) throw std::invalid_argument("SynthSpec: need a size range per region");
  auto check = [](const std::array<double, 2>& r, const std::string& what, bool positive) {
    if (r[0] > r[1]) throw std::invalid_argument("SynthSpec: " + what + " range inverted");
    if (positive && r[0] <= 0.0)
      throw std::invalid_argument("SynthSpec: " + what + " must be positive");
    if (!positive && r[0] < 0.0)
      throw std::invalid_argument("SynthSpec: " + what + " must be nonnegative");
  };
  for (const auto& sr : size_ranges) check(sr, "size", true);
  check(amyloid_range, "amyloid", false);
  check(cognition_range, "cognition", false);
  check(alpha1_range, "alpha1", false);
  check(alpha2_range, "alpha2", false);
  check(beta_range, "beta", false);
  check(gamma_range, "gamma", false);
  if (cognition_range[1] > 10.0)
    throw std::invalid_argument("SynthSpec: cognition range exceeds the 0..10 scale");
  if (noise_std < 0.0) throw std::invalid_argument("SynthSpec: noise_std must be nonnegative");
}

brainsim::Action allocation_policy(const brainsim::BrainState& state,
                                   const brainsim::ModelParams& params, double action_limit) {
  brainsim::Action a;
  a.delta_info = Vec(state.size.size());
  for (Eigen::Index v = 0; v < state.size.size(); ++v) {
    const bool efficient =
        params.lambda_tradeoff * state.size(v) > params.gamma_act;  // lambda > gamma/X_v
    a.delta_info(v) = efficient ? action_limit : -action_limit;
  }
  return a;
}

brainsim::BrainGraph default_graph() {
  Mat adj(2, 2);
  adj << 0.0, 1.0, 1.0, 0.0;
  return brainsim::BrainGraph::from_adjacency(adj);
}

Cohort generate_synthetic_cohort(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto graph = default_graph();
  Cohort cohort;
  cohort.score_kind = spec.score_kind;
  Rng root(seed);

  for (int i = 0; i < spec.n_patients; ++i) {
    Rng rng = root.derive("patient", static_cast<std::uint64_t>(i));
    PatientRecord r;
    char id[16];
    std::snprintf(id, sizeof id, "SYN%04d", i + 1);
    r.patient_id = id;
    r.score_kind = spec.score_kind;
    r.z0.age = rng.uniform(55.0, 90.0);
    r.z0.gender = rng.uniform() < 0.5 ? 0 : 1;
    r.z0.education = rng.uniform(8.0, 20.0);
    r.z0.apoe4 = rng.uniform() < 0.4;

    r.baseline_size = Vec(2);
    for (int v = 0; v < 2; ++v)
      r.baseline_size(v) = rng.uniform(spec.size_ranges[v][0], spec.size_ranges[v][1]);
    r.baseline_amyloid = Vec(2);
    for (int v = 0; v < 2; ++v)
      r.baseline_amyloid(v) = rng.uniform(spec.amyloid_range[0], spec.amyloid_range[1]);

    ParamOverride o;
    o.alpha1 = rng.uniform(spec.alpha1_range[0], spec.alpha1_range[1]);
    o.alpha2 = rng.uniform(spec.alpha2_range[0], spec.alpha2_range[1]);
    o.beta = rng.uniform(spec.beta_range[0], spec.beta_range[1]);
    o.gamma_act = rng.uniform(spec.gamma_range[0], spec.gamma_range[1]);
    r.params_override = o;

    const double c0 = rng.uniform(spec.cognition_range[0], spec.cognition_range[1]);
    brainsim::ModelParams params =
        demographic_params(r.z0, ParamMap::defaults(), r.params_override, spec.lambda_tradeoff,
                           spec.c_task);
    brainsim::Baseline b{r.baseline_size, r.baseline_amyloid, c0};
    brainsim::Environment env(b, params, graph, spec.env);

    std::vector<double> c_norm(kTrajectoryYears, 0.0);
    c_norm[0] = c0;
    int year = 1;
    for (; year < kTrajectoryYears && !env.done(); ++year) {
      const auto out = env.step(allocation_policy(env.state(), params, spec.env.action_limit));
      c_norm[year] = out.derived.cognition;
    }
    for (; year < kTrajectoryYears; ++year) c_norm[year] = c_norm[year - 1];  // degenerate tail

    Rng noise = rng.derive("noise");
    for (int y = 0; y < kTrajectoryYears; ++y) {
      double observed = c_norm[y];
      if (spec.noise_std > 0.0) observed += noise.normal(0.0, spec.noise_std);
      observed = std::clamp(observed, 0.0, 10.0);
      r.scores[y] = denormalize_score(observed, spec.score_kind);
    }
    cohort.records.push_back(std::move(r));
  }
  cohort.validate();
  return cohort;
}

}  // namespace xrlad::cohort
