#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "xrlad/cohort.hpp"

using namespace xrlad;
using cohort::ScoreKind;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string csv_header() {
  return "patient_id,age,gender,education,apoe4,score_kind,x_hc,x_pfc,d_hc,d_pfc,"
         "alpha1,alpha2,beta,gamma,score_y0,score_y1,score_y2,score_y3,score_y4,"
         "score_y5,score_y6,score_y7,score_y8,score_y9,score_y10";
}

}  // namespace

TEST_CASE("score normalization round trip") {
  CHECK(cohort::normalize_score(30.0, ScoreKind::MMSE) == doctest::Approx(10.0));
  CHECK(cohort::normalize_score(0.0, ScoreKind::MMSE) == 0.0);
  CHECK(cohort::normalize_score(0.0, ScoreKind::ADAS13) == doctest::Approx(10.0));
  CHECK(cohort::normalize_score(85.0, ScoreKind::ADAS13) == doctest::Approx(0.0));
  CHECK_THROWS(cohort::normalize_score(31.0, ScoreKind::MMSE));
  CHECK_THROWS(cohort::normalize_score(-1.0, ScoreKind::ADAS13));

  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const double mmse = rng.uniform(0, 30);
    CHECK(cohort::denormalize_score(cohort::normalize_score(mmse, ScoreKind::MMSE),
                                    ScoreKind::MMSE) == doctest::Approx(mmse).epsilon(1e-9));
    const double adas = rng.uniform(0, 85);
    CHECK(cohort::denormalize_score(cohort::normalize_score(adas, ScoreKind::ADAS13),
                                    ScoreKind::ADAS13) == doctest::Approx(adas).epsilon(1e-9));
  }
}

TEST_CASE("cohort CSV load validation") {
  const std::string path = temp_path("xrlad_cohort_test.csv");
  {
    std::ofstream out(path);
    out << csv_header() << "\n";
    out << "P1,72,M,16,0,MMSE,2.0,4.0,1.2,1.0,,,,,27,26,,25,,,,,,,24\n";
    out << "P2,68,F,18,1,MMSE,2.5,4.5,1.4,1.1,0.05,0.01,0.08,1.0,28,27,26,,,,,,,,\n";
    out << "P3,81,M,12,1,MMSE,1.8,3.9,1.9,1.6,,,,,24,23,22,21,20,19,18,17,16,15,14\n";
  }
  const auto c = cohort::load_cohort(path);
  CHECK(c.records.size() == 3);
  CHECK(c.score_kind == ScoreKind::MMSE);
  CHECK(c.by_id("P1").follow_up_count() == 3);
  CHECK_FALSE(c.by_id("P1").params_override.has_value());
  CHECK(c.by_id("P2").params_override.has_value());
  CHECK(c.by_id("P2").params_override->alpha1 == doctest::Approx(0.05));

  SUBCASE("duplicate id names the offender") {
    std::ofstream out(path);
    out << csv_header() << "\n";
    out << "P1,72,M,16,0,MMSE,2.0,4.0,1.2,1.0,,,,,27,26,25,,,,,,,,\n";
    out << "P1,68,F,18,1,MMSE,2.5,4.5,1.4,1.1,,,,,28,27,26,,,,,,,,\n";
    out.close();
    CHECK_THROWS_WITH_AS(cohort::load_cohort(path), doctest::Contains("P1"), std::runtime_error);
  }
  SUBCASE("fewer than two follow-ups is rejected") {
    std::ofstream out(path);
    out << csv_header() << "\n";
    out << "P9,72,M,16,0,MMSE,2.0,4.0,1.2,1.0,,,,,27,26,,,,,,,,,\n";
    out.close();
    CHECK_THROWS_WITH_AS(cohort::load_cohort(path), doctest::Contains("fewer than 2 follow-ups"),
                         std::runtime_error);
  }
  SUBCASE("missing year-0 score is rejected") {
    std::ofstream out(path);
    out << csv_header() << "\n";
    out << "P9,72,M,16,0,MMSE,2.0,4.0,1.2,1.0,,,,,,26,25,24,,,,,,,\n";
    out.close();
    CHECK_THROWS(cohort::load_cohort(path));
  }
  SUBCASE("malformed header is rejected") {
    std::ofstream out(path);
    out << "id,age\nP1,72\n";
    out.close();
    CHECK_THROWS_WITH_AS(cohort::load_cohort(path), doctest::Contains("header"),
                         std::runtime_error);
  }
  SUBCASE("non-numeric field is rejected with its row") {
    std::ofstream out(path);
    out << csv_header() << "\n";
    out << "P9,seventy,M,16,0,MMSE,2.0,4.0,1.2,1.0,,,,,27,26,25,,,,,,,,\n";
    out.close();
    CHECK_THROWS_WITH_AS(cohort::load_cohort(path), doctest::Contains("row 2"),
                         std::runtime_error);
  }
  std::remove(path.c_str());
}

TEST_CASE("cohort CSV round trip") {
  cohort::SynthSpec spec;
  spec.n_patients = 12;
  const auto c = cohort::generate_synthetic_cohort(spec, 9);
  const std::string path = temp_path("xrlad_cohort_roundtrip.csv");
  cohort::save_cohort(c, path);
  const auto c2 = cohort::load_cohort(path);
  REQUIRE(c2.records.size() == c.records.size());
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    CHECK(c2.records[i].patient_id == c.records[i].patient_id);
    CHECK(c2.records[i].baseline_size.isApprox(c.records[i].baseline_size));
    for (int y = 0; y < cohort::kTrajectoryYears; ++y) {
      REQUIRE(c2.records[i].scores[y].has_value() == c.records[i].scores[y].has_value());
      if (c.records[i].scores[y])
        CHECK(*c2.records[i].scores[y] == *c.records[i].scores[y]);  // bit-exact via %.17g
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("demographic parameter map") {
  cohort::ParamMap map;
  map.alpha1 = {0.02, 0.0, 0.0, 0.0, 0.01};
  cohort::Demographics z;
  z.apoe4 = true;
  auto p = cohort::demographic_params(z, map, std::nullopt, 1.0, 10.0);
  CHECK(p.alpha1 == doctest::Approx(0.03));

  // All-zero coefficients return the intercepts exactly.
  cohort::ParamMap zeros;
  zeros.alpha1.intercept = 0.07;
  zeros.gamma_act.intercept = 1.5;
  p = cohort::demographic_params(z, zeros, std::nullopt, 1.0, 10.0);
  CHECK(p.alpha1 == 0.07);
  CHECK(p.gamma_act == 1.5);

  // Override wins untouched.
  cohort::ParamOverride o{0.123, 0.045, 0.2, 0.9};
  p = cohort::demographic_params(z, map, o, 1.0, 10.0);
  CHECK(p.alpha1 == 0.123);
  CHECK(p.gamma_act == 0.9);

  // Negative map output clamps at zero.
  cohort::ParamMap negative;
  negative.alpha1 = {-0.5, 0.0, 0.0, 0.0, 0.0};
  p = cohort::demographic_params(z, negative, std::nullopt, 1.0, 10.0);
  CHECK(p.alpha1 == 0.0);
}

TEST_CASE("k-fold split covers the cohort at the 64:16:20 ratios") {
  cohort::SynthSpec spec;
  spec.n_patients = 160;
  const auto c = cohort::generate_synthetic_cohort(spec, 21);
  const auto folds = cohort::kfold_split(c, 5, 77);
  REQUIRE(folds.size() == 5);

  std::set<std::string> all_test;
  for (const auto& f : folds) {
    CHECK(f.test.size() == 32);
    CHECK(f.train.size() >= 102);
    CHECK(f.train.size() <= 103);
    CHECK(f.validation.size() >= 25);
    CHECK(f.validation.size() <= 26);
    CHECK(f.train.size() + f.validation.size() + f.test.size() == 160);
    std::set<std::string> in_fold;
    for (const auto& id : f.train) CHECK(in_fold.insert(id).second);
    for (const auto& id : f.validation) CHECK(in_fold.insert(id).second);
    for (const auto& id : f.test) CHECK(in_fold.insert(id).second);
    for (const auto& id : f.test) CHECK(all_test.insert(id).second);  // disjoint test blocks
  }
  CHECK(all_test.size() == 160);  // union of tests = cohort

  // Deterministic under seed; different under another.
  const auto again = cohort::kfold_split(c, 5, 77);
  for (int f = 0; f < 5; ++f) CHECK(again[f].test == folds[f].test);
  const auto other = cohort::kfold_split(c, 5, 78);
  bool any_differ = false;
  for (int f = 0; f < 5; ++f) any_differ = any_differ || other[f].test != folds[f].test;
  CHECK(any_differ);

  CHECK_THROWS(cohort::kfold_split(c, 1, 0));
  cohort::Cohort tiny;
  tiny.score_kind = c.score_kind;
  tiny.records.assign(c.records.begin(), c.records.begin() + 3);
  CHECK_THROWS(cohort::kfold_split(tiny, 5, 0));
}

TEST_CASE("fold ratios stay within one patient of 64:16:20 for odd sizes") {
  cohort::SynthSpec spec;
  spec.n_patients = 47;
  const auto c = cohort::generate_synthetic_cohort(spec, 3);
  for (int k : {2, 3, 5}) {
    for (std::uint64_t seed : {1ull, 9ull}) {
      const auto folds = cohort::kfold_split(c, k, seed);
      std::set<std::string> all_test;
      for (const auto& f : folds) {
        for (const auto& id : f.test) all_test.insert(id);
        const double rest = static_cast<double>(47 - f.test.size());
        CHECK(std::abs(static_cast<double>(f.train.size()) - 0.8 * rest) <= 1.0);
        CHECK(std::abs(static_cast<double>(f.validation.size()) - 0.2 * rest) <= 1.0);
      }
      CHECK(all_test.size() == 47);
    }
  }
}

TEST_CASE("scaler fitting applies the 5% margin") {
  cohort::SynthSpec spec;
  spec.n_patients = 2;
  spec.noise_std = 0.0;
  auto c = cohort::generate_synthetic_cohort(spec, 4);
  c.records[0].baseline_size << 2.0, 4.0;
  c.records[1].baseline_size << 4.0, 4.0;
  const auto graph = cohort::default_graph();
  const auto scaler = cohort::fit_scaler(c, graph, brainsim::EnvConfig{});
  CHECK(scaler.min_bound(0) == doctest::Approx(1.9));
  CHECK(scaler.max_bound(0) == doctest::Approx(4.1));
  // Constant feature widens to +-0.5.
  CHECK(scaler.min_bound(1) == doctest::Approx(3.5));
  CHECK(scaler.max_bound(1) == doctest::Approx(4.5));

  // Applied to its own fitting data, everything lands in [0,1].
  brainsim::ModelParams neutral;
  for (const auto& r : c.records) {
    const auto state =
        brainsim::env_reset(cohort::baseline_of(r), neutral, graph, brainsim::EnvConfig{});
    const auto scaled = scaler.apply(brainsim::raw_observation(state));
    CHECK(scaled.minCoeff() >= 0.0);
    CHECK(scaled.maxCoeff() <= 1.0);
  }

  // Single patient degenerates to the constant-feature rule everywhere.
  cohort::Cohort solo;
  solo.score_kind = c.score_kind;
  solo.records = {c.records[0]};
  const auto s1 = cohort::fit_scaler(solo, graph, brainsim::EnvConfig{});
  CHECK((s1.max_bound - s1.min_bound).isApprox(brainsim::Vec::Constant(6, 1.0)));
}

TEST_CASE("synthetic cohort shape and determinism") {
  cohort::SynthSpec spec;
  const auto c = cohort::generate_synthetic_cohort(spec, 42);
  CHECK(c.records.size() == 160);
  for (const auto& r : c.records) {
    for (int y = 0; y < cohort::kTrajectoryYears; ++y) CHECK(r.scores[y].has_value());
    CHECK(r.params_override.has_value());
  }
  const auto c2 = cohort::generate_synthetic_cohort(spec, 42);
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    CHECK(c.records[i].patient_id == c2.records[i].patient_id);
    CHECK(c.records[i].baseline_size == c2.records[i].baseline_size);
    for (int y = 0; y < cohort::kTrajectoryYears; ++y)
      CHECK(*c.records[i].scores[y] == *c2.records[i].scores[y]);
  }
  CHECK_THROWS(cohort::generate_synthetic_cohort(cohort::SynthSpec{.n_patients = 0}, 1));
}

TEST_CASE("frozen dynamics give constant synthetic scores") {
  cohort::SynthSpec spec;
  spec.n_patients = 20;
  spec.noise_std = 0.0;
  spec.alpha1_range = {0.0, 0.0};
  spec.alpha2_range = {0.0, 0.0};
  spec.beta_range = {0.0, 0.0};
  spec.cognition_range = {10.0, 10.0};  // start at the demand ceiling
  const auto c = cohort::generate_synthetic_cohort(spec, 10);
  for (const auto& r : c.records)
    for (int y = 1; y < cohort::kTrajectoryYears; ++y) CHECK(*r.scores[y] == *r.scores[0]);

  // With a lower baseline the allocation policy climbs to the ceiling within
  // a year and holds there, so years 1..10 are constant.
  spec.cognition_range = {6.0, 10.0};
  const auto c2 = cohort::generate_synthetic_cohort(spec, 11);
  for (const auto& r : c2.records)
    for (int y = 2; y < cohort::kTrajectoryYears; ++y)
      CHECK(*r.scores[y] == doctest::Approx(*r.scores[1]).epsilon(1e-12));
}

TEST_CASE("synthetic ground truth replays exactly through the simulator") {
  cohort::SynthSpec spec;
  spec.n_patients = 24;
  spec.noise_std = 0.0;
  const auto c = cohort::generate_synthetic_cohort(spec, 31);
  const auto graph = cohort::default_graph();
  for (const auto& r : c.records) {
    const auto params = cohort::params_for(r, cohort::ParamMap::defaults(), spec.lambda_tradeoff,
                                           spec.c_task);
    brainsim::Environment env(cohort::baseline_of(r), params, graph, spec.env);
    std::vector<double> replay{cohort::normalize_score(*r.scores[0], r.score_kind)};
    while (!env.done()) {
      const auto out =
          env.step(cohort::allocation_policy(env.state(), params, spec.env.action_limit));
      replay.push_back(out.derived.cognition);
    }
    while (replay.size() < cohort::kTrajectoryYears) replay.push_back(replay.back());
    for (int y = 0; y < cohort::kTrajectoryYears; ++y) {
      const double stored = cohort::normalize_score(*r.scores[y], r.score_kind);
      CHECK(stored == doctest::Approx(replay[y]).epsilon(1e-12));
    }
  }
}

TEST_CASE("ADAS13 cohorts generate on the inverted scale") {
  cohort::SynthSpec spec;
  spec.n_patients = 10;
  spec.score_kind = cohort::ScoreKind::ADAS13;
  const auto c = cohort::generate_synthetic_cohort(spec, 13);
  CHECK(c.score_kind == cohort::ScoreKind::ADAS13);
  for (const auto& r : c.records) {
    for (int y = 0; y < cohort::kTrajectoryYears; ++y) {
      CHECK(*r.scores[y] >= 0.0);
      CHECK(*r.scores[y] <= 85.0);
    }
    // Baseline ability 6..10 maps to raw ADAS13 0..34.
    CHECK(*r.scores[0] <= 34.0 + 1e-9);
  }
}

TEST_CASE("mixed score kinds in one file are rejected") {
  const std::string path = temp_path("xrlad_cohort_mixed.csv");
  {
    std::ofstream out(path);
    out << csv_header() << "\n";
    out << "P1,72,M,16,0,MMSE,2.0,4.0,1.2,1.0,,,,,27,26,25,,,,,,,,\n";
    out << "P2,68,F,18,1,ADAS13,2.5,4.5,1.4,1.1,,,,,28,27,26,,,,,,,,\n";
  }
  CHECK_THROWS_WITH_AS(cohort::load_cohort(path), doctest::Contains("score_kind"),
                       std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("synthetic cohort contains meaningful decliners") {
  cohort::SynthSpec spec;  // defaults
  const auto c = cohort::generate_synthetic_cohort(spec, 42);
  int declining = 0;
  for (const auto& r : c.records) {
    const double c0 = cohort::normalize_score(*r.scores[0], r.score_kind);
    const double c10 = cohort::normalize_score(*r.scores[10], r.score_kind);
    if (c10 < c0 - 1.0) ++declining;
  }
  CHECK(declining > 10);
  CHECK(declining < 150);
}
