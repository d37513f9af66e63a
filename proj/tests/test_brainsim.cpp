#include <doctest.h>

#include "xrlad/brainsim.hpp"
#include "xrlad/rng.hpp"

using namespace xrlad;
using brainsim::Mat;
using brainsim::Vec;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

brainsim::BrainGraph unit_graph() {
  Mat adj(2, 2);
  adj << 0, 1, 1, 0;
  return brainsim::BrainGraph::from_adjacency(adj);
}

}  // namespace

TEST_CASE("laplacian of small graphs") {
  Mat adj(2, 2);
  adj << 0, 1, 1, 0;
  Mat H = brainsim::laplacian(adj);
  CHECK(H(0, 0) == 1.0);
  CHECK(H(0, 1) == -1.0);
  CHECK(H(1, 0) == -1.0);
  CHECK(H(1, 1) == 1.0);

  Mat empty = Mat::Zero(2, 2);
  CHECK(brainsim::laplacian(empty).isZero(0.0));

  Mat adj3(3, 3);
  adj3 << 0, 2, 0, 2, 0, 1, 0, 1, 0;
  Mat H3 = brainsim::laplacian(adj3);
  Mat expected(3, 3);
  expected << 2, -2, 0, -2, 3, -1, 0, -1, 1;
  CHECK((H3 - expected).cwiseAbs().maxCoeff() == 0.0);

  // Rows sum to zero for any valid adjacency.
  CHECK(H3.rowwise().sum().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("laplacian rejects invalid adjacency") {
  Mat asym(2, 2);
  asym << 0, 1, 2, 0;
  CHECK_THROWS(brainsim::laplacian(asym));
  Mat neg(2, 2);
  neg << 0, -1, -1, 0;
  CHECK_THROWS(brainsim::laplacian(neg));
  Mat diag(2, 2);
  diag << 1, 0, 0, 1;
  CHECK_THROWS(brainsim::laplacian(diag));
}

TEST_CASE("closed-form 2-node diffusion oracle") {
  CHECK(brainsim::closed_form_diffusion_2node(vec2(2, 0), 1.0, 0.1, 0.0).isApprox(vec2(2, 0)));
  const Vec eq = brainsim::closed_form_diffusion_2node(vec2(3, 3), 0.7, 0.3, 5.0);
  CHECK(eq(0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(eq(1) == doctest::Approx(3.0).epsilon(1e-12));
  const Vec d = brainsim::closed_form_diffusion_2node(vec2(2, 0), 1.0, 0.1, 1.0);
  CHECK(d(0) == doctest::Approx(1.81873).epsilon(1e-5));
  CHECK(d(1) == doctest::Approx(0.18127).epsilon(1e-4));
  CHECK_THROWS(brainsim::closed_form_diffusion_2node(Vec::Ones(3), 1.0, 0.1, 1.0));
}

TEST_CASE("euler diffusion matches the closed form and conserves mass") {
  const auto g = unit_graph();
  // Uniform vector lies in the Laplacian kernel.
  CHECK(brainsim::diffuse_amyloid(vec2(1, 1), g.laplacian, 0.4, 1.0, 50).isApprox(vec2(1, 1)));
  // Zero rate freezes the field.
  CHECK(brainsim::diffuse_amyloid(vec2(2, 0), g.laplacian, 0.0, 1.0, 10).isApprox(vec2(2, 0)));

  const Vec euler = brainsim::diffuse_amyloid(vec2(2, 0), g.laplacian, 0.1, 1.0, 1000);
  CHECK(euler(0) == doctest::Approx(1.0 + std::exp(-0.2)).epsilon(1e-4));
  CHECK(euler(1) == doctest::Approx(1.0 - std::exp(-0.2)).epsilon(1e-4));

  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec d0 = vec2(rng.uniform(0.0, 5.0), rng.uniform(0.0, 5.0));
    const double beta = rng.uniform(0.0, 1.0);
    const Vec out = brainsim::diffuse_amyloid(d0, g.laplacian, beta, 1.0, 100);
    CHECK(std::abs(out.sum() - d0.sum()) < 1e-9);
    CHECK(out.minCoeff() >= -1e-12);  // positivity under a stable step size
  }
}

TEST_CASE("activity, cognition and cost") {
  CHECK(brainsim::activity(Vec::Constant(1, 3.0), Vec::Constant(1, 6.0), 2.0)(0) == 1.0);
  CHECK(brainsim::activity(vec2(0, 0), vec2(1, 2), 1.0).isZero(0.0));
  const Vec y = brainsim::activity(vec2(4, 2), vec2(2, 4), 1.0);
  CHECK(y(0) == 2.0);
  CHECK(y(1) == 0.5);
  CHECK_THROWS(brainsim::activity(vec2(1, 1), vec2(0, 1), 1.0));

  CHECK(brainsim::cognition(vec2(4, 3)) == 7.0);
  CHECK(brainsim::cognition(vec2(0, 0)) == 0.0);
  CHECK(brainsim::cognition(vec2(10, 0)) == 10.0);
  CHECK(brainsim::energetic_cost(vec2(1, 2)) == 3.0);
  CHECK(brainsim::energetic_cost(vec2(0.5, 0.25)) == 0.75);
}

TEST_CASE("size update") {
  const Vec same = brainsim::update_size(vec2(5, 4), vec2(1, 1), vec2(2, 2), 0.0, 0.0, 1.0, 1e-6);
  CHECK(same.isApprox(vec2(5, 4)));
  const Vec one = brainsim::update_size(Vec::Constant(1, 5.0), Vec::Constant(1, 1.0),
                                        Vec::Constant(1, 2.0), 0.1, 0.05, 1.0, 1e-6);
  CHECK(one(0) == doctest::Approx(4.8).epsilon(1e-12));
  const Vec frozen = brainsim::update_size(vec2(5, 4), vec2(0, 0), vec2(0, 0), 0.3, 0.2, 1.0, 1e-6);
  CHECK(frozen.isApprox(vec2(5, 4)));
  // Floor holds.
  const Vec floored = brainsim::update_size(vec2(0.1, 5), vec2(10, 0), vec2(0, 0), 1.0, 0.0, 1.0, 1e-6);
  CHECK(floored(0) == 1e-6);
}

TEST_CASE("reward definition and clipping") {
  brainsim::ModelParams p;
  p.lambda_tradeoff = 1.0;
  p.c_task = 10.0;
  CHECK(brainsim::reward(10.0, 0.0, p, 2000.0) == 0.0);
  CHECK(brainsim::reward(8.0, 3.0, p, 2000.0) == -5.0);
  p.lambda_tradeoff = 1000.0;
  CHECK(brainsim::reward(0.0, 0.0, p, 2000.0) == -2000.0);

  // Zero only at perfect match with zero cost.
  p.lambda_tradeoff = 1.0;
  Rng rng(23);
  for (int i = 0; i < 200; ++i) {
    const double c = rng.uniform(0.0, 10.0), m = rng.uniform(0.0, 5.0);
    if (c != p.c_task || m != 0.0) CHECK(brainsim::reward(c, m, p, 2000.0) != 0.0);
  }
}

TEST_CASE("action projection") {
  brainsim::ModelParams p;
  p.c_task = 10.0;
  CHECK(brainsim::project_action(vec2(3, 3), vec2(0, 0), p, 2.0).isApprox(vec2(3, 3)));
  const Vec scaled = brainsim::project_action(vec2(5, 5), vec2(2, 2), p, 2.0);
  CHECK(scaled(0) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(scaled(1) == doctest::Approx(5.0).epsilon(1e-12));
  const Vec floored = brainsim::project_action(vec2(1, 0), vec2(-3, 0), p, 2.0);
  CHECK(floored.isApprox(vec2(0, 0)));

  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const Vec info = vec2(rng.uniform(0, 12), rng.uniform(0, 12));
    const Vec delta = vec2(rng.uniform(-5, 5), rng.uniform(-5, 5));
    const Vec out = brainsim::project_action(info, delta, p, 2.0);
    CHECK(out.minCoeff() >= 0.0);
    CHECK(out.sum() <= p.c_task + 1e-12);
  }
}

TEST_CASE("env reset splits baseline cognition") {
  const auto g = unit_graph();
  brainsim::ModelParams p;
  brainsim::EnvConfig cfg;
  brainsim::Baseline b{vec2(2, 4), vec2(1, 1), 9.0};
  const auto s = brainsim::env_reset(b, p, g, cfg);
  CHECK(s.year == 0);
  CHECK(s.info_prev(0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(s.info_prev(1) == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(s.amyloid_total.isZero(0.0));

  b.cognition_norm = 0.0;
  CHECK(brainsim::env_reset(b, p, g, cfg).info_prev.isZero(0.0));

  cfg.uniform_info_split = true;
  b.cognition_norm = 9.0;
  const auto uniform = brainsim::env_reset(b, p, g, cfg);
  CHECK(uniform.info_prev(0) == doctest::Approx(4.5));

  // Determinism: identical inputs give identical states.
  cfg.uniform_info_split = false;
  const auto s2 = brainsim::env_reset(b, p, g, cfg);
  CHECK(s2.info_prev == brainsim::env_reset(b, p, g, cfg).info_prev);

  brainsim::Baseline bad{vec2(0, 4), vec2(1, 1), 9.0};
  CHECK_THROWS(brainsim::env_reset(bad, p, g, cfg));
}

TEST_CASE("env step: frozen dynamics and horizon") {
  const auto g = unit_graph();
  brainsim::ModelParams p;
  p.alpha1 = p.alpha2 = p.beta = 0.0;
  p.lambda_tradeoff = 1.0;
  brainsim::EnvConfig cfg;
  brainsim::Baseline b{vec2(2, 4), vec2(1, 2), 6.0};
  auto s = brainsim::env_reset(b, p, g, cfg);
  const auto out = brainsim::env_step(s, brainsim::Action{vec2(0, 0)}, p, g, cfg);
  CHECK(out.next.year == 1);
  CHECK(out.next.size.isApprox(s.size));
  CHECK(out.next.amyloid.isApprox(s.amyloid));
  CHECK(out.next.info_prev.isApprox(s.info_prev));
  CHECK(out.reward == doctest::Approx(-(10.0 - 6.0) - (out.derived.cost)));
  CHECK_FALSE(out.done);

  // Stepping to the horizon sets done.
  brainsim::Environment env(b, p, g, cfg);
  int steps = 0;
  while (!env.done()) {
    env.step(brainsim::Action{vec2(0, 0)});
    ++steps;
  }
  CHECK(steps == cfg.horizon - 1);
  CHECK(env.state().year == cfg.horizon - 1);
  CHECK_THROWS(env.step(brainsim::Action{vec2(0, 0)}));
}

TEST_CASE("env step matches the diffusion oracle") {
  const auto g = unit_graph();
  brainsim::ModelParams p;
  p.beta = 0.1;
  p.alpha1 = p.alpha2 = 0.0;
  brainsim::EnvConfig cfg;
  cfg.substeps_per_year = 1000;
  brainsim::Baseline b{vec2(2, 4), vec2(2, 0), 6.0};
  auto s = brainsim::env_reset(b, p, g, cfg);
  const auto out = brainsim::env_step(s, brainsim::Action{vec2(0, 0)}, p, g, cfg);
  const Vec exact = brainsim::closed_form_diffusion_2node(vec2(2, 0), 1.0, 0.1, 1.0);
  CHECK((out.next.amyloid - exact).cwiseAbs().maxCoeff() < 1e-4);
  // Trapezoid accumulation of phi.
  CHECK(out.next.amyloid_total.isApprox(0.5 * (s.amyloid + out.next.amyloid)));
}

TEST_CASE("monotone atrophy and degenerate termination") {
  const auto g = unit_graph();
  brainsim::ModelParams p;
  p.alpha1 = 3.0;  // aggressive atrophy to force the floor
  p.alpha2 = 0.0;
  brainsim::EnvConfig cfg;
  brainsim::Baseline b{vec2(1.5, 1.5), vec2(2.5, 2.5), 8.0};
  brainsim::Environment env(b, p, g, cfg);
  Vec prev = env.state().size;
  bool degenerated = false;
  while (!env.done()) {
    const auto out = env.step(brainsim::Action{vec2(0.5, 0.5)});
    CHECK(((out.next.size.array() - prev.array()) <= 1e-12).all());
    prev = out.next.size;
    if (out.degenerate) degenerated = true;
  }
  CHECK(degenerated);
  CHECK(env.state().year < cfg.horizon - 1);
}

TEST_CASE("observation scaling") {
  const auto g = unit_graph();
  brainsim::ObservationScaler scaler;
  scaler.min_bound = Vec::Zero(6);
  scaler.max_bound = Vec::Constant(6, 2.0);
  scaler.fitted = true;

  brainsim::BrainState s;
  s.size = vec2(0, 0);
  s.amyloid = vec2(0, 0);
  s.info_prev = vec2(0, 0);
  s.amyloid_total = vec2(0, 0);
  CHECK(brainsim::observe(s, scaler).isZero(0.0));
  s.size = vec2(2, 2);
  s.amyloid = vec2(2, 2);
  s.info_prev = vec2(2, 2);
  CHECK(brainsim::observe(s, scaler).isApprox(Vec::Ones(6)));
  s.size = vec2(1, 1);
  s.amyloid = vec2(1, 1);
  s.info_prev = vec2(1, 1);
  CHECK(brainsim::observe(s, scaler).isApprox(Vec::Constant(6, 0.5)));
  // Outside the bounds clamps.
  s.size = vec2(5, -1);
  const Vec clamped = brainsim::observe(s, scaler);
  CHECK(clamped(0) == 1.0);
  CHECK(clamped(1) == 0.0);

  brainsim::ObservationScaler unfitted;
  CHECK_THROWS(brainsim::observe(s, unfitted));

  CHECK(brainsim::feature_names(g) ==
        std::vector<std::string>{"X_HC", "X_PFC", "D_HC", "D_PFC", "I_HC_prev", "I_PFC_prev"});
  CHECK(brainsim::action_names(g) == std::vector<std::string>{"dI_HC", "dI_PFC"});
}

TEST_CASE("trajectory determinism") {
  const auto g = unit_graph();
  brainsim::ModelParams p;
  brainsim::EnvConfig cfg;
  brainsim::Baseline b{vec2(2, 3), vec2(1.5, 0.9), 8.0};
  Rng rng(3);
  std::vector<Vec> actions;
  for (int t = 0; t < cfg.horizon - 1; ++t)
    actions.push_back(vec2(rng.uniform(-2, 2), rng.uniform(-2, 2)));

  auto run = [&] {
    brainsim::Environment env(b, p, g, cfg);
    std::vector<double> rewards;
    for (const auto& a : actions) {
      if (env.done()) break;
      rewards.push_back(env.step(brainsim::Action{a}).reward);
    }
    return rewards;
  };
  CHECK(run() == run());
}
