#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "nopf/errors.hpp"
#include "nopf/simulator.hpp"

using namespace nopf;

namespace {

SimConfig refined_config() {
  SimConfig c;
  c.plant.constants.x_star = refine_benchmark_equilibrium(c.plant.constants);
  return c;
}

// Residual surrogate with zero weights: P̂(s) ≡ X for every query.
Surrogate identity_surrogate() {
  SurrogateArchitecture a;
  a.branch_layers = {4};
  a.trunk_layers = {4};
  a.latent_dim = 2;
  SurrogateParams p = initialize_params(a, 0);
  std::fill(p.weights.begin(), p.weights.end(), 0.0);
  p.output_normalization.mean = {0.0, 0.0};
  return Surrogate(p);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("nopf_unit_" + name)).string();
}

}  // namespace

TEST_CASE("the equilibrium is invariant under every backend") {
  const Surrogate sur = identity_surrogate();
  for (Backend b : {Backend::numerical, Backend::surrogate, Backend::none, Backend::known_delay}) {
    SimConfig c = refined_config();
    c.backend = b;
    c.t_final = 10.0;
    c.dx = 0.01;
    c.x0 = c.plant.constants.x_star;
    const PlantModel m = make_plant(c.plant);
    const TrajectoryLog log = run_closed_loop(c, m, b == Backend::surrogate ? &sur : nullptr);
    CHECK(max_distance(log, 0.0, 10.0) <= 1e-4);
  }
  SimConfig open = refined_config();
  open.backend = Backend::none;
  open.open_loop = true;
  open.t_final = 10.0;
  open.x0 = open.plant.constants.x_star;
  const TrajectoryLog log = run_closed_loop(open, make_plant(open.plant));
  CHECK(max_distance(log, 0.0, 10.0) <= 1e-4);
}

TEST_CASE("closed-loop invariants on the default run") {
  SimConfig c;
  c.t_final = 20.0;
  const PlantModel m = make_plant(c.plant);
  const TrajectoryLog log = run_closed_loop(c, m);
  REQUIRE(log.records.size() == 20001);
  double mean_early = 0.0;
  std::size_t early = 0;
  for (const StepRecord& r : log.records) {
    REQUIRE(r.d_hat >= c.d_min);
    REQUIRE(r.d_hat <= c.d_max);
    REQUIRE(r.gamma_fn >= 0.0);
    REQUIRE(r.n_fn >= 1.0);
    REQUIRE(r.d_tilde == c.true_delay - r.d_hat);
    // The applied control is the feedback evaluated on the logged prediction.
    REQUIRE(std::abs(r.u - m.feedback(r.pred_s1)) <= 1e-9);
    if (r.t <= 5.0) {
      mean_early += r.d_hat;
      ++early;
    }
  }
  mean_early /= static_cast<double>(early);
  // Starting above the true delay, the estimate moves toward it.
  CHECK(mean_early < c.d_hat0);
  CHECK(std::abs(log.records.back().d_hat - c.true_delay) < std::abs(c.d_hat0 - c.true_delay));

  // Γ settles: it drops below a tenth of its start and stays near its floor.
  const double g0 = log.records.front().gamma_fn;
  double floor = INFINITY;
  for (const StepRecord& r : log.records) {
    if (r.t >= 16.0) floor = std::min(floor, r.gamma_fn);
  }
  std::size_t first_low = log.records.size();
  for (std::size_t k = 0; k < log.records.size(); ++k) {
    if (log.records[k].gamma_fn < g0 / 10.0) {
      first_low = k;
      break;
    }
  }
  REQUIRE(first_low < log.records.size());
  double late_max = 0.0;
  for (const StepRecord& r : log.records) {
    if (r.t >= 16.0) late_max = std::max(late_max, r.gamma_fn);
  }
  CHECK(late_max <= 2.0 * floor + 1e-9);
}

TEST_CASE("surrogate runs apply the feedback of the surrogate prediction") {
  SimConfig c;
  c.backend = Backend::surrogate;
  c.t_final = 2.0;
  const Surrogate sur = identity_surrogate();
  const PlantModel m = make_plant(c.plant);
  const TrajectoryLog log = run_closed_loop(c, m, &sur);
  for (const StepRecord& r : log.records) {
    REQUIRE(std::abs(r.u - m.feedback(r.x)) <= 1e-9);
    REQUIRE(r.pred_s1 == r.x);
  }
  CHECK_THROWS_AS(run_closed_loop(c, m, nullptr), ConfigError);
}

TEST_CASE("known delay does no worse than adaptation at a fine grid") {
  SimConfig c;
  c.dx = 0.001;
  const PlantModel m = make_plant(c.plant);
  const TrajectorySummary adaptive = summarize(run_closed_loop(c, m), c.d_min, c.d_max);
  c.backend = Backend::known_delay;
  const TrajectorySummary known = summarize(run_closed_loop(c, m), c.d_min, c.d_max);
  CHECK(known.late_residual <= adaptive.late_residual);
}

TEST_CASE("blow-up reports the partial log") {
  SimConfig c;
  c.plant.name = "linear-test";
  c.plant.linear_a = 50.0;
  c.plant.linear_gain = 0.0;
  c.backend = Backend::none;
  c.open_loop = true;
  c.x0 = {1.0};
  c.t_final = 5.0;
  try {
    run_closed_loop(c, make_plant(c.plant));
    FAIL("no blow-up");
  } catch (const SimulationError& e) {
    CHECK(e.partial_log().records.size() > 100);
    CHECK(e.partial_log().records.size() < 5001);
  }
}

TEST_CASE("diagnostics examples") {
  const SpatialGrid grid(100);
  const std::vector<double> xs{0.0939, 5.2525};
  const std::vector<double> w0(101, 0.0), w1(101, 1.0);
  InputHistory h(1e-3, 3.1);
  for (int k = 1; k <= 2000; ++k) h.push(k * 1e-3, 0.0);

  const Diagnostics rest = diagnostics_step(xs, xs, h, 2.0, 1.0, 1.0, w0, 0.0, 1.0, 1000.0, grid);
  CHECK(rest.gamma_fn == 0.0);
  CHECK(rest.n_fn == 1.0);
  CHECK(rest.w_fn == 0.0);

  const Diagnostics off = diagnostics_step(xs, xs, h, 2.0, 0.5, 1.0, w0, 0.0, 1.0, 1000.0, grid);
  CHECK(off.gamma_fn == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(off.w_fn == doctest::Approx(0.25 / 1000.0).epsilon(1e-15));

  const Diagnostics ones = diagnostics_step(xs, xs, h, 2.0, 1.0, 1.0, w1, 0.0, 1.0, 1000.0, grid);
  CHECK(std::abs(ones.n_fn - 2.5) <= 1e-12);
  CHECK(ones.w_fn == doctest::Approx(std::log(2.5)).epsilon(1e-12));

  // Unit input over the last second contributes exactly 1 to Γ.
  InputHistory u1(1e-3, 3.1);
  for (int k = 1; k <= 2000; ++k) u1.push(k * 1e-3, 1.0);
  const Diagnostics lit = diagnostics_step(xs, xs, u1, 2.0, 1.0, 1.0, w0, 0.0, 1.0, 1000.0, grid);
  CHECK(lit.gamma_fn == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("recommended_b examples") {
  CHECK(recommended_b(2.0, 3.0, 5.0, 1.0) == doctest::Approx(75.0).epsilon(1e-15));
  CHECK(recommended_b(1e-12, 1.0, 1.0, 1.0) <= 1e-23);
  CHECK(recommended_b(1.0, 1.0, 1.0, 1.0) == 0.25);
}

TEST_CASE("trajectory export") {
  SimConfig c;
  c.t_final = 0.05;
  const TrajectoryLog log = run_closed_loop(c, make_plant(c.plant));
  const std::string path = temp_path("traj.csv");
  write_trajectory_csv(log, path);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  CHECK(header == "t,x1,x2,u,d_hat,d_tilde,phi,gamma_fn,w_fn,n_fn,pred_s1_1,pred_s1_2,ctrl_wall_ns");
  std::size_t rows = 0;
  for (std::string line; std::getline(is, line);) ++rows;
  CHECK(rows == log.records.size());

  std::ifstream meta(path + ".meta");
  const std::string text{std::istreambuf_iterator<char>(meta), std::istreambuf_iterator<char>()};
  CHECK(text.find("backend = numerical") != std::string::npos);
  CHECK(text.find("seed = ") != std::string::npos);
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".meta");
}

TEST_CASE("config validation") {
  SimConfig c;
  c.d_min = 3.0;
  c.d_max = 0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SimConfig{};
  c.d_hat0 = 4.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(backend_from_string("known-delay") == Backend::known_delay);
  CHECK_THROWS_AS(backend_from_string("fno"), ConfigError);
}
