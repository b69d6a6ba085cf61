// One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nopf/adaptation.hpp"
#include "nopf/errors.hpp"
#include "nopf/predictor.hpp"
#include "nopf/run_config.hpp"
#include "nopf/simulator.hpp"
#include "nopf/surrogate.hpp"
#include "nopf/training.hpp"

using namespace nopf;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kEquilibriumResidual = 1e-3;
constexpr double kResidualFactor = 0.1;
constexpr double kLateFrom = 30.0;
constexpr double kCoarsePassDx = 0.005;
constexpr double kCoarseFailDx = 0.02;
constexpr double kOpenLoopAmplitude = 0.5;
constexpr double kEulerOrder = 1.0;
constexpr double kEulerOrderTol = 0.2;
constexpr double kRk4MinOrder = 3.5;
constexpr std::size_t kLipschitzPairs = 1000;
constexpr double kGradientRelTol = 1e-4;
constexpr std::size_t kGradientCoords = 60;
constexpr double kEpsilonTarget = 0.5;
constexpr double kTrainBudgetSeconds = 900.0;
constexpr double kCloseness = 0.3;
constexpr double kBoundedRadius = 1e3;
constexpr double kMinSpeedup = 2.0;
constexpr double kInvariantEquilibriumTol = 1e-4;
constexpr double kSemigroupTol = 1e-9;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const char* id, const char* name, const std::function<Verdict()>& body, double budget_seconds) {
  const auto t0 = Clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double elapsed = seconds_since(t0);
  const bool in_budget = elapsed <= budget_seconds;
  const bool pass = v.pass && in_budget;
  if (!pass) ++failures;
  std::printf("%s %-4s %s: %s [%.2f s of %.0f s]\n", pass ? "PASS" : "FAIL", id, name, v.detail.c_str(), elapsed,
              budget_seconds);
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

SimConfig reference_config() { return SimConfig{}; }

double initial_distance(const SimConfig& c) { return distance(c.x0, c.plant.constants.x_star); }

bool d_hat_within(const TrajectoryLog& log, const SimConfig& c) {
  return std::all_of(log.records.begin(), log.records.end(),
                     [&](const StepRecord& r) { return r.d_hat >= c.d_min && r.d_hat <= c.d_max; });
}

struct ResidualCheck {
  bool pass = false;
  double ratio = 0.0;
};

ResidualCheck residual_criterion(const TrajectoryLog& log, const SimConfig& c) {
  const double late = max_distance(log, kLateFrom, c.t_final);
  const double ratio = late / initial_distance(c);
  return {ratio <= kResidualFactor && d_hat_within(log, c), ratio};
}

struct OracleRow {
  double t, x1, x2, d_hat;
};

std::vector<OracleRow> load_oracle() {
  std::ifstream in(std::string(NOPF_BASELINE_DIR) + "/reference_oracle.csv");
  if (!in) throw IoError("missing regression baseline reference_oracle.csv");
  std::string line;
  std::getline(in, line);
  std::vector<OracleRow> rows;
  while (std::getline(in, line)) {
    OracleRow r{};
    char c;
    std::istringstream ss(line);
    ss >> r.t >> c >> r.x1 >> c >> r.x2 >> c >> r.d_hat;
    if (!ss) throw IoError("malformed baseline row: " + line);
    rows.push_back(r);
  }
  return rows;
}

// Shared across criteria so the reference run and the trained models are built once.
struct Shared {
  std::optional<TrajectoryLog> reference_log;
  std::optional<SurrogateParams> full_model;
  std::optional<SurrogateParams> early_model;
  double train_seconds = 0.0;
  std::size_t dataset_rows = 0;
  std::optional<Dataset> held_out;
  std::vector<TrajectoryLog> surrogate_logs;
};

Shared shared;

const TrajectoryLog& reference_log() {
  if (!shared.reference_log) {
    const SimConfig c = reference_config();
    shared.reference_log = run_closed_loop(c, make_plant(c.plant));
  }
  return *shared.reference_log;
}

Verdict equilibrium_fidelity() {
  const BenchmarkConstants c;
  const PlantModel m = benchmark_plant(c);
  const double u = m.feedback(c.x_star);
  const Eigen::VectorXd r = m.eval_rhs(c.x_star, u);
  const double res = r.norm();
  return {res <= kEquilibriumResidual, fmt("|f(X*, kappa(X*))| = %.3e at X* = (0.0939, 5.2525), limit %.0e", res,
                                           kEquilibriumResidual)};
}

Verdict reference_reproduction() {
  const SimConfig c = reference_config();
  const TrajectoryLog& log = reference_log();
  const ResidualCheck own = residual_criterion(log, c);

  const std::vector<OracleRow> oracle = load_oracle();
  const double d0 = initial_distance(c);
  double oracle_late = 0.0, late_dev = 0.0, all_dev = 0.0;
  bool oracle_bounds = true;
  for (const OracleRow& o : oracle) {
    const double xo[2] = {o.x1, o.x2};
    oracle_bounds = oracle_bounds && o.d_hat >= c.d_min && o.d_hat <= c.d_max;
    const std::size_t k = static_cast<std::size_t>(std::llround(o.t / c.dt));
    if (k >= log.records.size()) throw NumericalError("run shorter than the baseline");
    const double dev = distance(log.records[k].x, xo);
    all_dev = std::max(all_dev, dev);
    if (o.t >= kLateFrom) {
      oracle_late = std::max(oracle_late, distance(xo, c.plant.constants.x_star));
      late_dev = std::max(late_dev, dev);
    }
  }
  const bool oracle_ok = oracle_late <= kResidualFactor * d0 && oracle_bounds;
  const bool regression_ok = late_dev <= kResidualFactor * d0;
  return {own.pass && oracle_ok && regression_ok,
          fmt("late residual ratio %.3e (limit %.1f), D_hat in bounds %s; oracle ratio %.3e; "
              "deviation from oracle %.3e for t >= 30 (limit %.3f), %.3e over the run",
              own.ratio, kResidualFactor, d_hat_within(log, c) ? "yes" : "no", oracle_late / d0, late_dev,
              kResidualFactor * d0, all_dev)};
}

Verdict discretization_threshold() {
  auto run_at = [](double dx) {
    SimConfig c = reference_config();
    c.dx = dx;
    try {
      return residual_criterion(run_closed_loop(c, make_plant(c.plant)), c);
    } catch (const SimulationError&) {
      return ResidualCheck{false, INFINITY};
    }
  };
  const ResidualCheck fine = run_at(kCoarsePassDx);
  const ResidualCheck coarse = run_at(kCoarseFailDx);
  return {fine.pass && !coarse.pass,
          fmt("dx=%.3f ratio %.3e (%s, must pass); dx=%.3f ratio %.3e (%s, must fail)", kCoarsePassDx, fine.ratio,
              fine.pass ? "passes" : "fails", kCoarseFailDx, coarse.ratio, coarse.pass ? "passes" : "fails")};
}

Verdict open_loop_limit_cycle() {
  SimConfig c = reference_config();
  c.backend = Backend::none;
  c.open_loop = true;
  c.t_final = 60.0;
  const TrajectoryLog log = run_closed_loop(c, make_plant(c.plant));
  bool pass = true;
  std::string windows;
  for (double t = 20.0; t < 60.0; t += 10.0) {
    const double peak = max_distance(log, t, t + 10.0);
    pass = pass && peak > kOpenLoopAmplitude;
    windows += fmt(" [%.0f,%.0f]:%.2f", t, t + 10.0, peak);
  }
  return {pass, "max |X-X*| per window (must exceed 0.5):" + windows};
}

double fitted_order(const std::vector<double>& dx, const std::vector<double>& err) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const double x = std::log(dx[i]), y = std::log(err[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

Verdict predictor_orders() {
  BenchmarkConstants bc;
  bc.x_star = refine_benchmark_equilibrium(bc);
  const PlantModel m = benchmark_plant(bc);
  const std::vector<double> x0{0.12, 7.5};
  const double d_hat = 2.0;
  auto input = [](double s) { return 0.4 * std::sin(2.0 * std::numbers::pi * s) + 0.1 * std::cos(5.0 * s) + 0.05; };
  auto terminal = [&](std::size_t m_int, Scheme scheme) {
    const SpatialGrid grid(m_int);
    std::vector<double> u(grid.size());
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = input(grid.point(j));
    std::vector<double> out(grid.size() * 2);
    predict_into(m, x0, u, d_hat, grid, scheme, out);
    return std::vector<double>{out[2 * m_int], out[2 * m_int + 1]};
  };
  const std::vector<double> ref = terminal(4096, Scheme::rk4);
  const std::vector<double> dxs{0.02, 0.01, 0.005, 0.0025};
  std::vector<double> e_euler, e_rk4;
  for (double dx : dxs) {
    const std::size_t m_int = static_cast<std::size_t>(std::llround(1.0 / dx));
    e_euler.push_back(distance(terminal(m_int, Scheme::euler), ref));
    e_rk4.push_back(distance(terminal(m_int, Scheme::rk4), ref));
  }
  const double p_euler = fitted_order(dxs, e_euler);
  const double p_rk4 = fitted_order(dxs, e_rk4);
  const bool pass = std::abs(p_euler - kEulerOrder) <= kEulerOrderTol && p_rk4 >= kRk4MinOrder;
  return {pass, fmt("Euler order %.3f (errors %.2e..%.2e, need 1.0 +/- 0.2), RK4 order %.3f (errors %.2e..%.2e, "
                    "need >= 3.5) against RK4 m=4096",
                    p_euler, e_euler.front(), e_euler.back(), p_rk4, e_rk4.front(), e_rk4.back())};
}

Verdict lipschitz_bound() {
  // Declared domain: X in the sampling box, |u| <= 1, D_hat in [0.5, 1].
  // D_bar is kept small so e^{2 D_bar C_f} stays representable.
  const BenchmarkConstants bc;
  const PlantModel m = benchmark_plant(bc);
  const std::vector<Interval> box{{0.0, 0.2}, {0.0, 40.0}};
  const double u_bar = 1.0, d_lo = 0.5, d_bar = 1.0;
  const double x_bar = std::hypot(box[0].hi, box[1].hi);
  // C_f over a region containing every predicted state reachable from the domain.
  const LipschitzEstimate lip = estimate_lipschitz(m, {{-2.0, 3.0}, {0.0, 600.0}}, u_bar, 200000, 11);
  const double c_p = lipschitz_constant(lip.c_f, d_bar, x_bar, u_bar);

  const SpatialGrid grid = SpatialGrid::from_step(0.005);
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> unit(0.0, 1.0), sym(-1.0, 1.0);
  auto random_state = [&] {
    return std::vector<double>{box[0].lo + unit(rng) * (box[0].hi - box[0].lo),
                               box[1].lo + unit(rng) * (box[1].hi - box[1].lo)};
  };
  auto random_profile = [&] {
    double a[4], ph[4];
    for (int k = 0; k < 4; ++k) {
      a[k] = sym(rng) / 4.0;
      ph[k] = 2.0 * std::numbers::pi * unit(rng);
    }
    std::vector<double> u(grid.size());
    for (std::size_t j = 0; j < u.size(); ++j) {
      double v = 0.0;
      for (int k = 0; k < 4; ++k) v += a[k] * std::sin(std::numbers::pi * k * grid.point(j) + ph[k]);
      u[j] = u_bar * v;
    }
    return u;
  };
  auto clampv = [](double v, double lo, double hi) { return std::clamp(v, lo, hi); };

  std::vector<double> p1(grid.size() * 2), p2(grid.size() * 2);
  std::size_t violations = 0;
  double worst = 0.0;
  for (std::size_t k = 0; k < kLipschitzPairs; ++k) {
    std::vector<double> x1 = random_state(), u1 = random_profile();
    double d1 = d_lo + unit(rng) * (d_bar - d_lo);
    std::vector<double> x2, u2;
    double d2;
    if (k % 2 == 0) {
      x2 = random_state();
      u2 = random_profile();
      d2 = d_lo + unit(rng) * (d_bar - d_lo);
    } else {
      const double scale = std::pow(10.0, -1.0 - 4.0 * unit(rng));
      x2 = {clampv(x1[0] + scale * sym(rng), box[0].lo, box[0].hi),
            clampv(x1[1] + scale * sym(rng), box[1].lo, box[1].hi)};
      u2 = u1;
      for (double& v : u2) v = clampv(v + scale * sym(rng), -u_bar, u_bar);
      d2 = clampv(d1 + scale * sym(rng), d_lo, d_bar);
    }
    predict_into(m, x1, u1, d1, grid, Scheme::euler, p1);
    predict_into(m, x2, u2, d2, grid, Scheme::euler, p2);
    double out = 0.0, uin = 0.0;
    for (std::size_t j = 0; j < grid.size(); ++j) {
      out = std::max(out, std::hypot(p1[2 * j] - p2[2 * j], p1[2 * j + 1] - p2[2 * j + 1]));
      uin = std::max(uin, std::abs(u1[j] - u2[j]));
    }
    const double in = distance(x1, x2) + uin + std::abs(d1 - d2);
    if (in == 0.0) continue;
    if (out > c_p * in) ++violations;
    worst = std::max(worst, out / in);
  }
  return {violations == 0,
          fmt("%zu pairs, %zu violations; C_f = %.2f, C_P = %.3e, largest observed ratio %.3e "
              "(domain |X| <= %.2f, |u| <= %.0f, D_hat in [%.1f, %.1f])",
              kLipschitzPairs, violations, lip.c_f, c_p, worst, x_bar, u_bar, d_lo, d_bar)};
}

Verdict gradient_check() {
  SurrogateArchitecture a;
  a.state_dim = 2;
  a.input_grid_size = 9;
  a.branch_layers = {12, 10};
  a.trunk_layers = {10, 8};
  a.latent_dim = 5;
  a.activation = Activation::tanh;
  SurrogateParams p = initialize_params(a, 31);
  std::mt19937_64 rng(32);
  std::normal_distribution<double> g(0.0, 0.1);
  for (double& w : p.weights) w += g(rng);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<DatasetSample> batch(8);
  for (DatasetSample& s : batch) {
    s.state = {0.1 + 0.1 * u(rng), 20.0 + 10.0 * u(rng)};
    s.input_profile.resize(a.input_grid_size);
    for (double& v : s.input_profile) v = u(rng);
    s.d_hat = 1.75 + 1.25 * u(rng);
    s.target_profile.resize(a.input_grid_size * 2);
    for (double& v : s.target_profile) v = u(rng);
  }
  p.input_normalization.mean[1] = 20.0;
  p.input_normalization.scale[1] = 10.0;
  p.output_normalization.scale = {0.5, 2.0};

  const LossAndGradients lg = loss_and_gradients(p, batch);
  std::uniform_int_distribution<std::size_t> pick(0, p.weights.size() - 1);
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t k = 0; k < kGradientCoords; ++k) {
    const std::size_t c = pick(rng);
    const double w0 = p.weights[c];
    const double h = 1e-6 * std::max(1.0, std::abs(w0));
    p.weights[c] = w0 + h;
    const double lp = loss_and_gradients(p, batch).loss;
    p.weights[c] = w0 - h;
    const double lm = loss_and_gradients(p, batch).loss;
    p.weights[c] = w0;
    const double fd = (lp - lm) / (2.0 * h);
    const double an = lg.gradients[c];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
    worst = std::max(worst, std::abs(fd - an) / denom);
    ++checked;
  }
  return {checked >= 50 && worst <= kGradientRelTol,
          fmt("%zu random coordinates of %zu, worst relative error %.3e (limit %.0e)", checked, p.weights.size(), worst,
              kGradientRelTol)};
}

void build_models() {
  if (shared.full_model) return;
  const SimConfig sim = reference_config();
  const PlantModel m = make_plant(sim.plant);
  SamplingConfig sampling;
  sampling.threads = 0;
  const Dataset ds = generate_dataset(m, sampling, sim);
  shared.dataset_rows = ds.samples.size();
  save_dataset(ds, (fs::path(NOPF_WORK_DIR) / "default.nods").string());

  const SurrogateArchitecture arch;
  const auto t0 = Clock::now();
  TrainResult full = train(ds, arch, TrainConfig{});
  shared.train_seconds = seconds_since(t0);
  write_training_report(full.report, (fs::path(NOPF_WORK_DIR) / "full_report.txt").string());
  save_params(full.params, (fs::path(NOPF_WORK_DIR) / "full.nopf").string());
  shared.full_model = std::move(full.params);

  TrainConfig early;
  early.epochs = 5;
  TrainResult e = train(ds, arch, early);
  save_params(e.params, (fs::path(NOPF_WORK_DIR) / "early.nopf").string());
  shared.early_model = std::move(e.params);

  SamplingConfig held = sampling;
  held.seed = 1;
  held.trajectories = 50;
  shared.held_out = generate_dataset(m, held, sim);
}

struct SurrogateRun {
  bool completed = false;
  double late = INFINITY;
  double peak = INFINITY;
  double worst_component = INFINITY;
  double late_component[2] = {INFINITY, INFINITY};
};

SurrogateRun surrogate_run(const SurrogateParams& params) {
  SimConfig c = reference_config();
  c.backend = Backend::surrogate;
  const Surrogate sur(params);
  SurrogateRun r;
  try {
    TrajectoryLog log = run_closed_loop(c, make_plant(c.plant), &sur);
    r.completed = true;
    r.late = max_distance(log, kLateFrom, c.t_final);
    r.peak = max_distance(log, 0.0, c.t_final);
    r.late_component[0] = r.late_component[1] = 0.0;
    for (const StepRecord& rec : log.records) {
      if (rec.t < kLateFrom) continue;
      for (int i = 0; i < 2; ++i)
        r.late_component[i] = std::max(r.late_component[i], std::abs(rec.x[i] - c.plant.constants.x_star[i]));
    }
    shared.surrogate_logs.push_back(std::move(log));
  } catch (const SimulationError& e) {
    shared.surrogate_logs.push_back(e.partial_log());
  }
  return r;
}

Verdict epsilon_ordering() {
  build_models();
  const double eps_full = eval_sup_error(*shared.full_model, shared.held_out->samples).epsilon_hat;
  const double eps_early = eval_sup_error(*shared.early_model, shared.held_out->samples).epsilon_hat;
  const SurrogateRun full = surrogate_run(*shared.full_model);
  const SurrogateRun early = surrogate_run(*shared.early_model);
  const bool bounded = full.completed && early.completed && full.peak <= kBoundedRadius && early.peak <= kBoundedRadius;
  const bool ordered = eps_full < eps_early && full.late <= early.late;
  const bool close = full.late_component[0] <= kCloseness && full.late_component[1] <= kCloseness;
  return {bounded && ordered && close,
          fmt("eps_hat full %.3f vs 5-epoch %.3f; late residual full %.3f vs 5-epoch %.3f; peaks %.1f, %.1f "
              "(bounded below %.0f: %s); full-model late |x_i - x*_i| = (%.3f, %.3f), limit %.1f",
              eps_full, eps_early, full.late, early.late, full.peak, early.peak, kBoundedRadius,
              bounded ? "yes" : "no", full.late_component[0], full.late_component[1], kCloseness)};
}

Verdict surrogate_quality() {
  build_models();
  const SupErrorReport r = eval_sup_error(*shared.full_model, shared.held_out->samples);
  const bool pass = r.epsilon_hat <= kEpsilonTarget && shared.train_seconds <= kTrainBudgetSeconds &&
                    shared.dataset_rows >= 2000;
  return {pass, fmt("held-out eps_hat %.3f (limit %.1f, per component %.3f / %.3f, mean %.4f) on %zu rows; "
                    "training set %zu rows, training %.1f s (limit %.0f s)",
                    r.epsilon_hat, kEpsilonTarget, r.component_max[0], r.component_max[1], r.mean_error, r.samples,
                    shared.dataset_rows, shared.train_seconds, kTrainBudgetSeconds)};
}

Verdict timing() {
  build_models();
  const SimConfig c = reference_config();
  const BenchConfig bench;
  const Surrogate sur(*shared.full_model);
  const std::vector<double> dx_list{0.01, 0.005, 0.001};
  const BenchReport rep = bench_predictors(c, make_plant(c.plant), sur, dx_list, bench.repetitions, bench.pool_size);
  write_bench_csv(rep, (fs::path(NOPF_WORK_DIR) / "bench.csv").string());
  const std::map<double, std::pair<double, double>> reference{
      {0.01, {1.601, 0.496}}, {0.005, {3.295, 0.587}}, {0.001, {18.197, 1.212}}};
  bool monotone = true;
  std::string table;
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const BenchRow& r = rep.rows[i];
    if (i > 0) monotone = monotone && r.numerical_seconds > rep.rows[i - 1].numerical_seconds;
    const auto& ref = reference.at(r.dx);
    table += fmt("\n       dx=%-6g numerical %.3e s, surrogate %.3e s, speedup %.2fx | reference %.3f / %.3f, %.2fx",
                 r.dx, r.numerical_seconds, r.surrogate_seconds, r.speedup, ref.first, ref.second,
                 ref.first / ref.second);
  }
  const double speedup = rep.rows.back().speedup;
  return {speedup >= kMinSpeedup && monotone,
          fmt("speedup at dx=0.001 %.2fx (need >= %.0fx), numerical column monotone: %s", speedup, kMinSpeedup,
              monotone ? "yes" : "no") +
              table};
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict invariant_suite() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };

  // Projection keeps D_hat inside its interval.
  {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> phi(-1e3, 1e3), dt(1e-4, 1e-1);
    AdaptiveState s;
    std::size_t bad = 0;
    for (int k = 0; k < 100000; ++k) {
      s = step_delay_estimate(s, phi(rng), dt(rng));
      if (s.d_hat < s.d_min || s.d_hat > s.d_max) ++bad;
    }
    expect(bad == 0, fmt("projection: %zu escapes", bad));
  }

  // Phi(x_j, 0) = Phi(x_j, x_i) Phi(x_i, 0) for the discrete propagators.
  {
    BenchmarkConstants bc;
    const PlantModel m = benchmark_plant(bc);
    const SpatialGrid grid(200);
    std::vector<double> u(grid.size());
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = 0.3 * std::sin(3.0 * grid.point(j));
    double worst = 0.0;
    for (Scheme scheme : {Scheme::euler, Scheme::rk4}) {
      PredictorQuery q;
      q.state = {0.1, 12.0};
      q.input_profile = u;
      q.delay_estimate = 1.3;
      q.grid = grid;
      const PredictorProfile p = predict(m, q, scheme);
      const TransitionMatrices from0 = transition_matrices(m, p, u, 1.3);
      for (std::size_t i : {20u, 77u, 150u}) {
        const TransitionMatrices fromi = transition_matrices(m, p, u, 1.3, i);
        for (std::size_t j = i; j < grid.size(); ++j) {
          const Eigen::MatrixXd composed = fromi.at(j) * from0.at(i);
          worst = std::max(worst, (from0.at(j) - composed).norm() / std::max(1.0, from0.at(j).norm()));
        }
      }
    }
    expect(worst <= kSemigroupTol, fmt("semigroup: relative defect %.3e", worst));
  }

  // N >= 1 and Gamma >= 0 on every logged step of every run made above.
  {
    std::size_t bad = 0, steps = 0;
    auto scan = [&](const TrajectoryLog& log) {
      for (const StepRecord& r : log.records) {
        ++steps;
        if (!(r.n_fn >= 1.0) || !(r.gamma_fn >= 0.0)) ++bad;
      }
    };
    scan(reference_log());
    for (const TrajectoryLog& log : shared.surrogate_logs) scan(log);
    expect(bad == 0, fmt("N >= 1, Gamma >= 0: %zu of %zu steps violate", bad, steps));
  }

  // The refined equilibrium stays put under every backend.
  {
    SurrogateArchitecture arch;
    SurrogateParams zero = initialize_params(arch, 0);
    std::fill(zero.weights.begin(), zero.weights.end(), 0.0);
    const Surrogate identity(zero);
    double worst = 0.0;
    for (int k = 0; k < 5; ++k) {
      SimConfig c = reference_config();
      c.plant.constants.x_star = refine_benchmark_equilibrium(c.plant.constants);
      c.x0 = c.plant.constants.x_star;
      c.t_final = 10.0;
      c.dx = 0.01;
      const Backend backends[] = {Backend::numerical, Backend::surrogate, Backend::none, Backend::known_delay,
                                  Backend::none};
      c.backend = backends[k];
      c.open_loop = k == 4;
      const TrajectoryLog log =
          run_closed_loop(c, make_plant(c.plant), c.backend == Backend::surrogate ? &identity : nullptr);
      worst = std::max(worst, max_distance(log, 0.0, c.t_final));
    }
    expect(worst <= kInvariantEquilibriumTol, fmt("equilibrium drift %.3e", worst));
  }

  // Fixed seeds give identical datasets, weights and trajectories.
  {
    const SimConfig sim = reference_config();
    const PlantModel m = make_plant(sim.plant);
    SamplingConfig sc;
    sc.trajectories = 4;
    sc.samples_per_trajectory = 5;
    sc.horizon = 2.0;
    sc.seed = 77;
    const fs::path a = fs::path(NOPF_WORK_DIR) / "det_a.nods", b = fs::path(NOPF_WORK_DIR) / "det_b.nods";
    const Dataset da = generate_dataset(m, sc, sim);
    save_dataset(da, a.string());
    sc.threads = 3;
    save_dataset(generate_dataset(m, sc, sim), b.string());
    expect(file_bytes(a) == file_bytes(b), "dataset bytes differ across runs");

    SurrogateArchitecture arch;
    arch.branch_layers = {16, 16};
    arch.trunk_layers = {16};
    arch.latent_dim = 8;
    TrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 8;
    tc.seed = 5;
    expect(train(da, arch, tc).params.weights == train(da, arch, tc).params.weights, "trained weights differ");

    SimConfig sc2 = sim;
    sc2.t_final = 5.0;
    const TrajectoryLog l1 = run_closed_loop(sc2, m), l2 = run_closed_loop(sc2, m);
    bool same = l1.records.size() == l2.records.size();
    for (std::size_t k = 0; same && k < l1.records.size(); ++k)
      same = l1.records[k].x == l2.records[k].x && l1.records[k].d_hat == l2.records[k].d_hat;
    expect(same, "trajectories differ");
  }

  std::string detail = "projection bounds, semigroup, N >= 1, Gamma >= 0, equilibrium invariance, determinism";
  if (failed.empty()) return {true, detail + ": zero violations"};
  for (const std::string& f : failed) detail += "; " + f;
  return {false, detail};
}

}  // namespace

int main() {
  fs::create_directories(NOPF_WORK_DIR);
  report("C1", "equilibrium fidelity", equilibrium_fidelity, 1.0);
  report("C2", "reference run reproduction", reference_reproduction, 120.0);
  {
    const auto t0 = Clock::now();
    try {
      build_models();
      std::printf("info default dataset and both surrogates built in %.1f s\n", seconds_since(t0));
    } catch (const std::exception& e) {
      std::printf("info model build failed: %s\n", e.what());
    }
  }
  report("C3", "eps-radius ordering", epsilon_ordering, 300.0);
  report("C4", "discretization threshold", discretization_threshold, 240.0);
  report("C5", "open-loop limit cycle", open_loop_limit_cycle, 60.0);
  report("C6", "predictor oracle equivalence", predictor_orders, 30.0);
  report("C7", "Lipschitz bound", lipschitz_bound, 60.0);
  report("C8", "gradient check", gradient_check, 30.0);
  report("C9", "surrogate quality", surrogate_quality, kTrainBudgetSeconds);
  report("C10", "timing", timing, 300.0);
  report("C11", "invariant suite", invariant_suite, 300.0);
  std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
