#include "nopf/simulator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace nopf {

namespace {

constexpr double kPlantBlowUp = 1e12;

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt_vector(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += fmt_double(v[i]);
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> config_echo(const SimConfig& c) {
  return {{"plant", c.plant.name},
          {"true_delay", fmt_double(c.true_delay)},
          {"d_hat0", fmt_double(c.d_hat0)},
          {"d_min", fmt_double(c.d_min)},
          {"d_max", fmt_double(c.d_max)},
          {"gamma", fmt_double(c.gamma)},
          {"b", fmt_double(c.b)},
          {"dt", fmt_double(c.dt)},
          {"t_final", fmt_double(c.t_final)},
          {"dx", fmt_double(c.dx)},
          {"backend", to_string(c.backend)},
          {"open_loop", c.open_loop ? "true" : "false"},
          {"x0", fmt_vector(c.x0)},
          {"initial_input", fmt_double(c.initial_input)},
          {"scheme", to_string(c.scheme)},
          {"plant_integrator", to_string(c.plant_integrator)},
          {"exact_adaptation_signals", c.exact_adaptation_signals ? "true" : "false"},
          {"seed", std::to_string(c.seed)},
          {"code_version", "nopf 1.0.0"}};
}

bool state_ok(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v) && std::abs(v) <= kPlantBlowUp; });
}

}  // namespace

const char* to_string(Backend b) {
  switch (b) {
    case Backend::numerical: return "numerical";
    case Backend::surrogate: return "surrogate";
    case Backend::none: return "none";
    case Backend::known_delay: return "known-delay";
  }
  return "?";
}

Backend backend_from_string(const std::string& name) {
  if (name == "numerical") return Backend::numerical;
  if (name == "surrogate") return Backend::surrogate;
  if (name == "none") return Backend::none;
  if (name == "known-delay" || name == "known_delay") return Backend::known_delay;
  throw ConfigError("unknown backend '" + name + "' (expected numerical, surrogate, none or known-delay)");
}

void SimConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("sim.dt must be positive");
  if (!(t_final > 0.0)) throw ConfigError("sim.t_final must be positive");
  if (!(d_min > 0.0)) throw ConfigError("sim.d_min must be positive");
  if (!(d_min <= d_max)) throw ConfigError("sim.d_min must not exceed sim.d_max");
  if (!(true_delay >= d_min && true_delay <= d_max)) {
    throw ConfigError("sim.true_delay must lie in [sim.d_min, sim.d_max]");
  }
  if (!(true_delay >= dt)) throw ConfigError("sim.true_delay must be at least one time step");
  if (!(d_hat0 >= d_min && d_hat0 <= d_max)) throw ConfigError("sim.d_hat0 must lie in [sim.d_min, sim.d_max]");
  if (!(dx > 0.0 && dx <= 0.5)) throw ConfigError("sim.dx must lie in (0, 0.5]");
  if (!(gamma >= 0.0)) throw ConfigError("sim.gamma must be nonnegative");
  if (!(b > 0.0)) throw ConfigError("sim.b must be positive");
}

Diagnostics diagnostics_step(std::span<const double> state, std::span<const double> equilibrium,
                             const InputHistory& history, double t, double d_hat, double true_delay,
                             std::span<const double> w, double v_value, double b, double gamma,
                             const SpatialGrid& grid) {
  double dist2 = 0.0;
  for (std::size_t i = 0; i < state.size(); ++i) dist2 += (state[i] - equilibrium[i]) * (state[i] - equilibrium[i]);
  const double d_tilde = true_delay - d_hat;
  Diagnostics d;
  d.gamma_fn = dist2 + history.integrate_squared(t - true_delay, t) + d_tilde * d_tilde;
  std::vector<double> w2(w.size());
  for (std::size_t j = 0; j < w.size(); ++j) w2[j] = w[j] * w[j];
  d.n_fn = 1.0 + std::max(v_value, 0.0) + b * weighted_integral(w2, grid);
  const double adapt = gamma > 0.0 ? (b / gamma) * d_tilde * d_tilde : 0.0;
  d.w_fn = true_delay * std::log(d.n_fn) + adapt;
  return d;
}

double recommended_b(double c2, double d_max, double c_f, double lambda) {
  if (!(c2 > 0.0 && d_max > 0.0 && c_f > 0.0 && lambda > 0.0)) throw ConfigError("b* arguments must be positive");
  return c2 * c2 * d_max * c_f * c_f / (4.0 * lambda);
}

TrajectoryLog run_closed_loop(const SimConfig& config, const PlantModel& model, const Surrogate* surrogate,
                              const StepObserver& observer) {
  config.validate();
  const std::size_t n = model.state_dim;
  if (config.x0.size() != n) throw ConfigError("sim.x0 has the wrong dimension for the plant");
  if (config.backend == Backend::surrogate) {
    if (surrogate == nullptr) throw ConfigError("surrogate backend selected but no surrogate loaded");
    if (surrogate->architecture().state_dim != n) throw ConfigError("surrogate state_dim does not match the plant");
  }

  const SpatialGrid grid = SpatialGrid::from_step(config.dx);
  const std::size_t nodes = grid.size();
  const double horizon = config.d_max + 10.0 * config.dt;
  InputHistory history(config.dt, horizon, config.initial_input, 0.0);
  const auto steps = static_cast<std::size_t>(std::llround(config.t_final / config.dt));

  TrajectoryLog log;
  log.state_dim = n;
  log.equilibrium = model.equilibrium;
  log.metadata = config_echo(config);
  log.records.reserve(steps + 1);

  AdaptiveState adaptive{config.d_hat0, config.d_min, config.d_max, config.gamma, config.b};
  const bool adapts = config.backend == Backend::numerical || config.backend == Backend::surrogate;
  if (config.backend == Backend::known_delay) adaptive.d_hat = config.true_delay;

  std::vector<double> x = config.x0;
  std::vector<double> measured(nodes);
  PredictorProfile profile;
  profile.state_dim = n;
  profile.grid = grid;
  profile.scheme = config.scheme;
  profile.values.resize(nodes * n);

  std::vector<double> surrogate_in, surrogate_out, component_coarse, component_fine(nodes);
  if (surrogate != nullptr && config.backend == Backend::surrogate) {
    surrogate_in.resize(surrogate->grid_size());
    surrogate_out.resize(surrogate->grid_size() * n);
    component_coarse.resize(surrogate->grid_size());
  }
  PredictorProfile exact_profile = profile;

  std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
  auto fail = [&](const std::string& why) { throw SimulationError(why, log); };

  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * config.dt;
    try {
      if (k > 0) history.push(t, history.latest());
      sample_profile_into(history, t, config.true_delay, grid, measured);

      const auto start = std::chrono::steady_clock::now();
      double u = 0.0;
      switch (config.backend) {
        case Backend::numerical:
        case Backend::known_delay:
          predict_into(model, x, measured, adaptive.d_hat, grid, config.scheme, profile.values);
          u = model.feedback(profile.terminal());
          break;
        case Backend::surrogate: {
          resample_profile_into(measured, surrogate_in);
          surrogate->predict_grid_into(x, surrogate_in, adaptive.d_hat, surrogate_out);
          const std::size_t g = surrogate->grid_size();
          u = model.feedback(std::span<const double>(surrogate_out.data() + (g - 1) * n, n));
          break;
        }
        case Backend::none:
          u = config.open_loop ? 0.0 : model.feedback(x);
          break;
      }
      const auto stop = std::chrono::steady_clock::now();
      history.set_latest(u);

      if (config.backend == Backend::surrogate) {
        // Deployed profile on the simulation grid for the update law.
        const std::size_t g = surrogate->grid_size();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < g; ++j) component_coarse[j] = surrogate_out[j * n + i];
          resample_profile_into(component_coarse, component_fine);
          for (std::size_t j = 0; j < nodes; ++j) profile.values[j * n + i] = component_fine[j];
        }
      } else if (config.backend == Backend::none) {
        for (std::size_t j = 0; j < nodes; ++j) std::copy(x.begin(), x.end(), profile.values.begin() + j * n);
      }

      const double v_value = model.lyapunov(x);
      double phi = 0.0;
      std::vector<double> w;
      if (adapts) {
        const PredictorProfile* signal_profile = &profile;
        if (config.backend == Backend::surrogate && config.exact_adaptation_signals) {
          predict_into(model, x, measured, adaptive.d_hat, grid, config.scheme, exact_profile.values);
          signal_profile = &exact_profile;
        }
        UpdateSignals sig = compute_update_signals(model, *signal_profile, measured, adaptive.d_hat, v_value, config.b);
        phi = sig.phi;
        w = std::move(sig.w_profile);
      } else {
        w = w_profile(measured, profile, model);
      }

      const Diagnostics diag = diagnostics_step(x, model.equilibrium, history, t, adaptive.d_hat, config.true_delay, w,
                                                v_value, config.b, config.gamma, grid);
      StepRecord rec;
      rec.t = t;
      rec.x = x;
      rec.u = u;
      rec.d_hat = adaptive.d_hat;
      rec.d_tilde = config.true_delay - adaptive.d_hat;
      rec.phi = phi;
      rec.gamma_fn = diag.gamma_fn;
      rec.w_fn = diag.w_fn;
      rec.n_fn = diag.n_fn;
      if (config.backend == Backend::surrogate) {
        const std::size_t g = surrogate->grid_size();
        rec.pred_s1.assign(surrogate_out.begin() + static_cast<std::ptrdiff_t>((g - 1) * n), surrogate_out.end());
      } else {
        const auto last = profile.terminal();
        rec.pred_s1.assign(last.begin(), last.end());
      }
      rec.ctrl_wall_ns = std::chrono::duration<double, std::nano>(stop - start).count();
      log.records.push_back(std::move(rec));

      if (observer) observer(StepView{k, t, x, measured, adaptive.d_hat, &history, &grid});

      if (adapts) adaptive = step_delay_estimate(adaptive, phi, config.dt);
    } catch (const SimulationError&) {
      throw;
    } catch (const Error& e) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "controller failure at t=" << t << ": " << e.what();
      fail(msg.str());
    }

    if (k == steps) break;

    // Plant step with the delayed input U(t - D).
    const double lag = config.true_delay;
    if (config.plant_integrator == Scheme::euler) {
      model.eval_rhs(x, history.query(t - lag), k1);
      for (std::size_t i = 0; i < n; ++i) x[i] += config.dt * k1[i];
    } else {
      const double h = config.dt;
      const double u0 = history.query(t - lag);
      const double uh = history.query(t + 0.5 * h - lag);
      const double u1 = history.query(t + h - lag);
      model.eval_rhs(x, u0, k1);
      for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
      model.eval_rhs(tmp, uh, k2);
      for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
      model.eval_rhs(tmp, uh, k3);
      for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + h * k3[i];
      model.eval_rhs(tmp, u1, k4);
      for (std::size_t i = 0; i < n; ++i) x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    if (!state_ok(x)) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "plant blow-up after t=" << t;
      fail(msg.str());
    }
  }
  return log;
}

double max_distance(const TrajectoryLog& log, double from, double to) {
  double worst = 0.0;
  for (const StepRecord& r : log.records) {
    if (r.t < from - 1e-12 || r.t > to + 1e-12) continue;
    double s = 0.0;
    for (std::size_t i = 0; i < log.state_dim; ++i) s += (r.x[i] - log.equilibrium[i]) * (r.x[i] - log.equilibrium[i]);
    worst = std::max(worst, std::sqrt(s));
  }
  return worst;
}

TrajectorySummary summarize(const TrajectoryLog& log, double d_min, double d_max, double late_from) {
  TrajectorySummary s;
  if (log.records.empty()) return s;
  const StepRecord& last = log.records.back();
  const double t_end = last.t;
  if (late_from < 0.0) late_from = 0.8 * t_end;
  double dist = 0.0;
  for (std::size_t i = 0; i < log.state_dim; ++i) dist += (last.x[i] - log.equilibrium[i]) * (last.x[i] - log.equilibrium[i]);
  s.final_distance = std::sqrt(dist);
  s.final_d_hat = last.d_hat;
  s.final_state = last.x;
  s.min_gamma = std::numeric_limits<double>::infinity();
  for (const StepRecord& r : log.records) {
    s.min_gamma = std::min(s.min_gamma, r.gamma_fn);
    if (r.d_hat < d_min || r.d_hat > d_max) s.d_hat_in_bounds = false;
  }
  s.late_residual = max_distance(log, late_from, t_end);
  s.max_distance_after = s.late_residual;
  return s;
}

void write_trajectory_csv(const TrajectoryLog& log, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.precision(17);
  os << "t";
  for (std::size_t i = 0; i < log.state_dim; ++i) os << ",x" << i + 1;
  os << ",u,d_hat,d_tilde,phi,gamma_fn,w_fn,n_fn";
  for (std::size_t i = 0; i < log.state_dim; ++i) os << ",pred_s1_" << i + 1;
  os << ",ctrl_wall_ns\n";
  for (const StepRecord& r : log.records) {
    os << r.t;
    for (double v : r.x) os << ',' << v;
    os << ',' << r.u << ',' << r.d_hat << ',' << r.d_tilde << ',' << r.phi << ',' << r.gamma_fn << ',' << r.w_fn << ','
       << r.n_fn;
    for (double v : r.pred_s1) os << ',' << v;
    os << ',' << r.ctrl_wall_ns << '\n';
  }
  if (!os) throw IoError("failed writing '" + path + "'");

  std::ofstream meta(path + ".meta", std::ios::trunc);
  if (!meta) throw IoError("cannot open '" + path + ".meta' for writing");
  meta << "# trajectory metadata\n";
  for (const auto& [k, v] : log.metadata) meta << k << " = " << v << '\n';
  meta << "records = " << log.records.size() << '\n';
  if (!meta) throw IoError("failed writing '" + path + ".meta'");
}

BenchReport bench_predictors(const SimConfig& config, const PlantModel& model, const Surrogate& surrogate,
                             const std::vector<double>& dx_list, std::size_t repetitions, std::size_t pool_size) {
  if (repetitions < 100) throw ConfigError("bench repetitions must be >= 100");
  if (dx_list.empty()) throw ConfigError("bench needs at least one dx");
  if (pool_size < 1) throw ConfigError("bench pool must hold at least one query");
  const std::size_t n = model.state_dim;

  struct Query {
    std::vector<double> state;
    double d_hat;
    std::vector<std::vector<double>> profiles;  // one per dx
  };
  std::vector<Query> pool;
  std::vector<SpatialGrid> grids;
  for (double dx : dx_list) grids.push_back(SpatialGrid::from_step(dx));

  // Record queries along the first seconds of a numerical-backend run.
  SimConfig capture = config;
  capture.backend = Backend::numerical;
  capture.t_final = std::min(config.t_final, 10.0);
  const auto total_steps = static_cast<std::size_t>(std::llround(capture.t_final / capture.dt));
  const std::size_t stride = std::max<std::size_t>(1, total_steps / pool_size);
  run_closed_loop(capture, model, nullptr, [&](const StepView& v) {
    if (v.step % stride != 0 || pool.size() >= pool_size) return;
    Query q{std::vector<double>(v.state.begin(), v.state.end()), v.d_hat, {}};
    for (const SpatialGrid& g : grids) q.profiles.push_back(sample_profile(*v.history, v.t, config.true_delay, g));
    pool.push_back(std::move(q));
  });

  BenchReport report;
  volatile double sink = 0.0;
  std::vector<double> surrogate_in(surrogate.grid_size()), surrogate_out(surrogate.grid_size() * n);
  using clock = std::chrono::steady_clock;
  for (std::size_t d = 0; d < grids.size(); ++d) {
    const SpatialGrid& grid = grids[d];
    std::vector<double> out(grid.size() * n);

    auto time_numerical = [&] {
      const auto t0 = clock::now();
      double acc = 0.0;
      for (std::size_t r = 0; r < repetitions; ++r) {
        const Query& q = pool[r % pool.size()];
        predict_into(model, q.state, q.profiles[d], q.d_hat, grid, config.scheme, out);
        acc += out[grid.intervals() * n];
      }
      sink = sink + acc;
      return std::chrono::duration<double>(clock::now() - t0).count() / static_cast<double>(repetitions);
    };
    auto time_surrogate = [&] {
      const auto t0 = clock::now();
      double acc = 0.0;
      for (std::size_t r = 0; r < repetitions; ++r) {
        const Query& q = pool[r % pool.size()];
        resample_profile_into(q.profiles[d], surrogate_in);
        surrogate.predict_grid_into(q.state, surrogate_in, q.d_hat, surrogate_out);
        acc += surrogate_out[(surrogate.grid_size() - 1) * n];
      }
      sink = sink + acc;
      return std::chrono::duration<double>(clock::now() - t0).count() / static_cast<double>(repetitions);
    };

    // Warm caches once, then measure.
    time_numerical();
    time_surrogate();
    BenchRow row;
    row.dx = dx_list[d];
    row.numerical_seconds = time_numerical();
    row.surrogate_seconds = time_surrogate();
    row.speedup = row.numerical_seconds / row.surrogate_seconds;
    row.samples = repetitions;
    report.rows.push_back(row);
  }
  return report;
}

void write_bench_csv(const BenchReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.precision(17);
  os << "dx,numerical,surrogate,speedup\n";
  for (const BenchRow& r : report.rows) {
    os << r.dx << ',' << r.numerical_seconds << ',' << r.surrogate_seconds << ',' << r.speedup << '\n';
  }
  if (!os) throw IoError("failed writing '" + path + "'");
}

}  // namespace nopf
