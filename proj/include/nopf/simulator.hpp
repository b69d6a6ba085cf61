#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nopf/adaptation.hpp"
#include "nopf/delay_line.hpp"
#include "nopf/dynamics.hpp"
#include "nopf/errors.hpp"
#include "nopf/predictor.hpp"
#include "nopf/surrogate.hpp"

namespace nopf {

enum class Backend { numerical, surrogate, none, known_delay };

const char* to_string(Backend b);
Backend backend_from_string(const std::string& name);

struct SimConfig {
  PlantSpec plant;
  double true_delay = 1.0;
  double d_hat0 = 2.0;
  double d_min = 0.5;
  double d_max = 3.0;
  double gamma = 1000.0;
  double b = 1.0;
  double dt = 1e-3;
  double t_final = 40.0;
  double dx = 0.005;
  Backend backend = Backend::numerical;
  bool open_loop = false;  // with Backend::none: U ≡ 0 instead of U = κ(X)
  std::vector<double> x0{0.03, 30.0};
  double initial_input = 0.0;
  Scheme scheme = Scheme::euler;            // predictor march
  Scheme plant_integrator = Scheme::euler;  // rk4 for oracle runs
  // Surrogate runs: form w and q1 from the exact numerical profile instead of
  // the deployed surrogate profile (diagnostic mode).
  bool exact_adaptation_signals = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// One logged controller step.
struct StepRecord {
  double t = 0.0;
  std::vector<double> x;
  double u = 0.0;
  double d_hat = 0.0;
  double d_tilde = 0.0;
  double phi = 0.0;
  double gamma_fn = 0.0;
  double w_fn = 0.0;
  double n_fn = 1.0;
  std::vector<double> pred_s1;
  double ctrl_wall_ns = 0.0;
};

struct TrajectoryLog {
  std::size_t state_dim = 0;
  std::vector<double> equilibrium;
  std::vector<StepRecord> records;
  std::vector<std::pair<std::string, std::string>> metadata;
};

// Plant or controller failure during a run; carries everything logged so far.
class SimulationError : public NumericalError {
 public:
  SimulationError(const std::string& what, TrajectoryLog partial)
      : NumericalError(what), partial_(std::move(partial)) {}
  const TrajectoryLog& partial_log() const noexcept { return partial_; }

 private:
  TrajectoryLog partial_;
};

// Read-only view handed to a step observer before the plant advances.
struct StepView {
  std::size_t step = 0;
  double t = 0.0;
  std::span<const double> state;
  std::span<const double> measured_profile;  // u(·, t) on the simulation grid
  double d_hat = 0.0;
  const InputHistory* history = nullptr;
  const SpatialGrid* grid = nullptr;
};

using StepObserver = std::function<void(const StepView&)>;

// Closed loop: measured profile with the true delay, predictor backend at the
// current estimate, U = κ(P(1)), delay adaptation, then the plant advances
// with the delayed input U(t - D).
TrajectoryLog run_closed_loop(const SimConfig& config, const PlantModel& model, const Surrogate* surrogate = nullptr,
                              const StepObserver& observer = {});

struct Diagnostics {
  double gamma_fn = 0.0;
  double w_fn = 0.0;
  double n_fn = 1.0;
};

// Γ = |X - X*|² + ∫_{t-D}^{t} U² dθ + D̃²,  N = 1 + V + b∫(1+x)w²,
// W = D log N + (b/γ) D̃². The input integral covers whatever part of
// [t-D, t] the history still holds (the pre-history counts at its initial value).
Diagnostics diagnostics_step(std::span<const double> state, std::span<const double> equilibrium,
                             const InputHistory& history, double t, double d_hat, double true_delay,
                             std::span<const double> w, double v_value, double b, double gamma,
                             const SpatialGrid& grid);

// b* = C₂² D̄ C_f² / (4λ)
double recommended_b(double c2, double d_max, double c_f, double lambda);

struct TrajectorySummary {
  double final_distance = 0.0;
  double final_d_hat = 0.0;
  double min_gamma = 0.0;
  double late_residual = 0.0;  // max |X - X*| over [late_from, t_end]
  double max_distance_after = 0.0;
  std::vector<double> final_state;
  bool d_hat_in_bounds = true;
};

// `late_from` defaults to 0.8 t_end.
TrajectorySummary summarize(const TrajectoryLog& log, double d_min, double d_max, double late_from = -1.0);

// max |X - X*| over records with t in [from, to].
double max_distance(const TrajectoryLog& log, double from, double to);

void write_trajectory_csv(const TrajectoryLog& log, const std::string& path);

struct BenchRow {
  double dx = 0.0;
  double numerical_seconds = 0.0;
  double surrogate_seconds = 0.0;
  double speedup = 0.0;
  std::size_t samples = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
};

// Times only the predictor evaluation (profile in, P(1) and full profile
// out) over a pool of queries recorded from a closed-loop run of `config`.
// Surrogate timing includes resampling onto the network's input grid.
BenchReport bench_predictors(const SimConfig& config, const PlantModel& model, const Surrogate& surrogate,
                             const std::vector<double>& dx_list, std::size_t repetitions, std::size_t pool_size = 50);

void write_bench_csv(const BenchReport& report, const std::string& path);

}  // namespace nopf
