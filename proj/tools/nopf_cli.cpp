// nopf: dataset generation, training, simulation, evaluation and timing.
// Exit codes: 0 success, 1 usage or configuration, 2 numerical failure, 3 IO.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nopf/nopf.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitIo = 3;

int exit_code(nopf_status s) {
  switch (s) {
    case NOPF_OK: return kExitOk;
    case NOPF_ERR_CONFIG: return kExitConfig;
    case NOPF_ERR_NUMERICAL: return kExitNumerical;
    default: return kExitIo;
  }
}

// Carries a failed status out of a command body.
struct Failure {
  nopf_status status;
};

void check(nopf_status s, const char* what) {
  if (s != NOPF_OK) {
    std::fprintf(stderr, "error (%s): %s: %s\n", nopf_status_name(s), what, nopf_last_error());
    throw Failure{s};
  }
}

template <class T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
};

using Config = Handle<nopf_config, nopf_config_free>;
using Dataset = Handle<nopf_dataset, nopf_dataset_free>;
using Surrogate = Handle<nopf_surrogate, nopf_surrogate_free>;
using Trajectory = Handle<nopf_trajectory, nopf_trajectory_free>;
using Bench = Handle<nopf_bench_report, nopf_bench_free>;

std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    s += (i ? ", " : "") + std::string(buf);
  }
  return s;
}

std::string config_value(const nopf_config* c, const char* key) {
  std::size_t needed = 0;
  check(nopf_config_get(c, key, nullptr, 0, &needed), key);
  std::string out(needed, '\0');
  check(nopf_config_get(c, key, out.data(), out.size(), &needed), key);
  out.resize(needed - 1);
  return out;
}

void set(nopf_config* c, const std::string& assignment) { check(nopf_config_set(c, assignment.c_str()), "override"); }

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void load_config(const Common& common, Config& config) {
  if (common.config_path.empty()) {
    check(nopf_config_new(&config.p), "config");
  } else {
    check(nopf_config_load(common.config_path.c_str(), &config.p), "config");
  }
  if (common.seed) check(nopf_config_set_seed(config.p, *common.seed), "seed");
  for (const std::string& o : common.overrides) set(config.p, o);
}

int cmd_gen_data(const Common& common, const std::string& out) {
  Config config;
  load_config(common, config);
  if (!out.empty()) set(config.p, "output.dataset=" + out);
  check(nopf_config_validate(config.p), "config");
  const std::string path = config_value(config.p, "output.dataset");
  Dataset ds;
  check(nopf_dataset_generate(config.p, &ds.p), "gen-data");
  check(nopf_dataset_save(ds.p, path.c_str()), "gen-data");
  std::printf("dataset = %s\n", path.c_str());
  std::printf("rows = %zu\n", nopf_dataset_size(ds.p));
  std::printf("discarded_trajectories = %zu\n", nopf_dataset_discarded(ds.p));
  std::printf("requested_trajectories = %s\n", config_value(config.p, "sampling.trajectories").c_str());
  return kExitOk;
}

int cmd_train(const Common& common, const std::string& dataset, const std::string& out,
              std::optional<std::size_t> epochs, const std::string& report) {
  Config config;
  load_config(common, config);
  if (epochs) set(config.p, "train.epochs=" + std::to_string(*epochs));
  if (!out.empty()) set(config.p, "output.weights=" + out);
  if (!dataset.empty()) set(config.p, "output.dataset=" + dataset);
  if (!report.empty()) set(config.p, "output.report=" + report);
  check(nopf_config_validate(config.p), "config");
  const std::string ds_path = config_value(config.p, "output.dataset");
  const std::string weights = config_value(config.p, "output.weights");
  const std::string report_path = config_value(config.p, "output.report");

  Dataset ds;
  check(nopf_dataset_load(ds_path.c_str(), &ds.p), "train");
  Surrogate model;
  nopf_train_summary summary{};
  check(nopf_surrogate_train(config.p, ds.p, report_path.c_str(), &model.p, &summary), "train");
  check(nopf_surrogate_save(model.p, weights.c_str()), "train");
  std::printf("weights = %s\n", weights.c_str());
  std::printf("report = %s\n", report_path.c_str());
  std::printf("epochs_run = %zu\n", summary.epochs_run);
  std::printf("best_epoch = %zu\n", summary.best_epoch);
  std::printf("stop_reason = %s\n", summary.stop_reason);
  std::printf("best_validation_loss = %.17g\n", summary.best_validation_loss);
  std::printf("validation_epsilon_hat = %.17g\n", summary.validation_epsilon);
  std::printf("wall_seconds = %.17g\n", summary.wall_seconds);
  return kExitOk;
}

int cmd_simulate(const Common& common, const std::string& backend, const std::string& weights, const std::string& out,
                 bool open_loop, const std::vector<double>& dx) {
  Config config;
  load_config(common, config);
  if (!backend.empty()) set(config.p, "sim.backend=" + backend);
  if (open_loop) set(config.p, "sim.open_loop=true");
  if (!dx.empty()) {
    if (dx.size() != 1) {
      std::fprintf(stderr, "error: simulate takes a single --dx\n");
      return kExitConfig;
    }
    set(config.p, "sim.dx=" + fmt_list(dx));
  }
  if (!weights.empty()) set(config.p, "output.weights=" + weights);
  if (!out.empty()) set(config.p, "output.trajectory=" + out);
  check(nopf_config_validate(config.p), "config");
  if (open_loop && config_value(config.p, "sim.backend") != "none") {
    std::fprintf(stderr, "error: --open-loop requires --backend none\n");
    return kExitConfig;
  }
  const std::string path = config_value(config.p, "output.trajectory");

  Surrogate model;
  if (config_value(config.p, "sim.backend") == "surrogate") {
    const std::string w = config_value(config.p, "output.weights");
    check(nopf_surrogate_load(w.c_str(), &model.p), "simulate");
  }
  Trajectory traj;
  const nopf_status status = nopf_simulate(config.p, model.p, &traj.p);
  const std::string failure = status == NOPF_OK ? "" : nopf_last_error();
  if (traj.p != nullptr && nopf_trajectory_length(traj.p) > 0) {
    check(nopf_trajectory_write_csv(traj.p, path.c_str()), "simulate");
    std::printf("trajectory = %s\n", path.c_str());
    nopf_trajectory_summary s{};
    check(nopf_trajectory_summarize(traj.p, &s), "simulate");
    std::printf("steps = %zu\n", s.steps);
    std::printf("final_distance = %.17g\n", s.final_distance);
    std::printf("final_d_hat = %.17g\n", s.final_d_hat);
    std::printf("min_gamma = %.17g\n", s.min_gamma);
    std::printf("late_residual = %.17g\n", s.late_residual);
    std::printf("d_hat_in_bounds = %s\n", s.d_hat_in_bounds ? "true" : "false");
    std::printf("converged = %s\n", s.converged ? "true" : "false");
  }
  if (status != NOPF_OK) {
    std::fprintf(stderr, "error (%s): simulate: %s (partial log kept)\n", nopf_status_name(status), failure.c_str());
    return exit_code(status);
  }
  return kExitOk;
}

int cmd_bench(const Common& common, const std::string& weights, const std::vector<double>& dx,
              std::optional<std::size_t> reps, const std::string& out) {
  Config config;
  load_config(common, config);
  if (!dx.empty()) set(config.p, "bench.dx_list=" + fmt_list(dx));
  if (reps) set(config.p, "bench.repetitions=" + std::to_string(*reps));
  if (!weights.empty()) set(config.p, "output.weights=" + weights);
  if (!out.empty()) set(config.p, "output.bench=" + out);
  check(nopf_config_validate(config.p), "config");
  const std::string w = config_value(config.p, "output.weights");
  const std::string path = config_value(config.p, "output.bench");

  Surrogate model;
  check(nopf_surrogate_load(w.c_str(), &model.p), "bench");
  Bench report;
  check(nopf_bench(config.p, model.p, &report.p), "bench");
  check(nopf_bench_write_csv(report.p, path.c_str()), "bench");
  std::printf("bench = %s\n", path.c_str());
  std::printf("dx,numerical,surrogate,speedup\n");
  for (std::size_t i = 0; i < nopf_bench_rows(report.p); ++i) {
    nopf_bench_row r{};
    check(nopf_bench_row_at(report.p, i, &r), "bench");
    std::printf("%.17g,%.17g,%.17g,%.17g\n", r.dx, r.numerical_seconds, r.surrogate_seconds, r.speedup);
  }
  return kExitOk;
}

int cmd_eval(const Common& common, const std::string& weights, const std::string& dataset,
             const std::string& partition) {
  Config config;
  load_config(common, config);
  if (!weights.empty()) set(config.p, "output.weights=" + weights);
  if (!dataset.empty()) set(config.p, "output.dataset=" + dataset);
  const std::string w = config_value(config.p, "output.weights");
  const std::string d = config_value(config.p, "output.dataset");
  const nopf_partition part = partition == "train"        ? NOPF_PARTITION_TRAIN
                              : partition == "validation" ? NOPF_PARTITION_VALIDATION
                                                          : NOPF_PARTITION_ALL;
  Surrogate model;
  check(nopf_surrogate_load(w.c_str(), &model.p), "eval");
  Dataset ds;
  check(nopf_dataset_load(d.c_str(), &ds.p), "eval");
  nopf_sup_error r{};
  check(nopf_surrogate_eval(model.p, ds.p, config.p, part, &r), "eval");
  std::printf("partition = %s\n", partition.c_str());
  std::printf("samples = %zu\n", r.samples);
  std::printf("epsilon_hat = %.17g\n", r.epsilon_hat);
  std::printf("mean_error = %.17g\n", r.mean_error);
  std::printf("domain = %s\n", r.domain);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Delay-adaptive predictor feedback with neural operator predictors"};
  app.require_subcommand(1);
  app.set_version_flag("--version", nopf_version());

  Common common;
  app.add_option("--config", common.config_path, "INI run configuration");
  app.add_option("--seed", common.seed, "Seed for sampling, training and simulation");
  app.add_option("--set", common.overrides, "Override a config key: section.key=value")->take_all();

  std::string out, backend, weights, dataset, report, partition = "all";
  std::vector<double> dx;
  std::optional<std::size_t> reps, epochs;
  bool open_loop = false;

  auto* gen = app.add_subcommand("gen-data", "Generate a numerical-predictor dataset");
  gen->add_option("--out", out, "Dataset path");

  auto* tr = app.add_subcommand("train", "Train the surrogate predictor");
  tr->add_option("--dataset", dataset, "Dataset path");
  tr->add_option("--out", out, "Weights path");
  tr->add_option("--epochs", epochs, "Epoch budget");
  tr->add_option("--report", report, "Training report path");

  auto* sim = app.add_subcommand("simulate", "Run the closed loop");
  sim->add_option("--backend", backend, "Predictor backend")
      ->check(CLI::IsMember({"numerical", "surrogate", "none", "known-delay"}));
  sim->add_option("--weights", weights, "Surrogate weights");
  sim->add_option("--out", out, "Trajectory CSV path");
  sim->add_flag("--open-loop", open_loop, "With --backend none: apply U = 0");
  sim->add_option("--dx", dx, "Spatial step");

  auto* bench = app.add_subcommand("bench", "Time numerical and surrogate predictors");
  bench->add_option("--weights", weights, "Surrogate weights");
  bench->add_option("--dx", dx, "Spatial step (repeatable)");
  bench->add_option("--reps", reps, "Evaluations per timing (>= 100)");
  bench->add_option("--out", out, "Bench CSV path");

  auto* ev = app.add_subcommand("eval", "Empirical sup error of a surrogate on a dataset");
  ev->add_option("--weights", weights, "Surrogate weights");
  ev->add_option("--dataset", dataset, "Dataset path");
  ev->add_option("--partition", partition, "Rows to evaluate")->check(CLI::IsMember({"all", "train", "validation"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(common, out);
    if (*tr) return cmd_train(common, dataset, out, epochs, report);
    if (*sim) return cmd_simulate(common, backend, weights, out, open_loop, dx);
    if (*bench) return cmd_bench(common, weights, dx, reps, out);
    if (*ev) return cmd_eval(common, weights, dataset, partition);
  } catch (const Failure& f) {
    return exit_code(f.status);
  }
  return kExitConfig;
}
