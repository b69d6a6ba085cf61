#include "nopf/nopf.h"

#include <cmath>
#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <string>

#include "nopf/errors.hpp"
#include "nopf/predictor.hpp"
#include "nopf/run_config.hpp"
#include "nopf/simulator.hpp"
#include "nopf/surrogate.hpp"
#include "nopf/training.hpp"

struct nopf_config {
  nopf::RunConfig config;
};

struct nopf_dataset {
  nopf::Dataset dataset;
};

struct nopf_surrogate {
  std::unique_ptr<nopf::Surrogate> model;
};

struct nopf_trajectory {
  nopf::TrajectoryLog log;
  double d_min = 0.0;
  double d_max = 0.0;
};

struct nopf_bench_report {
  nopf::BenchReport report;
};

namespace {

thread_local std::string last_error;

nopf_status status_of(nopf::ErrorKind kind) {
  switch (kind) {
    case nopf::ErrorKind::config: return NOPF_ERR_CONFIG;
    case nopf::ErrorKind::numerical: return NOPF_ERR_NUMERICAL;
    case nopf::ErrorKind::io: return NOPF_ERR_IO;
    case nopf::ErrorKind::bad_magic: return NOPF_ERR_BAD_MAGIC;
    case nopf::ErrorKind::truncated: return NOPF_ERR_TRUNCATED;
    case nopf::ErrorKind::shape: return NOPF_ERR_SHAPE;
  }
  return NOPF_ERR_NUMERICAL;
}

template <class Body>
nopf_status guarded(Body body) {
  try {
    body();
    last_error.clear();
    return NOPF_OK;
  } catch (const nopf::Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return NOPF_ERR_NUMERICAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return NOPF_ERR_NUMERICAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw nopf::ConfigError(std::string(what) + " must not be NULL");
}

void copy_out(const std::string& text, char* buf, std::size_t capacity, std::size_t* needed) {
  if (needed != nullptr) *needed = text.size() + 1;
  if (buf == nullptr || capacity == 0) return;
  const std::size_t n = std::min(capacity - 1, text.size());
  std::memcpy(buf, text.data(), n);
  buf[n] = '\0';
}

void copy_fixed(const std::string& text, char* dst, std::size_t capacity) { copy_out(text, dst, capacity, nullptr); }

nopf::PlantModel plant_of(const nopf_config* c) { return nopf::make_plant(c->config.sim.plant); }

}  // namespace

extern "C" {

const char* nopf_version(void) { return "1.0.0"; }

const char* nopf_last_error(void) { return last_error.c_str(); }

const char* nopf_status_name(nopf_status status) {
  switch (status) {
    case NOPF_OK: return "ok";
    case NOPF_ERR_CONFIG: return "config";
    case NOPF_ERR_NUMERICAL: return "numerical";
    case NOPF_ERR_IO: return "io";
    case NOPF_ERR_BAD_MAGIC: return "bad_magic";
    case NOPF_ERR_TRUNCATED: return "truncated";
    case NOPF_ERR_SHAPE: return "shape";
  }
  return "unknown";
}

nopf_status nopf_config_new(nopf_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new nopf_config{};
  });
}

nopf_status nopf_config_load(const char* path, nopf_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    auto c = std::make_unique<nopf_config>();
    c->config = nopf::load_run_config(path);
    *out = c.release();
  });
}

nopf_status nopf_config_set(nopf_config* config, const char* assignment) {
  return guarded([&] {
    require(config, "config");
    require(assignment, "assignment");
    nopf::RunConfig copy = config->config;
    nopf::apply_override(copy, assignment);
    config->config = std::move(copy);
  });
}

nopf_status nopf_config_set_seed(nopf_config* config, uint64_t seed) {
  return guarded([&] {
    require(config, "config");
    config->config.set_seed(seed);
  });
}

nopf_status nopf_config_get(const nopf_config* config, const char* key, char* buf, size_t capacity, size_t* needed) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    const std::string wanted = key;
    const auto dot = wanted.find('.');
    const std::string text = nopf::serialize_run_config(config->config);
    // Walk the serialized INI so values print exactly as they would be saved.
    std::string section;
    std::size_t pos = 0;
    while (pos < text.size()) {
      const auto end = text.find('\n', pos);
      const std::string line = text.substr(pos, end - pos);
      pos = end == std::string::npos ? text.size() : end + 1;
      if (line.empty()) continue;
      if (line.front() == '[') {
        section = line.substr(1, line.size() - 2);
        continue;
      }
      const auto eq = line.find(" = ");
      if (dot != std::string::npos && section == wanted.substr(0, dot) && line.substr(0, eq) == wanted.substr(dot + 1)) {
        copy_out(line.substr(eq + 3), buf, capacity, needed);
        return;
      }
    }
    throw nopf::ConfigError("unknown config key '" + wanted + "'");
  });
}

nopf_status nopf_config_serialize(const nopf_config* config, char* buf, size_t capacity, size_t* needed) {
  return guarded([&] {
    require(config, "config");
    copy_out(nopf::serialize_run_config(config->config), buf, capacity, needed);
  });
}

nopf_status nopf_config_validate(const nopf_config* config) {
  return guarded([&] {
    require(config, "config");
    config->config.validate();
  });
}

void nopf_config_free(nopf_config* config) { delete config; }

nopf_status nopf_dataset_generate(const nopf_config* config, nopf_dataset** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = nullptr;
    const nopf::RunConfig& rc = config->config;
    rc.sim.validate();
    auto d = std::make_unique<nopf_dataset>();
    d->dataset = nopf::generate_dataset(plant_of(config), rc.sampling, rc.sim);
    d->dataset.provenance = nopf::run_config_json(rc);
    *out = d.release();
  });
}

nopf_status nopf_dataset_save(const nopf_dataset* dataset, const char* path) {
  return guarded([&] {
    require(dataset, "dataset");
    require(path, "path");
    nopf::save_dataset(dataset->dataset, path);
  });
}

nopf_status nopf_dataset_load(const char* path, nopf_dataset** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    auto d = std::make_unique<nopf_dataset>();
    d->dataset = nopf::load_dataset(path);
    *out = d.release();
  });
}

size_t nopf_dataset_size(const nopf_dataset* dataset) { return dataset ? dataset->dataset.samples.size() : 0; }

size_t nopf_dataset_discarded(const nopf_dataset* dataset) {
  return dataset ? dataset->dataset.discarded_trajectories : 0;
}

void nopf_dataset_free(nopf_dataset* dataset) { delete dataset; }

nopf_status nopf_surrogate_train(const nopf_config* config, const nopf_dataset* dataset, const char* report_path,
                                 nopf_surrogate** out, nopf_train_summary* summary) {
  return guarded([&] {
    require(config, "config");
    require(dataset, "dataset");
    require(out, "out");
    *out = nullptr;
    nopf::SurrogateArchitecture arch = config->config.surrogate;
    arch.state_dim = dataset->dataset.state_dim;
    arch.input_grid_size = dataset->dataset.grid_size;
    nopf::TrainResult result = nopf::train(dataset->dataset, arch, config->config.train);
    result.params.provenance = nopf::run_config_json(config->config);
    if (report_path != nullptr) nopf::write_training_report(result.report, report_path);
    if (summary != nullptr) {
      summary->epochs_run = result.report.epochs.size();
      summary->best_epoch = result.report.best_epoch;
      summary->best_validation_loss = result.report.best_validation_loss;
      summary->validation_epsilon = result.report.validation_epsilon;
      summary->wall_seconds = result.report.wall_seconds;
      copy_fixed(result.report.stop_reason, summary->stop_reason, sizeof summary->stop_reason);
    }
    auto s = std::make_unique<nopf_surrogate>();
    s->model = std::make_unique<nopf::Surrogate>(std::move(result.params));
    *out = s.release();
  });
}

nopf_status nopf_surrogate_save(const nopf_surrogate* surrogate, const char* path) {
  return guarded([&] {
    require(surrogate, "surrogate");
    require(path, "path");
    nopf::save_params(surrogate->model->params(), path);
  });
}

nopf_status nopf_surrogate_load(const char* path, nopf_surrogate** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    auto s = std::make_unique<nopf_surrogate>();
    s->model = std::make_unique<nopf::Surrogate>(nopf::load_params(path));
    *out = s.release();
  });
}

nopf_status nopf_surrogate_eval(const nopf_surrogate* surrogate, const nopf_dataset* dataset,
                                const nopf_config* config, nopf_partition partition, nopf_sup_error* out) {
  return guarded([&] {
    require(surrogate, "surrogate");
    require(dataset, "dataset");
    require(out, "out");
    const auto& samples = dataset->dataset.samples;
    if (samples.empty()) throw nopf::ConfigError("dataset partition is empty");
    std::vector<nopf::DatasetSample> chosen;
    if (partition == NOPF_PARTITION_ALL) {
      chosen = samples;
    } else {
      require(config, "config");
      const nopf::DatasetSplit split = nopf::split_dataset(samples.size(), config->config.train.validation_fraction,
                                                           config->config.train.seed);
      for (std::size_t i : partition == NOPF_PARTITION_TRAIN ? split.train : split.validation) {
        chosen.push_back(samples[i]);
      }
    }
    const nopf::SupErrorReport r = nopf::eval_sup_error(surrogate->model->params(), chosen);
    out->epsilon_hat = r.epsilon_hat;
    out->mean_error = r.mean_error;
    out->samples = r.samples;
    copy_fixed(r.domain, out->domain, sizeof out->domain);
  });
}

nopf_status nopf_surrogate_predict(const nopf_surrogate* surrogate, const double* state, size_t n,
                                   const double* profile, size_t grid_size, double d_hat, double* out,
                                   size_t out_len) {
  return guarded([&] {
    require(surrogate, "surrogate");
    require(state, "state");
    require(profile, "profile");
    require(out, "out");
    surrogate->model->predict_grid_into({state, n}, {profile, grid_size}, d_hat, {out, out_len});
  });
}

void nopf_surrogate_free(nopf_surrogate* surrogate) { delete surrogate; }

nopf_status nopf_predict(const nopf_config* config, const double* state, size_t n, const double* profile,
                         size_t nodes, double d_hat, nopf_scheme scheme, double* out, size_t out_len) {
  return guarded([&] {
    require(config, "config");
    require(state, "state");
    require(profile, "profile");
    require(out, "out");
    if (nodes < 3) throw nopf::ConfigError("profile needs at least 3 nodes");
    const nopf::PlantModel model = plant_of(config);
    if (out_len != nodes * model.state_dim) throw nopf::ConfigError("output buffer has the wrong size");
    const nopf::SpatialGrid grid(nodes - 1);
    nopf::predict_into(model, {state, n}, {profile, nodes}, d_hat, grid,
                       scheme == NOPF_SCHEME_RK4 ? nopf::Scheme::rk4 : nopf::Scheme::euler, {out, out_len});
  });
}

nopf_status nopf_simulate(const nopf_config* config, const nopf_surrogate* surrogate, nopf_trajectory** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = nullptr;
    const nopf::SimConfig& sim = config->config.sim;
    auto t = std::make_unique<nopf_trajectory>();
    t->d_min = sim.d_min;
    t->d_max = sim.d_max;
    const nopf::Surrogate* model = surrogate ? surrogate->model.get() : nullptr;
    try {
      t->log = nopf::run_closed_loop(sim, plant_of(config), model);
      t->log.metadata.emplace_back("run_config", nopf::run_config_json(config->config));
    } catch (const nopf::SimulationError& e) {
      t->log = e.partial_log();
      t->log.metadata.emplace_back("run_config", nopf::run_config_json(config->config));
      t->log.metadata.emplace_back("failure", e.what());
      *out = t.release();
      throw;
    }
    *out = t.release();
  });
}

size_t nopf_trajectory_length(const nopf_trajectory* trajectory) {
  return trajectory ? trajectory->log.records.size() : 0;
}

size_t nopf_trajectory_state_dim(const nopf_trajectory* trajectory) {
  return trajectory ? trajectory->log.state_dim : 0;
}

nopf_status nopf_trajectory_record(const nopf_trajectory* trajectory, size_t index, nopf_record* record,
                                   double* state, double* pred_s1, size_t n) {
  return guarded([&] {
    require(trajectory, "trajectory");
    if (index >= trajectory->log.records.size()) throw nopf::ConfigError("record index out of range");
    const nopf::StepRecord& r = trajectory->log.records[index];
    if ((state != nullptr || pred_s1 != nullptr) && n != trajectory->log.state_dim) {
      throw nopf::ConfigError("state buffer length does not match the state dimension");
    }
    if (record != nullptr) {
      *record = nopf_record{r.t, r.u, r.d_hat, r.d_tilde, r.phi, r.gamma_fn, r.w_fn, r.n_fn, r.ctrl_wall_ns};
    }
    if (state != nullptr) std::copy(r.x.begin(), r.x.end(), state);
    if (pred_s1 != nullptr) std::copy(r.pred_s1.begin(), r.pred_s1.end(), pred_s1);
  });
}

nopf_status nopf_trajectory_summarize(const nopf_trajectory* trajectory, nopf_trajectory_summary* out) {
  return guarded([&] {
    require(trajectory, "trajectory");
    require(out, "out");
    const nopf::TrajectoryLog& log = trajectory->log;
    if (log.records.empty()) throw nopf::ConfigError("trajectory is empty");
    const nopf::TrajectorySummary s = nopf::summarize(log, trajectory->d_min, trajectory->d_max);
    const double t_end = log.records.back().t;
    const double initial = nopf::max_distance(log, 0.0, 0.0);
    out->final_distance = s.final_distance;
    out->final_d_hat = s.final_d_hat;
    out->min_gamma = s.min_gamma;
    out->late_residual = s.late_residual;
    out->initial_distance = initial;
    out->d_hat_in_bounds = s.d_hat_in_bounds ? 1 : 0;
    out->converged = nopf::max_distance(log, 0.75 * t_end, t_end) <= 0.1 * initial ? 1 : 0;
    out->steps = log.records.size();
  });
}

nopf_status nopf_trajectory_write_csv(const nopf_trajectory* trajectory, const char* path) {
  return guarded([&] {
    require(trajectory, "trajectory");
    require(path, "path");
    nopf::write_trajectory_csv(trajectory->log, path);
  });
}

void nopf_trajectory_free(nopf_trajectory* trajectory) { delete trajectory; }

nopf_status nopf_bench(const nopf_config* config, const nopf_surrogate* surrogate, nopf_bench_report** out) {
  return guarded([&] {
    require(config, "config");
    require(surrogate, "surrogate");
    require(out, "out");
    *out = nullptr;
    const nopf::RunConfig& rc = config->config;
    auto b = std::make_unique<nopf_bench_report>();
    b->report = nopf::bench_predictors(rc.sim, plant_of(config), *surrogate->model, rc.bench.dx_list,
                                       rc.bench.repetitions, rc.bench.pool_size);
    *out = b.release();
  });
}

size_t nopf_bench_rows(const nopf_bench_report* report) { return report ? report->report.rows.size() : 0; }

nopf_status nopf_bench_row_at(const nopf_bench_report* report, size_t index, nopf_bench_row* out) {
  return guarded([&] {
    require(report, "report");
    require(out, "out");
    if (index >= report->report.rows.size()) throw nopf::ConfigError("bench row index out of range");
    const nopf::BenchRow& r = report->report.rows[index];
    *out = nopf_bench_row{r.dx, r.numerical_seconds, r.surrogate_seconds, r.speedup};
  });
}

nopf_status nopf_bench_write_csv(const nopf_bench_report* report, const char* path) {
  return guarded([&] {
    require(report, "report");
    require(path, "path");
    nopf::write_bench_csv(report->report, path);
  });
}

void nopf_bench_free(nopf_bench_report* report) { delete report; }

}  // extern "C"
