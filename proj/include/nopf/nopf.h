#ifndef NOPF_H
#define NOPF_H

/* C interface to the predictor-feedback library. All handles are opaque and
 * owned by the caller once returned; release them with the matching _free.
 * Every function that can fail returns a status; nopf_last_error() holds the
 * message of the most recent failure on the calling thread. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define NOPF_API __declspec(dllexport)
#else
#define NOPF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nopf_status {
  NOPF_OK = 0,
  NOPF_ERR_CONFIG = 1,
  NOPF_ERR_NUMERICAL = 2,
  NOPF_ERR_IO = 3,
  NOPF_ERR_BAD_MAGIC = 4,
  NOPF_ERR_TRUNCATED = 5,
  NOPF_ERR_SHAPE = 6
} nopf_status;

typedef enum nopf_partition {
  NOPF_PARTITION_ALL = 0,
  NOPF_PARTITION_TRAIN = 1,
  NOPF_PARTITION_VALIDATION = 2
} nopf_partition;

typedef enum nopf_scheme { NOPF_SCHEME_EULER = 0, NOPF_SCHEME_RK4 = 1 } nopf_scheme;

typedef struct nopf_config nopf_config;
typedef struct nopf_dataset nopf_dataset;
typedef struct nopf_surrogate nopf_surrogate;
typedef struct nopf_trajectory nopf_trajectory;
typedef struct nopf_bench_report nopf_bench_report;

typedef struct nopf_train_summary {
  size_t epochs_run;
  size_t best_epoch;
  double best_validation_loss;
  double validation_epsilon;
  double wall_seconds;
  char stop_reason[32];
} nopf_train_summary;

typedef struct nopf_sup_error {
  double epsilon_hat;
  double mean_error;
  size_t samples;
  char domain[256];
} nopf_sup_error;

typedef struct nopf_trajectory_summary {
  double final_distance;
  double final_d_hat;
  double min_gamma;
  double late_residual; /* max |X - X*| over the last fifth of the run */
  double initial_distance;
  int d_hat_in_bounds;
  int converged; /* |X - X*| <= 0.1 |X(0) - X*| over the last quarter of the run */
  size_t steps;
} nopf_trajectory_summary;

typedef struct nopf_record {
  double t;
  double u;
  double d_hat;
  double d_tilde;
  double phi;
  double gamma_fn;
  double w_fn;
  double n_fn;
  double ctrl_wall_ns;
} nopf_record;

typedef struct nopf_bench_row {
  double dx;
  double numerical_seconds;
  double surrogate_seconds;
  double speedup;
} nopf_bench_row;

NOPF_API const char* nopf_version(void);
NOPF_API const char* nopf_last_error(void);
NOPF_API const char* nopf_status_name(nopf_status status);

/* Configuration: defaults, INI file, "section.key=value" overrides. */
NOPF_API nopf_status nopf_config_new(nopf_config** out);
NOPF_API nopf_status nopf_config_load(const char* path, nopf_config** out);
NOPF_API nopf_status nopf_config_set(nopf_config* config, const char* assignment);
NOPF_API nopf_status nopf_config_set_seed(nopf_config* config, uint64_t seed);
/* Copies the value of "section.key" into buf; *needed receives the length
 * including the terminator. Like snprintf, a short buffer gets a truncated,
 * terminated copy and the call still succeeds. */
NOPF_API nopf_status nopf_config_get(const nopf_config* config, const char* key, char* buf, size_t capacity,
                                     size_t* needed);
NOPF_API nopf_status nopf_config_serialize(const nopf_config* config, char* buf, size_t capacity, size_t* needed);
NOPF_API nopf_status nopf_config_validate(const nopf_config* config);
NOPF_API void nopf_config_free(nopf_config* config);

/* Datasets of numerical-predictor labels. */
NOPF_API nopf_status nopf_dataset_generate(const nopf_config* config, nopf_dataset** out);
NOPF_API nopf_status nopf_dataset_save(const nopf_dataset* dataset, const char* path);
NOPF_API nopf_status nopf_dataset_load(const char* path, nopf_dataset** out);
NOPF_API size_t nopf_dataset_size(const nopf_dataset* dataset);
NOPF_API size_t nopf_dataset_discarded(const nopf_dataset* dataset);
NOPF_API void nopf_dataset_free(nopf_dataset* dataset);

/* Surrogate training, persistence and evaluation. report_path may be NULL. */
NOPF_API nopf_status nopf_surrogate_train(const nopf_config* config, const nopf_dataset* dataset,
                                          const char* report_path, nopf_surrogate** out,
                                          nopf_train_summary* summary);
NOPF_API nopf_status nopf_surrogate_save(const nopf_surrogate* surrogate, const char* path);
NOPF_API nopf_status nopf_surrogate_load(const char* path, nopf_surrogate** out);
/* The train/validation partitions follow config's train.seed and
 * train.validation_fraction. */
NOPF_API nopf_status nopf_surrogate_eval(const nopf_surrogate* surrogate, const nopf_dataset* dataset,
                                         const nopf_config* config, nopf_partition partition,
                                         nopf_sup_error* out);
/* Profile at the surrogate's grid nodes; out holds grid_size*n values. */
NOPF_API nopf_status nopf_surrogate_predict(const nopf_surrogate* surrogate, const double* state, size_t n,
                                            const double* profile, size_t grid_size, double d_hat, double* out,
                                            size_t out_len);
NOPF_API void nopf_surrogate_free(nopf_surrogate* surrogate);

/* Numerical predictor for the configured plant on an m+1 node profile;
 * out holds (m+1)*n values. */
NOPF_API nopf_status nopf_predict(const nopf_config* config, const double* state, size_t n, const double* profile,
                                  size_t nodes, double d_hat, nopf_scheme scheme, double* out, size_t out_len);

/* Closed-loop simulation. surrogate may be NULL unless sim.backend is
 * surrogate. On a blow-up the status is NOPF_ERR_NUMERICAL and *out still
 * receives the partial trajectory. */
NOPF_API nopf_status nopf_simulate(const nopf_config* config, const nopf_surrogate* surrogate,
                                   nopf_trajectory** out);
NOPF_API size_t nopf_trajectory_length(const nopf_trajectory* trajectory);
NOPF_API size_t nopf_trajectory_state_dim(const nopf_trajectory* trajectory);
/* state and pred_s1 may be NULL; otherwise they hold n values. */
NOPF_API nopf_status nopf_trajectory_record(const nopf_trajectory* trajectory, size_t index, nopf_record* record,
                                            double* state, double* pred_s1, size_t n);
NOPF_API nopf_status nopf_trajectory_summarize(const nopf_trajectory* trajectory, nopf_trajectory_summary* out);
NOPF_API nopf_status nopf_trajectory_write_csv(const nopf_trajectory* trajectory, const char* path);
NOPF_API void nopf_trajectory_free(nopf_trajectory* trajectory);

/* Predictor timing over the configured bench.dx_list. */
NOPF_API nopf_status nopf_bench(const nopf_config* config, const nopf_surrogate* surrogate,
                                nopf_bench_report** out);
NOPF_API size_t nopf_bench_rows(const nopf_bench_report* report);
NOPF_API nopf_status nopf_bench_row_at(const nopf_bench_report* report, size_t index, nopf_bench_row* out);
NOPF_API nopf_status nopf_bench_write_csv(const nopf_bench_report* report, const char* path);
NOPF_API void nopf_bench_free(nopf_bench_report* report);

#ifdef __cplusplus
}
#endif

#endif
