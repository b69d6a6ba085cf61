#include "nopf/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "binary_io.hpp"
#include "nopf/errors.hpp"
#include "nopf/predictor.hpp"

namespace nopf {

namespace {

constexpr const char* kDatasetMagic = "NODS1";

using Json = nlohmann::json;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double draw(std::mt19937_64& rng, Interval range) {
  if (range.hi <= range.lo) return range.lo;
  return std::uniform_real_distribution<double>(range.lo, range.hi)(rng);
}

std::size_t resolve_threads(std::size_t requested) {
  if (requested != 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs body(i) for i in [0, count) on `threads` workers, rethrowing the first failure.
template <class Body>
void parallel_for(std::size_t count, std::size_t threads, Body body) {
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

Json interval_json(Interval r) { return Json::array({r.lo, r.hi}); }

Interval interval_from_json(const Json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

Json sampling_to_json(const SamplingConfig& s) {
  Json box = Json::array();
  for (const Interval& r : s.x0_box) box.push_back(interval_json(r));
  return Json{{"trajectories", s.trajectories},
              {"samples_per_trajectory", s.samples_per_trajectory},
              {"horizon", s.horizon},
              {"x0_box", box},
              {"true_delay", interval_json(s.true_delay)},
              {"d_hat0", interval_json(s.d_hat0)},
              {"grid_size", s.grid_size},
              {"label_intervals", s.label_intervals},
              {"seed", s.seed},
              {"max_discard_fraction", s.max_discard_fraction}};
}

SamplingConfig sampling_from_json(const Json& j) {
  SamplingConfig s;
  s.trajectories = j.at("trajectories").get<std::size_t>();
  s.samples_per_trajectory = j.at("samples_per_trajectory").get<std::size_t>();
  s.horizon = j.at("horizon").get<double>();
  s.x0_box.clear();
  for (const Json& r : j.at("x0_box")) s.x0_box.push_back(interval_from_json(r));
  s.true_delay = interval_from_json(j.at("true_delay"));
  s.d_hat0 = interval_from_json(j.at("d_hat0"));
  s.grid_size = j.at("grid_size").get<std::size_t>();
  s.label_intervals = j.at("label_intervals").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.max_discard_fraction = j.at("max_discard_fraction").get<double>();
  return s;
}

// Dense-network buffers for one batch.
struct MlpTape {
  std::vector<Matrix> pre;   // Z_k
  std::vector<Matrix> post;  // A_k (A_0 = input)
};

Eigen::Map<const Matrix> weights_of(const std::vector<double>& w, const DenseLayerRef& l) {
  return {w.data() + l.w_offset, static_cast<Index>(l.out), static_cast<Index>(l.in)};
}

Eigen::Map<const Eigen::VectorXd> bias_of(const std::vector<double>& w, const DenseLayerRef& l) {
  return {w.data() + l.b_offset, static_cast<Index>(l.out)};
}

void mlp_forward(const std::vector<double>& w, const std::vector<DenseLayerRef>& layers, Activation act,
                 Matrix input, MlpTape& tape) {
  tape.pre.clear();
  tape.post.clear();
  tape.post.push_back(std::move(input));
  for (std::size_t k = 0; k < layers.size(); ++k) {
    Matrix z = weights_of(w, layers[k]) * tape.post.back();
    z.colwise() += bias_of(w, layers[k]);
    Matrix a;
    if (k + 1 == layers.size()) {
      a = z;
    } else if (act == Activation::tanh) {
      a = z.array().tanh();
    } else {
      a = z.array().max(0.0);
    }
    tape.pre.push_back(std::move(z));
    tape.post.push_back(std::move(a));
  }
}

// Accumulates parameter gradients given dL/d(output) of the last layer.
void mlp_backward(const std::vector<double>& w, const std::vector<DenseLayerRef>& layers, Activation act,
                  const MlpTape& tape, Matrix d_out, std::vector<double>& grad) {
  Matrix dz = std::move(d_out);
  for (std::size_t k = layers.size(); k-- > 0;) {
    const DenseLayerRef& l = layers[k];
    Eigen::Map<Matrix> gw(grad.data() + l.w_offset, static_cast<Index>(l.out), static_cast<Index>(l.in));
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + l.b_offset, static_cast<Index>(l.out));
    gw.noalias() += dz * tape.post[k].transpose();
    gb += dz.rowwise().sum();
    if (k == 0) break;
    Matrix da = weights_of(w, l).transpose() * dz;
    if (act == Activation::tanh) {
      dz = da.array() * (1.0 - tape.post[k].array().square());
    } else {
      dz = da.array() * (tape.pre[k - 1].array() > 0.0).cast<double>();
    }
  }
}

// Normalized branch inputs (columns) and targets (rows component-major:
// i*G + j) for a set of rows.
struct BatchMatrices {
  Matrix inputs;
  Matrix targets;
};

BatchMatrices build_batch(const SurrogateParams& p, std::span<const DatasetSample* const> rows) {
  const SurrogateArchitecture& a = p.architecture;
  const std::size_t n = a.state_dim;
  const std::size_t g = a.input_grid_size;
  const std::size_t d = a.branch_input_dim();
  BatchMatrices b;
  b.inputs.resize(static_cast<Index>(d), static_cast<Index>(rows.size()));
  b.targets.resize(static_cast<Index>(n * g), static_cast<Index>(rows.size()));
  const auto& im = p.input_normalization.mean;
  const auto& is = p.input_normalization.scale;
  const auto& om = p.output_normalization.mean;
  const auto& os = p.output_normalization.scale;
  for (std::size_t c = 0; c < rows.size(); ++c) {
    const DatasetSample& s = *rows[c];
    if (s.state.size() != n || s.input_profile.size() != g || s.target_profile.size() != n * g) {
      throw FormatError(ErrorKind::shape, "sample " + std::to_string(c) + " does not match the architecture");
    }
    const auto col = static_cast<Index>(c);
    std::size_t k = 0;
    for (double v : s.state) b.inputs(static_cast<Index>(k), col) = (v - im[k]) / is[k], ++k;
    for (double v : s.input_profile) b.inputs(static_cast<Index>(k), col) = (v - im[k]) / is[k], ++k;
    b.inputs(static_cast<Index>(k), col) = (s.d_hat - im[k]) / is[k];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < g; ++j) {
        const double base = a.residual ? s.state[i] : 0.0;
        b.targets(static_cast<Index>(i * g + j), col) = (s.target_profile[j * n + i] - base - om[i]) / os[i];
      }
    }
  }
  return b;
}

Matrix grid_points(std::size_t g) {
  Matrix s(1, static_cast<Index>(g));
  for (std::size_t j = 0; j < g; ++j) {
    s(0, static_cast<Index>(j)) = j + 1 == g ? 1.0 : static_cast<double>(j) / static_cast<double>(g - 1);
  }
  return s;
}

// Normalized predictions, rows component-major like BatchMatrices::targets.
Matrix predict_normalized(const SurrogateParams& p, const ParameterLayout& layout, const Matrix& inputs,
                          const Matrix& basis, MlpTape* branch_tape) {
  const std::size_t n = p.architecture.state_dim;
  const auto pd = static_cast<Index>(p.architecture.latent_dim);
  const auto g = basis.cols();
  MlpTape local;
  MlpTape& tape = branch_tape ? *branch_tape : local;
  mlp_forward(p.weights, layout.branch, p.architecture.activation, inputs, tape);
  const Matrix& coeffs = tape.post.back();
  Matrix y(static_cast<Index>(n) * g, inputs.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Index>(i);
    y.middleRows(r * g, g).noalias() = basis.transpose() * coeffs.middleRows(r * pd, pd);
    y.middleRows(r * g, g).array() += p.weights[layout.output_bias_offset + i];
  }
  return y;
}

// Sum over the batch of squared normalized errors; gradients of the sum
// divided by `denominator` are added to `grad`.
double accumulate_loss_grad(const SurrogateParams& p, const ParameterLayout& layout, const BatchMatrices& batch,
                            double denominator, std::vector<double>& grad) {
  const std::size_t n = p.architecture.state_dim;
  const auto pd = static_cast<Index>(p.architecture.latent_dim);
  MlpTape trunk;
  mlp_forward(p.weights, layout.trunk, p.architecture.activation, grid_points(p.architecture.input_grid_size), trunk);
  const Matrix& basis = trunk.post.back();
  const auto g = basis.cols();
  MlpTape branch;
  const Matrix y = predict_normalized(p, layout, batch.inputs, basis, &branch);
  const Matrix residual = y - batch.targets;

  const Eigen::RowVectorXd per_sample = residual.array().square().colwise().sum();
  for (Index c = 0; c < per_sample.size(); ++c) {
    if (!std::isfinite(per_sample[c])) {
      throw NumericalError("non-finite loss at batch sample " + std::to_string(c));
    }
  }
  const double sum = per_sample.sum();

  const Matrix dy = residual * (2.0 / denominator);
  const Matrix& coeffs = branch.post.back();
  Matrix d_coeffs(coeffs.rows(), coeffs.cols());
  Matrix d_basis = Matrix::Zero(basis.rows(), basis.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Index>(i);
    const auto dyi = dy.middleRows(r * g, g);
    d_coeffs.middleRows(r * pd, pd).noalias() = basis * dyi;
    d_basis.noalias() += coeffs.middleRows(r * pd, pd) * dyi.transpose();
    grad[layout.output_bias_offset + i] += dyi.sum();
  }
  mlp_backward(p.weights, layout.branch, p.architecture.activation, branch, std::move(d_coeffs), grad);
  mlp_backward(p.weights, layout.trunk, p.architecture.activation, trunk, std::move(d_basis), grad);
  return sum;
}

BatchMatrices gather(const BatchMatrices& all, std::span<const std::size_t> idx) {
  BatchMatrices b;
  b.inputs.resize(all.inputs.rows(), static_cast<Index>(idx.size()));
  b.targets.resize(all.targets.rows(), static_cast<Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) {
    b.inputs.col(static_cast<Index>(c)) = all.inputs.col(static_cast<Index>(idx[c]));
    b.targets.col(static_cast<Index>(c)) = all.targets.col(static_cast<Index>(idx[c]));
  }
  return b;
}

struct Evaluation {
  double loss = 0.0;     // mean squared normalized error
  double epsilon = 0.0;  // max denormalized absolute error
};

Evaluation evaluate(const SurrogateParams& p, const ParameterLayout& layout, const BatchMatrices& data) {
  const std::size_t n = p.architecture.state_dim;
  MlpTape trunk;
  mlp_forward(p.weights, layout.trunk, p.architecture.activation, grid_points(p.architecture.input_grid_size), trunk);
  const Matrix& basis = trunk.post.back();
  const auto g = basis.cols();
  const Matrix residual = predict_normalized(p, layout, data.inputs, basis, nullptr) - data.targets;
  Evaluation e;
  e.loss = residual.squaredNorm() / static_cast<double>(residual.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double worst = residual.middleRows(static_cast<Index>(i) * g, g).cwiseAbs().maxCoeff();
    e.epsilon = std::max(e.epsilon, worst * p.output_normalization.scale[i]);
  }
  return e;
}

std::string fmt17(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void SamplingConfig::validate(std::size_t state_dim, double d_min, double d_max) const {
  if (trajectories < 1) throw ConfigError("sampling.trajectories must be >= 1");
  if (samples_per_trajectory < 1) throw ConfigError("sampling.samples_per_trajectory must be >= 1");
  if (!(horizon > 0.0)) throw ConfigError("sampling.horizon must be positive");
  if (x0_box.size() != state_dim) throw ConfigError("sampling.x0_box must have one interval per state component");
  for (const Interval& r : x0_box) {
    if (!(r.lo <= r.hi)) throw ConfigError("sampling.x0_box: lower bound exceeds upper bound");
  }
  if (!(true_delay.lo <= true_delay.hi)) throw ConfigError("sampling.true_delay: d_lo exceeds d_hi");
  if (!(true_delay.lo >= d_min && true_delay.hi <= d_max)) {
    throw ConfigError("sampling.true_delay must lie inside [sim.d_min, sim.d_max]");
  }
  if (!(d_hat0.lo <= d_hat0.hi)) throw ConfigError("sampling.d_hat0: lower bound exceeds upper bound");
  if (!(d_hat0.lo >= d_min && d_hat0.hi <= d_max)) {
    throw ConfigError("sampling.d_hat0 must lie inside [sim.d_min, sim.d_max]");
  }
  if (grid_size < 2) throw ConfigError("sampling.grid_size must be >= 2");
  if (label_intervals < 1 || label_intervals % (grid_size - 1) != 0) {
    throw ConfigError("sampling.label_intervals must be a positive multiple of grid_size - 1");
  }
  if (!(max_discard_fraction >= 0.0 && max_discard_fraction <= 1.0)) {
    throw ConfigError("sampling.max_discard_fraction must lie in [0, 1]");
  }
}

std::vector<double> label_profile(const PlantModel& model, std::span<const double> state,
                                  std::span<const double> input_profile, double d_hat, std::size_t label_intervals) {
  const std::size_t g = input_profile.size();
  if (g < 2 || label_intervals % (g - 1) != 0) {
    throw ConfigError("label_intervals must be a multiple of the profile's interval count");
  }
  const std::size_t n = model.state_dim;
  const std::size_t stride = label_intervals / (g - 1);
  const SpatialGrid fine(label_intervals);
  const std::vector<double> upsampled = resample_profile(input_profile, fine.size());
  std::vector<double> marched(fine.size() * n);
  predict_into(model, state, upsampled, d_hat, fine, Scheme::euler, marched);
  std::vector<double> out(g * n);
  for (std::size_t j = 0; j < g; ++j) {
    std::copy_n(marched.begin() + static_cast<std::ptrdiff_t>(j * stride * n), n,
                out.begin() + static_cast<std::ptrdiff_t>(j * n));
  }
  return out;
}

Dataset generate_dataset(const PlantModel& model, const SamplingConfig& sampling, const SimConfig& sim) {
  const std::size_t n = model.state_dim;
  sampling.validate(n, sim.d_min, sim.d_max);
  const SpatialGrid coarse(sampling.grid_size - 1);

  std::vector<std::optional<std::vector<DatasetSample>>> per_trajectory(sampling.trajectories);
  parallel_for(sampling.trajectories, resolve_threads(sampling.threads), [&](std::size_t index) {
    std::mt19937_64 rng(splitmix64(sampling.seed ^ splitmix64(index)));
    SimConfig cfg = sim;
    cfg.backend = Backend::numerical;
    cfg.open_loop = false;
    cfg.t_final = sampling.horizon;
    cfg.x0.resize(n);
    for (std::size_t i = 0; i < n; ++i) cfg.x0[i] = draw(rng, sampling.x0_box[i]);
    cfg.true_delay = draw(rng, sampling.true_delay);
    cfg.d_hat0 = draw(rng, sampling.d_hat0);

    std::vector<std::size_t> sample_steps(sampling.samples_per_trajectory);
    for (std::size_t i = 0; i < sample_steps.size(); ++i) {
      const double t = sampling.horizon * static_cast<double>(i) / static_cast<double>(sample_steps.size());
      sample_steps[i] = static_cast<std::size_t>(std::llround(t / cfg.dt));
    }
    std::vector<DatasetSample> rows;
    std::size_t next = 0;
    try {
      run_closed_loop(cfg, model, nullptr, [&](const StepView& v) {
        while (next < sample_steps.size() && sample_steps[next] == v.step) {
          DatasetSample s;
          s.state.assign(v.state.begin(), v.state.end());
          s.input_profile = sample_profile(*v.history, v.t, cfg.true_delay, coarse);
          s.d_hat = v.d_hat;
          s.target_profile = label_profile(model, s.state, s.input_profile, s.d_hat, sampling.label_intervals);
          rows.push_back(std::move(s));
          ++next;
        }
      });
    } catch (const NumericalError&) {
      return;  // discarded
    }
    if (rows.size() == sample_steps.size()) per_trajectory[index] = std::move(rows);
  });

  Dataset ds;
  ds.state_dim = n;
  ds.grid_size = sampling.grid_size;
  ds.label_intervals = sampling.label_intervals;
  ds.sampling = sampling;
  ds.plant = model.name;
  for (auto& rows : per_trajectory) {
    if (!rows) {
      ++ds.discarded_trajectories;
      continue;
    }
    for (auto& s : *rows) ds.samples.push_back(std::move(s));
  }
  const double fraction =
      static_cast<double>(ds.discarded_trajectories) / static_cast<double>(sampling.trajectories);
  if (fraction > sampling.max_discard_fraction) {
    throw NumericalError(std::to_string(ds.discarded_trajectories) + " of " + std::to_string(sampling.trajectories) +
                         " trajectories blew up (more than " + fmt17(100.0 * sampling.max_discard_fraction) +
                         "%); shrink the sampling ranges");
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  const std::size_t n = dataset.state_dim;
  const std::size_t g = dataset.grid_size;
  const std::size_t width = n + g + 1 + g * n;
  Json header{{"format", 1},
              {"state_dim", n},
              {"grid_size", g},
              {"label_intervals", dataset.label_intervals},
              {"count", dataset.samples.size()},
              {"row_width", width},
              {"plant", dataset.plant},
              {"seed", dataset.sampling.seed},
              {"discarded_trajectories", dataset.discarded_trajectories},
              {"sampling", sampling_to_json(dataset.sampling)}};
  if (!dataset.provenance.empty()) header["provenance"] = Json::parse(dataset.provenance);
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kDatasetMagic, 5);
  detail::write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::write_u64(os, dataset.samples.size());
  detail::write_u64(os, width);
  for (const DatasetSample& s : dataset.samples) {
    if (s.state.size() != n || s.input_profile.size() != g || s.target_profile.size() != g * n) {
      throw FormatError(ErrorKind::shape, "dataset row does not match the header shape");
    }
    detail::write_f64s(os, s.state);
    detail::write_f64s(os, s.input_profile);
    detail::write_f64(os, s.d_hat);
    detail::write_f64s(os, s.target_profile);
  }
  if (!os) throw IoError("failed writing '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset '" + path + "'");
  detail::expect_magic(is, kDatasetMagic, path);
  const std::uint64_t header_len = detail::read_u64(is, "header length");
  if (header_len > (std::uint64_t{1} << 30)) throw FormatError(ErrorKind::shape, "header length is implausible");
  std::string text(header_len, '\0');
  detail::read_exact(is, text.data(), text.size(), "header");

  Dataset ds;
  std::uint64_t count = 0;
  try {
    const Json h = Json::parse(text);
    ds.state_dim = h.at("state_dim").get<std::size_t>();
    ds.grid_size = h.at("grid_size").get<std::size_t>();
    ds.label_intervals = h.at("label_intervals").get<std::size_t>();
    ds.plant = h.at("plant").get<std::string>();
    ds.discarded_trajectories = h.at("discarded_trajectories").get<std::size_t>();
    ds.sampling = sampling_from_json(h.at("sampling"));
    count = h.at("count").get<std::uint64_t>();
    if (h.contains("provenance")) ds.provenance = h.at("provenance").dump();
  } catch (const Json::exception& e) {
    throw FormatError(ErrorKind::shape, path + ": malformed header (" + e.what() + ")");
  }
  const std::size_t n = ds.state_dim;
  const std::size_t g = ds.grid_size;
  const std::uint64_t rows = detail::read_u64(is, "row count");
  const std::uint64_t width = detail::read_u64(is, "row width");
  if (rows != count) {
    throw FormatError(ErrorKind::shape, "count: header declares " + std::to_string(count) + " rows, body holds " +
                                            std::to_string(rows));
  }
  if (width != n + g + 1 + g * n) throw FormatError(ErrorKind::shape, "row_width does not match state_dim and grid_size");
  ds.samples.resize(rows);
  for (DatasetSample& s : ds.samples) {
    s.state.resize(n);
    s.input_profile.resize(g);
    s.target_profile.resize(g * n);
    detail::read_f64s(is, s.state, "dataset rows");
    detail::read_f64s(is, s.input_profile, "dataset rows");
    s.d_hat = detail::read_f64(is, "dataset rows");
    detail::read_f64s(is, s.target_profile, "dataset rows");
  }
  return ds;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw ConfigError("train.adam_beta1 must lie in (0, 1)");
  if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw ConfigError("train.adam_beta2 must lie in (0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (!(validation_fraction > 0.0 && validation_fraction <= 0.5)) {
    throw ConfigError("train.validation_fraction must lie in (0, 0.5]");
  }
  if (!(target_epsilon >= 0.0)) throw ConfigError("train.target_epsilon must be nonnegative");
}

LossAndGradients loss_and_gradients(const SurrogateParams& params, std::span<const DatasetSample> batch) {
  if (batch.empty()) throw ConfigError("loss_and_gradients needs a non-empty batch");
  params.validate();
  const ParameterLayout layout = parameter_layout(params.architecture);
  std::vector<const DatasetSample*> rows;
  for (const DatasetSample& s : batch) rows.push_back(&s);
  const BatchMatrices m = build_batch(params, rows);
  LossAndGradients out;
  out.gradients.assign(layout.total, 0.0);
  const double denom = static_cast<double>(m.targets.size());
  out.loss = accumulate_loss_grad(params, layout, m, denom, out.gradients) / denom;
  return out;
}

void adam_step(std::vector<double>& params, std::span<const double> gradients, AdamMoments& moments,
               std::size_t step_index, const TrainConfig& config) {
  if (step_index < 1) throw ConfigError("adam step index counts from 1");
  if (gradients.size() != params.size()) throw ConfigError("gradient size does not match the parameters");
  moments.first.resize(params.size(), 0.0);
  moments.second.resize(params.size(), 0.0);
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_index));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_index));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = gradients[k];
    moments.first[k] = b1 * moments.first[k] + (1.0 - b1) * g;
    moments.second[k] = b2 * moments.second[k] + (1.0 - b2) * g * g;
    const double m_hat = moments.first[k] / c1;
    const double v_hat = moments.second[k] / c2;
    params[k] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
  }
}

DatasetSplit split_dataset(std::size_t rows, double validation_fraction, std::uint64_t seed) {
  if (rows == 0) throw ConfigError("cannot split an empty dataset");
  DatasetSplit split;
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), 0);
  if (rows == 1) {
    split.train = order;
    split.validation = order;
    return split;
  }
  std::mt19937_64 rng(splitmix64(seed));
  std::shuffle(order.begin(), order.end(), rng);
  auto val = static_cast<std::size_t>(std::ceil(validation_fraction * static_cast<double>(rows)));
  val = std::clamp<std::size_t>(val, 1, rows - 1);
  split.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(val));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(val), order.end());
  return split;
}

void fit_normalization(SurrogateParams& params, const Dataset& dataset, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ConfigError("normalization needs at least one row");
  const std::size_t n = dataset.state_dim;
  const std::size_t g = dataset.grid_size;
  const std::size_t d = n + g + 1;
  std::vector<double> sum(d, 0.0), sq(d, 0.0), osum(n, 0.0), osq(n, 0.0);
  auto feature = [&](const DatasetSample& s, std::size_t k) {
    if (k < n) return s.state[k];
    if (k < n + g) return s.input_profile[k - n];
    return s.d_hat;
  };
  for (std::size_t r : rows) {
    const DatasetSample& s = dataset.samples.at(r);
    for (std::size_t k = 0; k < d; ++k) {
      const double v = feature(s, k);
      sum[k] += v;
      sq[k] += v * v;
    }
    for (std::size_t j = 0; j < g; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        const double v = s.target_profile[j * n + i] - (params.architecture.residual ? s.state[i] : 0.0);
        osum[i] += v;
        osq[i] += v * v;
      }
    }
  }
  auto finish = [](double s, double q, double count, double& mean, double& scale) {
    mean = s / count;
    const double var = std::max(q / count - mean * mean, 0.0);
    const double sd = std::sqrt(var);
    scale = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 1.0;
  };
  const auto count = static_cast<double>(rows.size());
  params.input_normalization.mean.resize(d);
  params.input_normalization.scale.resize(d);
  for (std::size_t k = 0; k < d; ++k) {
    finish(sum[k], sq[k], count, params.input_normalization.mean[k], params.input_normalization.scale[k]);
  }
  params.output_normalization.mean.resize(n);
  params.output_normalization.scale.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    finish(osum[i], osq[i], count * static_cast<double>(g), params.output_normalization.mean[i],
           params.output_normalization.scale[i]);
  }
}

TrainResult train(const Dataset& dataset, const SurrogateArchitecture& architecture, const TrainConfig& config) {
  config.validate();
  if (dataset.samples.empty()) throw ConfigError("cannot train on an empty dataset");
  if (architecture.state_dim != dataset.state_dim || architecture.input_grid_size != dataset.grid_size) {
    throw FormatError(ErrorKind::shape, "architecture state_dim/input_grid_size do not match the dataset");
  }
  const auto t_start = std::chrono::steady_clock::now();

  const DatasetSplit split = split_dataset(dataset.samples.size(), config.validation_fraction, config.seed);
  SurrogateParams params = initialize_params(architecture, config.seed);
  fit_normalization(params, dataset, split.train);
  const ParameterLayout layout = parameter_layout(architecture);

  std::vector<const DatasetSample*> all_rows;
  for (const DatasetSample& s : dataset.samples) all_rows.push_back(&s);
  const BatchMatrices all = build_batch(params, all_rows);
  const BatchMatrices validation = gather(all, split.validation);

  TrainResult result;
  TrainingReport& report = result.report;
  report.train_rows = split.train.size();
  report.validation_rows = split.validation.size();
  report.stop_reason = "epochs";

  SurrogateParams best = params;
  Evaluation initial = evaluate(params, layout, validation);
  report.best_validation_loss = initial.loss;
  report.validation_epsilon = initial.epsilon;
  const double divergence_limit = 1e6 * std::max(initial.loss, 1e-300);

  std::mt19937_64 rng(splitmix64(config.seed + 1));
  std::vector<std::size_t> order = split.train;
  AdamMoments moments;
  std::vector<double> grad(layout.total);
  std::size_t step = 0;
  std::size_t since_best = 0;
  const std::size_t threads = config.parallel ? resolve_threads(config.threads) : 1;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    double epoch_terms = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const double denom = static_cast<double>(idx.size() * all.targets.rows());
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_sum = 0.0;
      if (threads <= 1) {
        batch_sum = accumulate_loss_grad(params, layout, gather(all, idx), denom, grad);
      } else {
        const std::size_t chunks = std::min(threads, idx.size());
        std::vector<std::vector<double>> partial(chunks, std::vector<double>(layout.total, 0.0));
        std::vector<double> sums(chunks, 0.0);
        parallel_for(chunks, chunks, [&](std::size_t c) {
          const std::size_t lo = idx.size() * c / chunks;
          const std::size_t hi = idx.size() * (c + 1) / chunks;
          sums[c] = accumulate_loss_grad(params, layout, gather(all, idx.subspan(lo, hi - lo)), denom, partial[c]);
        });
        for (std::size_t c = 0; c < chunks; ++c) {
          batch_sum += sums[c];
          for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += partial[c][k];
        }
      }
      adam_step(params.weights, grad, moments, ++step, config);
      epoch_sum += batch_sum;
      epoch_terms += denom;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_sum / epoch_terms;
    const Evaluation val = evaluate(params, layout, validation);
    rec.validation_loss = val.loss;
    rec.validation_epsilon = val.epsilon;
    report.epochs.push_back(rec);

    if (!std::isfinite(rec.train_loss) || !std::isfinite(val.loss) || rec.train_loss > divergence_limit) {
      throw NumericalError("training diverged at epoch " + std::to_string(epoch) +
                           "; try a smaller learning rate (current " + fmt17(config.learning_rate) + ")");
    }
    if (val.loss < report.best_validation_loss || report.best_epoch == 0) {
      report.best_validation_loss = val.loss;
      report.validation_epsilon = val.epsilon;
      report.best_epoch = epoch;
      best = params;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (config.target_epsilon > 0.0 && val.epsilon <= config.target_epsilon) {
      report.stop_reason = "target_epsilon";
      break;
    }
    if (config.patience > 0 && since_best >= config.patience) {
      report.stop_reason = "patience";
      break;
    }
  }

  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  result.params = std::move(best);
  return result;
}

void write_training_report(const TrainingReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.precision(17);
  os << "epochs_run = " << report.epochs.size() << '\n'
     << "best_epoch = " << report.best_epoch << '\n'
     << "best_validation_loss = " << report.best_validation_loss << '\n'
     << "validation_epsilon = " << report.validation_epsilon << '\n'
     << "stop_reason = " << report.stop_reason << '\n'
     << "train_rows = " << report.train_rows << '\n'
     << "validation_rows = " << report.validation_rows << '\n'
     << "wall_seconds = " << report.wall_seconds << '\n';
  if (!os) throw IoError("failed writing '" + path + "'");

  std::ofstream csv(path + ".csv", std::ios::trunc);
  if (!csv) throw IoError("cannot open '" + path + ".csv' for writing");
  csv.precision(17);
  csv << "epoch,train_loss,validation_loss,validation_epsilon\n";
  for (const EpochRecord& r : report.epochs) {
    csv << r.epoch << ',' << r.train_loss << ',' << r.validation_loss << ',' << r.validation_epsilon << '\n';
  }
  if (!csv) throw IoError("failed writing '" + path + ".csv'");
}

SupErrorReport eval_sup_error(const SurrogateParams& params, std::span<const DatasetSample> partition) {
  if (partition.empty()) throw ConfigError("cannot evaluate on an empty partition");
  const Surrogate model(params);
  const std::size_t n = params.architecture.state_dim;
  const std::size_t g = params.architecture.input_grid_size;
  SupErrorReport r;
  r.samples = partition.size();
  r.component_max.assign(n, 0.0);
  std::vector<double> out(g * n);
  std::vector<Interval> box(n, Interval{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()});
  Interval d_range{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  double total = 0.0;
  for (const DatasetSample& s : partition) {
    if (s.target_profile.size() != g * n) throw FormatError(ErrorKind::shape, "sample does not match the architecture");
    model.predict_grid_into(s.state, s.input_profile, s.d_hat, out);
    for (std::size_t k = 0; k < out.size(); ++k) {
      const double e = std::abs(out[k] - s.target_profile[k]);
      r.component_max[k % n] = std::max(r.component_max[k % n], e);
      total += e;
    }
    for (std::size_t i = 0; i < n; ++i) {
      box[i].lo = std::min(box[i].lo, s.state[i]);
      box[i].hi = std::max(box[i].hi, s.state[i]);
    }
    d_range.lo = std::min(d_range.lo, s.d_hat);
    d_range.hi = std::max(d_range.hi, s.d_hat);
  }
  r.epsilon_hat = *std::max_element(r.component_max.begin(), r.component_max.end());
  r.mean_error = total / static_cast<double>(partition.size() * g * n);
  std::ostringstream desc;
  desc.precision(6);
  for (std::size_t i = 0; i < n; ++i) desc << "x" << i + 1 << " in [" << box[i].lo << ", " << box[i].hi << "], ";
  desc << "d_hat in [" << d_range.lo << ", " << d_range.hi << "], " << partition.size() << " samples";
  r.domain = desc.str();
  return r;
}

}  // namespace nopf
