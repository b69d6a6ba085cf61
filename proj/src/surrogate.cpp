#include "nopf/surrogate.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"

#include "binary_io.hpp"
#include "nopf/errors.hpp"

namespace nopf {

namespace {

constexpr const char* kWeightMagic = "NOPF1";

using Json = nlohmann::json;

void apply_activation(Activation a, Eigen::Ref<Eigen::VectorXd> v) {
  if (a == Activation::tanh) {
    v = v.array().tanh();
  } else {
    v = v.array().max(0.0);
  }
}

Eigen::Map<const Eigen::MatrixXd> weight_matrix(const std::vector<double>& w, const DenseLayerRef& l) {
  return {w.data() + l.w_offset, static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in)};
}

Eigen::Map<const Eigen::VectorXd> bias_vector(const std::vector<double>& w, const DenseLayerRef& l) {
  return {w.data() + l.b_offset, static_cast<Eigen::Index>(l.out)};
}

Eigen::VectorXd run_mlp(const std::vector<double>& w, const std::vector<DenseLayerRef>& layers, Activation act,
                        Eigen::VectorXd h) {
  for (std::size_t k = 0; k < layers.size(); ++k) {
    Eigen::VectorXd z = bias_vector(w, layers[k]);
    z.noalias() += weight_matrix(w, layers[k]) * h;
    if (k + 1 < layers.size()) apply_activation(act, z);
    h = std::move(z);
  }
  return h;
}

Eigen::VectorXd trunk_basis(const SurrogateParams& p, const ParameterLayout& layout, double s) {
  Eigen::VectorXd in(1);
  in[0] = s;
  return run_mlp(p.weights, layout.trunk, p.architecture.activation, std::move(in));
}

Eigen::VectorXd branch_output(const SurrogateParams& p, const ParameterLayout& layout, std::span<const double> state,
                              std::span<const double> profile, double d_hat) {
  const SurrogateArchitecture& a = p.architecture;
  if (state.size() != a.state_dim) throw ConfigError("surrogate state has the wrong dimension");
  if (profile.size() != a.input_grid_size) {
    throw ConfigError("surrogate input profile has " + std::to_string(profile.size()) + " samples, expected " +
                      std::to_string(a.input_grid_size));
  }
  Eigen::VectorXd in(static_cast<Eigen::Index>(a.branch_input_dim()));
  const auto& mean = p.input_normalization.mean;
  const auto& scale = p.input_normalization.scale;
  std::size_t k = 0;
  for (double v : state) {
    in[static_cast<Eigen::Index>(k)] = (v - mean[k]) / scale[k];
    ++k;
  }
  for (double v : profile) {
    in[static_cast<Eigen::Index>(k)] = (v - mean[k]) / scale[k];
    ++k;
  }
  in[static_cast<Eigen::Index>(k)] = (d_hat - mean[k]) / scale[k];
  return run_mlp(p.weights, layout.branch, a.activation, std::move(in));
}

void combine(const SurrogateParams& p, const ParameterLayout& layout, const Eigen::VectorXd& coeffs,
             const Eigen::Ref<const Eigen::VectorXd>& basis, std::span<const double> state, std::span<double> out) {
  const std::size_t n = p.architecture.state_dim;
  const auto pdim = static_cast<Eigen::Index>(p.architecture.latent_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = coeffs.segment(static_cast<Eigen::Index>(i) * pdim, pdim).dot(basis) +
                     p.weights[layout.output_bias_offset + i];
    out[i] = z * p.output_normalization.scale[i] + p.output_normalization.mean[i];
    if (p.architecture.residual) out[i] += state[i];
    if (!std::isfinite(out[i])) throw NumericalError("surrogate produced a non-finite output");
  }
}

Json architecture_to_json(const SurrogateArchitecture& a) {
  return Json{{"state_dim", a.state_dim},
              {"input_grid_size", a.input_grid_size},
              {"branch_layers", a.branch_layers},
              {"trunk_layers", a.trunk_layers},
              {"latent_dim", a.latent_dim},
              {"activation", to_string(a.activation)},
              {"residual", a.residual}};
}

SurrogateArchitecture architecture_from_json(const Json& j) {
  SurrogateArchitecture a;
  a.state_dim = j.at("state_dim").get<std::size_t>();
  a.input_grid_size = j.at("input_grid_size").get<std::size_t>();
  a.branch_layers = j.at("branch_layers").get<std::vector<std::size_t>>();
  a.trunk_layers = j.at("trunk_layers").get<std::vector<std::size_t>>();
  a.latent_dim = j.at("latent_dim").get<std::size_t>();
  a.activation = activation_from_string(j.at("activation").get<std::string>());
  a.residual = j.at("residual").get<bool>();
  return a;
}

}  // namespace

const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + name + "' (expected tanh or relu)");
}

void SurrogateArchitecture::validate() const {
  if (state_dim < 1) throw ConfigError("surrogate state_dim must be >= 1");
  if (input_grid_size < 2) throw ConfigError("surrogate input_grid_size must be >= 2");
  if (latent_dim < 1) throw ConfigError("surrogate latent_dim must be >= 1");
  for (std::size_t w : branch_layers) {
    if (w < 1) throw ConfigError("branch layer widths must be >= 1");
  }
  for (std::size_t w : trunk_layers) {
    if (w < 1) throw ConfigError("trunk layer widths must be >= 1");
  }
}

ParameterLayout parameter_layout(const SurrogateArchitecture& arch) {
  arch.validate();
  ParameterLayout layout;
  std::size_t offset = 0;
  auto add = [&offset](std::vector<DenseLayerRef>& layers, std::size_t in, std::size_t out) {
    DenseLayerRef l{offset, offset + in * out, in, out};
    offset += in * out + out;
    layers.push_back(l);
  };
  std::size_t in = arch.branch_input_dim();
  for (std::size_t w : arch.branch_layers) {
    add(layout.branch, in, w);
    in = w;
  }
  add(layout.branch, in, arch.branch_output_dim());
  in = 1;
  for (std::size_t w : arch.trunk_layers) {
    add(layout.trunk, in, w);
    in = w;
  }
  add(layout.trunk, in, arch.latent_dim);
  layout.output_bias_offset = offset;
  layout.total = offset + arch.state_dim;
  return layout;
}

Standardization Standardization::identity(std::size_t dim) {
  return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

void SurrogateParams::validate() const {
  const ParameterLayout layout = parameter_layout(architecture);
  if (weights.size() != layout.total) {
    throw FormatError(ErrorKind::shape, "weight_count: expected " + std::to_string(layout.total) + " weights, got " +
                                            std::to_string(weights.size()));
  }
  const std::size_t in_dim = architecture.branch_input_dim();
  if (input_normalization.mean.size() != in_dim || input_normalization.scale.size() != in_dim) {
    throw FormatError(ErrorKind::shape, "input_grid_size: input normalization has " +
                                            std::to_string(input_normalization.mean.size()) +
                                            " features but state_dim + input_grid_size + 1 = " +
                                            std::to_string(in_dim));
  }
  if (output_normalization.mean.size() != architecture.state_dim ||
      output_normalization.scale.size() != architecture.state_dim) {
    throw FormatError(ErrorKind::shape, "state_dim: output normalization does not match state_dim");
  }
  for (const auto* s : {&input_normalization.scale, &output_normalization.scale}) {
    for (double v : *s) {
      if (!(v > 0.0) || !std::isfinite(v)) throw FormatError(ErrorKind::shape, "normalization scales must be positive");
    }
  }
  for (double v : weights) {
    if (!std::isfinite(v)) throw FormatError(ErrorKind::shape, "non-finite weight");
  }
}

SurrogateParams initialize_params(const SurrogateArchitecture& arch, std::uint64_t seed) {
  const ParameterLayout layout = parameter_layout(arch);
  SurrogateParams p;
  p.architecture = arch;
  p.seed = seed;
  p.weights.assign(layout.total, 0.0);
  p.input_normalization = Standardization::identity(arch.branch_input_dim());
  p.output_normalization = Standardization::identity(arch.state_dim);
  std::mt19937_64 rng(seed);
  auto fill = [&](const std::vector<DenseLayerRef>& layers) {
    for (const DenseLayerRef& l : layers) {
      const double limit = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (std::size_t k = 0; k < l.in * l.out; ++k) p.weights[l.w_offset + k] = dist(rng);
    }
  };
  fill(layout.branch);
  fill(layout.trunk);
  return p;
}

std::vector<double> forward(const SurrogateParams& params, std::span<const double> state,
                            std::span<const double> input_profile, double d_hat, std::span<const double> s_points) {
  const ParameterLayout layout = parameter_layout(params.architecture);
  const Eigen::VectorXd coeffs = branch_output(params, layout, state, input_profile, d_hat);
  const std::size_t n = params.architecture.state_dim;
  std::vector<double> out(s_points.size() * n);
  for (std::size_t q = 0; q < s_points.size(); ++q) {
    if (!(s_points[q] >= 0.0 && s_points[q] <= 1.0)) throw ConfigError("surrogate evaluation point outside [0, 1]");
    const Eigen::VectorXd basis = trunk_basis(params, layout, s_points[q]);
    combine(params, layout, coeffs, basis, state, std::span<double>(out.data() + q * n, n));
  }
  return out;
}

Surrogate::Surrogate(SurrogateParams params) : params_(std::move(params)) {
  params_.validate();
  layout_ = parameter_layout(params_.architecture);
  const std::size_t g = grid_size();
  grid_basis_.resize(static_cast<Eigen::Index>(params_.architecture.latent_dim), static_cast<Eigen::Index>(g));
  for (std::size_t j = 0; j < g; ++j) {
    const double s = j + 1 == g ? 1.0 : static_cast<double>(j) / static_cast<double>(g - 1);
    grid_basis_.col(static_cast<Eigen::Index>(j)) = trunk_basis(params_, layout_, s);
  }
}

Eigen::VectorXd Surrogate::branch_coefficients(std::span<const double> state, std::span<const double> input_profile,
                                               double d_hat) const {
  return branch_output(params_, layout_, state, input_profile, d_hat);
}

std::vector<double> Surrogate::forward(std::span<const double> state, std::span<const double> input_profile,
                                       double d_hat, std::span<const double> s_points) const {
  return nopf::forward(params_, state, input_profile, d_hat, s_points);
}

void Surrogate::predict_grid_into(std::span<const double> state, std::span<const double> input_profile, double d_hat,
                                  std::span<double> out) const {
  const std::size_t n = params_.architecture.state_dim;
  const std::size_t g = grid_size();
  if (out.size() != g * n) throw ConfigError("surrogate output buffer has the wrong size");
  const Eigen::VectorXd coeffs = branch_coefficients(state, input_profile, d_hat);
  for (std::size_t j = 0; j < g; ++j) {
    combine(params_, layout_, coeffs, grid_basis_.col(static_cast<Eigen::Index>(j)), state,
            std::span<double>(out.data() + j * n, n));
  }
}

void save_params(const SurrogateParams& params, const std::string& path) {
  params.validate();
  Json meta{{"format", 1},
            {"architecture", architecture_to_json(params.architecture)},
            {"input_normalization",
             {{"mean", params.input_normalization.mean}, {"scale", params.input_normalization.scale}}},
            {"output_normalization",
             {{"mean", params.output_normalization.mean}, {"scale", params.output_normalization.scale}}},
            {"seed", params.seed},
            {"weight_count", params.weights.size()}};
  if (!params.provenance.empty()) meta["provenance"] = Json::parse(params.provenance);
  const std::string text = meta.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kWeightMagic, 5);
  detail::write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::write_u64(os, params.weights.size());
  detail::write_f64s(os, params.weights);
  if (!os) throw IoError("failed writing '" + path + "'");
}

SurrogateParams load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weights file '" + path + "'");
  detail::expect_magic(is, kWeightMagic, path);

  const std::uint64_t meta_len = detail::read_u64(is, "metadata length");
  if (meta_len > (std::uint64_t{1} << 30)) throw FormatError(ErrorKind::shape, "metadata length is implausible");
  std::string text(meta_len, '\0');
  detail::read_exact(is, text.data(), text.size(), "metadata");

  SurrogateParams p;
  std::uint64_t declared = 0;
  try {
    const Json meta = Json::parse(text);
    p.architecture = architecture_from_json(meta.at("architecture"));
    p.input_normalization.mean = meta.at("input_normalization").at("mean").get<std::vector<double>>();
    p.input_normalization.scale = meta.at("input_normalization").at("scale").get<std::vector<double>>();
    p.output_normalization.mean = meta.at("output_normalization").at("mean").get<std::vector<double>>();
    p.output_normalization.scale = meta.at("output_normalization").at("scale").get<std::vector<double>>();
    p.seed = meta.at("seed").get<std::uint64_t>();
    declared = meta.at("weight_count").get<std::uint64_t>();
    if (meta.contains("provenance")) p.provenance = meta.at("provenance").dump();
  } catch (const Json::exception& e) {
    throw FormatError(ErrorKind::shape, path + ": malformed metadata (" + e.what() + ")");
  }

  if (p.input_normalization.mean.size() != p.architecture.branch_input_dim() ||
      p.input_normalization.scale.size() != p.architecture.branch_input_dim()) {
    throw FormatError(ErrorKind::shape, "input_grid_size: declared " +
                                            std::to_string(p.architecture.input_grid_size) +
                                            " disagrees with the stored input normalization");
  }

  const std::uint64_t count = detail::read_u64(is, "weight count");
  if (count != declared) {
    throw FormatError(ErrorKind::shape, "weight_count: metadata declares " + std::to_string(declared) +
                                            " weights but the array holds " + std::to_string(count));
  }
  const std::size_t expected = parameter_layout(p.architecture).total;
  if (count != expected) {
    throw FormatError(ErrorKind::shape, "weight_count: architecture needs " + std::to_string(expected) +
                                            " weights, file declares " + std::to_string(count));
  }
  p.weights.resize(count);
  detail::read_f64s(is, p.weights, "weights");
  p.validate();
  return p;
}

void resample_profile_into(std::span<const double> profile, std::span<double> out) {
  if (out.size() < 2) throw ConfigError("resample target size must be >= 2");
  if (profile.size() < 2) throw ConfigError("resample source needs at least 2 samples");
  const std::size_t src_m = profile.size() - 1;
  const std::size_t dst_m = out.size() - 1;
  if (src_m == dst_m) {
    std::copy(profile.begin(), profile.end(), out.begin());
    return;
  }
  for (std::size_t j = 0; j <= dst_m; ++j) {
    // Exact rational position j*src_m/dst_m avoids drift at shared nodes.
    const std::size_t num = j * src_m;
    const std::size_t k = num / dst_m;
    const std::size_t rem = num % dst_m;
    if (rem == 0) {
      out[j] = profile[k];
    } else {
      const double frac = static_cast<double>(rem) / static_cast<double>(dst_m);
      out[j] = profile[k] + frac * (profile[k + 1] - profile[k]);
    }
  }
}

std::vector<double> resample_profile(std::span<const double> profile, std::size_t target_size) {
  if (target_size < 2) throw ConfigError("resample target size must be >= 2");
  std::vector<double> out(target_size);
  resample_profile_into(profile, out);
  return out;
}

}  // namespace nopf
