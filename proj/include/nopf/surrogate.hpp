#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nopf {

enum class Activation { tanh, relu };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

// DeepONet shape. Hidden widths exclude the input and output layers: the
// branch maps (state, input profile, D̂) to n*p coefficients and the trunk
// maps s to p basis values. With `residual` the network output is the
// increment P(s) - X, so P̂(0) tracks the state exactly.
struct SurrogateArchitecture {
  std::size_t state_dim = 2;
  std::size_t input_grid_size = 41;
  std::vector<std::size_t> branch_layers{64, 64, 64};
  std::vector<std::size_t> trunk_layers{128, 128};
  std::size_t latent_dim = 32;
  Activation activation = Activation::tanh;
  bool residual = true;

  std::size_t branch_input_dim() const { return state_dim + input_grid_size + 1; }
  std::size_t branch_output_dim() const { return state_dim * latent_dim; }
  void validate() const;
  bool operator==(const SurrogateArchitecture&) const = default;
};

// Offsets of one dense layer inside the flat weight vector. W is out x in,
// column-major.
struct DenseLayerRef {
  std::size_t w_offset = 0;
  std::size_t b_offset = 0;
  std::size_t in = 0;
  std::size_t out = 0;
};

struct ParameterLayout {
  std::vector<DenseLayerRef> branch;
  std::vector<DenseLayerRef> trunk;
  std::size_t output_bias_offset = 0;
  std::size_t total = 0;
};

ParameterLayout parameter_layout(const SurrogateArchitecture& arch);

// Per-feature affine standardization: z = (x - mean) / scale.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardization identity(std::size_t dim);
};

struct SurrogateParams {
  SurrogateArchitecture architecture;
  std::vector<double> weights;
  Standardization input_normalization;   // branch_input_dim entries
  Standardization output_normalization;  // state_dim entries
  std::uint64_t seed = 0;
  std::string provenance;  // effective configuration echo (JSON text), may be empty

  void validate() const;
};

// Glorot-uniform weights, zero biases, identity normalization.
SurrogateParams initialize_params(const SurrogateArchitecture& arch, std::uint64_t seed);

// Evaluates the operator at each s in `s_points`; returns s_points.size()*n
// values, point-major.
std::vector<double> forward(const SurrogateParams& params, std::span<const double> state,
                            std::span<const double> input_profile, double d_hat, std::span<const double> s_points);

// Trained model ready for deployment: parameters plus the trunk basis cached
// at the input-grid nodes, so a full profile costs one branch evaluation.
class Surrogate {
 public:
  explicit Surrogate(SurrogateParams params);

  const SurrogateParams& params() const noexcept { return params_; }
  const SurrogateArchitecture& architecture() const noexcept { return params_.architecture; }
  std::size_t grid_size() const noexcept { return params_.architecture.input_grid_size; }

  std::vector<double> forward(std::span<const double> state, std::span<const double> input_profile, double d_hat,
                              std::span<const double> s_points) const;

  // Profile at the grid nodes j/(G-1); `out` holds G*n values.
  void predict_grid_into(std::span<const double> state, std::span<const double> input_profile, double d_hat,
                         std::span<double> out) const;

 private:
  Eigen::VectorXd branch_coefficients(std::span<const double> state, std::span<const double> input_profile,
                                      double d_hat) const;

  SurrogateParams params_;
  ParameterLayout layout_;
  Eigen::MatrixXd grid_basis_;  // p x G
};

void save_params(const SurrogateParams& params, const std::string& path);
SurrogateParams load_params(const std::string& path);

// Linear interpolation of a uniform-grid function onto `target_size` uniform nodes.
std::vector<double> resample_profile(std::span<const double> profile, std::size_t target_size);
void resample_profile_into(std::span<const double> profile, std::span<double> out);

}  // namespace nopf
