#pragma once

#include <span>
#include <vector>

#include "nopf/delay_line.hpp"
#include "nopf/dynamics.hpp"

namespace nopf {

enum class Scheme { euler, rk4 };

const char* to_string(Scheme s);
Scheme scheme_from_string(const std::string& name);

// Inputs of the predictor operator: current state, the transport-PDE input
// profile on `grid`, and the delay (estimate) that scales the spatial ODE.
struct PredictorQuery {
  std::vector<double> state;
  std::vector<double> input_profile;
  double delay_estimate = 0.0;
  SpatialGrid grid;
};

// Predicted states P(x_j) on the grid, stored node-major (node j occupies
// values[j*n .. j*n+n)).
struct PredictorProfile {
  std::vector<double> values;
  std::size_t state_dim = 0;
  SpatialGrid grid;
  Scheme scheme = Scheme::euler;

  std::span<const double> at(std::size_t j) const { return {values.data() + j * state_dim, state_dim}; }
  std::span<double> at(std::size_t j) { return {values.data() + j * state_dim, state_dim}; }
  std::span<const double> terminal() const { return at(grid.intervals()); }
};

// Marches dP/dx = delay * f(P(x), u(x)) from P(0) = state.
PredictorProfile predict(const PlantModel& model, const PredictorQuery& query, Scheme scheme = Scheme::euler);

// Allocation-free variant; `out` holds (m+1)*n values.
void predict_into(const PlantModel& model, std::span<const double> state, std::span<const double> input_profile,
                  double delay_estimate, const SpatialGrid& grid, Scheme scheme, std::span<double> out);

// Input value midway between nodes j and j+1, cubic where four nodes exist.
double midpoint_input(std::span<const double> u, std::size_t j);

// Lipschitz constant of the predictor operator over the bounded domain:
// e^{D̄ C_f} max{1, Ξ, D̄ C_f} with Ξ = C_f [Ū + e^{D̄ C_f}(X̄ + C_f D̄ Ū)].
double lipschitz_constant(double c_f, double d_bar, double x_bar, double u_bar);

// Uniform bound e^{D̄ C_f}(X̄ + C_f D̄ Ū) on |P(s)|.
double predictor_uniform_bound(double c_f, double d_bar, double x_bar, double u_bar);

}  // namespace nopf
