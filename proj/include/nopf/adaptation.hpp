#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "nopf/delay_line.hpp"
#include "nopf/dynamics.hpp"
#include "nopf/predictor.hpp"

namespace nopf {

// Delay estimate D̂ with its projection interval [d_min, d_max], adaptation
// gain gamma and normalization weight b.
struct AdaptiveState {
  double d_hat = 2.0;
  double d_min = 0.5;
  double d_max = 3.0;
  double gamma = 1000.0;
  double b = 1.0;
};

struct UpdateSignals {
  std::vector<double> w_profile;
  std::vector<double> q1_profile;
  double phi = 0.0;
  double n_value = 1.0;
};

// Rate admitted by the projection onto [d_min, d_max]: outward rates at an
// active bound are zeroed.
double project(double d_hat, double phi, double d_min, double d_max);

// Φ(x_j, 0) for every node, stored contiguously (n*n column-major per node).
class TransitionMatrices {
 public:
  TransitionMatrices(std::size_t nodes, std::size_t n) : n_(n), data_(nodes * n * n, 0.0) {}
  std::size_t size() const noexcept { return n_ == 0 ? 0 : data_.size() / (n_ * n_); }
  std::size_t state_dim() const noexcept { return n_; }
  Eigen::Map<const Eigen::MatrixXd> at(std::size_t j) const {
    return {data_.data() + j * n_ * n_, static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_)};
  }
  Eigen::Map<Eigen::MatrixXd> at(std::size_t j) {
    return {data_.data() + j * n_ * n_, static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_)};
  }

 private:
  std::size_t n_;
  std::vector<double> data_;
};

// Integrates dΦ/dx = D̂ J(x) Φ, Φ(0,0) = I, with J = ∂f/∂X along (P, u),
// using the profile's scheme. `start_node` > 0 restarts from the identity at
// that node, giving Φ(x_j, x_start) for j >= start_node.
TransitionMatrices transition_matrices(const PlantModel& model, const PredictorProfile& profile,
                                       std::span<const double> input, double d_hat, std::size_t start_node = 0);

// q1(x_j) = ∇κ(P_j)ᵀ Φ(x_j, 0) f(P_0, u_0)
std::vector<double> q1_profile(const PlantModel& model, const PredictorProfile& profile,
                               std::span<const double> input, const TransitionMatrices& phis);

// w(x_j) = u_j - κ(P_j)
std::vector<double> w_profile(std::span<const double> input, const PredictorProfile& profile,
                              const PlantModel& model);

// Trapezoid rule for ∫₀¹ (1+x) g(x) dx on the grid.
double weighted_integral(std::span<const double> g, const SpatialGrid& grid);

struct PhiUpdate {
  double phi = 0.0;
  double n_value = 1.0;
};

// φ = -∫(1+x) q1 w dx / N,  N = 1 + V + b ∫(1+x) w² dx.
PhiUpdate phi_update(std::span<const double> w, std::span<const double> q1, double v_value, double b,
                     const SpatialGrid& grid);

// One explicit Euler step of D̂' = γ Proj(D̂, φ), clamped to [d_min, d_max].
AdaptiveState step_delay_estimate(AdaptiveState state, double phi, double dt);

// Fused w, q1, φ and N for one controller step. q1 is formed by propagating
// r = Φ(x,0) f(P_0,u_0) directly, which equals the matrix route for the
// linear variational equation.
UpdateSignals compute_update_signals(const PlantModel& model, const PredictorProfile& profile,
                                     std::span<const double> input, double d_hat, double v_value, double b);

}  // namespace nopf
