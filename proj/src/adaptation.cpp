#include "nopf/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nopf/errors.hpp"

namespace nopf {

namespace {

void check_common_grid(const PredictorProfile& profile, std::span<const double> input) {
  if (input.size() != profile.grid.size()) throw ConfigError("input profile and predictor profile grids differ");
}

void check_finite(const Eigen::Ref<const Eigen::MatrixXd>& m, std::size_t node) {
  if (!m.allFinite()) throw NumericalError("non-finite transition matrix at node " + std::to_string(node));
}

// Input and predicted state midway between nodes j and j+1.
void midpoint_state(const PredictorProfile& profile, std::size_t j, std::span<double> out) {
  const std::size_t n = profile.state_dim;
  const std::size_t last = profile.grid.intervals();
  if (profile.grid.size() < 4) {
    for (std::size_t i = 0; i < n; ++i) out[i] = 0.5 * (profile.at(j)[i] + profile.at(j + 1)[i]);
    return;
  }
  std::size_t first = j == 0 ? 0 : (j + 1 == last ? last - 3 : j - 1);
  double w[4];
  if (j == 0) {
    w[0] = 5.0; w[1] = 15.0; w[2] = -5.0; w[3] = 1.0;
  } else if (j + 1 == last) {
    w[0] = 1.0; w[1] = -5.0; w[2] = 15.0; w[3] = 5.0;
  } else {
    w[0] = -1.0; w[1] = 9.0; w[2] = 9.0; w[3] = -1.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += w[k] * profile.at(first + k)[i];
    out[i] = s / 16.0;
  }
}

}  // namespace

double project(double d_hat, double phi, double d_min, double d_max) {
  if (d_hat < d_min || d_hat > d_max) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "delay estimate " << d_hat << " outside [" << d_min << ", " << d_max << "]";
    throw ConfigError(msg.str());
  }
  if ((d_hat >= d_max && phi > 0.0) || (d_hat <= d_min && phi < 0.0)) return 0.0;
  return phi;
}

TransitionMatrices transition_matrices(const PlantModel& model, const PredictorProfile& profile,
                                       std::span<const double> input, double d_hat, std::size_t start_node) {
  check_common_grid(profile, input);
  const std::size_t n = model.state_dim;
  const std::size_t nodes = profile.grid.size();
  if (start_node >= nodes) throw ConfigError("transition matrix start node outside the grid");
  const double h = d_hat * profile.grid.dx();

  TransitionMatrices phis(nodes, n);
  phis.at(start_node).setIdentity();
  const auto nn = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd jac(nn, nn);

  if (profile.scheme == Scheme::euler) {
    for (std::size_t j = start_node; j + 1 < nodes; ++j) {
      model.state_jacobian(profile.at(j), input[j], jac);
      phis.at(j + 1) = phis.at(j) + h * jac * phis.at(j);
      check_finite(phis.at(j + 1), j + 1);
    }
    return phis;
  }

  // RK4 on the variational equation with midpoint states interpolated from
  // the profile, consistent with the predictor's own RK4 march.
  Eigen::MatrixXd jac_mid(nn, nn), jac_next(nn, nn), k1(nn, nn), k2(nn, nn), k3(nn, nn), k4(nn, nn);
  std::vector<double> p_mid(n);
  for (std::size_t j = start_node; j + 1 < nodes; ++j) {
    midpoint_state(profile, j, p_mid);
    const double u_mid = midpoint_input(input, j);
    model.state_jacobian(profile.at(j), input[j], jac);
    model.state_jacobian(p_mid, u_mid, jac_mid);
    model.state_jacobian(profile.at(j + 1), input[j + 1], jac_next);
    const Eigen::MatrixXd phi = phis.at(j);
    k1 = jac * phi;
    k2 = jac_mid * (phi + 0.5 * h * k1);
    k3 = jac_mid * (phi + 0.5 * h * k2);
    k4 = jac_next * (phi + h * k3);
    phis.at(j + 1) = phi + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    check_finite(phis.at(j + 1), j + 1);
  }
  return phis;
}

std::vector<double> q1_profile(const PlantModel& model, const PredictorProfile& profile,
                               std::span<const double> input, const TransitionMatrices& phis) {
  check_common_grid(profile, input);
  const std::size_t n = model.state_dim;
  const std::size_t nodes = profile.grid.size();
  if (phis.size() != nodes) throw ConfigError("transition matrices do not match the grid");

  Eigen::VectorXd f0 = model.eval_rhs(profile.at(0), input[0]);
  Eigen::VectorXd grad(static_cast<Eigen::Index>(n));
  std::vector<double> q1(nodes);
  for (std::size_t j = 0; j < nodes; ++j) {
    model.gradient_of_feedback(profile.at(j), std::span<double>(grad.data(), n));
    q1[j] = grad.dot(phis.at(j) * f0);
  }
  return q1;
}

std::vector<double> w_profile(std::span<const double> input, const PredictorProfile& profile,
                              const PlantModel& model) {
  check_common_grid(profile, input);
  std::vector<double> w(input.size());
  for (std::size_t j = 0; j < input.size(); ++j) w[j] = input[j] - model.feedback(profile.at(j));
  return w;
}

double weighted_integral(std::span<const double> g, const SpatialGrid& grid) {
  if (g.size() != grid.size()) throw ConfigError("grid function does not match the grid");
  const std::size_t m = grid.intervals();
  double s = 0.5 * (g[0] + 2.0 * g[m]);
  for (std::size_t j = 1; j < m; ++j) s += (1.0 + grid.point(j)) * g[j];
  return s * grid.dx();
}

PhiUpdate phi_update(std::span<const double> w, std::span<const double> q1, double v_value, double b,
                     const SpatialGrid& grid) {
  if (!(b > 0.0)) throw ConfigError("normalization weight b must be positive");
  if (w.size() != grid.size() || q1.size() != grid.size()) throw ConfigError("update signals do not match the grid");
  const std::size_t m = grid.intervals();
  double num = 0.5 * (q1[0] * w[0] + 2.0 * q1[m] * w[m]);
  double energy = 0.5 * (w[0] * w[0] + 2.0 * w[m] * w[m]);
  for (std::size_t j = 1; j < m; ++j) {
    const double weight = 1.0 + grid.point(j);
    num += weight * q1[j] * w[j];
    energy += weight * w[j] * w[j];
  }
  num *= grid.dx();
  energy *= grid.dx();
  PhiUpdate out;
  out.n_value = 1.0 + std::max(v_value, 0.0) + b * energy;
  out.phi = -num / out.n_value;
  return out;
}

AdaptiveState step_delay_estimate(AdaptiveState state, double phi, double dt) {
  if (!(dt > 0.0)) throw ConfigError("adaptation dt must be positive");
  const double rate = project(state.d_hat, phi, state.d_min, state.d_max);
  state.d_hat = std::clamp(state.d_hat + dt * state.gamma * rate, state.d_min, state.d_max);
  return state;
}

UpdateSignals compute_update_signals(const PlantModel& model, const PredictorProfile& profile,
                                     std::span<const double> input, double d_hat, double v_value, double b) {
  check_common_grid(profile, input);
  const std::size_t n = model.state_dim;
  const std::size_t nodes = profile.grid.size();
  const auto nn = static_cast<Eigen::Index>(n);
  const double h = d_hat * profile.grid.dx();

  UpdateSignals sig;
  sig.w_profile = w_profile(input, profile, model);
  sig.q1_profile.resize(nodes);

  Eigen::VectorXd r = model.eval_rhs(profile.at(0), input[0]);
  Eigen::VectorXd grad(nn), k1(nn), k2(nn), k3(nn), k4(nn);
  Eigen::MatrixXd jac(nn, nn), jac_mid(nn, nn), jac_next(nn, nn);
  std::vector<double> p_mid(n);
  for (std::size_t j = 0; j < nodes; ++j) {
    model.gradient_of_feedback(profile.at(j), std::span<double>(grad.data(), n));
    sig.q1_profile[j] = grad.dot(r);
    if (j + 1 == nodes) break;
    model.state_jacobian(profile.at(j), input[j], jac);
    if (profile.scheme == Scheme::euler) {
      r += h * (jac * r);
    } else {
      midpoint_state(profile, j, p_mid);
      model.state_jacobian(p_mid, midpoint_input(input, j), jac_mid);
      model.state_jacobian(profile.at(j + 1), input[j + 1], jac_next);
      k1 = jac * r;
      k2 = jac_mid * (r + 0.5 * h * k1);
      k3 = jac_mid * (r + 0.5 * h * k2);
      k4 = jac_next * (r + h * k3);
      r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!r.allFinite()) throw NumericalError("non-finite sensitivity at node " + std::to_string(j + 1));
  }
  const PhiUpdate upd = phi_update(sig.w_profile, sig.q1_profile, v_value, b, profile.grid);
  sig.phi = upd.phi;
  sig.n_value = upd.n_value;
  return sig;
}

}  // namespace nopf
