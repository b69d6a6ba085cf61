#include "nopf/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nopf/errors.hpp"

namespace nopf {

namespace {

constexpr double kBlowUp = 1e12;

void check_node(std::span<const double> p, std::size_t node) {
  for (double v : p) {
    if (!std::isfinite(v) || std::abs(v) > kBlowUp) {
      throw NumericalError("predictor blow-up at node " + std::to_string(node) +
                           " (forward completeness violated for this delay estimate/profile)");
    }
  }
}

void check_overflow(double c_f, double d_bar) {
  if (d_bar * c_f > 700.0) throw NumericalError("D̄·C_f exceeds 700; e^{D̄·C_f} is out of range");
}

}  // namespace

const char* to_string(Scheme s) { return s == Scheme::euler ? "euler" : "rk4"; }

Scheme scheme_from_string(const std::string& name) {
  if (name == "euler") return Scheme::euler;
  if (name == "rk4") return Scheme::rk4;
  throw ConfigError("unknown scheme '" + name + "' (expected euler or rk4)");
}

double midpoint_input(std::span<const double> u, std::size_t j) {
  const std::size_t last = u.size() - 1;
  if (u.size() < 4) return 0.5 * (u[j] + u[j + 1]);
  if (j == 0) return (5.0 * u[0] + 15.0 * u[1] - 5.0 * u[2] + u[3]) / 16.0;
  if (j + 1 == last) return (u[last - 3] - 5.0 * u[last - 2] + 15.0 * u[last - 1] + 5.0 * u[last]) / 16.0;
  return (-u[j - 1] + 9.0 * u[j] + 9.0 * u[j + 1] - u[j + 2]) / 16.0;
}

void predict_into(const PlantModel& model, std::span<const double> state, std::span<const double> input_profile,
                  double delay_estimate, const SpatialGrid& grid, Scheme scheme, std::span<double> out) {
  const std::size_t n = model.state_dim;
  const std::size_t m = grid.intervals();
  if (m < 2) throw ConfigError("predictor grid needs m >= 2");
  if (state.size() != n) throw ConfigError("predictor state has the wrong dimension");
  if (input_profile.size() != grid.size()) throw ConfigError("input profile does not match the predictor grid");
  if (out.size() != grid.size() * n) throw ConfigError("predictor output buffer has the wrong size");
  if (!(delay_estimate > 0.0)) throw ConfigError("delay estimate must be positive");
  for (double v : state) {
    if (!std::isfinite(v)) throw NumericalError("non-finite predictor state");
  }
  for (double v : input_profile) {
    if (!std::isfinite(v)) throw NumericalError("non-finite input profile");
  }

  const double h = delay_estimate * grid.dx();
  std::copy(state.begin(), state.end(), out.begin());

  if (scheme == Scheme::euler) {
    std::vector<double> k1(n);
    for (std::size_t j = 0; j < m; ++j) {
      std::span<const double> p(out.data() + j * n, n);
      std::span<double> next(out.data() + (j + 1) * n, n);
      model.eval_rhs(p, input_profile[j], k1);
      for (std::size_t i = 0; i < n; ++i) next[i] = p[i] + h * k1[i];
      check_node(next, j + 1);
    }
    return;
  }

  std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
  for (std::size_t j = 0; j < m; ++j) {
    std::span<const double> p(out.data() + j * n, n);
    std::span<double> next(out.data() + (j + 1) * n, n);
    const double u_mid = midpoint_input(input_profile, j);
    model.eval_rhs(p, input_profile[j], k1);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = p[i] + 0.5 * h * k1[i];
    model.eval_rhs(tmp, u_mid, k2);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = p[i] + 0.5 * h * k2[i];
    model.eval_rhs(tmp, u_mid, k3);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = p[i] + h * k3[i];
    model.eval_rhs(tmp, input_profile[j + 1], k4);
    for (std::size_t i = 0; i < n; ++i) next[i] = p[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    check_node(next, j + 1);
  }
}

PredictorProfile predict(const PlantModel& model, const PredictorQuery& query, Scheme scheme) {
  PredictorProfile profile;
  profile.state_dim = model.state_dim;
  profile.grid = query.grid;
  profile.scheme = scheme;
  profile.values.resize(query.grid.size() * model.state_dim);
  predict_into(model, query.state, query.input_profile, query.delay_estimate, query.grid, scheme, profile.values);
  return profile;
}

double predictor_uniform_bound(double c_f, double d_bar, double x_bar, double u_bar) {
  if (!(c_f > 0.0 && d_bar > 0.0 && x_bar > 0.0 && u_bar > 0.0)) {
    throw ConfigError("predictor bound arguments must be positive");
  }
  check_overflow(c_f, d_bar);
  return std::exp(d_bar * c_f) * (x_bar + c_f * d_bar * u_bar);
}

double lipschitz_constant(double c_f, double d_bar, double x_bar, double u_bar) {
  const double growth = predictor_uniform_bound(c_f, d_bar, x_bar, u_bar);
  const double xi = c_f * (u_bar + growth);
  return std::exp(d_bar * c_f) * std::max({1.0, xi, d_bar * c_f});
}

}  // namespace nopf
