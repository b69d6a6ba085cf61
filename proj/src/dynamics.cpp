#include "nopf/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "nopf/errors.hpp"

namespace nopf {

Eigen::VectorXd PlantModel::eval_rhs(std::span<const double> x, double u) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(state_dim));
  rhs(x, u, std::span<double>(out.data(), state_dim));
  return out;
}

void PlantModel::state_jacobian(std::span<const double> x, double u, Eigen::MatrixXd& jac) const {
  if (jacobian_state) {
    jac.resize(static_cast<Eigen::Index>(state_dim), static_cast<Eigen::Index>(state_dim));
    jacobian_state(x, u, jac);
    return;
  }
  const Eigen::VectorXd point = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  jac = jacobian_fd(
      [this, u](const Eigen::VectorXd& p) {
        return eval_rhs(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), u);
      },
      point);
}

Eigen::MatrixXd PlantModel::state_jacobian(std::span<const double> x, double u) const {
  Eigen::MatrixXd jac;
  state_jacobian(x, u, jac);
  return jac;
}

void PlantModel::gradient_of_feedback(std::span<const double> x, std::span<double> grad) const {
  if (feedback_gradient) {
    feedback_gradient(x, grad);
    return;
  }
  const Eigen::VectorXd point = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::MatrixXd jac = jacobian_fd(
      [this](const Eigen::VectorXd& p) {
        Eigen::VectorXd out(1);
        out[0] = feedback(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
        return out;
      },
      point);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = jac(0, static_cast<Eigen::Index>(i));
}

double PlantModel::distance_to_equilibrium(std::span<const double> x) const {
  double s = 0.0;
  for (std::size_t i = 0; i < state_dim; ++i) {
    const double d = x[i] - equilibrium[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double hill_f1(double x1, double x2, const BenchmarkConstants& c) {
  return (c.k1 * x1 * x1 + c.ka) / (1.0 + x1 * x1 + x2 * x2);
}

double hill_f2(double x1, const BenchmarkConstants& c) {
  return (c.k2 * x1 * x1 + c.kb) / (1.0 + x1 * x1);
}

namespace {

struct HillPartials {
  double df1_dx1;
  double df1_dx2;
  double df2_dx1;
};

HillPartials hill_partials(double x1, double x2, const BenchmarkConstants& c) {
  const double num1 = c.k1 * x1 * x1 + c.ka;
  const double den1 = 1.0 + x1 * x1 + x2 * x2;
  const double num2 = c.k2 * x1 * x1 + c.kb;
  const double den2 = 1.0 + x1 * x1;
  return {2.0 * x1 * (c.k1 * den1 - num1) / (den1 * den1),
          -2.0 * x2 * num1 / (den1 * den1),
          2.0 * x1 * (c.k2 * den2 - num2) / (den2 * den2)};
}

double squared_distance(std::span<const double> x, const std::vector<double>& center) {
  double s = 0.0;
  for (std::size_t i = 0; i < center.size(); ++i) {
    const double d = x[i] - center[i];
    s += d * d;
  }
  return s;
}

}  // namespace

std::vector<double> refine_benchmark_equilibrium(const BenchmarkConstants& c) {
  Eigen::Vector2d x(c.x_star.at(0), c.x_star.at(1));
  for (int it = 0; it < 50; ++it) {
    const Eigen::Vector2d r(-x[0] + hill_f1(x[0], x[1], c), -0.5 * x[1] + hill_f2(x[0], c));
    const HillPartials p = hill_partials(x[0], x[1], c);
    Eigen::Matrix2d jac;
    jac << -1.0 + p.df1_dx1, p.df1_dx2, p.df2_dx1, -0.5;
    const Eigen::Vector2d step = jac.partialPivLu().solve(r);
    x -= step;
    if (step.norm() < 1e-15 * (1.0 + x.norm())) break;
  }
  if (!x.allFinite()) throw NumericalError("equilibrium refinement diverged");
  return {x[0], x[1]};
}

PlantModel benchmark_plant(const BenchmarkConstants& c) {
  if (c.x_star.size() != 2) throw ConfigError("benchmark x_star must have 2 components");
  PlantModel m;
  m.name = "benchmark";
  m.state_dim = 2;
  m.equilibrium = c.x_star;
  const double f1_star = hill_f1(c.x_star[0], c.x_star[1], c);

  m.rhs = [c](std::span<const double> x, double u, std::span<double> dxdt) {
    dxdt[0] = -x[0] + hill_f1(x[0], x[1], c) + u;
    dxdt[1] = -0.5 * x[1] + hill_f2(x[0], c);
  };
  m.feedback = [c, f1_star](std::span<const double> x) { return -hill_f1(x[0], x[1], c) + f1_star; };
  m.lyapunov = [xs = c.x_star](std::span<const double> x) { return squared_distance(x, xs); };
  m.jacobian_state = [c](std::span<const double> x, double, Eigen::MatrixXd& jac) {
    const HillPartials p = hill_partials(x[0], x[1], c);
    jac(0, 0) = -1.0 + p.df1_dx1;
    jac(0, 1) = p.df1_dx2;
    jac(1, 0) = p.df2_dx1;
    jac(1, 1) = -0.5;
  };
  m.feedback_gradient = [c](std::span<const double> x, std::span<double> grad) {
    const HillPartials p = hill_partials(x[0], x[1], c);
    grad[0] = -p.df1_dx1;
    grad[1] = -p.df1_dx2;
  };
  return m;
}

PlantModel linear_test_plant(double a, double gain) {
  PlantModel m;
  m.name = "linear-test";
  m.state_dim = 1;
  m.equilibrium = {0.0};
  m.rhs = [a](std::span<const double> x, double u, std::span<double> dxdt) { dxdt[0] = a * x[0] + u; };
  m.feedback = [gain](std::span<const double> x) { return -gain * x[0]; };
  m.lyapunov = [](std::span<const double> x) { return x[0] * x[0]; };
  m.jacobian_state = [a](std::span<const double>, double, Eigen::MatrixXd& jac) { jac(0, 0) = a; };
  m.feedback_gradient = [gain](std::span<const double>, std::span<double> grad) { grad[0] = -gain; };
  return m;
}

PlantModel zero_test_plant(std::size_t n) {
  if (n == 0) throw ConfigError("zero-test plant needs state_dim >= 1");
  PlantModel m;
  m.name = "zero-test";
  m.state_dim = n;
  m.equilibrium.assign(n, 0.0);
  m.rhs = [](std::span<const double>, double, std::span<double> dxdt) {
    std::fill(dxdt.begin(), dxdt.end(), 0.0);
  };
  m.feedback = [](std::span<const double>) { return 0.0; };
  m.lyapunov = [zero = m.equilibrium](std::span<const double> x) { return squared_distance(x, zero); };
  m.jacobian_state = [](std::span<const double>, double, Eigen::MatrixXd& jac) { jac.setZero(); };
  m.feedback_gradient = [](std::span<const double>, std::span<double> grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
  };
  return m;
}

PlantModel make_plant(const PlantSpec& spec) {
  if (spec.name == "benchmark") return benchmark_plant(spec.constants);
  if (spec.name == "linear-test") return linear_test_plant(spec.linear_a, spec.linear_gain);
  if (spec.name == "zero-test") return zero_test_plant(spec.zero_dim);
  throw ConfigError("unknown plant '" + spec.name + "' (expected benchmark, linear-test or zero-test)");
}

LipschitzEstimate estimate_lipschitz(const PlantModel& model, const std::vector<Interval>& state_box,
                                     double u_bound, std::size_t samples, std::uint64_t seed) {
  const std::size_t n = model.state_dim;
  if (samples < 100) throw ConfigError("estimate_lipschitz needs at least 100 samples");
  if (state_box.size() != n) throw ConfigError("state box dimension does not match the plant");
  if (!(u_bound > 0.0)) throw ConfigError("u_bound must be positive");
  for (const Interval& iv : state_box) {
    if (!(iv.hi > iv.lo)) throw ConfigError("state box intervals must have positive width");
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Coordinates 0..n-1 are the state, coordinate n is the input.
  const std::size_t dim = n + 1;
  auto lower = [&](std::size_t i) { return i < n ? state_box[i].lo : -u_bound; };
  auto upper = [&](std::size_t i) { return i < n ? state_box[i].hi : u_bound; };
  double diameter = 0.0;
  for (std::size_t i = 0; i < dim; ++i) diameter += (upper(i) - lower(i)) * (upper(i) - lower(i));
  diameter = std::sqrt(diameter);

  std::vector<double> a(dim), b(dim), fa(n), fb(n), dir(dim);
  double best = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    for (std::size_t i = 0; i < dim; ++i) a[i] = lower(i) + (upper(i) - lower(i)) * unit(rng);
    const std::size_t mode = k % 3;
    if (mode == 0) {
      for (std::size_t i = 0; i < dim; ++i) b[i] = lower(i) + (upper(i) - lower(i)) * unit(rng);
    } else {
      const double radius = diameter * std::pow(10.0, -4.0 * unit(rng));
      if (mode == 1) {
        const auto axis = static_cast<std::size_t>(unit(rng) * static_cast<double>(dim)) % dim;
        std::fill(dir.begin(), dir.end(), 0.0);
        dir[axis] = unit(rng) < 0.5 ? -1.0 : 1.0;
      } else {
        double norm = 0.0;
        for (double& d : dir) {
          d = gauss(rng);
          norm += d * d;
        }
        norm = std::sqrt(norm);
        for (double& d : dir) d /= norm;
      }
      for (std::size_t i = 0; i < dim; ++i) b[i] = std::clamp(a[i] + radius * dir[i], lower(i), upper(i));
    }

    model.eval_rhs(std::span<const double>(a.data(), n), a[n], fa);
    model.eval_rhs(std::span<const double>(b.data(), n), b[n], fb);
    double df = 0.0;
    double dx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(fa[i]) || !std::isfinite(fb[i])) {
        throw NumericalError("non-finite plant evaluation while estimating C_f (sample " + std::to_string(k) + ")");
      }
      df += (fa[i] - fb[i]) * (fa[i] - fb[i]);
      dx += (a[i] - b[i]) * (a[i] - b[i]);
    }
    const double denom = std::sqrt(dx) + std::abs(a[n] - b[n]);
    if (denom <= 0.0) continue;
    best = std::max(best, std::sqrt(df) / denom);
  }
  return {best, state_box, u_bound, samples};
}

LipschitzEstimate estimate_lipschitz(const PlantModel& model, double x_bound, double u_bound,
                                     std::size_t samples, std::uint64_t seed) {
  if (!(x_bound > 0.0)) throw ConfigError("x_bound must be positive");
  return estimate_lipschitz(model, std::vector<Interval>(model.state_dim, Interval{-x_bound, x_bound}), u_bound,
                            samples, seed);
}

Eigen::MatrixXd jacobian_fd(const VectorFn& fn, const Eigen::VectorXd& point, double step) {
  if (!(step > 0.0)) throw ConfigError("finite-difference step must be positive");
  const Eigen::VectorXd center = fn(point);
  for (Eigen::Index i = 0; i < center.size(); ++i) {
    if (!std::isfinite(center[i])) {
      throw NumericalError("non-finite function value in output component " + std::to_string(i) +
                           " at the differentiation point");
    }
  }
  Eigen::MatrixXd jac(center.size(), point.size());
  Eigen::VectorXd probe = point;
  for (Eigen::Index j = 0; j < point.size(); ++j) {
    const double h = step * std::max(1.0, std::abs(point[j]));
    probe[j] = point[j] + h;
    const Eigen::VectorXd plus = fn(probe);
    probe[j] = point[j] - h;
    const Eigen::VectorXd minus = fn(probe);
    probe[j] = point[j];
    if (!plus.allFinite() || !minus.allFinite()) {
      throw NumericalError("non-finite function value when perturbing coordinate " + std::to_string(j));
    }
    jac.col(j) = (plus - minus) / (2.0 * h);
  }
  return jac;
}

}  // namespace nopf
