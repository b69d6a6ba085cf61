#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nopf {

using RhsFn = std::function<void(std::span<const double> x, double u, std::span<double> dxdt)>;
using ScalarFieldFn = std::function<double(std::span<const double> x)>;
using JacobianFn = std::function<void(std::span<const double> x, double u, Eigen::MatrixXd& jac)>;
using GradientFn = std::function<void(std::span<const double> x, std::span<double> grad)>;
using VectorFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Controlled system dX/dt = f(X, U) with a stabilizing feedback and its
// Lyapunov function. An empty `jacobian_state` or `feedback_gradient` means
// "use central finite differences".
struct PlantModel {
  std::string name;
  std::size_t state_dim = 0;
  RhsFn rhs;
  ScalarFieldFn feedback;
  ScalarFieldFn lyapunov;
  JacobianFn jacobian_state;
  GradientFn feedback_gradient;
  std::vector<double> equilibrium;

  void eval_rhs(std::span<const double> x, double u, std::span<double> dxdt) const { rhs(x, u, dxdt); }
  Eigen::VectorXd eval_rhs(std::span<const double> x, double u) const;

  // df/dX at (x, u); analytic when available.
  void state_jacobian(std::span<const double> x, double u, Eigen::MatrixXd& jac) const;
  Eigen::MatrixXd state_jacobian(std::span<const double> x, double u) const;

  // dκ/dX at x; analytic when available.
  void gradient_of_feedback(std::span<const double> x, std::span<double> grad) const;

  // |x - X*|
  double distance_to_equilibrium(std::span<const double> x) const;
};

// Activator/repressor Hill-kinetics constants.
struct BenchmarkConstants {
  double k1 = 300.0;
  double k2 = 300.0;
  double ka = 0.04;
  double kb = 0.004;
  std::vector<double> x_star{0.0939, 5.2525};
};

double hill_f1(double x1, double x2, const BenchmarkConstants& c);
double hill_f2(double x1, const BenchmarkConstants& c);

// Newton-polished root of the open-loop equilibrium equations, started from
// c.x_star. The published setpoint is rounded to four decimals; this returns
// the exact root it rounds from.
std::vector<double> refine_benchmark_equilibrium(const BenchmarkConstants& c);

// x1' = -x1 + f1(x1,x2) + U,  x2' = -x2/2 + f2(x1),
// κ(X) = -f1(x1,x2) + f1(x1*,x2*),  V = |X - X*|^2.
PlantModel benchmark_plant(const BenchmarkConstants& c = {});

// Scalar x' = a x + U with κ(x) = -gain x, V = x^2.
PlantModel linear_test_plant(double a, double gain);

// f ≡ 0, κ ≡ 0, V = |X|^2 in dimension n.
PlantModel zero_test_plant(std::size_t n);

// Selection by registry name ("benchmark", "linear-test", "zero-test").
struct PlantSpec {
  std::string name = "benchmark";
  BenchmarkConstants constants;
  double linear_a = 1.0;
  double linear_gain = 2.0;
  std::size_t zero_dim = 2;
};

PlantModel make_plant(const PlantSpec& spec);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct LipschitzEstimate {
  double c_f = 0.0;
  std::vector<Interval> state_box;
  double u_bound = 0.0;
  std::size_t sample_count = 0;
};

// Monte-Carlo lower estimate of C_f in |f(X1,u1)-f(X2,u2)| <= C_f(|X1-X2| + |u1-u2|)
// over state_box x [-u_bound, u_bound]. Half of the pairs are local
// perturbations at log-uniform radii so the maximum tracks the steepest
// slope rather than the average chord.
LipschitzEstimate estimate_lipschitz(const PlantModel& model, const std::vector<Interval>& state_box,
                                     double u_bound, std::size_t samples, std::uint64_t seed);

// Symmetric box [-x_bound, x_bound]^n.
LipschitzEstimate estimate_lipschitz(const PlantModel& model, double x_bound, double u_bound,
                                     std::size_t samples, std::uint64_t seed);

// Central-difference Jacobian with per-coordinate step h_i = step * max(1, |x_i|).
Eigen::MatrixXd jacobian_fd(const VectorFn& fn, const Eigen::VectorXd& point, double step = 1e-6);

}  // namespace nopf
