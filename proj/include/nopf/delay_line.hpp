#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

namespace nopf {

// m+1 equispaced nodes on [0, 1].
class SpatialGrid {
 public:
  SpatialGrid() = default;
  explicit SpatialGrid(std::size_t intervals);

  // m = round(1/dx); dx must lie in (0, 0.5].
  static SpatialGrid from_step(double dx);

  std::size_t intervals() const noexcept { return m_; }
  std::size_t size() const noexcept { return m_ + 1; }
  double dx() const noexcept { return 1.0 / static_cast<double>(m_); }
  double point(std::size_t j) const noexcept {
    return j == m_ ? 1.0 : static_cast<double>(j) / static_cast<double>(m_);
  }

  bool operator==(const SpatialGrid&) const = default;

 private:
  std::size_t m_ = 1;
};

// Sliding record of the applied control U(t) at a fixed resolution dt.
//
// The history starts with a single sample (t0, initial_value); values before
// t0 read as initial_value. Samples older than t_now - horizon are evicted,
// after which queries into the evicted past fail.
class InputHistory {
 public:
  InputHistory(double dt, double horizon, double initial_value = 0.0, double t0 = 0.0);

  double dt() const noexcept { return dt_; }
  double horizon() const noexcept { return horizon_; }
  double t_now() const noexcept { return t0_ + static_cast<double>(last_index_) * dt_; }
  double initial_value() const noexcept { return initial_value_; }
  double latest() const noexcept { return samples_.back(); }
  // Earliest time that can still be queried.
  double earliest_time() const noexcept;

  // Append `value` at t = t_now + dt.
  void push(double t, double value);
  // Overwrite the value recorded at t_now.
  void set_latest(double value);

  // Linear interpolation between the bracketing samples.
  double query(double t) const;

  // Trapezoid integral of U^2 over [t_from, t_to] within the available support.
  double integrate_squared(double t_from, double t_to) const;

 private:
  double sample_time(long long index) const { return t0_ + static_cast<double>(index) * dt_; }
  double value_at_index(long long index) const;

  double dt_;
  double horizon_;
  double initial_value_;
  double t0_;
  long long first_index_ = 0;  // index of samples_.front()
  long long last_index_ = 0;   // index of samples_.back()
  bool evicted_ = false;
  std::deque<double> samples_;
};

// u[j] = U(t + delay * (x_j - 1)): the transport-PDE state on the grid.
std::vector<double> sample_profile(const InputHistory& history, double t, double delay, const SpatialGrid& grid);
void sample_profile_into(const InputHistory& history, double t, double delay, const SpatialGrid& grid,
                         std::span<double> out);

}  // namespace nopf
