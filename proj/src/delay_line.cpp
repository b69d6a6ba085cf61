#include "nopf/delay_line.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "nopf/errors.hpp"

namespace nopf {

SpatialGrid::SpatialGrid(std::size_t intervals) : m_(intervals) {
  if (intervals < 1) throw ConfigError("spatial grid needs at least one interval");
}

SpatialGrid SpatialGrid::from_step(double dx) {
  if (!(dx > 0.0 && dx <= 0.5)) throw ConfigError("dx must lie in (0, 0.5]");
  return SpatialGrid(static_cast<std::size_t>(std::llround(1.0 / dx)));
}

InputHistory::InputHistory(double dt, double horizon, double initial_value, double t0)
    : dt_(dt), horizon_(horizon), initial_value_(initial_value), t0_(t0) {
  if (!(dt > 0.0)) throw ConfigError("history dt must be positive");
  if (!(horizon > dt)) throw ConfigError("history horizon must exceed dt");
  samples_.push_back(initial_value);
}

double InputHistory::earliest_time() const noexcept {
  return evicted_ ? sample_time(first_index_) : -std::numeric_limits<double>::infinity();
}

void InputHistory::push(double t, double value) {
  const double expected = t_now() + dt_;
  if (std::abs(t - expected) > 1e-6 * dt_) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "non-sequential history push at t=" << t << " (expected " << expected << ")";
    throw ConfigError(msg.str());
  }
  samples_.push_back(value);
  ++last_index_;
  // Keep one sample at or before t_now - horizon so the window edge stays interpolable.
  const double cutoff = t_now() - horizon_;
  while (samples_.size() > 2 && sample_time(first_index_ + 1) <= cutoff) {
    samples_.pop_front();
    ++first_index_;
    evicted_ = true;
  }
}

void InputHistory::set_latest(double value) { samples_.back() = value; }

double InputHistory::value_at_index(long long index) const {
  if (index < first_index_) return initial_value_;
  return samples_[static_cast<std::size_t>(index - first_index_)];
}

double InputHistory::query(double t) const {
  const double tol = 1e-9 * dt_;
  if (t > t_now() + tol) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "history query in the future: t=" << t << " > t_now=" << t_now();
    throw ConfigError(msg.str());
  }
  const double pos = (t - t0_) / dt_;
  if (pos < static_cast<double>(first_index_) - 1e-9) {
    if (evicted_) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "history query at t=" << t << " is older than the retained window (earliest " << earliest_time()
          << ")";
      throw ConfigError(msg.str());
    }
    return initial_value_;
  }
  const double nearest = std::round(pos);
  if (std::abs(pos - nearest) < 1e-9) {
    const auto k = std::clamp(static_cast<long long>(nearest), first_index_, last_index_);
    return value_at_index(k);
  }
  const auto k = static_cast<long long>(std::floor(pos));
  if (k >= last_index_) return samples_.back();
  const double frac = pos - static_cast<double>(k);
  const double lo = value_at_index(k);
  return lo + frac * (value_at_index(k + 1) - lo);
}

double InputHistory::integrate_squared(double t_from, double t_to) const {
  t_from = std::max(t_from, earliest_time());
  t_to = std::min(t_to, t_now());
  if (!(t_to > t_from)) return 0.0;

  double total = 0.0;
  // Constant pre-history segment.
  if (t_from < t0_) {
    const double end = std::min(t_to, t0_);
    total += initial_value_ * initial_value_ * (end - t_from);
    t_from = end;
    if (!(t_to > t_from)) return total;
  }
  auto k = static_cast<long long>(std::floor((t_from - t0_) / dt_ + 1e-9)) + 1;
  double prev_t = t_from;
  double prev_u = query(t_from);
  while (k <= last_index_ && sample_time(k) < t_to - 1e-12 * dt_) {
    const double u = value_at_index(k);
    const double tk = sample_time(k);
    total += 0.5 * (prev_u * prev_u + u * u) * (tk - prev_t);
    prev_t = tk;
    prev_u = u;
    ++k;
  }
  const double u_end = query(t_to);
  total += 0.5 * (prev_u * prev_u + u_end * u_end) * (t_to - prev_t);
  return total;
}

void sample_profile_into(const InputHistory& history, double t, double delay, const SpatialGrid& grid,
                         std::span<double> out) {
  if (!(delay > 0.0)) throw ConfigError("profile delay must be positive");
  if (delay > history.horizon()) throw ConfigError("profile delay exceeds the history horizon");
  if (out.size() != grid.size()) throw ConfigError("profile buffer does not match the grid");
  for (std::size_t j = 0; j < grid.size(); ++j) out[j] = history.query(t + delay * (grid.point(j) - 1.0));
}

std::vector<double> sample_profile(const InputHistory& history, double t, double delay, const SpatialGrid& grid) {
  std::vector<double> out(grid.size());
  sample_profile_into(history, t, delay, grid, out);
  return out;
}

}  // namespace nopf
