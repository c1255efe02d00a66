#include "pcdm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "pcdm/errors.hpp"

namespace pcdm {

namespace {

void fill_from_raw(std::vector<double>& alpha_bar, std::vector<double>& beta, std::vector<double>& beta_tilde,
                   const std::vector<double>& raw) {
  const size_t n = raw.size();
  alpha_bar.assign(n, 1.0);
  beta.assign(n, 0.0);
  beta_tilde.assign(n, 0.0);
  bool clipped = false;
  for (size_t t = 1; t < n; ++t) {
    const double raw_beta = 1.0 - raw[t] / raw[t - 1];
    const double b = std::min(raw_beta, kMaxBeta);
    clipped = clipped || raw_beta > kMaxBeta;
    beta[t] = b;
    alpha_bar[t] = clipped ? alpha_bar[t - 1] * (1.0 - b) : raw[t];
    beta_tilde[t] = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * b;
  }
}

}  // namespace

NoiseSchedule NoiseSchedule::cosine(int steps, double offset) {
  if (steps < 2) throw ConfigError("noise schedule needs T >= 2, got " + std::to_string(steps));
  if (!(offset > 0.0 && offset < 0.1)) throw ConfigError("cosine offset s must lie in (0, 0.1)");
  const auto g = [&](int t) {
    const double c = std::cos((static_cast<double>(t) / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  NoiseSchedule s;
  s.steps_ = steps;
  s.offset_ = offset;
  const double g0 = g(0);
  s.alpha_bar_raw_.resize(static_cast<size_t>(steps) + 1);
  s.alpha_bar_raw_[0] = 1.0;
  for (int t = 1; t <= steps; ++t) s.alpha_bar_raw_[static_cast<size_t>(t)] = g(t) / g0;
  fill_from_raw(s.alpha_bar_, s.beta_, s.beta_tilde_, s.alpha_bar_raw_);
  return s;
}

NoiseSchedule NoiseSchedule::from_alpha_bar(const std::vector<double>& alpha_bar, double offset) {
  if (alpha_bar.size() < 2) throw ConfigError("schedule needs at least 1 step");
  if (alpha_bar[0] != 1.0) throw ConfigError("alpha_bar[0] must be exactly 1");
  for (size_t t = 1; t < alpha_bar.size(); ++t) {
    if (!(alpha_bar[t] < alpha_bar[t - 1]) || alpha_bar[t] < 0.0)
      throw ConfigError("alpha_bar must be strictly decreasing and nonnegative");
  }
  NoiseSchedule s;
  s.steps_ = static_cast<int>(alpha_bar.size()) - 1;
  s.offset_ = offset;
  s.alpha_bar_raw_ = alpha_bar;
  fill_from_raw(s.alpha_bar_, s.beta_, s.beta_tilde_, s.alpha_bar_raw_);
  return s;
}

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > steps_)
    throw IndexError("timestep " + std::to_string(t) + " outside 1.." + std::to_string(steps_));
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps_) throw IndexError("timestep " + std::to_string(t) + " outside 0.." + std::to_string(steps_));
  return alpha_bar_[static_cast<size_t>(t)];
}

double NoiseSchedule::alpha_bar_unclipped(int t) const {
  if (t < 0 || t > steps_) throw IndexError("timestep " + std::to_string(t) + " outside 0.." + std::to_string(steps_));
  return alpha_bar_raw_[static_cast<size_t>(t)];
}

double NoiseSchedule::beta(int t) const {
  check_step(t);
  return beta_[static_cast<size_t>(t)];
}

double NoiseSchedule::beta_tilde(int t) const {
  check_step(t);
  return beta_tilde_[static_cast<size_t>(t)];
}

StepCoefficients NoiseSchedule::lookup(int t) const {
  check_step(t);
  const auto i = static_cast<size_t>(t);
  return {alpha_bar_[i], alpha_bar_[i - 1], beta_[i], beta_tilde_[i]};
}

NoiseSchedule build_schedule(int steps, double offset) { return NoiseSchedule::cosine(steps, offset); }

StepCoefficients schedule_lookup(const NoiseSchedule& schedule, int t) { return schedule.lookup(t); }

RespacedSchedule respace(const NoiseSchedule& schedule, int n) {
  const int total = schedule.steps();
  if (n < 1 || n > total) throw ConfigError("respaced step count must lie in 1.." + std::to_string(total));
  std::vector<int> ts(static_cast<size_t>(n) + 1, 0);
  for (int k = 1; k <= n; ++k)
    ts[static_cast<size_t>(k)] = static_cast<int>(std::lround(static_cast<double>(k) * total / n));
  if (n == total) return {schedule, ts};
  std::vector<double> ab(static_cast<size_t>(n) + 1);
  for (int k = 0; k <= n; ++k) ab[static_cast<size_t>(k)] = schedule.alpha_bar(ts[static_cast<size_t>(k)]);
  return {NoiseSchedule::from_alpha_bar(ab, schedule.offset()), ts};
}

}  // namespace pcdm
