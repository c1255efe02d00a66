#pragma once

#include <vector>

namespace pcdm {

/// Upper bound applied to every beta so that alpha_t = 1 - beta_t stays positive.
inline constexpr double kMaxBeta = 0.999;
inline constexpr double kDefaultCosineOffset = 0.008;

/// Coefficients consumed by one transition of the chain.
struct StepCoefficients {
  double alpha_bar = 1.0;
  double alpha_bar_prev = 1.0;
  double beta = 0.0;
  double beta_tilde = 0.0;
};

/// Precomputed T-step noise schedule.
///
/// alpha_bar is indexed 0..T with alpha_bar(0) == 1; beta and beta_tilde are
/// indexed 1..T. Betas are clipped to kMaxBeta; wherever a clip takes effect
/// alpha_bar is recomputed from the clipped betas, so
/// alpha_bar(t) == prod_{i<=t} (1 - beta(i)) holds at every t. The raw cosine
/// value stays available through alpha_bar_unclipped.
class NoiseSchedule {
 public:
  /// Cosine schedule g(t) = cos^2(((t/T + s)/(1 + s)) * pi/2), alpha_bar = g(t)/g(0).
  static NoiseSchedule cosine(int steps, double offset = kDefaultCosineOffset);
  /// Schedule from an explicit decreasing alpha_bar sequence with alpha_bar[0] == 1.
  static NoiseSchedule from_alpha_bar(const std::vector<double>& alpha_bar, double offset = 0.0);

  int steps() const { return steps_; }
  double offset() const { return offset_; }

  double alpha_bar(int t) const;
  double alpha_bar_unclipped(int t) const;
  double beta(int t) const;
  double alpha(int t) const { return 1.0 - beta(t); }
  double beta_tilde(int t) const;

  StepCoefficients lookup(int t) const;

 private:
  NoiseSchedule() = default;
  void check_step(int t) const;

  int steps_ = 0;
  double offset_ = 0.0;
  std::vector<double> alpha_bar_;      // 0..T
  std::vector<double> alpha_bar_raw_;  // 0..T
  std::vector<double> beta_;           // 0..T, beta_[0] unused
  std::vector<double> beta_tilde_;     // 0..T, beta_tilde_[0] unused
};

NoiseSchedule build_schedule(int steps, double offset = kDefaultCosineOffset);
StepCoefficients schedule_lookup(const NoiseSchedule& schedule, int t);

/// A shortened chain over a subsequence of the original timesteps.
struct RespacedSchedule {
  NoiseSchedule schedule;
  std::vector<int> timesteps;  // timesteps[k] = original timestep of respaced step k, timesteps[0] = 0
};

/// Keep `n` evenly spaced timesteps round(k*T/n), k = 1..n. n == T returns the
/// schedule unchanged.
RespacedSchedule respace(const NoiseSchedule& schedule, int n);

}  // namespace pcdm
