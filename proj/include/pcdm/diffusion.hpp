#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pcdm/adam.hpp"
#include "pcdm/autograd.hpp"
#include "pcdm/parameters.hpp"
#include "pcdm/random.hpp"
#include "pcdm/schedule.hpp"
#include "pcdm/tensor.hpp"

namespace pcdm {

enum class Parameterization { PredictX0, PredictEps };

std::string to_string(Parameterization p);
Parameterization parse_parameterization(const std::string& s);

struct DiffusionConfig {
  Parameterization parameterization = Parameterization::PredictX0;
  /// Clip each intermediate x0 estimate to [-1, 1] before re-noising.
  bool clip_x0 = true;
  /// Reverse steps used for sampling; 0 means the full T.
  int t_infer = 0;
};

/// Mean and isotropic variance of q(x_{t-1} | x_t, x0).
struct PosteriorParams {
  Tensor mean;
  double variance_scale = 0.0;
};

/// f_theta(x_t, t, y, d): anything that maps a noisy sample plus conditions to
/// a prediction of x0 (or of the noise, depending on the parameterization).
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Var forward(const Var& x_t, int t, const Var& y, double d) const = 0;
  virtual ParameterStore& parameters() = 0;
  /// Required (H, W) of x_t and y; {0, 0} accepts any resolution.
  virtual std::pair<int64_t, int64_t> resolution() const { return {0, 0}; }

  /// Forward pass without recording a graph.
  Tensor predict(const Tensor& x_t, int t, const Tensor& y, double d) const;
};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

/// Tractable posterior q(x_{t-1} | x_t, x0): mean from the (x_t, x0) form, variance beta_tilde_t.
PosteriorParams posterior_params(const Tensor& x_t, const Tensor& x0, int t, const NoiseSchedule& sched);

/// Posterior mean written in terms of the noise: (x_t - beta_t/sqrt(1-abar_t) eps) / sqrt(1 - beta_t).
Tensor posterior_mean_from_eps(const Tensor& x_t, const Tensor& eps, int t, const NoiseSchedule& sched);

Tensor x0_from_eps(const Tensor& x_t, const Tensor& eps, int t, const NoiseSchedule& sched);
Tensor eps_from_x0(const Tensor& x_t, const Tensor& x0, int t, const NoiseSchedule& sched);

/// Mean of p_theta(x_{t-1} | x_t) given the raw network output under `param`.
/// With `clip`, the implied x0 estimate is clipped to [-1, 1] first.
Tensor reverse_mean(const Tensor& x_t, int t, const Tensor& prediction, Parameterization param, bool clip,
                    const NoiseSchedule& sched);

/// One ancestral step from an x0 estimate: mean + sqrt(beta_tilde_t) z. No noise at t == 1.
Tensor reverse_step(const Tensor& x_t, int t, const Tensor& x0_hat, const NoiseSchedule& sched, Rng& rng,
                    bool clip = true);

/// Full reverse chain from x_T ~ N(0, I) down to x0 for canvas y ([1, H, W]) and condition d.
Tensor sample_chain(const Denoiser& model, const Tensor& y, double d, const DiffusionConfig& cfg,
                    const NoiseSchedule& sched, Rng& rng);

/// Squared error between the network output and its target (x0 or eps) at timestep t.
Var training_loss(const Denoiser& model, const Tensor& x0, const Tensor& y, double d, int t, const Tensor& eps,
                  const DiffusionConfig& cfg, const NoiseSchedule& sched);

struct TrainingSample {
  Tensor x0;  // line drawing [1, H, W] in {-1, 0, +1}
  Tensor y;   // canvas [1, H, W] in {-1, 0}
  double d = 0.0;
  std::string id;
};

struct EpochStats {
  double mean_loss = 0.0;
  double min_loss = 0.0;
  double max_loss = 0.0;
  int64_t steps = 0;
};

/// One shuffled pass over `data`, one Adam step per sample (batch size 1).
EpochStats train_epoch(Denoiser& model, const std::vector<TrainingSample>& data, const DiffusionConfig& cfg,
                       const NoiseSchedule& sched, AdamState& optimizer, Rng& rng);

}  // namespace pcdm
