#include "pcdm/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pcdm/errors.hpp"

namespace pcdm {

std::string to_string(Parameterization p) { return p == Parameterization::PredictX0 ? "predict-x0" : "predict-eps"; }

Parameterization parse_parameterization(const std::string& s) {
  if (s == "predict-x0") return Parameterization::PredictX0;
  if (s == "predict-eps") return Parameterization::PredictEps;
  throw ConfigError("unknown parameterization '" + s + "' (expected predict-x0 or predict-eps)");
}

Tensor Denoiser::predict(const Tensor& x_t, int t, const Tensor& y, double d) const {
  NoGradGuard guard;
  return forward(Var::constant(x_t), t, Var::constant(y), d).value();
}

Tensor forward_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  require_same_shape(x0, eps, "forward_sample");
  const double ab = sched.lookup(t).alpha_bar;
  return axpby(std::sqrt(ab), x0, std::sqrt(1.0 - ab), eps);
}

PosteriorParams posterior_params(const Tensor& x_t, const Tensor& x0, int t, const NoiseSchedule& sched) {
  require_same_shape(x_t, x0, "posterior_params");
  const StepCoefficients c = sched.lookup(t);
  const double coef_xt = std::sqrt(1.0 - c.beta) * (1.0 - c.alpha_bar_prev) / (1.0 - c.alpha_bar);
  const double coef_x0 = std::sqrt(c.alpha_bar_prev) * c.beta / (1.0 - c.alpha_bar);
  return {axpby(coef_xt, x_t, coef_x0, x0), c.beta_tilde};
}

Tensor posterior_mean_from_eps(const Tensor& x_t, const Tensor& eps, int t, const NoiseSchedule& sched) {
  require_same_shape(x_t, eps, "posterior_mean_from_eps");
  const StepCoefficients c = sched.lookup(t);
  const double inv = 1.0 / std::sqrt(1.0 - c.beta);
  return axpby(inv, x_t, -inv * c.beta / std::sqrt(1.0 - c.alpha_bar), eps);
}

Tensor x0_from_eps(const Tensor& x_t, const Tensor& eps, int t, const NoiseSchedule& sched) {
  require_same_shape(x_t, eps, "x0_from_eps");
  const double ab = sched.lookup(t).alpha_bar;
  if (!(ab > 0.0)) throw SingularityError("x0_from_eps: alpha_bar vanishes at t=" + std::to_string(t));
  const double inv = 1.0 / std::sqrt(ab);
  return axpby(inv, x_t, -inv * std::sqrt(1.0 - ab), eps);
}

Tensor eps_from_x0(const Tensor& x_t, const Tensor& x0, int t, const NoiseSchedule& sched) {
  require_same_shape(x_t, x0, "eps_from_x0");
  const double ab = sched.lookup(t).alpha_bar;
  if (!(ab < 1.0)) throw SingularityError("eps_from_x0: no noise at t=" + std::to_string(t));
  const double inv = 1.0 / std::sqrt(1.0 - ab);
  return axpby(inv, x_t, -inv * std::sqrt(ab), x0);
}

Tensor reverse_mean(const Tensor& x_t, int t, const Tensor& prediction, Parameterization param, bool clip,
                    const NoiseSchedule& sched) {
  if (param == Parameterization::PredictEps && !clip) return posterior_mean_from_eps(x_t, prediction, t, sched);
  Tensor x0_hat = param == Parameterization::PredictX0 ? prediction : x0_from_eps(x_t, prediction, t, sched);
  if (clip) x0_hat = clamp(x0_hat, -1.0, 1.0);
  return posterior_params(x_t, x0_hat, t, sched).mean;
}

Tensor reverse_step(const Tensor& x_t, int t, const Tensor& x0_hat, const NoiseSchedule& sched, Rng& rng, bool clip) {
  Tensor mean = reverse_mean(x_t, t, x0_hat, Parameterization::PredictX0, clip, sched);
  if (t == 1) return mean;
  const double sigma = std::sqrt(sched.beta_tilde(t));
  for (double& v : mean.data()) v += sigma * rng.normal();
  return mean;
}

Tensor sample_chain(const Denoiser& model, const Tensor& y, double d, const DiffusionConfig& cfg,
                    const NoiseSchedule& sched, Rng& rng) {
  if (y.ndim() != 3 || y.dim(0) != 1) throw DimensionError("canvas must be [1, H, W], got " + shape_str(y.shape()));
  const auto [mh, mw] = model.resolution();
  if (mh != 0 && (y.dim(1) != mh || y.dim(2) != mw))
    throw DimensionError("canvas " + shape_str(y.shape()) + " does not match model resolution " +
                         std::to_string(mh) + "x" + std::to_string(mw));
  const int n = cfg.t_infer > 0 ? cfg.t_infer : sched.steps();
  const RespacedSchedule chain = respace(sched, n);

  Tensor x = rng.normal_tensor(y.shape());
  for (int k = n; k >= 1; --k) {
    const Tensor pred = model.predict(x, chain.timesteps[static_cast<size_t>(k)], y, d);
    Tensor mean = reverse_mean(x, k, pred, cfg.parameterization, cfg.clip_x0, chain.schedule);
    if (k > 1) {
      const double sigma = std::sqrt(chain.schedule.beta_tilde(k));
      for (double& v : mean.data()) v += sigma * rng.normal();
    }
    x = std::move(mean);
  }
  return x;
}

Var training_loss(const Denoiser& model, const Tensor& x0, const Tensor& y, double d, int t, const Tensor& eps,
                  const DiffusionConfig& cfg, const NoiseSchedule& sched) {
  const Tensor x_t = forward_sample(x0, t, eps, sched);
  const Var pred = model.forward(Var::constant(x_t), t, Var::constant(y), d);
  const Tensor& target = cfg.parameterization == Parameterization::PredictX0 ? x0 : eps;
  return ops::squared_error(pred, Var::constant(target));
}

EpochStats train_epoch(Denoiser& model, const std::vector<TrainingSample>& data, const DiffusionConfig& cfg,
                       const NoiseSchedule& sched, AdamState& optimizer, Rng& rng) {
  if (data.empty()) throw UsageError("train_epoch: empty dataset");
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::shuffle(order.begin(), order.end(), rng.engine());

  EpochStats stats;
  stats.min_loss = INFINITY;
  stats.max_loss = -INFINITY;
  double total = 0.0;
  ParameterStore& params = model.parameters();
  for (size_t idx : order) {
    const TrainingSample& s = data[idx];
    const int t = static_cast<int>(rng.uniform_int(1, sched.steps()));
    const Tensor eps = rng.normal_tensor(s.x0.shape());
    params.zero_grad();
    const Var loss = training_loss(model, s.x0, s.y, s.d, t, eps, cfg, sched);
    backward(loss);
    adam_step(params, optimizer);
    const double l = loss.value().item();
    total += l;
    stats.min_loss = std::min(stats.min_loss, l);
    stats.max_loss = std::max(stats.max_loss, l);
    ++stats.steps;
  }
  stats.mean_loss = total / static_cast<double>(stats.steps);
  return stats;
}

}  // namespace pcdm
