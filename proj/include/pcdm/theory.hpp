#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pcdm/diffusion.hpp"
#include "pcdm/random.hpp"
#include "pcdm/schedule.hpp"

namespace pcdm {

struct GaussianSpec {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  static GaussianSpec isotropic(Eigen::VectorXd mean, double variance);
  int64_t dim() const { return mean.size(); }
};

/// KL(p || q) = 1/2 [Tr(Sq^-1 Sp) + (mq - mp)^T Sq^-1 (mq - mp) - D + log(|Sq| / |Sp|)].
/// NumericError when a covariance is not positive definite.
double kl_gaussian(const GaussianSpec& p, const GaussianSpec& q);
/// Same divergence for N(mp, vp I) and N(mq, vq I) without forming matrices.
double kl_isotropic(const Tensor& mean_p, double var_p, const Tensor& mean_q, double var_q);

struct VerificationReport {
  std::string name;
  std::vector<std::pair<std::string, double>> values;
  double discrepancy = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  int64_t samples = 0;  // Monte-Carlo draws, 0 for deterministic checks
  std::string note;

  std::string to_json() const;
  std::string to_text() const;
};

/// KL between N(mu_theta, b I) and N(mu_tilde, b I) against ||mu_tilde - mu_theta||^2 / (2 b),
/// relative tolerance 1e-9. `fault` is added to beta_tilde on the closed-form side only,
/// to show that the check can fail.
VerificationReport check_theorem2(const Eigen::VectorXd& mu_tilde, const Eigen::VectorXd& mu_theta, double beta_tilde,
                                  double fault = 0.0);

/// Iterates x_i = sqrt(1 - beta_i) x_{i-1} + sqrt(beta_i) eps_i from scalar x0 for t steps
/// and compares mean and variance with one-shot sampling; passes within 4 standard
/// errors. With `common_random_numbers` both samplers start from the same stream.
VerificationReport check_marginal_consistency(const NoiseSchedule& sched, int t, int64_t n_samples, uint64_t seed,
                                              double x0 = 1.0, bool common_random_numbers = false);

/// KL(q(x_T | x0) || N(0, I)).
double prior_matching_kl(const Tensor& x0, const NoiseSchedule& sched);

/// Per-t KL(q(x_{t-1} | x_t, x0) || p_theta(x_{t-1} | x_t, y, d)) with x_t ~ q(x_t | x0).
/// Every t must lie in 2..T.
std::vector<double> elbo_kl_terms(const Denoiser& model, const Tensor& x0, const Tensor& y, double d,
                                  const NoiseSchedule& sched, const std::vector<int>& t_list,
                                  const DiffusionConfig& cfg, Rng& rng);

}  // namespace pcdm
