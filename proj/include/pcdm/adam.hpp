#pragma once

#include <cstdint>
#include <vector>

#include "pcdm/parameters.hpp"
#include "pcdm/tensor.hpp"

namespace pcdm {

/// Defaults are the training policy's: lr 1e-4, betas (0.9, 0.999), eps 1e-8, no weight decay.
struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  AdamConfig config;
  int64_t step = 0;
  std::vector<Tensor> m;  // first moments, one per parameter
  std::vector<Tensor> v;  // second moments
};

AdamState make_adam_state(const ParameterStore& params, const AdamConfig& config = {});

/// Bias-corrected Adam update applied in place. Moment buffers are created on
/// the first call if the state is empty.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state);

/// Same, reading gradients from the store's leaves.
void adam_step(ParameterStore& params, AdamState& state);

}  // namespace pcdm
