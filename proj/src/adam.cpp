#include "pcdm/adam.hpp"

#include <cmath>

#include "pcdm/errors.hpp"

namespace pcdm {

AdamState make_adam_state(const ParameterStore& params, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  for (const Var& p : params.vars()) {
    s.m.emplace_back(p.shape(), 0.0);
    s.v.emplace_back(p.shape(), 0.0);
  }
  return s;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state) {
  if (params.size() != grads.size()) throw StateError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty() && state.v.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape(), 0.0);
      state.v.emplace_back(p->shape(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw StateError("adam_step: state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                     std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || state.m[i].shape() != params[i]->shape() ||
        state.v[i].shape() != params[i]->shape())
      throw StateError("adam_step: moment/gradient shape mismatch for parameter " + std::to_string(i));
  }

  const AdamConfig& c = state.config;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (int64_t j = 0; j < p.numel(); ++j) {
      const double gj = g[j] + c.weight_decay * p[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

void adam_step(ParameterStore& params, AdamState& state) {
  std::vector<Tensor*> ptrs;
  std::vector<Tensor> grads;
  ptrs.reserve(params.size());
  grads.reserve(params.size());
  for (Var& p : params.vars()) {
    ptrs.push_back(&p.mutable_value());
    grads.push_back(p.grad());
  }
  adam_step(ptrs, grads, state);
}

}  // namespace pcdm
