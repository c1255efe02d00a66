#pragma once

#include "pcdm/diffusion.hpp"

namespace pcdm::testing {

/// f = a * x_t + b * y + c with scalar parameters; small enough to check by hand.
class AffineDenoiser : public Denoiser {
 public:
  AffineDenoiser(double a, double b, double c) {
    params_.add("a", Tensor::scalar(a));
    params_.add("b", Tensor::scalar(b));
    params_.add("c", Tensor::scalar(c));
  }
  Var forward(const Var& x_t, int, const Var& y, double) const override {
    const Var lin = ops::add(ops::scale_by(x_t, params_.get("a")), ops::scale_by(y, params_.get("b")));
    return ops::broadcast_add(lin, params_.get("c"));
  }
  ParameterStore& parameters() override { return params_; }

 private:
  ParameterStore params_;
};

/// Returns a fixed tensor regardless of input.
class ConstantDenoiser : public Denoiser {
 public:
  explicit ConstantDenoiser(Tensor out) : out_(std::move(out)) {}
  Var forward(const Var&, int, const Var&, double) const override { return Var::constant(out_); }
  ParameterStore& parameters() override { return params_; }

 private:
  Tensor out_;
  ParameterStore params_;
};

}  // namespace pcdm::testing
