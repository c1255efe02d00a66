#pragma once

// Hot loops of the denoiser. Each kernel exists twice: a textbook serial
// reference (kept for testing) and an OpenMP version used at runtime. Both
// accumulate every output element in a fixed order, so results do not depend
// on the thread count.

#include <cstdint>
#include <span>

namespace pcdm::kernels {

struct Conv2dDims {
  int64_t c_in = 0, h = 0, w = 0;
  int64_t c_out = 0, k = 1, stride = 1, pad = 0;

  int64_t out_h() const { return (h + 2 * pad - k) / stride + 1; }
  int64_t out_w() const { return (w + 2 * pad - k) / stride + 1; }
};

namespace serial {

/// y[c_out, oh, ow] = b + sum w * x (zero padding). Overwrites y.
void conv2d_forward(const Conv2dDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
/// dx += conv2d^T(dy).
void conv2d_backward_input(const Conv2dDims& d, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx);
/// dw += dy (*) x, db += sum(dy).
void conv2d_backward_weight(const Conv2dDims& d, std::span<const double> dy, std::span<const double> x,
                            std::span<double> dw, std::span<double> db);
/// c[m, n] = a[m, k] * b[k, n]. Overwrites c.
void matmul(int64_t m, int64_t k, int64_t n, std::span<const double> a, std::span<const double> b,
            std::span<double> c);

}  // namespace serial

namespace parallel {

void conv2d_forward(const Conv2dDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void conv2d_backward_input(const Conv2dDims& d, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx);
void conv2d_backward_weight(const Conv2dDims& d, std::span<const double> dy, std::span<const double> x,
                            std::span<double> dw, std::span<double> db);
void matmul(int64_t m, int64_t k, int64_t n, std::span<const double> a, std::span<const double> b,
            std::span<double> c);

}  // namespace parallel

}  // namespace pcdm::kernels
