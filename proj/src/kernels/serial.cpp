#include "pcdm/kernels.hpp"

namespace pcdm::kernels::serial {

void conv2d_forward(const Conv2dDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
  const int64_t oh_n = d.out_h(), ow_n = d.out_w();
  for (int64_t co = 0; co < d.c_out; ++co) {
    for (int64_t oh = 0; oh < oh_n; ++oh) {
      for (int64_t ow = 0; ow < ow_n; ++ow) {
        double acc = b.empty() ? 0.0 : b[co];
        for (int64_t ci = 0; ci < d.c_in; ++ci) {
          for (int64_t kh = 0; kh < d.k; ++kh) {
            for (int64_t kw = 0; kw < d.k; ++kw) {
              const int64_t ih = oh * d.stride + kh - d.pad;
              const int64_t iw = ow * d.stride + kw - d.pad;
              if (ih < 0 || ih >= d.h || iw < 0 || iw >= d.w) continue;
              acc += w[((co * d.c_in + ci) * d.k + kh) * d.k + kw] * x[(ci * d.h + ih) * d.w + iw];
            }
          }
        }
        y[(co * oh_n + oh) * ow_n + ow] = acc;
      }
    }
  }
}

void conv2d_backward_input(const Conv2dDims& d, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx) {
  const int64_t oh_n = d.out_h(), ow_n = d.out_w();
  for (int64_t co = 0; co < d.c_out; ++co) {
    for (int64_t oh = 0; oh < oh_n; ++oh) {
      for (int64_t ow = 0; ow < ow_n; ++ow) {
        const double g = dy[(co * oh_n + oh) * ow_n + ow];
        for (int64_t ci = 0; ci < d.c_in; ++ci) {
          for (int64_t kh = 0; kh < d.k; ++kh) {
            for (int64_t kw = 0; kw < d.k; ++kw) {
              const int64_t ih = oh * d.stride + kh - d.pad;
              const int64_t iw = ow * d.stride + kw - d.pad;
              if (ih < 0 || ih >= d.h || iw < 0 || iw >= d.w) continue;
              dx[(ci * d.h + ih) * d.w + iw] += w[((co * d.c_in + ci) * d.k + kh) * d.k + kw] * g;
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const Conv2dDims& d, std::span<const double> dy, std::span<const double> x,
                            std::span<double> dw, std::span<double> db) {
  const int64_t oh_n = d.out_h(), ow_n = d.out_w();
  for (int64_t co = 0; co < d.c_out; ++co) {
    for (int64_t oh = 0; oh < oh_n; ++oh) {
      for (int64_t ow = 0; ow < ow_n; ++ow) {
        const double g = dy[(co * oh_n + oh) * ow_n + ow];
        if (!db.empty()) db[co] += g;
        for (int64_t ci = 0; ci < d.c_in; ++ci) {
          for (int64_t kh = 0; kh < d.k; ++kh) {
            for (int64_t kw = 0; kw < d.k; ++kw) {
              const int64_t ih = oh * d.stride + kh - d.pad;
              const int64_t iw = ow * d.stride + kw - d.pad;
              if (ih < 0 || ih >= d.h || iw < 0 || iw >= d.w) continue;
              dw[((co * d.c_in + ci) * d.k + kh) * d.k + kw] += g * x[(ci * d.h + ih) * d.w + iw];
            }
          }
        }
      }
    }
  }
}

void matmul(int64_t m, int64_t k, int64_t n, std::span<const double> a, std::span<const double> b,
            std::span<double> c) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

}  // namespace pcdm::kernels::serial
