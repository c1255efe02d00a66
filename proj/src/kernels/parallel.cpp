#include <algorithm>

#include "pcdm/kernels.hpp"

namespace pcdm::kernels::parallel {

namespace {

// Output columns [lo, hi) whose input column ow*stride + kw - pad lies inside [0, w).
void valid_columns(const Conv2dDims& d, int64_t kw, int64_t ow_n, int64_t& lo, int64_t& hi) {
  const int64_t off = kw - d.pad;
  lo = off >= 0 ? 0 : (-off + d.stride - 1) / d.stride;
  const int64_t last = d.w - 1 - off;  // largest admissible ow*stride
  hi = last < 0 ? 0 : std::min(ow_n, last / d.stride + 1);
}

}  // namespace

void conv2d_forward(const Conv2dDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
  const int64_t oh_n = d.out_h(), ow_n = d.out_w();
  const double* xp = x.data();
  const double* wp = w.data();
  double* yp = y.data();
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < d.c_out; ++co) {
    double* yc = yp + co * oh_n * ow_n;
    std::fill(yc, yc + oh_n * ow_n, b.empty() ? 0.0 : b[co]);
    for (int64_t ci = 0; ci < d.c_in; ++ci) {
      const double* xc = xp + ci * d.h * d.w;
      for (int64_t kh = 0; kh < d.k; ++kh) {
        for (int64_t kw = 0; kw < d.k; ++kw) {
          const double wv = wp[((co * d.c_in + ci) * d.k + kh) * d.k + kw];
          int64_t lo = 0, hi = 0;
          valid_columns(d, kw, ow_n, lo, hi);
          for (int64_t oh = 0; oh < oh_n; ++oh) {
            const int64_t ih = oh * d.stride + kh - d.pad;
            if (ih < 0 || ih >= d.h) continue;
            double* yr = yc + oh * ow_n;
            const double* xr = xc + ih * d.w + kw - d.pad;
            if (d.stride == 1) {
              for (int64_t ow = lo; ow < hi; ++ow) yr[ow] += wv * xr[ow];
            } else {
              for (int64_t ow = lo; ow < hi; ++ow) yr[ow] += wv * xr[ow * d.stride];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const Conv2dDims& d, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx) {
  const int64_t oh_n = d.out_h(), ow_n = d.out_w();
  const double* gp = dy.data();
  const double* wp = w.data();
  double* dxp = dx.data();
#pragma omp parallel for schedule(static)
  for (int64_t ci = 0; ci < d.c_in; ++ci) {
    double* dxc = dxp + ci * d.h * d.w;
    for (int64_t co = 0; co < d.c_out; ++co) {
      const double* gc = gp + co * oh_n * ow_n;
      for (int64_t kh = 0; kh < d.k; ++kh) {
        for (int64_t kw = 0; kw < d.k; ++kw) {
          const double wv = wp[((co * d.c_in + ci) * d.k + kh) * d.k + kw];
          int64_t lo = 0, hi = 0;
          valid_columns(d, kw, ow_n, lo, hi);
          for (int64_t oh = 0; oh < oh_n; ++oh) {
            const int64_t ih = oh * d.stride + kh - d.pad;
            if (ih < 0 || ih >= d.h) continue;
            const double* gr = gc + oh * ow_n;
            double* dxr = dxc + ih * d.w + kw - d.pad;
            if (d.stride == 1) {
              for (int64_t ow = lo; ow < hi; ++ow) dxr[ow] += wv * gr[ow];
            } else {
              for (int64_t ow = lo; ow < hi; ++ow) dxr[ow * d.stride] += wv * gr[ow];
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
  const double* gp = dy.data();
  const double* xp = x.data();
  double* dwp = dw.data();
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < d.c_out; ++co) {
    const double* gc = gp + co * oh_n * ow_n;
    if (!db.empty()) {
      double acc = 0.0;
      for (int64_t i = 0; i < oh_n * ow_n; ++i) acc += gc[i];
      db[co] += acc;
    }
    for (int64_t ci = 0; ci < d.c_in; ++ci) {
      const double* xc = xp + ci * d.h * d.w;
      for (int64_t kh = 0; kh < d.k; ++kh) {
        for (int64_t kw = 0; kw < d.k; ++kw) {
          int64_t lo = 0, hi = 0;
          valid_columns(d, kw, ow_n, lo, hi);
          double acc = 0.0;
          for (int64_t oh = 0; oh < oh_n; ++oh) {
            const int64_t ih = oh * d.stride + kh - d.pad;
            if (ih < 0 || ih >= d.h) continue;
            const double* gr = gc + oh * ow_n;
            const double* xr = xc + ih * d.w + kw - d.pad;
            if (d.stride == 1) {
              for (int64_t ow = lo; ow < hi; ++ow) acc += gr[ow] * xr[ow];
            } else {
              for (int64_t ow = lo; ow < hi; ++ow) acc += gr[ow] * xr[ow * d.stride];
            }
          }
          dwp[((co * d.c_in + ci) * d.k + kh) * d.k + kw] += acc;
        }
      }
    }
  }
}

void matmul(int64_t m, int64_t k, int64_t n, std::span<const double> a, std::span<const double> b,
            std::span<double> c) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* cr = cp + i * n;
    std::fill(cr, cr + n, 0.0);
    for (int64_t p = 0; p < k; ++p) {
      const double av = ap[i * k + p];
      const double* br = bp + p * n;
      for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

}  // namespace pcdm::kernels::parallel
