#include "pcdm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "pcdm/errors.hpp"
#include "pcdm/kernels.hpp"

namespace pcdm {

namespace {

thread_local bool g_grad_enabled = true;

void accumulate(Node& n, const Tensor& g) {
  Tensor& buf = n.grad_buffer();
  for (int64_t i = 0; i < g.numel(); ++i) buf[i] += g[i];
}

/// Build the result node. Records `fn` only when some input needs gradients.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
#ifndef NDEBUG
  if (!value.all_finite()) throw NumericError("non-finite value produced in forward pass");
#endif
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    for (const Var& in : inputs) {
      if (in.defined() && in.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (Var& in : inputs) {
        if (in.defined()) node->parents.push_back(in.node());
      }
      node->backward_fn = std::move(fn);
    }
  }
  return Var(std::move(node));
}

bool needs(const Var& v) { return v.defined() && v.requires_grad(); }

int normalize_axis(int axis, int ndim) {
  if (axis < 0) axis += ndim;
  if (axis < 0 || axis >= ndim) throw DimensionError("axis out of range");
  return axis;
}

void axis_split(const Shape& s, int axis, int64_t& outer, int64_t& n, int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  n = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

Tensor transpose2d(const Tensor& a) {
  const int64_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var Var::parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& loss) {
  if (!loss.defined() || loss.value().numel() != 1)
    throw UsageError("backward requires a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Interior gradients are not needed after the sweep.
  for (Node* n : order) {
    if (n->backward_fn) n->grad = Tensor();
  }
}

namespace ops {

Var add(const Var& a, const Var& b) {
  Tensor out = a.value() + b.value();
  return make_result(std::move(out), {a, b}, [a, b](Node& self) {
    if (needs(a)) accumulate(*a.node(), self.grad);
    if (needs(b)) accumulate(*b.node(), self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  Tensor out = a.value() - b.value();
  return make_result(std::move(out), {a, b}, [a, b](Node& self) {
    if (needs(a)) accumulate(*a.node(), self.grad);
    if (needs(b)) accumulate(*b.node(), -1.0 * self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a, b}, [a, b](Node& self) {
    const Tensor& g = self.grad;
    if (needs(a)) {
      Tensor& ga = a.node()->grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * b.value()[i];
    }
    if (needs(b)) {
      Tensor& gb = b.node()->grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * a.value()[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return make_result(s * a.value(), {a}, [a, s](Node& self) { accumulate(*a.node(), s * self.grad); });
}

Var scale_by(const Var& a, const Var& s) {
  if (s.value().numel() != 1) throw DimensionError("scale_by expects a single-element scale");
  const double sv = s.value()[0];
  return make_result(sv * a.value(), {a, s}, [a, s, sv](Node& self) {
    const Tensor& g = self.grad;
    if (needs(a)) accumulate(*a.node(), sv * g);
    if (needs(s)) {
      double acc = 0.0;
      for (int64_t i = 0; i < g.numel(); ++i) acc += g[i] * a.value()[i];
      s.node()->grad_buffer()[0] += acc;
    }
  });
}

Var silu(const Var& a) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * sigmoid(a.value()[i]);
  return make_result(std::move(out), {a}, [a](Node& self) {
    Tensor& ga = a.node()->grad_buffer();
    for (int64_t i = 0; i < self.grad.numel(); ++i) {
      const double x = a.value()[i];
      const double sg = sigmoid(x);
      ga[i] += self.grad[i] * sg * (1.0 + x * (1.0 - sg));
    }
  });
}

Var group_norm(const Var& x, int64_t groups, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x.value();
  if (xv.ndim() < 1) throw DimensionError("group_norm needs a channel axis");
  const int64_t channels = xv.dim(0);
  if (groups <= 0 || channels % groups != 0)
    throw ConfigError("group_norm: " + std::to_string(channels) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  if (gamma.value().numel() != channels || beta.value().numel() != channels)
    throw DimensionError("group_norm: affine parameters must have one entry per channel");
  const int64_t per_channel = xv.numel() / channels;
  const int64_t cpg = channels / groups;
  const int64_t group_size = cpg * per_channel;

  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(static_cast<size_t>(groups));
  for (int64_t g = 0; g < groups; ++g) {
    const int64_t base = g * group_size;
    double mean = 0.0;
    for (int64_t i = 0; i < group_size; ++i) mean += xv[base + i];
    mean /= static_cast<double>(group_size);
    double var = 0.0;
    for (int64_t i = 0; i < group_size; ++i) var += (xv[base + i] - mean) * (xv[base + i] - mean);
    var /= static_cast<double>(group_size);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(g)] = is;
    for (int64_t i = 0; i < group_size; ++i) {
      const int64_t c = (base + i) / per_channel;
      const double xh = (xv[base + i] - mean) * is;
      xhat[base + i] = xh;
      out[base + i] = gamma.value()[c] * xh + beta.value()[c];
    }
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat, inv_std, groups, group_size, per_channel](Node& self) {
                       const Tensor& g = self.grad;
                       if (needs(gamma) || needs(beta)) {
                         Tensor& gg = gamma.node()->grad_buffer();
                         Tensor& gb = beta.node()->grad_buffer();
                         for (int64_t i = 0; i < g.numel(); ++i) {
                           const int64_t c = i / per_channel;
                           if (needs(gamma)) gg[c] += g[i] * xhat[i];
                           if (needs(beta)) gb[c] += g[i];
                         }
                       }
                       if (!needs(x)) return;
                       Tensor& gx = x.node()->grad_buffer();
                       for (int64_t grp = 0; grp < groups; ++grp) {
                         const int64_t base = grp * group_size;
                         double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                         for (int64_t i = 0; i < group_size; ++i) {
                           const int64_t c = (base + i) / per_channel;
                           const double dxh = g[base + i] * gamma.value()[c];
                           mean_dxh += dxh;
                           mean_dxh_xh += dxh * xhat[base + i];
                         }
                         mean_dxh /= static_cast<double>(group_size);
                         mean_dxh_xh /= static_cast<double>(group_size);
                         const double is = inv_std[static_cast<size_t>(grp)];
                         for (int64_t i = 0; i < group_size; ++i) {
                           const int64_t c = (base + i) / per_channel;
                           const double dxh = g[base + i] * gamma.value()[c];
                           gx[base + i] += is * (dxh - mean_dxh - xhat[base + i] * mean_dxh_xh);
                         }
                       }
                     });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.ndim() != 3 || wv.ndim() != 4) throw DimensionError("conv2d expects x [C,H,W] and w [Co,Ci,k,k]");
  if (wv.dim(1) != xv.dim(0))
    throw DimensionError("conv2d channel mismatch: input has " + std::to_string(xv.dim(0)) +
                         " channels, weights expect " + std::to_string(wv.dim(1)));
  if (wv.dim(2) != wv.dim(3)) throw DimensionError("conv2d expects square kernels");
  kernels::Conv2dDims d{xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(0), wv.dim(2), stride, pad};
  if (d.out_h() <= 0 || d.out_w() <= 0) throw DimensionError("conv2d output would be empty");
  if (b.defined() && b.value().numel() != d.c_out) throw DimensionError("conv2d bias size mismatch");
  Tensor out({d.c_out, d.out_h(), d.out_w()});
  kernels::parallel::conv2d_forward(d, xv.data(), wv.data(), b.defined() ? b.value().data() : std::span<const double>{},
                                    out.data());
  return make_result(std::move(out), {x, w, b}, [x, w, b, d](Node& self) {
    if (needs(x)) kernels::parallel::conv2d_backward_input(d, self.grad.data(), w.value().data(),
                                                           x.node()->grad_buffer().data());
    if (needs(w) || needs(b)) {
      Tensor dw(w.shape(), 0.0);
      Tensor db({d.c_out}, 0.0);
      kernels::parallel::conv2d_backward_weight(d, self.grad.data(), x.value().data(), dw.data(), db.data());
      if (needs(w)) accumulate(*w.node(), dw);
      if (needs(b)) accumulate(*b.node(), db.reshaped(b.shape()));
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.ndim() != 2 || wv.dim(1) != xv.numel())
    throw DimensionError("linear: weight " + shape_str(wv.shape()) + " incompatible with input " +
                         shape_str(xv.shape()));
  const int64_t m = wv.dim(0), n = wv.dim(1);
  if (b.defined() && b.value().numel() != m) throw DimensionError("linear bias size mismatch");
  Tensor out({m});
  for (int64_t i = 0; i < m; ++i) {
    double acc = b.defined() ? b.value()[i] : 0.0;
    for (int64_t j = 0; j < n; ++j) acc += wv[i * n + j] * xv[j];
    out[i] = acc;
  }
  return make_result(std::move(out), {x, w, b}, [x, w, b, m, n](Node& self) {
    const Tensor& g = self.grad;
    if (needs(x)) {
      Tensor& gx = x.node()->grad_buffer();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) gx[j] += w.value()[i * n + j] * g[i];
    }
    if (needs(w)) {
      Tensor& gw = w.node()->grad_buffer();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) gw[i * n + j] += g[i] * x.value()[j];
    }
    if (needs(b)) {
      Tensor& gb = b.node()->grad_buffer();
      for (int64_t i = 0; i < m; ++i) gb[i] += g[i];
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0))
    throw DimensionError("matmul shape mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  const int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  kernels::parallel::matmul(m, k, n, av.data(), bv.data(), out.data());
  return make_result(std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
    if (needs(a)) {
      Tensor bt = transpose2d(b.value());
      Tensor ga({m, k});
      kernels::parallel::matmul(m, n, k, self.grad.data(), bt.data(), ga.data());
      accumulate(*a.node(), ga);
    }
    if (needs(b)) {
      Tensor at = transpose2d(a.value());
      Tensor gb({k, n});
      kernels::parallel::matmul(k, m, n, at.data(), self.grad.data(), gb.data());
      accumulate(*b.node(), gb);
    }
  });
}

Var transpose(const Var& a) {
  if (a.value().ndim() != 2) throw DimensionError("transpose expects a matrix");
  return make_result(transpose2d(a.value()), {a},
                     [a](Node& self) { accumulate(*a.node(), transpose2d(self.grad)); });
}

Var softmax(const Var& x, int axis) {
  const Tensor& xv = x.value();
  axis = normalize_axis(axis, xv.ndim());
  int64_t outer = 0, n = 0, inner = 0;
  axis_split(xv.shape(), axis, outer, n, inner);
  Tensor out(xv.shape());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * n * inner + in;
      double mx = xv[base];
      for (int64_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (int64_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  Tensor y = out;
  return make_result(std::move(out), {x}, [x, y, outer, n, inner](Node& self) {
    Tensor& gx = x.node()->grad_buffer();
    const Tensor& g = self.grad;
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * n * inner + in;
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (int64_t j = 0; j < n; ++j) {
          const int64_t idx = base + j * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw UsageError("concat of nothing");
  const Shape& s0 = parts.front().shape();
  axis = normalize_axis(axis, static_cast<int>(s0.size()));
  Shape out_shape = s0;
  out_shape[static_cast<size_t>(axis)] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw DimensionError("concat rank mismatch");
    for (size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != s0[i])
        throw DimensionError("concat shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
    }
    out_shape[static_cast<size_t>(axis)] += s[static_cast<size_t>(axis)];
  }
  int64_t outer = 0, total = 0, inner = 0;
  Tensor out(out_shape);
  axis_split(out_shape, axis, outer, total, inner);
  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const int64_t n = p.shape()[static_cast<size_t>(axis)];
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(p.value().ptr() + o * n * inner, n * inner, out.ptr() + (o * total + off) * inner);
    off += n;
  }
  return make_result(std::move(out), parts, [parts, offsets, axis, outer, total, inner](Node& self) {
    for (size_t k = 0; k < parts.size(); ++k) {
      if (!needs(parts[k])) continue;
      const int64_t n = parts[k].shape()[static_cast<size_t>(axis)];
      Tensor& gp = parts[k].node()->grad_buffer();
      for (int64_t o = 0; o < outer; ++o) {
        const double* src = self.grad.ptr() + (o * total + offsets[k]) * inner;
        double* dst = gp.ptr() + o * n * inner;
        for (int64_t i = 0; i < n * inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_result(std::move(out), {x},
                     [x](Node& self) { accumulate(*x.node(), self.grad.reshaped(x.shape())); });
}

Var broadcast_add(const Var& x, const Var& e) {
  const Tensor& xv = x.value();
  const int64_t channels = xv.dim(0);
  if (e.value().numel() != channels)
    throw DimensionError("broadcast_add: " + std::to_string(e.value().numel()) + " values for " +
                         std::to_string(channels) + " channels");
  const int64_t per = xv.numel() / channels;
  Tensor out = xv;
  for (int64_t c = 0; c < channels; ++c)
    for (int64_t i = 0; i < per; ++i) out[c * per + i] += e.value()[c];
  return make_result(std::move(out), {x, e}, [x, e, channels, per](Node& self) {
    if (needs(x)) accumulate(*x.node(), self.grad);
    if (needs(e)) {
      Tensor& ge = e.node()->grad_buffer();
      for (int64_t c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int64_t i = 0; i < per; ++i) acc += self.grad[c * per + i];
        ge[c] += acc;
      }
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 3) throw DimensionError("upsample expects [C,H,W]");
  const int64_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int64_t k = 0; k < c; ++k)
    for (int64_t i = 0; i < 2 * h; ++i)
      for (int64_t j = 0; j < 2 * w; ++j) out.at(k, i, j) = xv.at(k, i / 2, j / 2);
  return make_result(std::move(out), {x}, [x, c, h, w](Node& self) {
    Tensor& gx = x.node()->grad_buffer();
    for (int64_t k = 0; k < c; ++k)
      for (int64_t i = 0; i < 2 * h; ++i)
        for (int64_t j = 0; j < 2 * w; ++j) gx.at(k, i / 2, j / 2) += self.grad.at(k, i, j);
  });
}

Var sum(const Var& x) {
  return make_result(Tensor::scalar(pcdm::sum(x.value())), {x}, [x](Node& self) {
    Tensor& gx = x.node()->grad_buffer();
    const double g = self.grad[0];
    for (double& v : gx.data()) v += g;
  });
}

Var squared_error(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "squared_error");
  Tensor diff = a.value() - b.value();
  const double loss = squared_norm(diff);
  return make_result(Tensor::scalar(loss), {a, b}, [a, b, diff](Node& self) {
    const double g = 2.0 * self.grad[0];
    if (needs(a)) accumulate(*a.node(), g * diff);
    if (needs(b)) accumulate(*b.node(), -g * diff);
  });
}

}  // namespace ops

}  // namespace pcdm
