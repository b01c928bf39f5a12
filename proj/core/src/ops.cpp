#include "mocha/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mocha/errors.hpp"
#include "mocha/kernels.hpp"

namespace mocha::ag {

using detail::make_result;

namespace {

// Gradient buffer of parent i, or null when that parent is not trainable.
double* pgrad(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? p->ensure_grad().data() : nullptr;
}

const double* pval(const Node& self, std::size_t i) {
  return self.parents[i]->value.data();
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), [&] { return std::string(std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape())); });
}

void need_vector(const Tensor& x, const char* op) {
  require(x.dim() == 1, [&] { return std::string(std::string(op) + ": expected a 1-D tensor, got " +
                            shape_str(x.shape())); });
}

void need_matrix(const Tensor& x, const char* op) {
  require(x.dim() == 2, [&] { return std::string(std::string(op) + ": expected a 2-D tensor, got " +
                            shape_str(x.shape())); });
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.at(i));
  return make_result(x.shape(), std::move(out), {x.node()},
                     [deriv](Node& self) {
                       double* gx = pgrad(self, 0);
                       const double* xv = pval(self, 0);
                       for (std::size_t i = 0; i < self.value.size(); ++i)
                         gx[i] += self.grad[i] * deriv(xv[i], self.value[i]);
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_result(a.shape(), std::move(out), {a.node(), b.node()},
                     [](Node& self) {
                       for (std::size_t k = 0; k < 2; ++k)
                         if (double* g = pgrad(self, k))
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             g[i] += self.grad[i];
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_result(a.shape(), std::move(out), {a.node(), b.node()},
                     [](Node& self) {
                       if (double* g = pgrad(self, 0))
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[i] += self.grad[i];
                       if (double* g = pgrad(self, 1))
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[i] -= self.grad[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_result(a.shape(), std::move(out), {a.node(), b.node()},
                     [](Node& self) {
                       const double* av = pval(self, 0);
                       const double* bv = pval(self, 1);
                       if (double* g = pgrad(self, 0))
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[i] += self.grad[i] * bv[i];
                       if (double* g = pgrad(self, 1))
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[i] += self.grad[i] * av[i];
                     });
}

Tensor div(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "div");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) / b.at(i);
  return make_result(a.shape(), std::move(out), {a.node(), b.node()},
                     [](Node& self) {
                       const double* bv = pval(self, 1);
                       if (double* g = pgrad(self, 0))
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[i] += self.grad[i] / bv[i];
                       if (double* g = pgrad(self, 1))
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[i] -= self.grad[i] * self.value[i] / bv[i];
                     });
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * c;
  return make_result(x.shape(), std::move(out), {x.node()}, [c](Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * c;
  });
}

Tensor add_const(const Tensor& x, double c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) + c;
  return make_result(x.shape(), std::move(out), {x.node()}, [](Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
  require(s.size() == 1, "mul_scalar: s must have one element");
  const double c = s.item();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * c;
  return make_result(x.shape(), std::move(out), {x.node(), s.node()},
                     [](Node& self) {
                       const double* xv = pval(self, 0);
                       const double c = pval(self, 1)[0];
                       if (double* g = pgrad(self, 0))
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[i] += self.grad[i] * c;
                       if (double* g = pgrad(self, 1))
                         g[0] += kernels::dot(self.grad.data(), xv,
                                              self.grad.size());
                     });
}

Tensor add_scalar(const Tensor& x, const Tensor& s) {
  require(s.size() == 1, "add_scalar: s must have one element");
  const double c = s.item();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) + c;
  return make_result(x.shape(), std::move(out), {x.node(), s.node()},
                     [](Node& self) {
                       if (double* g = pgrad(self, 0))
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[i] += self.grad[i];
                       if (double* g = pgrad(self, 1))
                         for (double v : self.grad) g[0] += v;
                     });
}

Tensor mask(const Tensor& x, std::span<const double> m) {
  require(m.size() == x.size(), "mask: length mismatch");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * m[i];
  std::vector<double> mv(m.begin(), m.end());
  return make_result(x.shape(), std::move(out), {x.node()},
                     [mv = std::move(mv)](Node& self) {
                       double* g = pgrad(self, 0);
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         g[i] += self.grad[i] * mv[i];
                     });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return kernels::sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {x.node()}, [](Node& self) {
    double* g = pgrad(self, 0);
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require(x.size() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor dot(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "dot");
  double s = kernels::dot(a.data().data(), b.data().data(), a.size());
  return make_result({1}, {s}, {a.node(), b.node()}, [](Node& self) {
    const double* av = pval(self, 0);
    const double* bv = pval(self, 1);
    const std::size_t n = self.parents[0]->value.size();
    const double g0 = self.grad[0];
    if (double* g = pgrad(self, 0))
      for (std::size_t i = 0; i < n; ++i) g[i] += g0 * bv[i];
    if (double* g = pgrad(self, 1))
      for (std::size_t i = 0; i < n; ++i) g[i] += g0 * av[i];
  });
}

Tensor l2_norm(const Tensor& x) {
  double s = std::sqrt(kernels::dot(x.data().data(), x.data().data(), x.size()));
  return make_result({1}, {s}, {x.node()}, [](Node& self) {
    const double* xv = pval(self, 0);
    const double nrm = self.value[0];
    if (nrm == 0.0) return;
    double* g = pgrad(self, 0);
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0] * xv[i] / nrm;
  });
}

Tensor normalize(const Tensor& x) {
  const double nrm =
      std::sqrt(kernels::dot(x.data().data(), x.data().data(), x.size()));
  require(nrm > 0.0, "normalize: zero-norm vector");
  const double inv = 1.0 / nrm;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * inv;
  return make_result(x.shape(), std::move(out), {x.node()}, [inv](Node& self) {
    double* g = pgrad(self, 0);
    const std::size_t n = self.value.size();
    const double s = kernels::dot(self.grad.data(), self.value.data(), n);
    for (std::size_t i = 0; i < n; ++i)
      g[i] += (self.grad[i] - s * self.value[i]) * inv;
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  std::vector<double> out;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    need_vector(p, "concat");
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(p.node());
  }
  Shape s{out.size()};
  return make_result(std::move(s), std::move(out), std::move(parents),
                     [](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         const std::size_t n = self.parents[k]->value.size();
                         if (double* g = pgrad(self, k))
                           for (std::size_t i = 0; i < n; ++i)
                             g[i] += self.grad[off + i];
                         off += n;
                       }
                     });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  require(!rows.empty(), "stack_rows: no rows");
  const std::size_t n = rows[0].size();
  std::vector<double> out;
  out.reserve(rows.size() * n);
  std::vector<NodePtr> parents;
  for (const auto& r : rows) {
    need_vector(r, "stack_rows");
    require(r.size() == n, "stack_rows: ragged rows");
    out.insert(out.end(), r.data().begin(), r.data().end());
    parents.push_back(r.node());
  }
  return make_result({rows.size(), n}, std::move(out), std::move(parents),
                     [n](Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k)
                         if (double* g = pgrad(self, k))
                           for (std::size_t i = 0; i < n; ++i)
                             g[i] += self.grad[k * n + i];
                     });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  need_matrix(a, "concat_cols");
  need_matrix(b, "concat_cols");
  require(a.rows() == b.rows(), "concat_cols: row count mismatch");
  const std::size_t t = a.rows(), na = a.cols(), nb = b.cols(), n = na + nb;
  std::vector<double> out(t * n);
  for (std::size_t r = 0; r < t; ++r) {
    std::copy_n(a.data().data() + r * na, na, out.data() + r * n);
    std::copy_n(b.data().data() + r * nb, nb, out.data() + r * n + na);
  }
  return make_result({t, n}, std::move(out), {a.node(), b.node()},
                     [t, na, nb, n](Node& self) {
                       if (double* g = pgrad(self, 0))
                         for (std::size_t r = 0; r < t; ++r)
                           for (std::size_t i = 0; i < na; ++i)
                             g[r * na + i] += self.grad[r * n + i];
                       if (double* g = pgrad(self, 1))
                         for (std::size_t r = 0; r < t; ++r)
                           for (std::size_t i = 0; i < nb; ++i)
                             g[r * nb + i] += self.grad[r * n + na + i];
                     });
}

Tensor row(const Tensor& m, std::size_t r) {
  need_matrix(m, "row");
  require(r < m.rows(), [&] { return std::string("row: index " + std::to_string(r) + " out of range " +
                            shape_str(m.shape())); });
  const std::size_t n = m.cols();
  std::vector<double> out(m.data().begin() + r * n, m.data().begin() + (r + 1) * n);
  return make_result({n}, std::move(out), {m.node()}, [r, n](Node& self) {
    double* g = pgrad(self, 0) + r * n;
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
  });
}

Tensor slice(const Tensor& x, std::size_t start, std::size_t len) {
  need_vector(x, "slice");
  require(start + len <= x.size(), "slice: range out of bounds");
  std::vector<double> out(x.data().begin() + start,
                          x.data().begin() + start + len);
  return make_result({len}, std::move(out), {x.node()}, [start](Node& self) {
    double* g = pgrad(self, 0) + start;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor matvec(const Tensor& w, const Tensor& x) {
  need_matrix(w, "matvec");
  need_vector(x, "matvec");
  const std::size_t m = w.rows(), n = w.cols();
  require(x.size() == n, [&] { return std::string("matvec: " + shape_str(w.shape()) + " . " +
                             shape_str(x.shape())); });
  std::vector<double> out(m);
  kernels::affine(w.data().data(), nullptr, x.data().data(), out.data(), m, n);
  return make_result({m}, std::move(out), {w.node(), x.node()},
                     [m, n](Node& self) {
                       const double* wv = pval(self, 0);
                       const double* xv = pval(self, 1);
                       if (double* g = pgrad(self, 0))
                         for (std::size_t o = 0; o < m; ++o) {
                           const double go = self.grad[o];
                           for (std::size_t i = 0; i < n; ++i)
                             g[o * n + i] += go * xv[i];
                         }
                       if (double* g = pgrad(self, 1))
                         for (std::size_t o = 0; o < m; ++o) {
                           const double go = self.grad[o];
                           for (std::size_t i = 0; i < n; ++i)
                             g[i] += go * wv[o * n + i];
                         }
                     });
}

Tensor vecmat(const Tensor& x, const Tensor& mtx) {
  need_vector(x, "vecmat");
  need_matrix(mtx, "vecmat");
  const std::size_t m = mtx.rows(), n = mtx.cols();
  require(x.size() == m, [&] { return std::string("vecmat: " + shape_str(x.shape()) + " . " +
                             shape_str(mtx.shape())); });
  std::vector<double> out(n, 0.0);
  const double* mv = mtx.data().data();
  for (std::size_t r = 0; r < m; ++r) {
    const double xr = x.at(r);
    if (xr == 0.0) continue;
    for (std::size_t c = 0; c < n; ++c) out[c] += xr * mv[r * n + c];
  }
  return make_result({n}, std::move(out), {x.node(), mtx.node()},
                     [m, n](Node& self) {
                       const double* xv = pval(self, 0);
                       const double* mv = pval(self, 1);
                       if (double* g = pgrad(self, 0))
                         for (std::size_t r = 0; r < m; ++r)
                           g[r] += kernels::dot(mv + r * n, self.grad.data(), n);
                       if (double* g = pgrad(self, 1))
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c)
                             g[r * n + c] += xv[r] * self.grad[c];
                     });
}

namespace {

Tensor linear_impl(const Tensor& x, const Tensor& w, const Tensor* b) {
  need_matrix(x, "linear");
  need_matrix(w, "linear");
  const std::size_t t = x.rows(), n = x.cols(), m = w.rows();
  require(w.cols() == n, [&] { return std::string("linear: " + shape_str(x.shape()) + " vs weight " +
                             shape_str(w.shape())); });
  if (b) require(b->size() == m, "linear: bias length mismatch");
  std::vector<double> out(t * m);
  for (std::size_t r = 0; r < t; ++r)
    kernels::affine(w.data().data(), b ? b->data().data() : nullptr,
                    x.data().data() + r * n, out.data() + r * m, m, n);
  std::vector<NodePtr> parents{x.node(), w.node()};
  if (b) parents.push_back(b->node());
  return make_result({t, m}, std::move(out), std::move(parents),
                     [t, n, m](Node& self) {
                       const double* xv = pval(self, 0);
                       const double* wv = pval(self, 1);
                       const double* go = self.grad.data();
                       if (double* g = pgrad(self, 0))
                         for (std::size_t r = 0; r < t; ++r)
                           for (std::size_t o = 0; o < m; ++o) {
                             const double gv = go[r * m + o];
                             if (gv == 0.0) continue;
                             for (std::size_t i = 0; i < n; ++i)
                               g[r * n + i] += gv * wv[o * n + i];
                           }
                       if (double* g = pgrad(self, 1))
                         for (std::size_t r = 0; r < t; ++r)
                           for (std::size_t o = 0; o < m; ++o) {
                             const double gv = go[r * m + o];
                             if (gv == 0.0) continue;
                             for (std::size_t i = 0; i < n; ++i)
                               g[o * n + i] += gv * xv[r * n + i];
                           }
                       if (self.parents.size() == 3)
                         if (double* g = pgrad(self, 2))
                           for (std::size_t r = 0; r < t; ++r)
                             for (std::size_t o = 0; o < m; ++o)
                               g[o] += go[r * m + o];
                     });
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return linear_impl(x, w, &b);
}

Tensor linear(const Tensor& x, const Tensor& w) { return linear_impl(x, w, nullptr); }

Tensor linear_vec(const Tensor& x, const Tensor& w, const Tensor& b) {
  need_vector(x, "linear_vec");
  need_matrix(w, "linear_vec");
  const std::size_t m = w.rows(), n = w.cols();
  require(x.size() == n && b.size() == m, [&] { return std::string("linear_vec: " + shape_str(w.shape()) + " . " + shape_str(x.shape())); });
  std::vector<double> out(m);
  kernels::affine(w.data().data(), b.data().data(), x.data().data(), out.data(), m, n);
  return make_result({m}, std::move(out), {x.node(), w.node(), b.node()},
                     [m, n](Node& self) {
                       const double* xv = pval(self, 0);
                       const double* wv = pval(self, 1);
                       if (double* g = pgrad(self, 0))
                         for (std::size_t o = 0; o < m; ++o) {
                           const double go = self.grad[o];
                           for (std::size_t i = 0; i < n; ++i)
                             g[i] += go * wv[o * n + i];
                         }
                       if (double* g = pgrad(self, 1))
                         for (std::size_t o = 0; o < m; ++o) {
                           const double go = self.grad[o];
                           for (std::size_t i = 0; i < n; ++i)
                             g[o * n + i] += go * xv[i];
                         }
                       if (double* g = pgrad(self, 2))
                         for (std::size_t o = 0; o < m; ++o) g[o] += self.grad[o];
                     });
}

Tensor add_row(const Tensor& mtx, const Tensor& v) {
  need_matrix(mtx, "add_row");
  need_vector(v, "add_row");
  const std::size_t t = mtx.rows(), n = mtx.cols();
  require(v.size() == n, "add_row: width mismatch");
  std::vector<double> out(t * n);
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t c = 0; c < n; ++c)
      out[r * n + c] = mtx.at(r * n + c) + v.at(c);
  return make_result(mtx.shape(), std::move(out), {mtx.node(), v.node()},
                     [t, n](Node& self) {
                       if (double* g = pgrad(self, 0))
                         for (std::size_t i = 0; i < t * n; ++i) g[i] += self.grad[i];
                       if (double* g = pgrad(self, 1))
                         for (std::size_t r = 0; r < t; ++r)
                           for (std::size_t c = 0; c < n; ++c)
                             g[c] += self.grad[r * n + c];
                     });
}

Tensor softmax(const Tensor& x) {
  need_vector(x, "softmax");
  const std::size_t n = x.size();
  std::vector<double> out(n);
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : x.data()) mx = std::max(mx, v);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += (out[i] = std::exp(x.at(i) - mx));
  for (auto& v : out) v /= z;
  return make_result({n}, std::move(out), {x.node()}, [n](Node& self) {
    double* g = pgrad(self, 0);
    const double s = kernels::dot(self.grad.data(), self.value.data(), n);
    for (std::size_t i = 0; i < n; ++i)
      g[i] += self.value[i] * (self.grad[i] - s);
  });
}

Tensor log_softmax(const Tensor& x) {
  require(x.dim() == 1 || x.dim() == 2, "log_softmax: expected 1-D or 2-D");
  const std::size_t t = x.rows(), n = x.cols();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < t; ++r) {
    const double* xr = x.data().data() + r * n;
    double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(xr[i] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = xr[i] - lz;
  }
  return make_result(x.shape(), std::move(out), {x.node()}, [t, n](Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t r = 0; r < t; ++r) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += self.grad[r * n + i];
      for (std::size_t i = 0; i < n; ++i)
        g[r * n + i] += self.grad[r * n + i] - std::exp(self.value[r * n + i]) * s;
    }
  });
}

Tensor cumsum(const Tensor& x) {
  need_vector(x, "cumsum");
  const std::size_t n = x.size();
  std::vector<double> out(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) out[i] = (acc += x.at(i));
  return make_result({n}, std::move(out), {x.node()}, [n](Node& self) {
    double* g = pgrad(self, 0);
    double acc = 0.0;
    for (std::size_t i = n; i-- > 0;) g[i] += (acc += self.grad[i]);
  });
}

Tensor cumprod_exclusive(const Tensor& x) {
  need_vector(x, "cumprod_exclusive");
  const std::size_t n = x.size();
  std::vector<double> out(n);
  double acc = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = acc;
    acc *= x.at(i);
  }
  return make_result({n}, std::move(out), {x.node()}, [n](Node& self) {
    // d out[j] / d x[m] = out[m] * prod_{m<l<j} x[l] for m < j, so
    // grad[m] = out[m] * S[m] with S[m] = g[m+1] + x[m+1] * S[m+1].
    double* g = pgrad(self, 0);
    const double* xv = pval(self, 0);
    double suffix = 0.0;
    for (std::size_t m = n; m-- > 0;) {
      if (m + 1 < n) suffix = self.grad[m + 1] + xv[m + 1] * suffix;
      g[m] += self.value[m] * suffix;
    }
  });
}

Tensor moving_sum(const Tensor& x, std::size_t w) {
  need_vector(x, "moving_sum");
  require(w >= 1, "moving_sum: window must be >= 1");
  const std::size_t n = x.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = j; k < std::min(n, j + w); ++k) out[j] += x.at(k);
  return make_result({n}, std::move(out), {x.node()}, [n, w](Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = (k + 1 >= w ? k + 1 - w : 0); j <= k; ++j)
        g[k] += self.grad[j];
  });
}

Tensor moving_sum_trailing(const Tensor& x, std::size_t w) {
  need_vector(x, "moving_sum_trailing");
  require(w >= 1, "moving_sum_trailing: window must be >= 1");
  const std::size_t n = x.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = (j + 1 >= w ? j + 1 - w : 0); k <= j; ++k) out[j] += x.at(k);
  return make_result({n}, std::move(out), {x.node()}, [n, w](Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = k; j < std::min(n, k + w); ++j) g[k] += self.grad[j];
  });
}

Tensor linear_scan(const Tensor& decay, const Tensor& input) {
  need_vector(decay, "linear_scan");
  same_shape(decay, input, "linear_scan");
  const std::size_t n = input.size();
  std::vector<double> out(n);
  double q = 0.0;
  for (std::size_t j = 0; j < n; ++j) out[j] = q = decay.at(j) * q + input.at(j);
  return make_result({n}, std::move(out), {decay.node(), input.node()},
                     [n](Node& self) {
                       const double* dv = pval(self, 0);
                       double* gd = pgrad(self, 0);
                       double* gi = pgrad(self, 1);
                       double adj = 0.0;
                       for (std::size_t j = n; j-- > 0;) {
                         adj = self.grad[j] + (j + 1 < n ? dv[j + 1] * adj : 0.0);
                         if (gi) gi[j] += adj;
                         if (gd && j > 0) gd[j] += adj * self.value[j - 1];
                       }
                     });
}

Tensor conv1d_same(const Tensor& x, const Tensor& w) {
  need_matrix(x, "conv1d_same");
  require(w.dim() == 3, "conv1d_same: kernel must be (k x dout x din)");
  const std::size_t t = x.rows(), din = x.cols();
  const std::size_t k = w.shape()[0], dout = w.shape()[1];
  require(w.shape()[2] == din, "conv1d_same: channel mismatch");
  require(k % 2 == 1, "conv1d_same: kernel width must be odd");
  std::vector<double> out(t * dout);
  for (std::size_t j = 0; j < t; ++j)
    kernels::conv1d_at(x.data().data(), t, din, w.data().data(), k, dout, j,
                       out.data() + j * dout);
  return make_result(
      {t, dout}, std::move(out), {x.node(), w.node()},
      [t, din, k, dout](Node& self) {
        const double* xv = pval(self, 0);
        const double* wv = pval(self, 1);
        double* gx = pgrad(self, 0);
        double* gw = pgrad(self, 1);
        const auto half = static_cast<std::ptrdiff_t>(k / 2);
        for (std::size_t j = 0; j < t; ++j) {
          const double* go = self.grad.data() + j * dout;
          for (std::size_t tap = 0; tap < k; ++tap) {
            std::ptrdiff_t src = static_cast<std::ptrdiff_t>(j + tap) - half;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
            const auto s = static_cast<std::size_t>(src);
            for (std::size_t o = 0; o < dout; ++o) {
              const double gv = go[o];
              if (gv == 0.0) continue;
              const std::size_t base = (tap * dout + o) * din;
              if (gw)
                for (std::size_t i = 0; i < din; ++i) gw[base + i] += gv * xv[s * din + i];
              if (gx)
                for (std::size_t i = 0; i < din; ++i) gx[s * din + i] += gv * wv[base + i];
            }
          }
        }
      });
}

Tensor gru_cell(const Tensor& gx, const Tensor& h, const Tensor& w_hh,
                const Tensor& b_hh) {
  need_vector(h, "gru_cell");
  const std::size_t hd = h.size();
  require(gx.size() == 3 * hd && b_hh.size() == 3 * hd && w_hh.dim() == 2 &&
              w_hh.rows() == 3 * hd && w_hh.cols() == hd, [&] { return std::string("gru_cell: dimension mismatch for hidden size " + std::to_string(hd)); });
  // Saved activations: [gh (3H) | r | z | n]
  auto saved = std::make_shared<std::vector<double>>(6 * hd);
  double* sv = saved->data();
  std::vector<double> out(hd);
  kernels::gru_cell(gx.data().data(), h.data().data(), w_hh.data().data(),
                    b_hh.data().data(), hd, sv, sv + 3 * hd, sv + 4 * hd,
                    sv + 5 * hd, out.data());
  return make_result(
      {hd}, std::move(out), {gx.node(), h.node(), w_hh.node(), b_hh.node()},
      [hd, saved](Node& self) {
        const double* gh = saved->data();
        const double* r = gh + 3 * hd;
        const double* z = gh + 4 * hd;
        const double* nn = gh + 5 * hd;
        const double* hv = pval(self, 1);
        const double* wv = pval(self, 2);
        // d(pre-activation) for r, z, n in gx space and gh space
        std::vector<double> dgx(3 * hd), dgh(3 * hd);
        std::vector<double> dh(hd);
        for (std::size_t k = 0; k < hd; ++k) {
          const double go = self.grad[k];
          const double dn = go * (1.0 - z[k]);
          const double dz = go * (hv[k] - nn[k]);
          dh[k] = go * z[k];
          const double dn_pre = dn * (1.0 - nn[k] * nn[k]);
          const double dr = dn_pre * gh[2 * hd + k];
          const double dr_pre = dr * r[k] * (1.0 - r[k]);
          const double dz_pre = dz * z[k] * (1.0 - z[k]);
          dgx[k] = dr_pre;
          dgx[hd + k] = dz_pre;
          dgx[2 * hd + k] = dn_pre;
          dgh[k] = dr_pre;
          dgh[hd + k] = dz_pre;
          dgh[2 * hd + k] = dn_pre * r[k];
        }
        if (double* g = pgrad(self, 0))
          for (std::size_t i = 0; i < 3 * hd; ++i) g[i] += dgx[i];
        if (double* g = pgrad(self, 1)) {
          for (std::size_t o = 0; o < 3 * hd; ++o) {
            const double gv = dgh[o];
            for (std::size_t i = 0; i < hd; ++i) dh[i] += gv * wv[o * hd + i];
          }
          for (std::size_t i = 0; i < hd; ++i) g[i] += dh[i];
        }
        if (double* g = pgrad(self, 2))
          for (std::size_t o = 0; o < 3 * hd; ++o) {
            const double gv = dgh[o];
            for (std::size_t i = 0; i < hd; ++i) g[o * hd + i] += gv * hv[i];
          }
        if (double* g = pgrad(self, 3))
          for (std::size_t o = 0; o < 3 * hd; ++o) g[o] += dgh[o];
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  need_vector(x, "layer_norm");
  const std::size_t n = x.size();
  require(gain.size() == n && bias.size() == n, "layer_norm: width mismatch");
  auto xhat = std::make_shared<std::vector<double>>(n);
  std::vector<double> out(n);
  const double inv = kernels::layer_norm(x.data().data(), gain.data().data(),
                                         bias.data().data(), n, eps,
                                         xhat->data(), out.data());
  return make_result({n}, std::move(out), {x.node(), gain.node(), bias.node()},
                     [n, inv, xhat](Node& self) {
                       const double* gv = pval(self, 1);
                       const double* xh = xhat->data();
                       if (double* g = pgrad(self, 1))
                         for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * xh[i];
                       if (double* g = pgrad(self, 2))
                         for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
                       if (double* g = pgrad(self, 0)) {
                         double s1 = 0.0, s2 = 0.0;
                         for (std::size_t i = 0; i < n; ++i) {
                           const double d = self.grad[i] * gv[i];
                           s1 += d;
                           s2 += d * xh[i];
                         }
                         const double fn = static_cast<double>(n);
                         for (std::size_t i = 0; i < n; ++i) {
                           const double d = self.grad[i] * gv[i];
                           g[i] += inv * (d - s1 / fn - xh[i] * s2 / fn);
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  if (rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<double> m(x.size());
  const double s = 1.0 / (1.0 - rate);
  for (auto& v : m) v = keep(rng) ? s : 0.0;
  return mask(x, m);
}

Tensor label_smoothed_ce(const Tensor& logits, std::span<const int> targets,
                         double eps, std::span<const double> weight) {
  require(eps >= 0.0 && eps < 1.0, "label_smoothed_ce: eps must be in [0, 1)");
  const std::size_t t = logits.rows(), k = logits.cols();
  require(k >= 2, "label_smoothed_ce: need at least two classes");
  require(targets.size() == t, "label_smoothed_ce: target count mismatch");
  require(weight.empty() || weight.size() == t, "label_smoothed_ce: mask length mismatch");
  std::vector<double> w(t, 1.0);
  if (!weight.empty()) w.assign(weight.begin(), weight.end());
  double active = 0.0;
  for (std::size_t r = 0; r < t; ++r) {
    if (w[r] <= 0.0) continue;
    active += 1.0;
    require(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < k, [&] { return std::string("label_smoothed_ce: target id " + std::to_string(targets[r]) +
                " out of range"); });
  }
  if (active == 0.0) return Tensor::scalar(0.0);

  const double off = eps / static_cast<double>(k - 1);
  auto q = std::make_shared<std::vector<double>>(t * k);  // target distribution
  auto prob = std::make_shared<std::vector<double>>(t * k);
  double loss = 0.0;
  for (std::size_t r = 0; r < t; ++r) {
    if (w[r] <= 0.0) continue;
    const double* xr = logits.data().data() + r * k;
    double mx = *std::max_element(xr, xr + k);
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) z += std::exp(xr[i] - mx);
    const double lz = mx + std::log(z);
    double row_loss = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double qi = static_cast<int>(i) == targets[r] ? 1.0 - eps : off;
      (*q)[r * k + i] = qi;
      (*prob)[r * k + i] = std::exp(xr[i] - lz);
      if (qi > 0.0) row_loss -= qi * (xr[i] - lz);
    }
    loss += row_loss;
  }
  loss /= active;
  return make_result({1}, {loss}, {logits.node()},
                     [t, k, q, prob, w = std::move(w), active](Node& self) {
                       double* g = pgrad(self, 0);
                       const double s = self.grad[0] / active;
                       for (std::size_t r = 0; r < t; ++r) {
                         if (w[r] <= 0.0) continue;
                         for (std::size_t i = 0; i < k; ++i)
                           g[r * k + i] += s * ((*prob)[r * k + i] - (*q)[r * k + i]);
                       }
                     });
}

}  // namespace mocha::ag
