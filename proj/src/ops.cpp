#include "dmmia/ops.hpp"

#include <cmath>
#include <string>

namespace dmmia {

namespace {

ConstMatMap as_mat(const Arr& a, Index rows, Index cols) {
  return ConstMatMap(a.data(), rows, cols);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": incompatible shapes " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                     shape_str(t.shape()));
  }
}

void require_rank12(const char* op, const Tensor& t) {
  if (t.rank() != 1 && t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-1 or rank-2 tensor, got " +
                     shape_str(t.shape()));
  }
}

bool wants(const NodePtr& p) { return p->requires_grad; }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  return make_op("add", a.shape(), a.value() + b.value(), {a, b},
                 [](TensorNode& self) {
                   if (wants(self.parents[0])) self.parents[0]->accumulate(self.grad);
                   if (wants(self.parents[1])) self.parents[1]->accumulate(self.grad);
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  return make_op("sub", a.shape(), a.value() - b.value(), {a, b},
                 [](TensorNode& self) {
                   if (wants(self.parents[0])) self.parents[0]->accumulate(self.grad);
                   if (wants(self.parents[1])) self.parents[1]->accumulate(-self.grad);
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  return make_op("mul", a.shape(), a.value() * b.value(), {a, b},
                 [](TensorNode& self) {
                   if (wants(self.parents[0]))
                     self.parents[0]->accumulate(self.grad * self.parents[1]->value);
                   if (wants(self.parents[1]))
                     self.parents[1]->accumulate(self.grad * self.parents[0]->value);
                 });
}

Tensor scale(const Tensor& a, double c) {
  check_finite("scale", Arr::Constant(1, c));
  return make_op("scale", a.shape(), c * a.value(), {a},
                 [c](TensorNode& self) {
                   if (wants(self.parents[0])) self.parents[0]->accumulate(c * self.grad);
                 });
}

Tensor add_scalar(const Tensor& a, double c) {
  check_finite("add_scalar", Arr::Constant(1, c));
  return make_op("add_scalar", a.shape(), a.value() + c, {a},
                 [](TensorNode& self) {
                   if (wants(self.parents[0])) self.parents[0]->accumulate(self.grad);
                 });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const Index n = a.rows(), k = a.cols(), m = b.cols();
  Mat y = as_mat(a.value(), n, k) * as_mat(b.value(), k, m);
  Arr out = Eigen::Map<const Arr>(y.data(), y.size());
  return make_op("matmul", {n, m}, std::move(out), {a, b},
                 [n, k, m](TensorNode& self) {
                   ConstMatMap g(self.grad.data(), n, m);
                   ConstMatMap av(self.parents[0]->value.data(), n, k);
                   ConstMatMap bv(self.parents[1]->value.data(), k, m);
                   if (wants(self.parents[0])) {
                     Mat da = g * bv.transpose();
                     self.parents[0]->accumulate(Eigen::Map<const Arr>(da.data(), da.size()));
                   }
                   if (wants(self.parents[1])) {
                     Mat db = av.transpose() * g;
                     self.parents[1]->accumulate(Eigen::Map<const Arr>(db.data(), db.size()));
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  const Index n = a.rows(), m = a.cols();
  Mat y = as_mat(a.value(), n, m).transpose();
  Arr out = Eigen::Map<const Arr>(y.data(), y.size());
  return make_op("transpose", {m, n}, std::move(out), {a},
                 [n, m](TensorNode& self) {
                   if (!wants(self.parents[0])) return;
                   ConstMatMap g(self.grad.data(), m, n);
                   Mat da = g.transpose();
                   self.parents[0]->accumulate(Eigen::Map<const Arr>(da.data(), da.size()));
                 });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank2("affine", x);
  require_rank2("affine", w);
  if (b.rank() != 1) {
    throw ShapeError("affine: bias must be rank-1, got " + shape_str(b.shape()));
  }
  if (x.cols() != w.cols() || w.rows() != b.size()) {
    throw ShapeError("affine: incompatible shapes " + shape_str(x.shape()) + " vs " +
                     shape_str(w.shape()) + " vs " + shape_str(b.shape()));
  }
  const Index n = x.rows(), in = x.cols(), out = w.rows();
  Mat y = as_mat(x.value(), n, in) * as_mat(w.value(), out, in).transpose();
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), out);
  Arr ov = Eigen::Map<const Arr>(y.data(), y.size());
  return make_op("affine", {n, out}, std::move(ov), {x, w, b},
                 [n, in, out](TensorNode& self) {
                   ConstMatMap g(self.grad.data(), n, out);
                   ConstMatMap xv(self.parents[0]->value.data(), n, in);
                   ConstMatMap wv(self.parents[1]->value.data(), out, in);
                   if (wants(self.parents[0])) {
                     Mat dx = g * wv;
                     self.parents[0]->accumulate(Eigen::Map<const Arr>(dx.data(), dx.size()));
                   }
                   if (wants(self.parents[1])) {
                     Mat dw = g.transpose() * xv;
                     self.parents[1]->accumulate(Eigen::Map<const Arr>(dw.data(), dw.size()));
                   }
                   if (wants(self.parents[2])) {
                     Vec db = g.colwise().sum().transpose();
                     self.parents[2]->accumulate(Eigen::Map<const Arr>(db.data(), db.size()));
                   }
                 });
}

Tensor relu(const Tensor& x) {
  return make_op("relu", x.shape(), x.value().max(0.0), {x},
                 [](TensorNode& self) {
                   if (!wants(self.parents[0])) return;
                   const Arr& xv = self.parents[0]->value;
                   self.parents[0]->accumulate(self.grad * (xv > 0.0).cast<double>());
                 });
}

Tensor tanh(const Tensor& x) {
  Arr y = x.value().tanh();
  return make_op("tanh", x.shape(), std::move(y), {x},
                 [](TensorNode& self) {
                   if (!wants(self.parents[0])) return;
                   self.parents[0]->accumulate(self.grad * (1.0 - self.value.square()));
                 });
}

Tensor sigmoid(const Tensor& x) {
  // Stable on both tails: 1/(1+e^-x) for x>=0, e^x/(1+e^x) otherwise.
  Arr y(x.size());
  const Arr& xv = x.value();
  for (Index i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    if (v >= 0.0) {
      y[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      y[i] = e / (1.0 + e);
    }
  }
  return make_op("sigmoid", x.shape(), std::move(y), {x},
                 [](TensorNode& self) {
                   if (!wants(self.parents[0])) return;
                   self.parents[0]->accumulate(self.grad * self.value * (1.0 - self.value));
                 });
}

Tensor softplus(const Tensor& x) {
  // log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
  const Arr& xv = x.value();
  Arr y(xv.size());
  for (Index i = 0; i < xv.size(); ++i) {
    y[i] = std::max(xv[i], 0.0) + std::log1p(std::exp(-std::abs(xv[i])));
  }
  return make_op("softplus", x.shape(), std::move(y), {x},
                 [](TensorNode& self) {
                   if (!wants(self.parents[0])) return;
                   const Arr& xv = self.parents[0]->value;
                   Arr s(xv.size());
                   for (Index i = 0; i < xv.size(); ++i) {
                     s[i] = xv[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-xv[i]))
                                         : std::exp(xv[i]) / (1.0 + std::exp(xv[i]));
                   }
                   self.parents[0]->accumulate(self.grad * s);
                 });
}

namespace {

// Max-shifted row-wise logsumexp of an (n x m) view; also returns the result
// through `out` (size n).
void lse_rows(const Arr& x, Index n, Index m, Arr& out) {
  out.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double* row = x.data() + i * m;
    double mx = row[0];
    for (Index j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (Index j = 0; j < m; ++j) s += std::exp(row[j] - mx);
    out[i] = mx + std::log(s);
  }
}

}  // namespace

Tensor logsumexp(const Tensor& x) {
  require_rank12("logsumexp", x);
  const Index n = x.rows(), m = x.cols();
  if (m == 0) throw ShapeError("logsumexp: empty rows in " + shape_str(x.shape()));
  Arr y;
  lse_rows(x.value(), n, m, y);
  Shape out_shape = {n};
  return make_op("logsumexp", std::move(out_shape), std::move(y), {x},
                 [n, m](TensorNode& self) {
                   if (!wants(self.parents[0])) return;
                   const Arr& xv = self.parents[0]->value;
                   Arr dx(n * m);
                   for (Index i = 0; i < n; ++i) {
                     for (Index j = 0; j < m; ++j) {
                       dx[i * m + j] =
                           self.grad[i] * std::exp(xv[i * m + j] - self.value[i]);
                     }
                   }
                   self.parents[0]->accumulate(dx);
                 });
}

Tensor softmax(const Tensor& x) {
  require_rank12("softmax", x);
  const Index n = x.rows(), m = x.cols();
  if (m == 0) throw ShapeError("softmax: empty rows in " + shape_str(x.shape()));
  Arr lse;
  lse_rows(x.value(), n, m, lse);
  Arr y(n * m);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      y[i * m + j] = std::exp(x.value()[i * m + j] - lse[i]);
    }
  }
  return make_op("softmax", x.shape(), std::move(y), {x},
                 [n, m](TensorNode& self) {
                   if (!wants(self.parents[0])) return;
                   Arr dx(n * m);
                   for (Index i = 0; i < n; ++i) {
                     const double* s = self.value.data() + i * m;
                     const double* g = self.grad.data() + i * m;
                     double dot = 0.0;
                     for (Index j = 0; j < m; ++j) dot += g[j] * s[j];
                     for (Index j = 0; j < m; ++j) dx[i * m + j] = (g[j] - dot) * s[j];
                   }
                   self.parents[0]->accumulate(dx);
                 });
}

Tensor gather(const Tensor& x, const std::vector<int>& idx) {
  require_rank2("gather", x);
  const Index n = x.rows(), m = x.cols();
  if (static_cast<Index>(idx.size()) != n) {
    throw ShapeError("gather: " + std::to_string(idx.size()) + " indices for " +
                     std::to_string(n) + " rows of " + shape_str(x.shape()));
  }
  Arr y(n);
  for (Index i = 0; i < n; ++i) {
    const int j = idx[static_cast<std::size_t>(i)];
    if (j < 0 || j >= m) {
      throw ContractError("gather: index " + std::to_string(j) + " out of range [0," +
                          std::to_string(m) + ") at row " + std::to_string(i));
    }
    y[i] = x.value()[i * m + j];
  }
  Shape out_shape = {n};
  return make_op("gather", std::move(out_shape), std::move(y), {x},
                 [n, m, idx](TensorNode& self) {
                   if (!wants(self.parents[0])) return;
                   Arr dx = Arr::Zero(n * m);
                   for (Index i = 0; i < n; ++i) {
                     dx[i * m + idx[static_cast<std::size_t>(i)]] = self.grad[i];
                   }
                   self.parents[0]->accumulate(dx);
                 });
}

Tensor sum(const Tensor& x) {
  return make_op("sum", {1}, Arr::Constant(1, x.value().sum()), {x},
                 [](TensorNode& self) {
                   if (!wants(self.parents[0])) return;
                   self.parents[0]->accumulate(
                       Arr::Constant(self.parents[0]->value.size(), self.grad[0]));
                 });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  return make_op("mean", {1}, Arr::Constant(1, x.value().mean()), {x},
                 [](TensorNode& self) {
                   if (!wants(self.parents[0])) return;
                   const Index n = self.parents[0]->value.size();
                   self.parents[0]->accumulate(
                       Arr::Constant(n, self.grad[0] / static_cast<double>(n)));
                 });
}

Tensor l2_norm(const Tensor& x) {
  const double norm = std::sqrt(x.value().square().sum());
  return make_op("l2_norm", {1}, Arr::Constant(1, norm), {x},
                 [](TensorNode& self) {
                   if (!wants(self.parents[0])) return;
                   const double norm = self.value[0];
                   if (norm == 0.0) return;  // subgradient 0 at the origin
                   self.parents[0]->accumulate(self.grad[0] / norm *
                                               self.parents[0]->value);
                 });
}

Tensor slice_cols(const Tensor& x, Index c0, Index c1) {
  require_rank2("slice_cols", x);
  const Index n = x.rows(), m = x.cols();
  if (c0 < 0 || c1 > m || c0 >= c1) {
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") invalid for " + shape_str(x.shape()));
  }
  const Index w = c1 - c0;
  Arr y(n * w);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < w; ++j) y[i * w + j] = x.value()[i * m + c0 + j];
  }
  return make_op("slice_cols", {n, w}, std::move(y), {x},
                 [n, m, c0, w](TensorNode& self) {
                   if (!wants(self.parents[0])) return;
                   Arr dx = Arr::Zero(n * m);
                   for (Index i = 0; i < n; ++i) {
                     for (Index j = 0; j < w; ++j) {
                       dx[i * m + c0 + j] = self.grad[i * w + j];
                     }
                   }
                   self.parents[0]->accumulate(dx);
                 });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  return make_op("reshape", shape, x.value(), {x},
                 [](TensorNode& self) {
                   if (wants(self.parents[0])) self.parents[0]->accumulate(self.grad);
                 });
}

Tensor row_normalize(const Tensor& x) {
  require_rank2("row_normalize", x);
  const Index n = x.rows(), m = x.cols();
  Arr norms(n);
  Arr y(n * m);
  for (Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Index j = 0; j < m; ++j) s += x.value()[i * m + j] * x.value()[i * m + j];
    const double norm = std::sqrt(s);
    if (norm == 0.0) {
      throw NumericalError("row_normalize: zero-norm row " + std::to_string(i));
    }
    norms[i] = norm;
    for (Index j = 0; j < m; ++j) y[i * m + j] = x.value()[i * m + j] / norm;
  }
  return make_op("row_normalize", x.shape(), std::move(y), {x},
                 [n, m, norms](TensorNode& self) {
                   if (!wants(self.parents[0])) return;
                   Arr dx(n * m);
                   for (Index i = 0; i < n; ++i) {
                     const double* yi = self.value.data() + i * m;
                     const double* gi = self.grad.data() + i * m;
                     double dot = 0.0;
                     for (Index j = 0; j < m; ++j) dot += gi[j] * yi[j];
                     for (Index j = 0; j < m; ++j) {
                       dx[i * m + j] = (gi[j] - dot * yi[j]) / norms[i];
                     }
                   }
                   self.parents[0]->accumulate(dx);
                 });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_rank2("cross_entropy", logits);
  if (static_cast<Index>(labels.size()) != logits.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(logits.rows()) + " rows");
  }
  return mean(sub(logsumexp(logits), gather(logits, labels)));
}

Tensor sample_latents(Rng& rng, Index n, Index dim) {
  if (n < 1 || dim < 1) {
    throw ContractError("sample_latents: n and dim must be >= 1, got n=" +
                        std::to_string(n) + " dim=" + std::to_string(dim));
  }
  Arr z(n * dim);
  for (Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return Tensor::from_array({n, dim}, std::move(z));
}

}  // namespace dmmia
