#ifndef DMMIA_OPS_HPP
#define DMMIA_OPS_HPP

#include <vector>

#include "dmmia/rng.hpp"
#include "dmmia/tensor.hpp"

namespace dmmia {

// Differentiable op set. Every function records what backward needs; shapes
// are validated up front and mismatches throw ShapeError naming the op.

// Elementwise; both operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// y = c * a and y = a + c for a plain scalar c (c carries no gradient).
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

// Rank-2 only. matmul: (n x k) * (k x m) -> (n x m).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// x: (n x in), w: (out x in), b: (out) -> x * w^T + b broadcast per row.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// Elementwise nonlinearities.
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);

// Row-wise, max-shifted. Rank-1 input is treated as a single row:
// logsumexp (n x m) -> (n); softmax keeps the input shape.
Tensor logsumexp(const Tensor& x);
Tensor softmax(const Tensor& x);

// y_i = x[i, idx[i]]; x rank-2, idx.size() == x.rows(), idx[i] < x.cols().
Tensor gather(const Tensor& x, const std::vector<int>& idx);

// Full reductions to a {1}-shaped scalar.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor l2_norm(const Tensor& x);

// y = x[:, c0:c1) for rank-2 x.
Tensor slice_cols(const Tensor& x, Index c0, Index c1);

// Same data, new shape; element count must match.
Tensor reshape(const Tensor& x, const Shape& shape);

// Each row divided by its Euclidean norm; a zero row throws NumericalError.
Tensor row_normalize(const Tensor& x);

// Composite: mean_i [ logsumexp(logits_i) - logits_i[labels_i] ].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Sugar.
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

// n x dim standard-normal draws filled row-major from `rng`; n, dim >= 1.
Tensor sample_latents(Rng& rng, Index n, Index dim);

}  // namespace dmmia

#endif
