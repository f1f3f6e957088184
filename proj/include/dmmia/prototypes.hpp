#ifndef DMMIA_PROTOTYPES_HPP
#define DMMIA_PROTOTYPES_HPP

#include <cstdint>
#include <vector>

#include "dmmia/checkpoint.hpp"
#include "dmmia/tensor.hpp"

namespace dmmia {

// Identity-memory bank: n_w trainable prototype vectors in feature space.
// The first `rho` rows form the positive subset; the loss rewards feature
// vectors whose inner-product mass concentrates on that subset.
struct ImrBank {
  Tensor w;  // (n_w x n_d), requires_grad
  Index n_w = 0, n_d = 0, rho = 0;

  // Rows are drawn N(0, 1/sqrt(n_d)); 1 <= rho < n_w.
  ImrBank(Index n_w, Index n_d, Index rho, std::uint64_t seed);

  Checkpoint to_checkpoint() const;
  static ImrBank from_checkpoint(const Checkpoint& ck);

 private:
  ImrBank() = default;
};

// Mean over the batch of -log( sum_{i<rho} exp(f.w_i) / sum_{j<n_w} exp(f.w_j) ),
// evaluated as logsumexp(all) - logsumexp(positive) per row. Gradients flow
// into both the features and the bank.
Tensor imr_loss(const ImrBank& bank, const Tensor& features);

// Per-row positive-subset probability (value only).
Vec p_imr(const ImrBank& bank, const Mat& features);

// Identity-disambiguation bank: one running prototype per class, held outside
// the graph and updated by exponential blending between optimizer steps.
struct IdrBank {
  Mat m;                      // (k x n_d)
  std::vector<bool> written;  // first-write flags per class
  double r = 0.7;             // retention factor
  Index n_d = 0;

  IdrBank(Index k, Index n_d, double r);

  Index k() const { return m.rows(); }

  Checkpoint to_checkpoint() const;
  static IdrBank from_checkpoint(const Checkpoint& ck);

 private:
  IdrBank() = default;
};

// Cross-entropy of softmax(f M^T) against `labels`; M enters as a constant,
// so gradients flow into the features only.
Tensor idr_loss(const IdrBank& bank, const Tensor& features,
                const std::vector<int>& labels);

// Row-wise class probabilities softmax(f M^T) (value only).
Mat p_idr(const IdrBank& bank, const Mat& features);

// Blends per-class means of `features` (grouped by `predicted`) into the bank:
// a class already written gets r * old + (1-r) * batch mean; a first write
// assigns the batch mean directly. Classes absent from `predicted` are
// untouched.
void memory_update(IdrBank& bank, const Mat& features,
                   const std::vector<int>& predicted);

}  // namespace dmmia

#endif
