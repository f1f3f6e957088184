#include "dmmia/prototypes.hpp"

#include <cmath>
#include <string>

#include "dmmia/errors.hpp"
#include "dmmia/ops.hpp"
#include "dmmia/rng.hpp"

namespace dmmia {

ImrBank::ImrBank(Index n_w_, Index n_d_, Index rho_, std::uint64_t seed)
    : n_w(n_w_), n_d(n_d_), rho(rho_) {
  if (n_w < 1) throw ContractError("ImrBank: n_w must be >= 1");
  if (n_d < 1) throw ContractError("ImrBank: n_d must be >= 1");
  if (rho < 1 || rho >= n_w)
    throw ContractError("ImrBank: rho must satisfy 1 <= rho < n_w, got rho=" +
                        std::to_string(rho) + ", n_w=" + std::to_string(n_w));
  Rng rng(seed);
  Arr a(n_w * n_d);
  const double sd = 1.0 / std::sqrt(static_cast<double>(n_d));
  for (Index i = 0; i < a.size(); ++i) a[i] = rng.normal(0.0, sd);
  w = Tensor::from_array({n_w, n_d}, std::move(a), true);
}

Tensor imr_loss(const ImrBank& bank, const Tensor& features) {
  if (features.rank() != 2 || features.cols() != bank.n_d)
    throw ShapeError("imr_loss: features must be (n x " + std::to_string(bank.n_d) +
                     "), got " + shape_str(features.shape()));
  Tensor scores = matmul(features, transpose(bank.w));  // (n x n_w)
  Tensor lse_all = logsumexp(scores);
  Tensor lse_pos = logsumexp(slice_cols(scores, 0, bank.rho));
  return mean(sub(lse_all, lse_pos));
}

Vec p_imr(const ImrBank& bank, const Mat& features) {
  Tensor loss_free = imr_loss(bank, Tensor::from_matrix(features));
  (void)loss_free;  // shape validation only
  // Recompute the per-row value directly for the probability vector.
  Mat w(bank.n_w, bank.n_d);
  ConstMatMap wmap(bank.w.value().data(), bank.n_w, bank.n_d);
  w = wmap;
  Mat scores = features * w.transpose();
  Vec out(features.rows());
  for (Index r = 0; r < features.rows(); ++r) {
    const double m = scores.row(r).maxCoeff();
    double all = 0.0, pos = 0.0;
    for (Index j = 0; j < bank.n_w; ++j) {
      const double e = std::exp(scores(r, j) - m);
      all += e;
      if (j < bank.rho) pos += e;
    }
    out[r] = pos / all;
  }
  return out;
}

Checkpoint ImrBank::to_checkpoint() const {
  Checkpoint ck;
  ck.metadata["kind"] = "imr_bank";
  ck.metadata["rho"] = std::to_string(rho);
  ck.add("w", w);
  return ck;
}

ImrBank ImrBank::from_checkpoint(const Checkpoint& ck) {
  if (ck.meta_or("kind", "") != "imr_bank")
    throw ParseError("checkpoint: kind '" + ck.meta_or("kind", "<missing>") +
                     "' is not an imr_bank");
  ImrBank b;
  const Tensor& w = ck.get("w");
  if (w.rank() != 2) throw ShapeError("checkpoint: imr_bank block 'w' must be rank 2");
  b.n_w = w.rows();
  b.n_d = w.cols();
  b.rho = static_cast<Index>(std::stoll(ck.meta("rho")));
  if (b.rho < 1 || b.rho >= b.n_w)
    throw ParseError("checkpoint: imr_bank rho " + std::to_string(b.rho) +
                     " out of range for n_w " + std::to_string(b.n_w));
  b.w = Tensor::from_array(w.shape(), w.value(), true);
  return b;
}

IdrBank::IdrBank(Index k, Index n_d_, double r_) : n_d(n_d_), r(r_) {
  if (k < 1) throw ContractError("IdrBank: k must be >= 1");
  if (n_d < 1) throw ContractError("IdrBank: n_d must be >= 1");
  if (!(r >= 0.0 && r <= 1.0))
    throw ContractError("IdrBank: retention r must be in [0,1], got " + std::to_string(r));
  m = Mat::Zero(k, n_d);
  written.assign(static_cast<std::size_t>(k), false);
}

Tensor idr_loss(const IdrBank& bank, const Tensor& features,
                const std::vector<int>& labels) {
  if (features.rank() != 2 || features.cols() != bank.n_d)
    throw ShapeError("idr_loss: features must be (n x " + std::to_string(bank.n_d) +
                     "), got " + shape_str(features.shape()));
  for (int y : labels)
    if (y < 0 || y >= bank.k())
      throw ContractError("idr_loss: label " + std::to_string(y) +
                          " out of range for k=" + std::to_string(bank.k()));
  Tensor m_const = Tensor::from_matrix(bank.m);  // constant: no gradient into M
  Tensor logits = matmul(features, transpose(m_const));
  return cross_entropy(logits, labels);
}

Mat p_idr(const IdrBank& bank, const Mat& features) {
  if (features.cols() != bank.n_d)
    throw ShapeError("p_idr: features must be (n x " + std::to_string(bank.n_d) + ")");
  Mat logits = features * bank.m.transpose();
  Mat out(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    double sum = 0.0;
    for (Index c = 0; c < logits.cols(); ++c) {
      out(r, c) = std::exp(logits(r, c) - mx);
      sum += out(r, c);
    }
    out.row(r) /= sum;
  }
  return out;
}

void memory_update(IdrBank& bank, const Mat& features,
                   const std::vector<int>& predicted) {
  if (features.cols() != bank.n_d)
    throw ShapeError("memory_update: features must be (n x " +
                     std::to_string(bank.n_d) + ")");
  if (static_cast<Index>(predicted.size()) != features.rows())
    throw ShapeError("memory_update: " + std::to_string(predicted.size()) +
                     " predictions for " + std::to_string(features.rows()) + " rows");
  for (int c : predicted)
    if (c < 0 || c >= bank.k())
      throw ContractError("memory_update: class " + std::to_string(c) +
                          " out of range for k=" + std::to_string(bank.k()));

  for (Index cls = 0; cls < bank.k(); ++cls) {
    Vec sum = Vec::Zero(bank.n_d);
    Index count = 0;
    for (Index i = 0; i < features.rows(); ++i) {
      if (predicted[static_cast<std::size_t>(i)] == cls) {
        sum += features.row(i).transpose();
        ++count;
      }
    }
    if (count == 0) continue;
    Vec batch_mean = sum / static_cast<double>(count);
    auto idx = static_cast<std::size_t>(cls);
    if (!bank.written[idx]) {
      bank.m.row(cls) = batch_mean.transpose();
      bank.written[idx] = true;
    } else {
      bank.m.row(cls) = bank.r * bank.m.row(cls) + (1.0 - bank.r) * batch_mean.transpose();
    }
  }
}

Checkpoint IdrBank::to_checkpoint() const {
  Checkpoint ck;
  ck.metadata["kind"] = "idr_bank";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", r);
  ck.metadata["r"] = buf;
  std::string flags;
  for (bool b : written) flags.push_back(b ? '1' : '0');
  ck.metadata["written"] = flags;
  ck.add("m", Tensor::from_matrix(m));
  return ck;
}

IdrBank IdrBank::from_checkpoint(const Checkpoint& ck) {
  if (ck.meta_or("kind", "") != "idr_bank")
    throw ParseError("checkpoint: kind '" + ck.meta_or("kind", "<missing>") +
                     "' is not an idr_bank");
  IdrBank b;
  const Tensor& m = ck.get("m");
  if (m.rank() != 2) throw ShapeError("checkpoint: idr_bank block 'm' must be rank 2");
  b.n_d = m.cols();
  b.m = Mat(m.rows(), m.cols());
  ConstMatMap mmap(m.value().data(), m.rows(), m.cols());
  b.m = mmap;
  b.r = std::stod(ck.meta("r"));
  if (!(b.r >= 0.0 && b.r <= 1.0))
    throw ParseError("checkpoint: idr_bank retention out of range");
  const std::string flags = ck.meta("written");
  if (static_cast<Index>(flags.size()) != m.rows())
    throw ParseError("checkpoint: idr_bank written flags length " +
                     std::to_string(flags.size()) + " does not match k=" +
                     std::to_string(m.rows()));
  b.written.clear();
  for (char c : flags) {
    if (c != '0' && c != '1')
      throw ParseError("checkpoint: idr_bank written flags must be 0/1");
    b.written.push_back(c == '1');
  }
  return b;
}

}  // namespace dmmia
