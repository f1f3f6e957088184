#ifndef DMMIA_MODELS_HPP
#define DMMIA_MODELS_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dmmia/adam.hpp"
#include "dmmia/checkpoint.hpp"
#include "dmmia/data.hpp"
#include "dmmia/ops.hpp"
#include "dmmia/tensor.hpp"

namespace dmmia {

// Multi-layer perceptron classifier. `widths` runs input -> hidden... -> K;
// hidden layers use relu and the feature map f_e(x) is the penultimate
// activation (the relu output feeding the final affine head).
class Classifier {
 public:
  Classifier(std::vector<Index> widths, std::uint64_t seed);

  // Graph-building forward passes. `x` is (n x in_dim()).
  Tensor logits(const Tensor& x) const;
  Tensor features(const Tensor& x) const;
  // Both heads on one shared graph: {features, logits}.
  std::pair<Tensor, Tensor> features_logits(const Tensor& x) const;

  // Value-only conveniences over raw matrices.
  Mat probs_of(const Mat& images) const;
  Mat features_of(const Mat& images) const;
  // Argmax with ties broken toward the lower class index.
  std::vector<int> predict(const Mat& images) const;

  Index in_dim() const { return widths_.front(); }
  Index n_classes() const { return widths_.back(); }
  Index feature_dim() const { return widths_[widths_.size() - 2]; }
  const std::vector<Index>& widths() const { return widths_; }

  std::vector<Tensor> params() const;
  void set_requires_grad(bool b);

  Checkpoint to_checkpoint() const;
  static Classifier from_checkpoint(const Checkpoint& ck);

 private:
  Classifier() = default;
  std::vector<Index> widths_;
  std::vector<Tensor> w_, b_;
};

struct TrainConfig {
  int epochs = 20;
  double lr = 0.001;
  Index batch_size = 64;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  // If >= 1, the dataset's inferred class count (max label + 1) must match.
  int expected_classes = -1;
};

struct TrainReport {
  double train_acc = 0.0;    // fraction in [0,1]
  double holdout_acc = 0.0;  // fraction in [0,1]
  double final_loss = 0.0;
  int epochs = 0;
};

// Trains with minibatch cross-entropy + Adam; seeded shuffles make retraining
// bit-deterministic. Non-finite loss raises NumericalError naming the epoch.
std::pair<Classifier, TrainReport> train_classifier(const Dataset& ds,
                                                    std::vector<Index> hidden,
                                                    const TrainConfig& cfg);

// --- generator ---------------------------------------------------------------

// z -> w through two affine+tanh layers.
class MappingNetwork {
 public:
  MappingNetwork(Index z_dim, Index w_dim, std::uint64_t seed);
  Tensor forward(const Tensor& z) const;
  Index z_dim() const { return z_dim_; }
  Index w_dim() const { return w_dim_; }
  std::vector<Tensor> params() const { return {w1_, b1_, w2_, b2_}; }
  void set_requires_grad(bool b);

 private:
  friend class Generator;
  MappingNetwork() = default;
  Index z_dim_ = 0, w_dim_ = 0;
  Tensor w1_, b1_, w2_, b2_;
};

// w -> pixels through affine+relu then affine+sigmoid; output in (0,1).
class SynthesisNetwork {
 public:
  SynthesisNetwork(Index w_dim, Index hidden, Index out_dim, std::uint64_t seed);
  Tensor forward(const Tensor& w) const;
  Index w_dim() const { return w_dim_; }
  Index hidden() const { return hidden_; }
  Index out_dim() const { return out_dim_; }
  std::vector<Tensor> params() const { return {w1_, b1_, w2_, b2_}; }
  void set_requires_grad(bool b);

 private:
  friend class Generator;
  SynthesisNetwork() = default;
  Index w_dim_ = 0, hidden_ = 0, out_dim_ = 0;
  Tensor w1_, b1_, w2_, b2_;
};

// Frozen synthesis prior plus a trainable latent mapping.
class Generator {
 public:
  Generator(MappingNetwork mapping, SynthesisNetwork synthesis);

  Tensor decode(const Tensor& z) const;  // synthesis(mapping(z))
  Mat decode_values(const Mat& z) const;

  MappingNetwork& mapping() { return mapping_; }
  const MappingNetwork& mapping() const { return mapping_; }
  const SynthesisNetwork& synthesis() const { return synthesis_; }

  // Replaces the mapping with a freshly seeded one (synthesis untouched).
  void reinit_mapping(std::uint64_t seed);

  // FNV-1a over the synthesis parameter bytes in declaration order.
  std::uint64_t synthesis_checksum() const;

  Checkpoint to_checkpoint() const;
  static Generator from_checkpoint(const Checkpoint& ck);

 private:
  MappingNetwork mapping_;
  SynthesisNetwork synthesis_;
};

struct GeneratorTrainConfig {
  std::string mode = "autoencoder";  // or "gan"
  Index z_dim = 32;
  Index w_dim = 64;
  Index hidden = 256;
  int epochs = 30;
  double lr = 0.001;
  Index batch_size = 64;
  double recon_warn_threshold = 0.05;  // mean per-pixel reconstruction MSE
  std::uint64_t seed = 0;
};

struct PretrainReport {
  std::string mode;
  double recon_mse = -1.0;  // autoencoder mode only
  bool recon_warning = false;
  double final_loss = 0.0;
};

// Pretrains the synthesis prior on `public_ds` (autoencoder by default, a
// small non-saturating GAN behind mode == "gan"), freezes it, and pairs it
// with a freshly initialized mapping network.
std::pair<Generator, PretrainReport> pretrain_generator(
    const Dataset& public_ds, const GeneratorTrainConfig& cfg);

}  // namespace dmmia

#endif
