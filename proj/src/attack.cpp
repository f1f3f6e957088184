#include "dmmia/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "dmmia/adam.hpp"
#include "dmmia/errors.hpp"
#include "dmmia/ops.hpp"
#include "dmmia/rng.hpp"

namespace dmmia {
namespace {

// Shifts a flat square image by (dx, dy) pixels with zero fill.
void shift_into(const Mat& images, Index row, Index side, int dx, int dy, Mat& out) {
  out.row(row).setZero();
  for (Index y = 0; y < side; ++y) {
    const Index sy = y - dy;
    if (sy < 0 || sy >= side) continue;
    for (Index x = 0; x < side; ++x) {
      const Index sx = x - dx;
      if (sx < 0 || sx >= side) continue;
      out(row, y * side + x) = images(row, sy * side + sx);
    }
  }
}

std::vector<int> argmax_rows(const Mat& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Index r = 0; r < m.rows(); ++r) {
    int best = 0;
    for (Index c = 1; c < m.cols(); ++c)
      if (m(r, c) > m(r, best)) best = static_cast<int>(c);
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

}  // namespace

Mat select_latents(const Classifier& target, const Generator& gen,
                   int target_class, Index pool, Index k, bool shift_ensemble,
                   Rng& rng) {
  if (pool < 1) throw ContractError("select_latents: pool must be >= 1");
  if (k < 1 || k > pool)
    throw ContractError("select_latents: k must satisfy 1 <= k <= pool, got k=" +
                        std::to_string(k) + ", pool=" + std::to_string(pool));
  if (target_class < 0 || target_class >= static_cast<int>(target.n_classes()))
    throw ContractError("select_latents: target class " + std::to_string(target_class) +
                        " out of range for " + std::to_string(target.n_classes()) +
                        " classes");

  const Index z_dim = gen.mapping().z_dim();
  Tensor z_pool = sample_latents(rng, pool, z_dim);
  Mat z(pool, z_dim);
  ConstMatMap zmap(z_pool.value().data(), pool, z_dim);
  z = zmap;

  Mat images = gen.decode_values(z);
  Vec score = Vec::Zero(pool);
  {
    Mat probs = target.probs_of(images);
    score = probs.col(target_class);
  }
  if (shift_ensemble) {
    const Index d = images.cols();
    const Index side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(d))));
    if (side * side != d)
      throw ContractError("select_latents: shift ensemble needs square images, got " +
                          std::to_string(d) + " pixels");
    const int offsets[4][2] = {{2, 0}, {-2, 0}, {0, 2}, {0, -2}};
    Mat shifted(pool, d);
    for (const auto& off : offsets) {
      for (Index r = 0; r < pool; ++r)
        shift_into(images, r, side, off[0], off[1], shifted);
      score += target.probs_of(shifted).col(target_class);
    }
    score /= 5.0;
  }

  std::vector<Index> idx(static_cast<std::size_t>(pool));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::sort(idx.begin(), idx.end(), [&](Index a, Index b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;  // ties keep the lower pool index
  });

  Mat out(k, z_dim);
  for (Index i = 0; i < k; ++i) out.row(i) = z.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

AttackResult run_attack(const Classifier& target, const Generator& prior,
                        const AttackConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (cfg.steps < 1) throw ContractError("run_attack: steps must be >= 1");
  if (cfg.batch_size < 1) throw ContractError("run_attack: batch_size must be >= 1");
  if (cfg.n_selected < 1 || cfg.n_selected > cfg.pool_size)
    throw ContractError("run_attack: n_selected must satisfy 1 <= n <= pool_size");
  if (cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0)
    throw ContractError("run_attack: loss weights must be nonnegative");
  if (cfg.target_class < 0 || cfg.target_class >= static_cast<int>(target.n_classes()))
    throw ContractError("run_attack: target class " + std::to_string(cfg.target_class) +
                        " out of range for " + std::to_string(target.n_classes()) +
                        " classes");
  if (target.in_dim() != prior.synthesis().out_dim())
    throw ShapeError("run_attack: generator emits " +
                     std::to_string(prior.synthesis().out_dim()) +
                     " pixels but the target expects " + std::to_string(target.in_dim()));

  const Index n_d = target.feature_dim();
  const int k_classes = static_cast<int>(target.n_classes());

  // Derived streams; see the header for the salt table.
  ImrBank imr_bank(cfg.n_w, n_d, cfg.rho, mix_seed(cfg.seed, 0));
  IdrBank idr_bank(k_classes, n_d, cfg.retention);

  Generator gen = prior;
  gen.reinit_mapping(mix_seed(cfg.seed, 2));

  AttackResult result;
  result.synthesis_checksum_before = gen.synthesis_checksum();

  Rng pool_rng(mix_seed(cfg.seed, 1));
  result.z = select_latents(target, gen, cfg.target_class, cfg.pool_size,
                            cfg.n_selected, cfg.shift_ensemble, pool_rng);

  AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.beta1 = cfg.beta1;
  acfg.beta2 = cfg.beta2;
  Adam opt_phi(gen.mapping().params(), acfg);
  Adam opt_w({imr_bank.w}, acfg);

  const bool baseline = cfg.lambda1 == 0.0 && cfg.lambda2 == 0.0;
  Rng shuffle_rng(mix_seed(cfg.seed, 3));
  std::vector<Index> order(static_cast<std::size_t>(cfg.n_selected));
  std::iota(order.begin(), order.end(), Index{0});

  for (int step = 0; step < cfg.steps; ++step) {
    shuffle_rng.shuffle(order);
    for (Index start = 0; start < cfg.n_selected; start += cfg.batch_size) {
      const Index stop = std::min(cfg.n_selected, start + cfg.batch_size);
      Mat zb(stop - start, result.z.cols());
      for (Index r = start; r < stop; ++r) zb.row(r - start) = result.z.row(order[r]);
      const std::vector<int> labels(static_cast<std::size_t>(stop - start),
                                    cfg.target_class);

      // (a) forward at the current mapping; losses are recorded pre-update.
      Tensor x = gen.decode(Tensor::from_matrix(zb));
      auto [f, logits] = target.features_logits(x);
      Tensor ce = cross_entropy(logits, labels);
      Tensor fp = cfg.normalize_features ? row_normalize(f) : f;
      Tensor imr_t = imr_loss(imr_bank, fp);
      Tensor idr_t = idr_loss(idr_bank, fp, labels);
      Tensor total = ce;
      if (cfg.lambda1 != 0.0) total = add(total, scale(imr_t, cfg.lambda1));
      if (cfg.lambda2 != 0.0) total = add(total, scale(idr_t, cfg.lambda2));

      StepLosses sl;
      sl.total = total.item();
      sl.ce = ce.item();
      sl.imr = imr_t.item();
      sl.idr = idr_t.item();
      result.trajectory.push_back(sl);

      // (b) mapping step on the combined loss.
      backward(total);
      opt_phi.step();
      opt_phi.zero_grad();

      if (!baseline) {
        // (c) bank step on the identity-memory loss recomputed at the
        // updated mapping.
        opt_w.zero_grad();
        Tensor x2 = gen.decode(Tensor::from_matrix(zb));
        auto [f2, logits2] = target.features_logits(x2);
        Tensor f2p = cfg.normalize_features ? row_normalize(f2) : f2;
        Tensor imr2 = imr_loss(imr_bank, f2p);
        backward(imr2);
        opt_w.step();
        opt_w.zero_grad();
        opt_phi.zero_grad();

        // (d) class-memory blend from the same recomputed batch, keyed by
        // the target's own predictions.
        Mat f2_m(f2p.rows(), f2p.cols());
        ConstMatMap fmap(f2p.value().data(), f2p.rows(), f2p.cols());
        f2_m = fmap;
        Mat logits_m(logits2.rows(), logits2.cols());
        ConstMatMap lmap(logits2.value().data(), logits2.rows(), logits2.cols());
        logits_m = lmap;
        memory_update(idr_bank, f2_m, argmax_rows(logits_m));
      }
    }
  }

  result.images = gen.decode_values(result.z);
  result.synthesis_checksum_after = gen.synthesis_checksum();
  if (result.synthesis_checksum_after != result.synthesis_checksum_before)
    throw ContractError("run_attack: the frozen synthesis prior changed during the run");
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace dmmia
