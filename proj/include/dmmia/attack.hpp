#ifndef DMMIA_ATTACK_HPP
#define DMMIA_ATTACK_HPP

#include <cstdint>
#include <vector>

#include "dmmia/models.hpp"
#include "dmmia/prototypes.hpp"
#include "dmmia/tensor.hpp"

namespace dmmia {

// Configuration for one inversion run against a single target class.
//
// Derived random streams (stable API, pinned by tests):
//   mix_seed(seed, 0)  identity-memory bank init
//   mix_seed(seed, 1)  candidate latent pool
//   mix_seed(seed, 2)  fresh mapping-network init
//   mix_seed(seed, 3)  per-step batch shuffles
struct AttackConfig {
  int target_class = 0;
  Index pool_size = 2000;   // candidate latents scored for selection
  Index n_selected = 200;   // latents kept and optimized
  int steps = 50;           // optimization epochs over the selected set
  Index batch_size = 16;
  double lr = 0.005;
  double beta1 = 0.1;
  double beta2 = 0.1;
  double lambda1 = 0.3;     // identity-memory weight
  double lambda2 = 0.7;     // identity-disambiguation weight
  Index n_w = 500;          // identity-memory bank rows
  Index rho = 250;          // positive subset size
  double retention = 0.7;   // disambiguation blending factor
  bool shift_ensemble = false;  // score candidates across small pixel shifts
  // Normalize feature rows to unit length before every prototype dot product
  // (bank losses and memory writes; the classification loss is untouched).
  // Off, the raw inner products have no finite minimizer, so feature norms can
  // run away at small scale; on, all similarities stay bounded.
  bool normalize_features = false;
  std::uint64_t seed = 0;
};

// Losses measured on a batch before its optimizer step.
struct StepLosses {
  double total = 0.0;
  double ce = 0.0;
  double imr = 0.0;
  double idr = 0.0;
};

struct AttackResult {
  Mat images;  // (n_selected x pixels) decoded at the final mapping
  Mat z;       // (n_selected x z_dim) selected latents
  std::vector<StepLosses> trajectory;  // steps * ceil(n_selected / batch_size)
  std::uint64_t synthesis_checksum_before = 0;
  std::uint64_t synthesis_checksum_after = 0;
  double wall_seconds = 0.0;
};

// Scores `pool` fresh latents from `rng` by the target-class probability of
// their decodings and returns the top `k` rows (ties keep the lower pool
// index). With `shift_ensemble` the score averages over the identity and
// two-pixel shifts in the four axis directions (square images only).
Mat select_latents(const Classifier& target, const Generator& gen,
                   int target_class, Index pool, Index k, bool shift_ensemble,
                   Rng& rng);

// Runs the full inversion: fresh mapping + banks, latent selection, then
// `steps` epochs of (batch loss -> mapping step -> bank step at the updated
// mapping -> memory blend). The synthesis prior and the target stay frozen;
// the run aborts if the prior's checksum moves. With lambda1 == lambda2 == 0
// the bank and memory updates are skipped and the loop is exactly the
// cross-entropy baseline.
AttackResult run_attack(const Classifier& target, const Generator& prior,
                        const AttackConfig& cfg);

}  // namespace dmmia

#endif
