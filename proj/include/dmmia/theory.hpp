#ifndef DMMIA_THEORY_HPP
#define DMMIA_THEORY_HPP

#include <cstdint>
#include <utility>

#include "dmmia/models.hpp"
#include "dmmia/tensor.hpp"

namespace dmmia {

// A local perturbation of one classifier input: x is a single row, eta a
// direction of the same shape, eps the step scale. Build through make_probe,
// which normalizes eta to unit length and checks eps stays inside the
// quadratic regime (eps <= 1e-2).
struct PerturbationProbe {
  Mat x;      // (1 x d)
  Mat eta;    // (1 x d)
  double eps = 0.0;
};

PerturbationProbe make_probe(const Mat& x, const Mat& eta, double eps);

// Results of the local Fisher analyses. Each operation fills the fields it
// defines and leaves the rest at zero.
struct FisherEstimate {
  double exact_trace = 0.0;     // sum_i 1/p_i
  double mc_trace = 0.0;        // Monte-Carlo estimate of the same trace
  Index n_samples = 0;          // draws behind mc_trace
  double quadratic_form = 0.0;  // (eps^2/2) eta^T J^T G_s J eta
  double exact_kl = 0.0;        // D_KL(p(.|x) || p(.|x + eps*eta))
};

// Trace of the categorical Fisher information in probability coordinates:
// sum_i 1/p_i. Requires strictly positive entries summing to 1 within 1e-9.
double fisher_trace_softmax(const Vec& p);

// Cross-checks the analytic trace against the sampled estimator
// E_{y~p} ||grad_s log p(y|s)||^2 = E[1/p_y^2] over n_samples seeded draws.
// Fills exact_trace, mc_trace and n_samples.
FisherEstimate mc_fisher_trace(const Vec& p, Index n_samples, std::uint64_t seed);

// Exact KL divergence between the class posteriors at x and at x + eps*eta,
// next to its second-order approximation (eps^2/2) eta^T J^T G_s J eta with
// J = d(softmax)/dx extracted by one backward pass per class and
// G_s = diag(1/p). Also fills exact_trace at the base point. Any posterior
// coordinate below 1e-12 raises NumericalError.
FisherEstimate kl_taylor_probe(const Classifier& clf, const PerturbationProbe& probe);

// Both sides of the metric pullback identity eta^T G_x eta = eta^T J^T G_s J eta.
// The left side enumerates all K labels exactly: sum_y p_y (g_y . eta)^2 with
// g_y the input gradient of log p(y|x); the right side uses the softmax
// Jacobian. Both come from one shared autodiff graph. eta is used exactly as
// given (unnormalized probes are allowed here).
std::pair<double, double> pullback_identity_check(const Classifier& clf,
                                                  const PerturbationProbe& probe);

// Minimizes sum_i 1/p_i over the probability simplex by projected gradient
// descent with backtracking, from a seeded random interior start. Converges
// to the uniform vector; raises NumericalError after 1e5 iterations.
Vec simplex_min_check(int k, std::uint64_t seed = 0);

}  // namespace dmmia

#endif
