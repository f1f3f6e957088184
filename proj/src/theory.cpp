#include "dmmia/theory.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dmmia/errors.hpp"
#include "dmmia/linalg.hpp"
#include "dmmia/ops.hpp"
#include "dmmia/rng.hpp"

namespace dmmia {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kEpsMax = 1e-2;

void check_distribution(const char* op, const Vec& p) {
  if (p.size() < 1) throw ContractError(std::string(op) + ": empty distribution");
  double total = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0)) {
      std::ostringstream os;
      os << op << ": p[" << i << "] = " << p[i] << " must be strictly positive";
      throw ContractError(os.str());
    }
    total += p[i];
  }
  if (std::abs(total - 1.0) > 1e-9) {
    std::ostringstream os;
    os << op << ": entries sum to " << total << ", expected 1 within 1e-9";
    throw ContractError(os.str());
  }
}

void check_probe_shape(const char* op, const Classifier& clf, const PerturbationProbe& probe) {
  if (probe.x.rows() != 1 || probe.eta.rows() != 1)
    throw ContractError(std::string(op) + ": probe holds a single row");
  if (probe.eta.cols() != probe.x.cols())
    throw ContractError(std::string(op) + ": x and eta widths differ");
  if (probe.x.cols() != clf.in_dim()) {
    std::ostringstream os;
    os << op << ": probe width " << probe.x.cols() << " does not match classifier input "
       << clf.in_dim();
    throw ContractError(os.str());
  }
}

// Sequential dot product between the probe direction and a flat input gradient.
double dot_row(const Mat& eta, const Arr& g) {
  double acc = 0.0;
  for (Index i = 0; i < eta.cols(); ++i) acc += eta(0, i) * g[i];
  return acc;
}

// Stable log-softmax over one flat logits row.
Vec log_softmax_row(const Arr& logits) {
  double m = logits[0];
  for (Index i = 1; i < logits.size(); ++i) m = std::max(m, logits[i]);
  double s = 0.0;
  for (Index i = 0; i < logits.size(); ++i) s += std::exp(logits[i] - m);
  const double lse = m + std::log(s);
  Vec lp(logits.size());
  for (Index i = 0; i < logits.size(); ++i) lp[i] = logits[i] - lse;
  return lp;
}

void check_posterior_floor(const char* op, const Vec& p) {
  for (Index i = 0; i < p.size(); ++i) {
    if (p[i] < kProbFloor) {
      std::ostringstream os;
      os << op << ": posterior coordinate " << i << " = " << p[i] << " is below " << kProbFloor;
      throw NumericalError(os.str());
    }
  }
}

// One softmax-Jacobian row dotted with eta for every class, plus the input
// gradient of log p(y|x) for every class, all off one shared graph rooted at x.
struct ProbeGraph {
  Tensor x, logits, probs, lse;
  Vec p;
};

ProbeGraph build_probe_graph(const char* op, const Classifier& clf, const PerturbationProbe& probe) {
  ProbeGraph g;
  g.x = Tensor::from_matrix(probe.x, /*requires_grad=*/true);
  g.logits = clf.logits(g.x);
  g.probs = softmax(g.logits);
  g.lse = logsumexp(g.logits);
  g.p = Vec(g.probs.size());
  for (Index i = 0; i < g.p.size(); ++i) g.p[i] = g.probs.value()[i];
  check_posterior_floor(op, g.p);
  return g;
}

}  // namespace

PerturbationProbe make_probe(const Mat& x, const Mat& eta, double eps) {
  if (x.rows() != 1 || eta.rows() != 1 || eta.cols() != x.cols()) {
    std::ostringstream os;
    os << "make_probe: x is " << x.rows() << "x" << x.cols() << ", eta " << eta.rows() << "x"
       << eta.cols() << "; both must be one row of equal width";
    throw ContractError(os.str());
  }
  if (!(eps >= 0.0) || eps > kEpsMax) {
    std::ostringstream os;
    os << "make_probe: eps = " << eps << " must lie in [0, " << kEpsMax << "]";
    throw ContractError(os.str());
  }
  double ssq = 0.0;
  for (Index i = 0; i < eta.cols(); ++i) ssq += eta(0, i) * eta(0, i);
  const double norm = std::sqrt(ssq);
  if (norm == 0.0) throw ContractError("make_probe: eta must be nonzero");
  PerturbationProbe probe;
  probe.x = x;
  probe.eta = eta / norm;
  probe.eps = eps;
  return probe;
}

double fisher_trace_softmax(const Vec& p) {
  check_distribution("fisher_trace_softmax", p);
  double trace = 0.0;
  for (Index i = 0; i < p.size(); ++i) trace += 1.0 / p[i];
  return trace;
}

FisherEstimate mc_fisher_trace(const Vec& p, Index n_samples, std::uint64_t seed) {
  FisherEstimate est;
  est.exact_trace = fisher_trace_softmax(p);
  if (n_samples < 1) throw ContractError("mc_fisher_trace: n_samples must be >= 1");
  Rng rng(seed);
  double acc = 0.0;
  for (Index s = 0; s < n_samples; ++s) {
    const double u = rng.uniform();
    Index y = p.size() - 1;
    double cdf = 0.0;
    for (Index i = 0; i < p.size(); ++i) {
      cdf += p[i];
      if (u < cdf) {
        y = i;
        break;
      }
    }
    // grad_s log p(y|s) = e_y / p_y, so the squared norm is 1 / p_y^2.
    acc += 1.0 / (p[y] * p[y]);
  }
  est.mc_trace = acc / static_cast<double>(n_samples);
  est.n_samples = n_samples;
  return est;
}

FisherEstimate kl_taylor_probe(const Classifier& clf, const PerturbationProbe& probe) {
  check_probe_shape("kl_taylor_probe", clf, probe);
  if (!(probe.eps >= 0.0) || probe.eps > kEpsMax) {
    std::ostringstream os;
    os << "kl_taylor_probe: eps = " << probe.eps << " must lie in [0, " << kEpsMax << "]";
    throw ContractError(os.str());
  }

  ProbeGraph g = build_probe_graph("kl_taylor_probe", clf, probe);
  const Index k = g.p.size();

  FisherEstimate est;
  for (Index y = 0; y < k; ++y) est.exact_trace += 1.0 / g.p[y];

  // eta^T J^T G_s J eta with J = d(softmax)/dx, one backward pass per class.
  double form = 0.0;
  for (Index y = 0; y < k; ++y) {
    backward(gather(g.probs, {static_cast<int>(y)}));
    const double d = dot_row(probe.eta, g.x.grad());
    form += d * d / g.p[y];
    g.x.zero_grad();
  }
  est.quadratic_form = 0.5 * probe.eps * probe.eps * form;

  // Exact KL between the posteriors at x and x + eps*eta, from stable
  // log-softmax values on both sides.
  const Vec lp = log_softmax_row(g.logits.value());
  const Mat shifted = probe.x + probe.eps * probe.eta;
  const Vec lq = log_softmax_row(clf.logits(Tensor::from_matrix(shifted)).value());
  Vec q(lq.size());
  for (Index i = 0; i < q.size(); ++i) q[i] = std::exp(lq[i]);
  check_posterior_floor("kl_taylor_probe", q);
  double kl = 0.0;
  for (Index y = 0; y < k; ++y) kl += std::exp(lp[y]) * (lp[y] - lq[y]);
  est.exact_kl = kl;
  return est;
}

std::pair<double, double> pullback_identity_check(const Classifier& clf,
                                                  const PerturbationProbe& probe) {
  check_probe_shape("pullback_identity_check", clf, probe);
  ProbeGraph g = build_probe_graph("pullback_identity_check", clf, probe);
  const Index k = g.p.size();

  // Left side: exact enumeration of eta^T E_{y~p}[g_y g_y^T] eta with
  // g_y = grad_x log p(y|x).
  double lhs = 0.0;
  for (Index y = 0; y < k; ++y) {
    backward(sub(gather(g.logits, {static_cast<int>(y)}), g.lse));
    const double d = dot_row(probe.eta, g.x.grad());
    lhs += g.p[y] * d * d;
    g.x.zero_grad();
  }

  // Right side: the pullback eta^T J^T diag(1/p) J eta on the same graph.
  double rhs = 0.0;
  for (Index y = 0; y < k; ++y) {
    backward(gather(g.probs, {static_cast<int>(y)}));
    const double d = dot_row(probe.eta, g.x.grad());
    rhs += d * d / g.p[y];
    g.x.zero_grad();
  }
  return {lhs, rhs};
}

Vec simplex_min_check(int k, std::uint64_t seed) {
  if (k < 2) throw ContractError("simplex_min_check: k must be >= 2");
  Rng rng(seed);
  Vec p(k);
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    p[i] = 0.1 + rng.uniform();
    total += p[i];
  }
  p /= total;

  const auto objective = [k](const Vec& q) {
    double f = 0.0;
    for (int i = 0; i < k; ++i) {
      if (!(q[i] > 0.0)) return std::numeric_limits<double>::infinity();
      f += 1.0 / q[i];
    }
    return f;
  };

  double f = objective(p);
  double lr = 1e-3;
  const int max_iters = 100000;
  for (int it = 0; it < max_iters; ++it) {
    Vec grad(k);
    for (int i = 0; i < k; ++i) grad[i] = -1.0 / (p[i] * p[i]);

    bool accepted = false;
    for (int bt = 0; bt < 60 && !accepted; ++bt) {
      const Vec cand = simplex_project(p - lr * grad);
      const double fc = objective(cand);
      if (fc < f) {
        const double move = (cand - p).cwiseAbs().maxCoeff();
        p = cand;
        f = fc;
        accepted = true;
        if (move <= 1e-13) return p;
      } else {
        lr *= 0.5;
      }
    }
    // No step of any size improves the objective: the iterate sits at the
    // minimizer up to double rounding.
    if (!accepted) return p;
    lr = std::min(lr * 2.0, 1.0);
  }
  throw NumericalError(
      "simplex_min_check: projected gradient descent did not converge within 100000 iterations");
}

}  // namespace dmmia
