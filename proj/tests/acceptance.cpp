// Acceptance harness: seven end-to-end checks, one pass/fail line each.
//
//   1. gradient suite      every differentiable op + both prototype losses vs
//                          central finite differences (1e-4 relative, >=10
//                          instances each, under 1 minute)
//   2. theory suite        exact Fisher trace + MC agreement, pullback
//                          identity, KL-vs-quadratic gap shrinkage, simplex
//                          minimizer (under 5 minutes)
//   3. metric oracles      nearest-distance / PRDC / diversity equal brute
//                          force exactly; Frechet special cases and a sampled
//                          Gaussian (under 3 minutes)
//   4. directional study   prototype attack beats the cross-entropy baseline
//                          on mean Acc@1 with no diversity loss, desk preset,
//                          3 seeds (under 30 minutes)
//   5. degenerate lambdas  zero-weight run is bitwise the pure-CE path, and a
//                          fresh memory bank opens at ln K
//   6. determinism         identical configs rerun to byte-identical CSVs and
//                          checkpoints
//   7. frozen prior        the synthesis checksum survives every attack run
//
// Run all criteria (default) or one via --criterion N. Exit 0 iff every
// executed criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dmmia/adam.hpp"
#include "dmmia/attack.hpp"
#include "dmmia/data.hpp"
#include "dmmia/errors.hpp"
#include "dmmia/linalg.hpp"
#include "dmmia/metrics.hpp"
#include "dmmia/models.hpp"
#include "dmmia/ops.hpp"
#include "dmmia/pipeline.hpp"
#include "dmmia/prototypes.hpp"
#include "dmmia/rng.hpp"
#include "dmmia/tensor.hpp"
#include "dmmia/theory.hpp"

namespace {

using namespace dmmia;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, ...) {
  char buf[512];
  va_list args;
  va_start(args, pattern);
  std::vsnprintf(buf, sizeof buf, pattern, args);
  va_end(args);
  return buf;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- criterion 1

// Analytic gradients of build() w.r.t. `leaves` against central differences.
// build() must reference the leaf tensors themselves so value edits show up.
double max_rel_grad_err(const std::function<Tensor()>& build, std::vector<Tensor> leaves,
                        double h = 1e-5) {
  for (Tensor& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  Tensor loss = build();
  backward(loss);
  std::vector<Arr> analytic;
  for (Tensor& l : leaves) analytic.push_back(l.grad_or_zeros());

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& l = leaves[li];
    for (Index i = 0; i < l.size(); ++i) {
      const double orig = l.value()[i];
      l.value()[i] = orig + h;
      const double up = build().item();
      l.value()[i] = orig - h;
      const double dn = build().item();
      l.value()[i] = orig;
      const double fd = (up - dn) / (2.0 * h);
      const double rel = std::abs(analytic[li][i] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, rel);
    }
  }
  for (Tensor& l : leaves) l.zero_grad();
  return worst;
}

Tensor weights_like(const Tensor& y, Rng& rng) {
  std::vector<double> w(static_cast<std::size_t>(y.size()));
  for (double& v : w) v = rng.normal();
  return Tensor::from_data(y.shape(), std::move(w));
}

Mat random_mat(Rng& rng, Index r, Index c, bool avoid_zero = false) {
  Mat m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) {
      double v = rng.normal();
      if (avoid_zero && std::abs(v) < 0.2) v += v < 0.0 ? -0.4 : 0.4;
      m(i, j) = v;
    }
  return m;
}

Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const int kInstances = 12;
  double worst = 0.0;
  int functions = 0;

  // name -> builds (loss builder, leaves) for one seeded instance.
  using Case = std::function<std::pair<std::function<Tensor()>, std::vector<Tensor>>(Rng&)>;
  std::vector<std::pair<const char*, Case>> cases;

  auto unary = [&](const char* name, std::function<Tensor(const Tensor&)> op,
                   bool avoid_zero = false) {
    cases.emplace_back(name, [op, avoid_zero](Rng& rng) {
      const Index r = 2 + static_cast<Index>(rng.uniform_below(4));
      const Index c = 2 + static_cast<Index>(rng.uniform_below(5));
      Tensor x = Tensor::from_matrix(random_mat(rng, r, c, avoid_zero), true);
      Tensor w = weights_like(op(x), rng);
      return std::make_pair(
          std::function<Tensor()>([op, x, w] { return sum(mul(op(x), w)); }),
          std::vector<Tensor>{x});
    });
  };

  unary("relu", [](const Tensor& x) { return relu(x); }, /*avoid_zero=*/true);
  unary("tanh", [](const Tensor& x) { return dmmia::tanh(x); });
  unary("sigmoid", [](const Tensor& x) { return sigmoid(x); });
  unary("softplus", [](const Tensor& x) { return softplus(x); });
  unary("logsumexp", [](const Tensor& x) { return logsumexp(x); });
  unary("softmax", [](const Tensor& x) { return softmax(x); });
  unary("transpose", [](const Tensor& x) { return transpose(x); });
  unary("row_normalize", [](const Tensor& x) { return row_normalize(x); }, true);
  unary("scale", [](const Tensor& x) { return scale(x, -1.7); });
  unary("add_scalar", [](const Tensor& x) { return add_scalar(x, 0.9); });
  unary("sum", [](const Tensor& x) { return sum(x); });
  unary("mean", [](const Tensor& x) { return mean(x); });
  unary("l2_norm", [](const Tensor& x) { return l2_norm(x); }, true);

  auto binary = [&](const char* name, std::function<Tensor(const Tensor&, const Tensor&)> op) {
    cases.emplace_back(name, [op](Rng& rng) {
      const Index r = 2 + static_cast<Index>(rng.uniform_below(4));
      const Index c = 2 + static_cast<Index>(rng.uniform_below(5));
      Tensor a = Tensor::from_matrix(random_mat(rng, r, c), true);
      Tensor b = Tensor::from_matrix(random_mat(rng, r, c), true);
      Tensor w = weights_like(op(a, b), rng);
      return std::make_pair(
          std::function<Tensor()>([op, a, b, w] { return sum(mul(op(a, b), w)); }),
          std::vector<Tensor>{a, b});
    });
  };
  binary("add", [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  binary("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); });

  cases.emplace_back("matmul", [](Rng& rng) {
    const Index n = 2 + static_cast<Index>(rng.uniform_below(3));
    const Index k = 2 + static_cast<Index>(rng.uniform_below(3));
    const Index m = 2 + static_cast<Index>(rng.uniform_below(3));
    Tensor a = Tensor::from_matrix(random_mat(rng, n, k), true);
    Tensor b = Tensor::from_matrix(random_mat(rng, k, m), true);
    Tensor w = weights_like(matmul(a, b), rng);
    return std::make_pair(
        std::function<Tensor()>([a, b, w] { return sum(mul(matmul(a, b), w)); }),
        std::vector<Tensor>{a, b});
  });

  cases.emplace_back("affine", [](Rng& rng) {
    const Index n = 2 + static_cast<Index>(rng.uniform_below(3));
    const Index in = 2 + static_cast<Index>(rng.uniform_below(4));
    const Index out = 2 + static_cast<Index>(rng.uniform_below(4));
    Tensor x = Tensor::from_matrix(random_mat(rng, n, in), true);
    Tensor w = Tensor::from_matrix(random_mat(rng, out, in), true);
    std::vector<double> bias(static_cast<std::size_t>(out));
    for (double& v : bias) v = rng.normal();
    Tensor b = Tensor::from_data({out}, std::move(bias), true);
    Tensor ww = weights_like(affine(x, w, b), rng);
    return std::make_pair(
        std::function<Tensor()>([x, w, b, ww] { return sum(mul(affine(x, w, b), ww)); }),
        std::vector<Tensor>{x, w, b});
  });

  cases.emplace_back("gather", [](Rng& rng) {
    const Index r = 2 + static_cast<Index>(rng.uniform_below(4));
    const Index c = 2 + static_cast<Index>(rng.uniform_below(5));
    Tensor x = Tensor::from_matrix(random_mat(rng, r, c), true);
    std::vector<int> idx;
    for (Index i = 0; i < r; ++i) idx.push_back(static_cast<int>(rng.uniform_below(c)));
    Tensor w = weights_like(gather(x, idx), rng);
    return std::make_pair(
        std::function<Tensor()>([x, idx, w] { return sum(mul(gather(x, idx), w)); }),
        std::vector<Tensor>{x});
  });

  cases.emplace_back("slice_cols", [](Rng& rng) {
    const Index r = 2 + static_cast<Index>(rng.uniform_below(4));
    const Index c = 3 + static_cast<Index>(rng.uniform_below(4));
    const Index c0 = static_cast<Index>(rng.uniform_below(c - 1));
    const Index c1 = c0 + 1 + static_cast<Index>(rng.uniform_below(c - c0 - 1)) + 1;
    Tensor x = Tensor::from_matrix(random_mat(rng, r, c), true);
    const Index hi = std::min(c1, c);
    Tensor w = weights_like(slice_cols(x, c0, hi), rng);
    return std::make_pair(
        std::function<Tensor()>([x, c0, hi, w] { return sum(mul(slice_cols(x, c0, hi), w)); }),
        std::vector<Tensor>{x});
  });

  cases.emplace_back("reshape", [](Rng& rng) {
    const Index r = 2 + static_cast<Index>(rng.uniform_below(3));
    const Index c = 2 * (1 + static_cast<Index>(rng.uniform_below(3)));
    Tensor x = Tensor::from_matrix(random_mat(rng, r, c), true);
    const Shape to = {r * c / 2, 2};
    Tensor w = weights_like(reshape(x, to), rng);
    return std::make_pair(
        std::function<Tensor()>([x, to, w] { return sum(mul(reshape(x, to), w)); }),
        std::vector<Tensor>{x});
  });

  cases.emplace_back("cross_entropy", [](Rng& rng) {
    const Index n = 2 + static_cast<Index>(rng.uniform_below(4));
    const Index k = 2 + static_cast<Index>(rng.uniform_below(5));
    Tensor logits = Tensor::from_matrix(random_mat(rng, n, k), true);
    std::vector<int> labels;
    for (Index i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.uniform_below(k)));
    return std::make_pair(
        std::function<Tensor()>([logits, labels] { return cross_entropy(logits, labels); }),
        std::vector<Tensor>{logits});
  });

  cases.emplace_back("imr_loss", [](Rng& rng) {
    const Index n_d = 3 + static_cast<Index>(rng.uniform_below(4));
    const Index n_w = 4 + static_cast<Index>(rng.uniform_below(5));
    const Index rho = 1 + static_cast<Index>(rng.uniform_below(n_w - 1));
    auto bank = std::make_shared<ImrBank>(n_w, n_d, rho, rng.next_u64());
    const Index n = 2 + static_cast<Index>(rng.uniform_below(4));
    Tensor f = Tensor::from_matrix(random_mat(rng, n, n_d), true);
    return std::make_pair(
        std::function<Tensor()>([bank, f] { return imr_loss(*bank, f); }),
        std::vector<Tensor>{bank->w, f});
  });

  cases.emplace_back("idr_loss", [](Rng& rng) {
    const Index n_d = 3 + static_cast<Index>(rng.uniform_below(4));
    const Index k = 2 + static_cast<Index>(rng.uniform_below(4));
    auto bank = std::make_shared<IdrBank>(k, n_d, 0.7);
    bank->m = random_mat(rng, k, n_d);
    const Index n = 2 + static_cast<Index>(rng.uniform_below(4));
    Tensor f = Tensor::from_matrix(random_mat(rng, n, n_d), true);
    std::vector<int> labels;
    for (Index i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.uniform_below(k)));
    return std::make_pair(
        std::function<Tensor()>([bank, f, labels] { return idr_loss(*bank, f, labels); }),
        std::vector<Tensor>{f});
  });

  for (const auto& [name, make] : cases) {
    ++functions;
    for (int inst = 0; inst < kInstances; ++inst) {
      Rng rng(fnv1a(name, std::strlen(name), 0xabcdef12345678ull) + inst);
      auto [build, leaves] = make(rng);
      const double err = max_rel_grad_err(build, leaves);
      worst = std::max(worst, err);
      if (err > 1e-4)
        return {false, fmt("gradient suite: %s instance %d relative error %.3g > 1e-4",
                           name, inst, err)};
    }
  }

  const double secs = seconds_since(t0);
  return {secs < 60.0,
          fmt("gradient suite: %d functions x %d instances, worst relative error %.3g%s",
              functions, kInstances, worst, secs < 60.0 ? "" : "; over the 1 min budget")};
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion2() {
  const auto t0 = std::chrono::steady_clock::now();

  // (a) exact trace, and two-percent MC agreement at 1e6 draws.
  for (int i = 0; i < 10; ++i) {
    Rng rng(4200 + i);
    const Index k = 3 + static_cast<Index>(rng.uniform_below(10));
    Vec raw(k);
    for (Index j = 0; j < k; ++j) raw[j] = std::exp(rng.normal());
    Vec p = raw / raw.sum();
    double oracle = 0.0;
    for (Index j = 0; j < k; ++j) oracle += 1.0 / p[j];
    if (fisher_trace_softmax(p) != oracle)
      return {false, fmt("theory: trace differs from the direct sum at instance %d", i)};
  }
  Vec p4(4);
  p4 << 0.5, 0.25, 0.125, 0.125;
  const FisherEstimate mc = mc_fisher_trace(p4, 1000000, 99);
  const double mc_rel = std::abs(mc.mc_trace - mc.exact_trace) / mc.exact_trace;
  if (mc_rel > 0.02)
    return {false, fmt("theory: MC trace off by %.4f (budget 0.02)", mc_rel)};

  // (b) pullback identity at 20 random probes.
  const Classifier clf({6, 10, 4}, 17);
  Rng prng(991);
  auto draw = [&](double eps) {
    Mat x(1, 6), h(1, 6);
    for (Index i = 0; i < 6; ++i) x(0, i) = prng.uniform();
    for (Index i = 0; i < 6; ++i) h(0, i) = prng.normal();
    return make_probe(x, h, eps);
  };
  double worst_pullback = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto [lhs, rhs] = pullback_identity_check(clf, draw(1e-3));
    const double rel = std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs));
    worst_pullback = std::max(worst_pullback, rel);
    if (rel > 1e-8)
      return {false, fmt("theory: pullback probe %d relative gap %.3g > 1e-8", i, rel)};
  }

  // (c) the KL-vs-quadratic gap shrinks by at least 0.75x per halving of eps.
  for (int i = 0; i < 20; ++i) {
    PerturbationProbe probe = draw(1e-2);
    double gap[3];
    const double ladder[3] = {1e-2, 5e-3, 2.5e-3};
    for (int e = 0; e < 3; ++e) {
      probe.eps = ladder[e];
      const FisherEstimate est = kl_taylor_probe(clf, probe);
      gap[e] = std::abs(est.exact_kl - est.quadratic_form) /
               std::max(est.quadratic_form, 1e-300);
    }
    if (!(gap[1] <= 0.75 * gap[0] + 1e-12 && gap[2] <= 0.75 * gap[1] + 1e-12))
      return {false, fmt("theory: gap ladder %.3g -> %.3g -> %.3g fails the 0.75 "
                         "shrink at probe %d", gap[0], gap[1], gap[2], i)};
  }

  // (d) the projected-gradient minimizer lands on the uniform distribution.
  double worst_dev = 0.0;
  for (int k : {2, 5, 10})
    for (std::uint64_t seed : {0ull, 1ull}) {
      const Vec v = simplex_min_check(k, seed);
      for (Index i = 0; i < v.size(); ++i)
        worst_dev = std::max(worst_dev, std::abs(v[i] - 1.0 / k));
    }
  if (worst_dev > 1e-6)
    return {false, fmt("theory: simplex minimizer deviates %.3g > 1e-6", worst_dev)};

  const double secs = seconds_since(t0);
  return {secs < 300.0,
          fmt("theory suite: trace exact, MC off %.4f, pullback worst %.2g, gap ladder "
              "shrinks, simplex dev %.2g%s",
              mc_rel, worst_pullback, worst_dev,
              secs < 300.0 ? "" : "; over the 5 min budget")};
}

// ---------------------------------------------------------------- criterion 3

double oracle_l2(const Mat& a, Index i, const Mat& b, Index j) {
  double s = 0.0;
  for (Index c = 0; c < a.cols(); ++c) {
    const double d = a(i, c) - b(j, c);
    s += d * d;
  }
  return std::sqrt(s);
}

double oracle_nearest(const Mat& a, const Mat& b) {
  double total = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    double best = oracle_l2(a, i, b, 0);
    for (Index j = 1; j < b.rows(); ++j) best = std::min(best, oracle_l2(a, i, b, j));
    total += best;
  }
  return total / static_cast<double>(a.rows());
}

Prdc oracle_prdc(const Mat& real, const Mat& fake, Index k) {
  auto radii = [&](const Mat& x) {
    std::vector<double> out;
    for (Index i = 0; i < x.rows(); ++i) {
      std::vector<double> d;
      for (Index j = 0; j < x.rows(); ++j)
        if (j != i) d.push_back(oracle_l2(x, i, x, j));
      std::sort(d.begin(), d.end());
      out.push_back(d[static_cast<std::size_t>(k - 1)]);
    }
    return out;
  };
  const std::vector<double> rr = radii(real);
  const std::vector<double> rf = radii(fake);
  const Index nr = real.rows(), nf = fake.rows();
  Index close_f = 0, dens = 0, recalled = 0, covered = 0;
  for (Index f = 0; f < nf; ++f) {
    bool close = false;
    for (Index r = 0; r < nr; ++r)
      if (oracle_l2(fake, f, real, r) < rr[static_cast<std::size_t>(r)]) {
        close = true;
        ++dens;
      }
    if (close) ++close_f;
  }
  for (Index r = 0; r < nr; ++r) {
    bool rec = false, cov = false;
    for (Index f = 0; f < nf; ++f) {
      const double d = oracle_l2(real, r, fake, f);
      if (d < rf[static_cast<std::size_t>(f)]) rec = true;
      if (d < rr[static_cast<std::size_t>(r)]) cov = true;
    }
    if (rec) ++recalled;
    if (cov) ++covered;
  }
  Prdc out;
  out.precision = static_cast<double>(close_f) / static_cast<double>(nf);
  out.recall = static_cast<double>(recalled) / static_cast<double>(nr);
  out.density = static_cast<double>(dens) / (static_cast<double>(k) * static_cast<double>(nf));
  out.coverage = static_cast<double>(covered) / static_cast<double>(nr);
  return out;
}

double oracle_diversity(const Mat& x) {
  double total = 0.0;
  Index pairs = 0;
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = i + 1; j < x.rows(); ++j) {
      total += oracle_l2(x, i, x, j);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

Outcome criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  const Index k = 3;

  for (int inst = 0; inst < 30; ++inst) {
    Rng rng(300 + inst);
    const Index nr = 5 + static_cast<Index>(rng.uniform_below(46));  // 5..50
    const Index nf = 5 + static_cast<Index>(rng.uniform_below(46));
    const Index d = 2 + static_cast<Index>(rng.uniform_below(7));
    const Mat real = random_mat(rng, nr, d);
    const Mat fake = random_mat(rng, nf, d);

    if (mean_nearest_l2(fake, real) != oracle_nearest(fake, real))
      return {false, fmt("metrics: nearest distance differs from brute force at "
                         "instance %d", inst)};
    const Prdc got = prdc(real, fake, k);
    const Prdc want = oracle_prdc(real, fake, k);
    if (got.precision != want.precision || got.recall != want.recall ||
        got.density != want.density || got.coverage != want.coverage)
      return {false, fmt("metrics: PRDC differs from brute force at instance %d", inst)};
    if (pairwise_diversity(fake) != oracle_diversity(fake))
      return {false, fmt("metrics: diversity differs from brute force at instance %d",
                         inst)};
  }

  // Frechet special cases: identical sets, and the 1-D closed form.
  for (int inst = 0; inst < 10; ++inst) {
    Rng rng(900 + inst);
    const Mat x = random_mat(rng, 8 + static_cast<Index>(rng.uniform_below(20)),
                             2 + static_cast<Index>(rng.uniform_below(5)));
    if (fid(x, x) > 1e-9)
      return {false, fmt("metrics: FID(X, X) = %.3g > 1e-9", fid(x, x))};
  }
  Mat one_a(2, 1), one_b(2, 1);
  one_a << -1.0, 1.0;
  one_b << 0.0, 2.0;  // means 0 vs 1, equal variances -> distance exactly 1
  const double one_d = fid(one_a, one_b);
  if (std::abs(one_d - 1.0) > 1e-9)
    return {false, fmt("metrics: 1-D closed form gave %.12f, want 1.0 +- 1e-9", one_d)};

  // Sampled diagonal Gaussians against the moment formula, five percent band.
  const Index n = 10000, gd = 4;
  const double mu[4] = {1.0, 0.8, -0.6, 0.4};
  const double sg[4] = {1.3, 0.8, 1.1, 0.9};
  double closed = 0.0;
  for (int j = 0; j < 4; ++j) closed += mu[j] * mu[j] + (sg[j] - 1.0) * (sg[j] - 1.0);
  Rng rng(20260819);
  Mat gx(n, gd), gy(n, gd);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < gd; ++j) {
      gx(i, j) = rng.normal();
      gy(i, j) = mu[j] + sg[j] * rng.normal();
    }
  const double sampled = fid(gx, gy);
  const double rel = std::abs(sampled - closed) / closed;
  if (rel > 0.05)
    return {false, fmt("metrics: sampled-Gaussian FID %.4f vs closed form %.4f "
                       "(off %.3f > 0.05)", sampled, closed, rel)};

  const double secs = seconds_since(t0);
  return {secs < 180.0,
          fmt("metric oracles: 30 exact instances, FID(X,X)=0, 1-D=%.10f, sampled "
              "Gaussian off %.3f%s",
              one_d, rel, secs < 180.0 ? "" : "; over the 3 min budget")};
}

// ---------------------------------------------------------------- criterion 4

Outcome criterion4() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string base = (fs::temp_directory_path() / "dmmia_acceptance_c4").string();
  fs::remove_all(base);

  double acc_dmmia = 0.0, acc_ce = 0.0, div_dmmia = 0.0, div_ce = 0.0;
  int n_rows = 0;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    PipelineConfig cfg = parse_pipeline_config("{}");  // the desk preset
    cfg.seed = seed;
    cfg.out_dir = base + "/s" + std::to_string(seed) + "_dmmia";
    run_prepare_data(cfg);
    run_train_target(cfg);
    run_train_eval(cfg);
    run_pretrain_generator(cfg);
    run_attack_command(cfg);
    const std::vector<MetricsRow> rows_d = run_evaluate(cfg);

    // The baseline shares data and models; only the attack differs.
    PipelineConfig ce = cfg;
    ce.attack.lambda1 = 0.0;
    ce.attack.lambda2 = 0.0;
    ce.out_dir = base + "/s" + std::to_string(seed) + "_ce";
    fs::create_directories(ce.out_dir);
    fs::copy(cfg.out_dir + "/data", ce.out_dir + "/data", fs::copy_options::recursive);
    fs::copy(cfg.out_dir + "/models", ce.out_dir + "/models", fs::copy_options::recursive);
    run_attack_command(ce);
    const std::vector<MetricsRow> rows_c = run_evaluate(ce);

    for (const MetricsRow& r : rows_d) {
      acc_dmmia += r.acc1;
      div_dmmia += r.div;
    }
    for (const MetricsRow& r : rows_c) {
      acc_ce += r.acc1;
      div_ce += r.div;
    }
    n_rows += static_cast<int>(rows_d.size());
  }
  acc_dmmia /= n_rows;
  acc_ce /= n_rows;
  div_dmmia /= n_rows;
  div_ce /= n_rows;

  const double secs = seconds_since(t0);
  const bool directional = acc_dmmia - acc_ce > 0.0 && div_dmmia >= div_ce;
  return {directional && secs < 1800.0,
          fmt("directional study: mean Acc@1 %.2f (prototype) vs %.2f (CE), delta %+.2f; "
              "DIV %.4f vs %.4f%s",
              acc_dmmia, acc_ce, acc_dmmia - acc_ce, div_dmmia, div_ce,
              secs < 1800.0 ? "" : "; over the 30 min budget")};
}

// ---------------------------------------------------------------- criterion 5

struct SmallLab {
  Classifier target;
  Generator prior;
  Dataset priv;
};

SmallLab make_small_lab(std::uint64_t seed) {
  const Dataset full = synth_digits(12, 4, mix_seed(seed, 10));
  const SplitResult split = split_public_private(full, {{2, 3}, {0, 1}});

  TrainConfig tc;
  tc.epochs = 4;
  tc.lr = 0.005;
  tc.batch_size = 8;
  tc.holdout_fraction = 0.0;
  tc.seed = mix_seed(seed, 20);
  tc.expected_classes = 2;
  auto [target, t_report] = train_classifier(split.private_ds, {32, 16}, tc);

  GeneratorTrainConfig gc;
  gc.mode = "autoencoder";
  gc.z_dim = 8;
  gc.w_dim = 16;
  gc.hidden = 48;
  gc.epochs = 3;
  gc.lr = 0.002;
  gc.batch_size = 12;
  gc.seed = mix_seed(seed, 22);
  auto [prior, g_report] = pretrain_generator(split.public_ds, gc);

  return {std::move(target), std::move(prior), split.private_ds};
}

AttackConfig small_attack(std::uint64_t seed, double l1, double l2) {
  AttackConfig a;
  a.target_class = 0;
  a.pool_size = 30;
  a.n_selected = 8;
  a.steps = 3;
  a.batch_size = 4;
  a.lr = 0.005;
  a.lambda1 = l1;
  a.lambda2 = l2;
  a.n_w = 12;
  a.rho = 6;
  a.retention = 0.7;
  a.seed = seed;
  return a;
}

Outcome criterion5() {
  SmallLab lab = make_small_lab(123);
  const std::uint64_t kSeed = 777;

  // Zero-weight run through the full implementation.
  const AttackConfig cfg = small_attack(kSeed, 0.0, 0.0);
  const AttackResult res = run_attack(lab.target, lab.prior, cfg);

  // Independent pure-CE path: same salts, cross-entropy only.
  Generator gen = lab.prior;
  gen.reinit_mapping(mix_seed(kSeed, 2));
  Rng pool_rng(mix_seed(kSeed, 1));
  const Mat z = select_latents(lab.target, gen, cfg.target_class, cfg.pool_size,
                               cfg.n_selected, false, pool_rng);
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.beta1 = cfg.beta1;
  acfg.beta2 = cfg.beta2;
  Adam opt(gen.mapping().params(), acfg);
  Rng shuffle_rng(mix_seed(kSeed, 3));
  std::vector<Index> order(static_cast<std::size_t>(cfg.n_selected));
  std::iota(order.begin(), order.end(), Index{0});
  std::vector<double> ce_trace;
  for (int step = 0; step < cfg.steps; ++step) {
    shuffle_rng.shuffle(order);
    for (Index start = 0; start < cfg.n_selected; start += cfg.batch_size) {
      const Index stop = std::min(cfg.n_selected, start + cfg.batch_size);
      Mat zb(stop - start, z.cols());
      for (Index r = start; r < stop; ++r) zb.row(r - start) = z.row(order[r]);
      const std::vector<int> labels(static_cast<std::size_t>(stop - start),
                                    cfg.target_class);
      Tensor x = gen.decode(Tensor::from_matrix(zb));
      Tensor ce = cross_entropy(lab.target.logits(x), labels);
      ce_trace.push_back(ce.item());
      backward(ce);
      opt.step();
      opt.zero_grad();
    }
  }
  const Mat ref_images = gen.decode_values(z);

  if (res.z.rows() != z.rows() ||
      std::memcmp(res.z.data(), z.data(), sizeof(double) * z.size()) != 0)
    return {false, "degenerate lambdas: latent selection diverged from the CE path"};
  if (res.images.rows() != ref_images.rows() ||
      std::memcmp(res.images.data(), ref_images.data(),
                  sizeof(double) * ref_images.size()) != 0)
    return {false, "degenerate lambdas: images are not bitwise the pure-CE result"};
  if (res.trajectory.size() != ce_trace.size())
    return {false, "degenerate lambdas: trajectory lengths differ"};
  for (std::size_t i = 0; i < ce_trace.size(); ++i)
    if (res.trajectory[i].total != ce_trace[i] || res.trajectory[i].ce != ce_trace[i])
      return {false, fmt("degenerate lambdas: loss %zu differs from the CE path", i)};

  // A fresh memory bank has never been written: its class scores are uniform,
  // so the first recorded disambiguation loss is exactly ln K.
  const AttackResult warm = run_attack(lab.target, lab.prior, small_attack(778, 0.3, 0.7));
  const double ln_k = std::log(static_cast<double>(lab.target.n_classes()));
  const double idr0 = warm.trajectory.front().idr;
  if (std::abs(idr0 - ln_k) > 1e-12)
    return {false, fmt("degenerate lambdas: first-step bank loss %.17g vs ln K %.17g",
                       idr0, ln_k)};

  return {true, fmt("degenerate lambdas: %d batches bitwise equal to the pure-CE path; "
                    "first-step bank loss matches ln K to %.1g",
                    static_cast<int>(ce_trace.size()), std::abs(idr0 - ln_k))};
}

// ---------------------------------------------------------------- criterion 6

std::map<std::string, std::string> collect_artifacts(const std::string& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext != ".ck" && ext != ".csv") continue;
    out[fs::relative(entry.path(), root).string()] = read_file(entry.path().string());
  }
  return out;
}

Outcome criterion6() {
  const std::string base = (fs::temp_directory_path() / "dmmia_acceptance_c6").string();
  fs::remove_all(base);

  PipelineConfig cfg = parse_pipeline_config(R"({
    "seed": 11,
    "data": {"source": "synthetic", "n_per_class": 12, "n_classes": 4,
             "public_classes": [2, 3], "private_classes": [0, 1]},
    "target": {"hidden": [32, 16], "epochs": 4, "lr": 0.005, "batch_size": 8,
               "holdout_fraction": 0.0},
    "evaluator": {"hidden": [24, 12], "epochs": 4, "lr": 0.005, "batch_size": 8,
                  "holdout_fraction": 0.0},
    "generator": {"mode": "autoencoder", "z_dim": 8, "w_dim": 16, "hidden": 48,
                  "epochs": 3, "lr": 0.002, "batch_size": 12},
    "attack": {"lambda1": 0.3, "lambda2": 0.7, "r": 0.7, "n_w": 12, "rho": 6,
               "pool": 30, "selected": 8, "steps": 3, "batch_size": 4, "lr": 0.005},
    "metrics": {"prdc_k": 3},
    "sweep": {"lambda2": [0.0, 0.7]}
  })");

  auto run_all = [](PipelineConfig c) {
    run_prepare_data(c);
    run_train_target(c);
    run_train_eval(c);
    run_pretrain_generator(c);
    run_attack_command(c);
    run_evaluate(c);
    run_theory_check(c);
    run_sweep(c);
  };
  cfg.out_dir = base + "/a";
  run_all(cfg);
  cfg.out_dir = base + "/b";
  run_all(cfg);

  const auto a = collect_artifacts(base + "/a");
  const auto b = collect_artifacts(base + "/b");
  if (a.size() != b.size())
    return {false, fmt("determinism: run A wrote %zu artifacts, run B %zu", a.size(),
                       b.size())};
  for (const auto& [rel, bytes] : a) {
    const auto it = b.find(rel);
    if (it == b.end()) return {false, "determinism: run B is missing " + rel};
    if (it->second != bytes) return {false, "determinism: " + rel + " differs between runs"};
  }
  return {true, fmt("determinism: %zu CSVs and checkpoints byte-identical across reruns",
                    a.size())};
}

// ---------------------------------------------------------------- criterion 7

Outcome criterion7() {
  SmallLab lab = make_small_lab(321);
  const std::uint64_t reference = lab.prior.synthesis_checksum();

  int runs = 0;
  for (const auto& [l1, l2] : std::vector<std::pair<double, double>>{
           {0.0, 0.0}, {0.3, 0.0}, {0.0, 0.7}, {0.3, 0.7}})
    for (std::uint64_t seed : {5ull, 6ull}) {
      AttackConfig cfg = small_attack(seed, l1, l2);
      cfg.target_class = static_cast<int>(seed % 2);
      const AttackResult res = run_attack(lab.target, lab.prior, cfg);
      ++runs;
      if (res.synthesis_checksum_before != reference ||
          res.synthesis_checksum_after != reference)
        return {false, fmt("frozen prior: checksum drifted on run %d (weights %.1f/%.1f)",
                           runs, l1, l2)};
    }
  if (lab.prior.synthesis_checksum() != reference)
    return {false, "frozen prior: the shared prior itself changed"};
  return {true, fmt("frozen prior: synthesis checksum %016llx unchanged across %d runs",
                    static_cast<unsigned long long>(reference), runs)};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else if (std::strcmp(argv[i], "--help") == 0) {
      std::printf("usage: acceptance [--criterion N]\n");
      return 0;
    }
  }

  const struct {
    int id;
    Outcome (*fn)();
  } table[] = {{1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},
               {5, criterion5}, {6, criterion6}, {7, criterion7}};

  bool all_pass = true;
  bool any_run = false;
  for (const auto& entry : table) {
    if (only != 0 && entry.id != only) continue;
    any_run = true;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = entry.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("criterion %d: %s - %s (%.1f s)\n", entry.id, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    all_pass = all_pass && o.pass;
  }
  if (!any_run) {
    std::fprintf(stderr, "acceptance: unknown criterion %d\n", only);
    return 2;
  }
  return all_pass ? 0 : 1;
}
