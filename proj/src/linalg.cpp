#include "dmmia/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace dmmia {

namespace {

double max_offdiag(const Mat& a) {
  double mx = 0.0;
  for (Index p = 0; p < a.rows(); ++p) {
    for (Index q = p + 1; q < a.cols(); ++q) {
      mx = std::max(mx, std::abs(a(p, q)));
    }
  }
  return mx;
}

}  // namespace

EighResult jacobi_eigh(Mat a, double tol, int max_sweeps) {
  if (a.rows() != a.cols()) {
    throw ContractError("jacobi_eigh: matrix must be square, got " +
                        std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
  const Index n = a.rows();
  const double sym_tol = 1e-9 * std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > sym_tol) {
    throw ContractError("jacobi_eigh: matrix is not symmetric");
  }
  Mat v = Mat::Identity(n, n);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    if (max_offdiag(a) <= tol) {
      return {a.diagonal(), std::move(v)};
    }
    for (Index p = 0; p < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= tol * 1e-3) continue;
        // Classic stable rotation: tan(theta) from the smaller root.
        const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        // A <- J^T A J applied to rows/cols p and q.
        for (Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (max_offdiag(a) <= tol) {
    return {a.diagonal(), std::move(v)};
  }
  throw NumericalError("jacobi_eigh: no convergence after " +
                       std::to_string(max_sweeps) + " sweeps");
}

Vec simplex_project(const Vec& v) {
  const Index n = v.size();
  if (n == 0) throw ContractError("simplex_project: empty vector");
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cumsum = 0.0;
  double tau = 0.0;
  Index support = 0;
  for (Index j = 0; j < n; ++j) {
    cumsum += u[static_cast<std::size_t>(j)];
    const double candidate = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - candidate > 0.0) {
      tau = candidate;
      support = j + 1;
    }
  }
  if (support == 0) throw NumericalError("simplex_project: empty support");
  Vec p(n);
  for (Index i = 0; i < n; ++i) p[i] = std::max(v[i] - tau, 0.0);
  return p;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

Mat matrix_sqrt_psd(const Mat& a) {
  EighResult eig = jacobi_eigh(a);
  Vec w = eig.eigenvalues;
  for (Index i = 0; i < w.size(); ++i) {
    if (w[i] < -1e-10)
      throw NumericalError("matrix_sqrt_psd: eigenvalue " + std::to_string(w[i]) +
                           " is negative beyond rounding tolerance");
    w[i] = std::sqrt(std::max(w[i], 0.0));
  }
  return eig.eigenvectors * w.asDiagonal() * eig.eigenvectors.transpose();
}

}  // namespace dmmia
