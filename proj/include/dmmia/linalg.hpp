#ifndef DMMIA_LINALG_HPP
#define DMMIA_LINALG_HPP

#include "dmmia/tensor.hpp"

namespace dmmia {

struct EighResult {
  Vec eigenvalues;   // ascending not guaranteed; order follows the diagonal
  Mat eigenvectors;  // columns; A = V diag(w) V^T
};

// Cyclic Jacobi rotations on a symmetric matrix. Iterates full sweeps until
// every off-diagonal magnitude is <= tol (absolute), then reads eigenvalues
// off the diagonal. Throws NumericalError if max_sweeps is exhausted and
// ContractError if the input is not square/symmetric.
EighResult jacobi_eigh(Mat a, double tol = 1e-12, int max_sweeps = 100);

// Euclidean projection onto the probability simplex {p >= 0, sum p = 1}
// via the sorted-cumulative-sum threshold rule.
Vec simplex_project(const Vec& v);

// Symmetric square root of a positive-semidefinite matrix through the Jacobi
// eigendecomposition. Eigenvalues below -1e-10 raise NumericalError; small
// negative rounding residue is clamped to zero.
Mat matrix_sqrt_psd(const Mat& a);

// FNV-1a over a byte range; used for config digests and parameter checksums.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull);

}  // namespace dmmia

#endif
