#ifndef DMMIA_METRICS_HPP
#define DMMIA_METRICS_HPP

#include <string>
#include <vector>

#include "dmmia/models.hpp"
#include "dmmia/tensor.hpp"

namespace dmmia {

// Top-k accuracy in percent. A row counts as a hit when its label lands in
// the k highest probabilities, ranking ties toward the lower class index so
// results never depend on memory layout. k larger than the class count keeps
// every class and the hit is certain.
double acc_at_k(const Mat& probs, const std::vector<int>& labels, int k);

// Convenience wrapper: scores `images` under `clf` with every row labeled
// `label`.
double acc_at_k(const Classifier& clf, const Mat& images, int label, int k);

// Mean over rows of `a` of the distance to the nearest row of `b`.
double mean_nearest_l2(const Mat& a, const Mat& b);
// Cosine distance 1 - cos(a_i, b_j); zero-norm rows raise NumericalError.
double mean_nearest_cosine(const Mat& a, const Mat& b);

// Frechet distance between Gaussians fitted to the two row sets (unbiased
// covariances, so each set needs at least two rows). Residues inside 1e-9 of
// zero collapse to exactly zero; anything more negative raises
// NumericalError.
double fid(const Mat& real, const Mat& fake);

struct Prdc {
  double precision = 0.0;
  double recall = 0.0;
  double density = 0.0;
  double coverage = 0.0;
};

// k-nearest-neighbor manifold metrics. Membership tests use the strict
// inequality d < radius, where a point's radius is its k-th nearest-neighbor
// distance within its own set (self excluded); identical generic sets then
// score exactly 1 on all four. k == 0 picks 5, or 3 when the smaller set has
// at most 50 rows; k must stay below both set sizes.
Prdc prdc(const Mat& real, const Mat& fake, Index k = 0);

// Mean pairwise L2 distance between distinct rows; needs at least two rows.
double pairwise_diversity(const Mat& x);

// One evaluation row: everything measured for a single (class, method) cell.
struct MetricsRow {
  int target_class = 0;
  std::string method;
  double acc1 = 0.0;
  double acc5 = 0.0;
  double l2_eval = 0.0;
  double cos_eval = 0.0;
  double fid = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double density = 0.0;
  double coverage = 0.0;
  double div = 0.0;  // mean of the four manifold metrics
};

// Runs the full evaluation protocol in the evaluator's feature space:
// accuracies from its probabilities, distances / Frechet / manifold metrics
// between its features of the attack images and of the real private images.
MetricsRow build_row(const Classifier& evaluator, const Mat& attack_images,
                     const Mat& real_images, int target_class,
                     const std::string& method, Index prdc_k = 0);

// CSV with a fixed header; doubles print as %.17g so parse(to_csv(x)) == x
// bitwise. `comments` emit as leading "# " lines; parse collects them.
std::string to_csv(const std::vector<MetricsRow>& rows,
                   const std::vector<std::string>& comments = {});
std::vector<MetricsRow> parse_csv(const std::string& text,
                                  std::vector<std::string>* comments = nullptr);

}  // namespace dmmia

#endif
