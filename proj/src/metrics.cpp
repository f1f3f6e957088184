#include "dmmia/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>

#include "dmmia/errors.hpp"
#include "dmmia/linalg.hpp"

namespace dmmia {
namespace {

// Canonical sequential-coordinate Euclidean distance; every metric in this
// module funnels through it so independent reimplementations agree bitwise.
double l2_dist(const Mat& a, Index i, const Mat& b, Index j) {
  double s = 0.0;
  for (Index c = 0; c < a.cols(); ++c) {
    const double d = a(i, c) - b(j, c);
    s += d * d;
  }
  return std::sqrt(s);
}

void check_same_width(const Mat& a, const Mat& b, const char* who) {
  if (a.cols() != b.cols())
    throw ShapeError(std::string(who) + ": row width " + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.cols()));
}

constexpr const char* kCsvHeader =
    "target_class,method,acc1,acc5,l2_eval,cos_eval,fid,precision,recall,"
    "density,coverage,div";

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, std::size_t line_no) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw ParseError("metrics csv: line " + std::to_string(line_no) +
                     ": bad number '" + s + "'");
  return v;
}

}  // namespace

double acc_at_k(const Mat& probs, const std::vector<int>& labels, int k) {
  if (k < 1) throw ContractError("acc_at_k: k must be >= 1");
  if (static_cast<Index>(labels.size()) != probs.rows())
    throw ShapeError("acc_at_k: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(probs.rows()) + " rows");
  if (probs.rows() == 0) throw ContractError("acc_at_k: empty probability matrix");
  Index hits = 0;
  for (Index r = 0; r < probs.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= static_cast<int>(probs.cols()))
      throw ContractError("acc_at_k: label " + std::to_string(y) +
                          " out of range for " + std::to_string(probs.cols()) +
                          " classes");
    // The label's rank: classes that beat it outright, or tie from a lower
    // index. A hit means the rank fits inside the top k.
    Index beating = 0;
    const double py = probs(r, y);
    for (Index c = 0; c < probs.cols(); ++c) {
      if (c == y) continue;
      if (probs(r, c) > py || (probs(r, c) == py && c < static_cast<Index>(y)))
        ++beating;
    }
    if (beating < static_cast<Index>(k)) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(probs.rows());
}

double acc_at_k(const Classifier& clf, const Mat& images, int label, int k) {
  const std::vector<int> labels(static_cast<std::size_t>(images.rows()), label);
  return acc_at_k(clf.probs_of(images), labels, k);
}

double mean_nearest_l2(const Mat& a, const Mat& b) {
  check_same_width(a, b, "mean_nearest_l2");
  if (a.rows() == 0 || b.rows() == 0)
    throw ContractError("mean_nearest_l2: empty set");
  double total = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    double best = l2_dist(a, i, b, 0);
    for (Index j = 1; j < b.rows(); ++j) best = std::min(best, l2_dist(a, i, b, j));
    total += best;
  }
  return total / static_cast<double>(a.rows());
}

double mean_nearest_cosine(const Mat& a, const Mat& b) {
  check_same_width(a, b, "mean_nearest_cosine");
  if (a.rows() == 0 || b.rows() == 0)
    throw ContractError("mean_nearest_cosine: empty set");
  auto norm_of = [](const Mat& m, Index i, const char* side) {
    double s = 0.0;
    for (Index c = 0; c < m.cols(); ++c) s += m(i, c) * m(i, c);
    const double n = std::sqrt(s);
    if (n == 0.0)
      throw NumericalError("mean_nearest_cosine: zero-norm row " + std::to_string(i) +
                           " in the " + side + " set");
    return n;
  };
  std::vector<double> bn;
  for (Index j = 0; j < b.rows(); ++j) bn.push_back(norm_of(b, j, "second"));
  double total = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    const double an = norm_of(a, i, "first");
    double best = 2.0;
    for (Index j = 0; j < b.rows(); ++j) {
      double dot = 0.0;
      for (Index c = 0; c < a.cols(); ++c) dot += a(i, c) * b(j, c);
      best = std::min(best, 1.0 - dot / (an * bn[static_cast<std::size_t>(j)]));
    }
    total += best;
  }
  return total / static_cast<double>(a.rows());
}

double fid(const Mat& real, const Mat& fake) {
  check_same_width(real, fake, "fid");
  if (real.rows() < 2 || fake.rows() < 2)
    throw ContractError("fid: each set needs at least two rows for an unbiased "
                        "covariance");
  const Index d = real.cols();
  Vec mu_r = real.colwise().mean().transpose();
  Vec mu_f = fake.colwise().mean().transpose();
  Mat cr = real.rowwise() - mu_r.transpose();
  Mat cf = fake.rowwise() - mu_f.transpose();
  Mat cov_r = (cr.transpose() * cr) / static_cast<double>(real.rows() - 1);
  Mat cov_f = (cf.transpose() * cf) / static_cast<double>(fake.rows() - 1);
  cov_r = 0.5 * (cov_r + cov_r.transpose()).eval();
  cov_f = 0.5 * (cov_f + cov_f.transpose()).eval();

  Mat root_r = matrix_sqrt_psd(cov_r);
  Mat inner = root_r * cov_f * root_r;
  inner = 0.5 * (inner + inner.transpose()).eval();
  EighResult eig = jacobi_eigh(inner);
  double tr_cross = 0.0;
  for (Index i = 0; i < d; ++i) {
    const double w = eig.eigenvalues[i];
    if (w < -1e-10)
      throw NumericalError("fid: cross-covariance eigenvalue " + std::to_string(w) +
                           " is negative beyond rounding tolerance");
    tr_cross += std::sqrt(std::max(w, 0.0));
  }

  double out = (mu_r - mu_f).squaredNorm() + cov_r.trace() + cov_f.trace() -
               2.0 * tr_cross;
  if (out < -1e-9)
    throw NumericalError("fid: value " + std::to_string(out) +
                         " is negative beyond rounding tolerance");
  if (std::abs(out) <= 1e-9) return 0.0;
  return out;
}

Prdc prdc(const Mat& real, const Mat& fake, Index k) {
  check_same_width(real, fake, "prdc");
  const Index nr = real.rows(), nf = fake.rows();
  if (nr < 2 || nf < 2) throw ContractError("prdc: each set needs at least two rows");
  if (k == 0) k = std::min(nr, nf) <= 50 ? 3 : 5;
  if (k < 1 || k >= std::min(nr, nf))
    throw ContractError("prdc: k must satisfy 1 <= k < min set size, got k=" +
                        std::to_string(k) + " with sizes " + std::to_string(nr) +
                        " and " + std::to_string(nf));

  auto radii = [&](const Mat& x) {
    std::vector<double> out(static_cast<std::size_t>(x.rows()));
    std::vector<double> d;
    for (Index i = 0; i < x.rows(); ++i) {
      d.clear();
      for (Index j = 0; j < x.rows(); ++j)
        if (j != i) d.push_back(l2_dist(x, i, x, j));
      std::sort(d.begin(), d.end());
      out[static_cast<std::size_t>(i)] = d[static_cast<std::size_t>(k - 1)];
    }
    return out;
  };
  const std::vector<double> radius_r = radii(real);
  const std::vector<double> radius_f = radii(fake);

  Prdc out;
  Index close_f = 0, dens_pairs = 0;
  for (Index f = 0; f < nf; ++f) {
    bool close = false;
    for (Index r = 0; r < nr; ++r) {
      if (l2_dist(fake, f, real, r) < radius_r[static_cast<std::size_t>(r)]) {
        close = true;
        ++dens_pairs;
      }
    }
    if (close) ++close_f;
  }
  Index recalled = 0, covered = 0;
  for (Index r = 0; r < nr; ++r) {
    bool rec = false, cov = false;
    for (Index f = 0; f < nf; ++f) {
      const double d = l2_dist(real, r, fake, f);
      if (d < radius_f[static_cast<std::size_t>(f)]) rec = true;
      if (d < radius_r[static_cast<std::size_t>(r)]) cov = true;
    }
    if (rec) ++recalled;
    if (cov) ++covered;
  }
  out.precision = static_cast<double>(close_f) / static_cast<double>(nf);
  out.recall = static_cast<double>(recalled) / static_cast<double>(nr);
  out.density =
      static_cast<double>(dens_pairs) / (static_cast<double>(k) * static_cast<double>(nf));
  out.coverage = static_cast<double>(covered) / static_cast<double>(nr);
  return out;
}

double pairwise_diversity(const Mat& x) {
  if (x.rows() < 2) throw ContractError("pairwise_diversity: needs at least two rows");
  double total = 0.0;
  Index pairs = 0;
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = i + 1; j < x.rows(); ++j) {
      total += l2_dist(x, i, x, j);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

MetricsRow build_row(const Classifier& evaluator, const Mat& attack_images,
                     const Mat& real_images, int target_class,
                     const std::string& method, Index prdc_k) {
  MetricsRow row;
  row.target_class = target_class;
  row.method = method;
  row.acc1 = acc_at_k(evaluator, attack_images, target_class, 1);
  row.acc5 = acc_at_k(evaluator, attack_images, target_class, 5);
  Mat fa = evaluator.features_of(attack_images);
  Mat fr = evaluator.features_of(real_images);
  row.l2_eval = mean_nearest_l2(fa, fr);
  row.cos_eval = mean_nearest_cosine(fa, fr);
  row.fid = fid(fr, fa);
  Prdc p = prdc(fr, fa, prdc_k);
  row.precision = p.precision;
  row.recall = p.recall;
  row.density = p.density;
  row.coverage = p.coverage;
  row.div = (p.precision + p.recall + p.density + p.coverage) / 4.0;
  return row;
}

std::string to_csv(const std::vector<MetricsRow>& rows,
                   const std::vector<std::string>& comments) {
  std::ostringstream os;
  for (const std::string& c : comments) {
    if (c.find('\n') != std::string::npos)
      throw ContractError("to_csv: comments must be single lines");
    os << "# " << c << "\n";
  }
  os << kCsvHeader << "\n";
  for (const MetricsRow& r : rows) {
    if (r.method.find(',') != std::string::npos ||
        r.method.find('\n') != std::string::npos)
      throw ContractError("to_csv: method name must not contain commas or newlines");
    os << r.target_class << ',' << r.method << ',' << fmt_double(r.acc1) << ','
       << fmt_double(r.acc5) << ',' << fmt_double(r.l2_eval) << ','
       << fmt_double(r.cos_eval) << ',' << fmt_double(r.fid) << ','
       << fmt_double(r.precision) << ',' << fmt_double(r.recall) << ','
       << fmt_double(r.density) << ',' << fmt_double(r.coverage) << ','
       << fmt_double(r.div) << "\n";
  }
  return os.str();
}

std::vector<MetricsRow> parse_csv(const std::string& text,
                                  std::vector<std::string>* comments) {
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen && line[0] == '#') {
      std::string c = line.substr(1);
      if (!c.empty() && c[0] == ' ') c.erase(0, 1);
      if (comments) comments->push_back(c);
      continue;
    }
    if (!header_seen) {
      if (line != kCsvHeader)
        throw ParseError("metrics csv: line " + std::to_string(line_no) +
                         ": unexpected header '" + line + "'");
      header_seen = true;
      continue;
    }
    std::vector<std::string> fields;
    std::string tok;
    std::istringstream ls(line);
    while (std::getline(ls, tok, ',')) fields.push_back(tok);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    if (fields.size() != 12)
      throw ParseError("metrics csv: line " + std::to_string(line_no) + ": expected 12 "
                       "fields, got " + std::to_string(fields.size()));
    MetricsRow r;
    try {
      std::size_t used = 0;
      r.target_class = std::stoi(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument(fields[0]);
    } catch (const std::exception&) {
      throw ParseError("metrics csv: line " + std::to_string(line_no) +
                       ": bad class '" + fields[0] + "'");
    }
    r.method = fields[1];
    r.acc1 = parse_double(fields[2], line_no);
    r.acc5 = parse_double(fields[3], line_no);
    r.l2_eval = parse_double(fields[4], line_no);
    r.cos_eval = parse_double(fields[5], line_no);
    r.fid = parse_double(fields[6], line_no);
    r.precision = parse_double(fields[7], line_no);
    r.recall = parse_double(fields[8], line_no);
    r.density = parse_double(fields[9], line_no);
    r.coverage = parse_double(fields[10], line_no);
    r.div = parse_double(fields[11], line_no);
    rows.push_back(std::move(r));
  }
  if (!header_seen) throw ParseError("metrics csv: missing header line");
  return rows;
}

}  // namespace dmmia
