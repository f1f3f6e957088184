#ifndef DMMIA_DATA_HPP
#define DMMIA_DATA_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmmia/tensor.hpp"

namespace dmmia {

// A labelled image set. Pixels are stored row-major as one image per row,
// every value in [0, 1]; labels are non-negative ints.
struct Dataset {
  Mat pixels;               // n x (rows*cols)
  std::vector<int> labels;  // size n
  Index rows = 28;
  Index cols = 28;

  Index n() const { return pixels.rows(); }
  Index pixels_per_image() const { return rows * cols; }
  int label_max() const;
  // Throws if sizes disagree, a pixel leaves [0,1], or a label is negative.
  void validate() const;
};

// --- IDX (big-endian) encoding ---------------------------------------------
// Images: u32 magic 0x00000803, u32 count, u32 rows, u32 cols, then one byte
// per pixel. Labels: u32 magic 0x00000801, u32 count, then one byte each.
// Parsing errors name the offset; pixel bytes map to [0,1] by /255.

Dataset parse_idx(const std::vector<std::uint8_t>& image_bytes,
                  const std::vector<std::uint8_t>& label_bytes);

// Quantizes pixels with round(p*255); exact for byte-sourced datasets.
std::vector<std::uint8_t> encode_idx_images(const Dataset& ds);
std::vector<std::uint8_t> encode_idx_labels(const Dataset& ds);

Dataset load_idx(const std::string& image_path, const std::string& label_path);
void save_idx(const Dataset& ds, const std::string& image_path,
              const std::string& label_path);

// --- synthetic digits -------------------------------------------------------
// Deterministic 28x28 glyphs, one seven-segment stroke template per class,
// with integer translation jitter of up to 2 px and additive N(0, 0.05^2)
// noise clamped back to [0,1]. Samples are ordered class-major.
Dataset synth_digits(Index n_per_class, int n_classes, std::uint64_t seed);

// The clean template for one class, 28x28 flattened; exposed for tests.
Vec synth_template(int digit);

// --- public/private split ---------------------------------------------------
struct SplitSpec {
  std::vector<int> public_labels;
  std::vector<int> private_labels;
};

struct SplitResult {
  Dataset public_ds;           // labels kept as-is
  Dataset private_ds;          // labels re-indexed densely by sorted order
  std::map<int, int> label_map;  // original private label -> dense index
};

// Partitions by label. The two label sets must be disjoint, non-empty, and
// every listed label must occur in `ds`.
SplitResult split_public_private(const Dataset& ds, const SplitSpec& spec);

}  // namespace dmmia

#endif
