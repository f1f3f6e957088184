#include "dmmia/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "dmmia/io.hpp"
#include "dmmia/rng.hpp"

namespace dmmia {

// --- io helpers --------------------------------------------------------------

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("read failed: " + path);
  return bytes;
}

void write_file_atomic(const std::string& path, const void* data, std::size_t n) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + tmp);
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!f) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + tmp + " -> " + path + ": " + ec.message());
}

void write_file_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw IoError("cannot create directory: " + path + ": " + ec.message());
}

// --- dataset -----------------------------------------------------------------

int Dataset::label_max() const {
  int mx = -1;
  for (int l : labels) mx = std::max(mx, l);
  return mx;
}

void Dataset::validate() const {
  if (pixels.rows() != static_cast<Index>(labels.size())) {
    throw ContractError("dataset: " + std::to_string(pixels.rows()) + " images vs " +
                        std::to_string(labels.size()) + " labels");
  }
  if (pixels.cols() != rows * cols) {
    throw ContractError("dataset: image width " + std::to_string(pixels.cols()) +
                        " != rows*cols " + std::to_string(rows * cols));
  }
  if (pixels.size() > 0) {
    const double lo = pixels.minCoeff(), hi = pixels.maxCoeff();
    if (!(lo >= 0.0 && hi <= 1.0)) {
      throw ContractError("dataset: pixel out of [0,1], range [" +
                          std::to_string(lo) + "," + std::to_string(hi) + "]");
    }
  }
  for (int l : labels) {
    if (l < 0) throw ContractError("dataset: negative label " + std::to_string(l));
  }
}

// --- idx ---------------------------------------------------------------------

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_u32_be(const std::vector<std::uint8_t>& b, std::size_t off,
                          const char* what) {
  if (off + 4 > b.size()) {
    throw ParseError(std::string("idx: truncated ") + what + " at offset " +
                     std::to_string(off));
  }
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

void push_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

}  // namespace

Dataset parse_idx(const std::vector<std::uint8_t>& image_bytes,
                  const std::vector<std::uint8_t>& label_bytes) {
  const std::uint32_t im = read_u32_be(image_bytes, 0, "image magic");
  if (im != kImageMagic) {
    throw ParseError("idx: wrong magic for images: expected " + hex32(kImageMagic) +
                     ", found " + hex32(im) + " (offset 0)");
  }
  const std::uint32_t n = read_u32_be(image_bytes, 4, "image count");
  const std::uint32_t rows = read_u32_be(image_bytes, 8, "image rows");
  const std::uint32_t cols = read_u32_be(image_bytes, 12, "image cols");
  const std::size_t need = 16 + std::size_t(n) * rows * cols;
  if (image_bytes.size() < need) {
    throw ParseError("idx: truncated image payload: need " + std::to_string(need) +
                     " bytes, have " + std::to_string(image_bytes.size()));
  }

  const std::uint32_t lm = read_u32_be(label_bytes, 0, "label magic");
  if (lm != kLabelMagic) {
    throw ParseError("idx: wrong magic for labels: expected " + hex32(kLabelMagic) +
                     ", found " + hex32(lm) + " (offset 0)");
  }
  const std::uint32_t ln = read_u32_be(label_bytes, 4, "label count");
  if (label_bytes.size() < 8 + std::size_t(ln)) {
    throw ParseError("idx: truncated label payload: need " +
                     std::to_string(8 + std::size_t(ln)) + " bytes, have " +
                     std::to_string(label_bytes.size()));
  }
  if (n != ln) {
    throw ParseError("idx: image count " + std::to_string(n) + " != label count " +
                     std::to_string(ln));
  }

  Dataset ds;
  ds.rows = rows;
  ds.cols = cols;
  ds.pixels.resize(n, Index(rows) * cols);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < std::size_t(rows) * cols; ++j) {
      ds.pixels(static_cast<Index>(i), static_cast<Index>(j)) =
          image_bytes[16 + i * rows * cols + j] / 255.0;
    }
  }
  ds.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(label_bytes[8 + i]);
  ds.validate();
  return ds;
}

std::vector<std::uint8_t> encode_idx_images(const Dataset& ds) {
  ds.validate();
  std::vector<std::uint8_t> out;
  out.reserve(16 + static_cast<std::size_t>(ds.pixels.size()));
  push_u32_be(out, kImageMagic);
  push_u32_be(out, static_cast<std::uint32_t>(ds.n()));
  push_u32_be(out, static_cast<std::uint32_t>(ds.rows));
  push_u32_be(out, static_cast<std::uint32_t>(ds.cols));
  for (Index i = 0; i < ds.n(); ++i) {
    for (Index j = 0; j < ds.pixels_per_image(); ++j) {
      out.push_back(static_cast<std::uint8_t>(std::lround(ds.pixels(i, j) * 255.0)));
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const Dataset& ds) {
  ds.validate();
  std::vector<std::uint8_t> out;
  out.reserve(8 + ds.labels.size());
  push_u32_be(out, kLabelMagic);
  push_u32_be(out, static_cast<std::uint32_t>(ds.labels.size()));
  for (int l : ds.labels) {
    if (l > 255) throw ContractError("idx: label " + std::to_string(l) + " > 255");
    out.push_back(static_cast<std::uint8_t>(l));
  }
  return out;
}

Dataset load_idx(const std::string& image_path, const std::string& label_path) {
  return parse_idx(read_file_bytes(image_path), read_file_bytes(label_path));
}

void save_idx(const Dataset& ds, const std::string& image_path,
              const std::string& label_path) {
  const auto ib = encode_idx_images(ds);
  const auto lb = encode_idx_labels(ds);
  write_file_atomic(image_path, ib.data(), ib.size());
  write_file_atomic(label_path, lb.data(), lb.size());
}

// --- synthetic digits --------------------------------------------------------

namespace {

struct Segment {
  double x0, y0, x1, y1;
};

// Seven-segment layout on the 28x28 canvas:
//   A top, B top-right, C bottom-right, D bottom, E bottom-left, F top-left,
//   G middle.
const Segment kSegments[7] = {
    {8.0, 5.0, 19.0, 5.0},    // A
    {19.0, 5.0, 19.0, 13.5},  // B
    {19.0, 13.5, 19.0, 22.0}, // C
    {8.0, 22.0, 19.0, 22.0},  // D
    {8.0, 13.5, 8.0, 22.0},   // E
    {8.0, 5.0, 8.0, 13.5},    // F
    {8.0, 13.5, 19.0, 13.5},  // G
};

// Active segments per digit, as ABCDEFG bitmasks.
constexpr unsigned kDigitMask[10] = {
    0b1111110,  // 0: ABCDEF
    0b0110000,  // 1: BC
    0b1101101,  // 2: ABDEG
    0b1111001,  // 3: ABCDG
    0b0110011,  // 4: BCFG
    0b1011011,  // 5: ACDFG
    0b1011111,  // 6: ACDEFG
    0b1110000,  // 7: ABC
    0b1111111,  // 8: all
    0b1111011,  // 9: ABCDFG
};

double dist_to_segment(double px, double py, const Segment& s) {
  const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double cx = s.x0 + t * dx, cy = s.y0 + t * dy;
  return std::hypot(px - cx, py - cy);
}

}  // namespace

Vec synth_template(int digit) {
  if (digit < 0 || digit > 9) {
    throw ContractError("synth_template: digit " + std::to_string(digit) +
                        " outside [0,9]");
  }
  Vec img = Vec::Zero(28 * 28);
  const unsigned mask = kDigitMask[digit];
  for (int y = 0; y < 28; ++y) {
    for (int x = 0; x < 28; ++x) {
      double intensity = 0.0;
      for (int s = 0; s < 7; ++s) {
        if (!(mask & (1u << (6 - s)))) continue;
        const double d = dist_to_segment(x, y, kSegments[s]);
        // Solid stroke out to ~0.8 px, then a 1 px anti-aliased edge.
        intensity = std::max(intensity, std::clamp(1.8 - d, 0.0, 1.0));
      }
      img[y * 28 + x] = intensity;
    }
  }
  return img;
}

Dataset synth_digits(Index n_per_class, int n_classes, std::uint64_t seed) {
  if (n_per_class < 1) {
    throw ContractError("synth_digits: n_per_class must be >= 1");
  }
  if (n_classes < 1 || n_classes > 10) {
    throw ContractError("synth_digits: n_classes must be in [1,10], got " +
                        std::to_string(n_classes));
  }
  Rng rng(seed);
  Dataset ds;
  ds.rows = ds.cols = 28;
  ds.pixels.resize(n_per_class * n_classes, 28 * 28);
  ds.labels.reserve(static_cast<std::size_t>(n_per_class) * n_classes);

  std::vector<Vec> templates;
  templates.reserve(n_classes);
  for (int c = 0; c < n_classes; ++c) templates.push_back(synth_template(c));

  Index row = 0;
  for (int c = 0; c < n_classes; ++c) {
    for (Index i = 0; i < n_per_class; ++i, ++row) {
      const int dx = static_cast<int>(rng.uniform_below(5)) - 2;  // [-2, 2]
      const int dy = static_cast<int>(rng.uniform_below(5)) - 2;
      for (int y = 0; y < 28; ++y) {
        for (int x = 0; x < 28; ++x) {
          const int sx = x - dx, sy = y - dy;
          double v = 0.0;
          if (sx >= 0 && sx < 28 && sy >= 0 && sy < 28) {
            v = templates[c][sy * 28 + sx];
          }
          v += rng.normal(0.0, 0.05);
          ds.pixels(row, y * 28 + x) = std::clamp(v, 0.0, 1.0);
        }
      }
      ds.labels.push_back(c);
    }
  }
  ds.validate();
  return ds;
}

// --- split -------------------------------------------------------------------

SplitResult split_public_private(const Dataset& ds, const SplitSpec& spec) {
  ds.validate();
  if (spec.public_labels.empty() || spec.private_labels.empty()) {
    throw ContractError("split: public and private label sets must be non-empty");
  }
  std::set<int> pub(spec.public_labels.begin(), spec.public_labels.end());
  std::set<int> priv(spec.private_labels.begin(), spec.private_labels.end());
  for (int l : priv) {
    if (pub.count(l)) {
      throw ContractError("split: label " + std::to_string(l) +
                          " appears in both public and private sets");
    }
  }
  std::set<int> present(ds.labels.begin(), ds.labels.end());
  for (int l : pub) {
    if (!present.count(l)) {
      throw ContractError("split: public label " + std::to_string(l) +
                          " not present in dataset");
    }
  }
  for (int l : priv) {
    if (!present.count(l)) {
      throw ContractError("split: private label " + std::to_string(l) +
                          " not present in dataset");
    }
  }

  std::map<int, int> label_map;
  int next = 0;
  for (int l : priv) label_map[l] = next++;  // std::set iterates in sorted order

  std::vector<Index> pub_rows, priv_rows;
  for (Index i = 0; i < ds.n(); ++i) {
    const int l = ds.labels[static_cast<std::size_t>(i)];
    if (pub.count(l)) pub_rows.push_back(i);
    else if (priv.count(l)) priv_rows.push_back(i);
  }

  auto take = [&](const std::vector<Index>& rows, bool remap) {
    Dataset out;
    out.rows = ds.rows;
    out.cols = ds.cols;
    out.pixels.resize(static_cast<Index>(rows.size()), ds.pixels.cols());
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.pixels.row(static_cast<Index>(i)) = ds.pixels.row(rows[i]);
      const int l = ds.labels[static_cast<std::size_t>(rows[i])];
      out.labels.push_back(remap ? label_map.at(l) : l);
    }
    return out;
  };

  SplitResult res;
  res.public_ds = take(pub_rows, false);
  res.private_ds = take(priv_rows, true);
  res.label_map = std::move(label_map);
  res.public_ds.validate();
  res.private_ds.validate();
  return res;
}

}  // namespace dmmia
