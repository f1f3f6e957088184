#include "dmmia/checkpoint.hpp"

#include <cstring>

#include "dmmia/io.hpp"

namespace dmmia {

namespace {

constexpr char kMagic[5] = {'D', 'M', 'I', 'A', '1'};

void push_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void push_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void push_f64(std::vector<std::uint8_t>& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  push_u64(out, bits);
}

struct Reader {
  const std::vector<std::uint8_t>& b;
  std::size_t off = 0;

  void need(std::size_t n, const char* what) {
    if (off + n > b.size()) {
      throw ParseError("checkpoint: truncated " + std::string(what) + " at offset " +
                       std::to_string(off));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  double f64(const char* what) {
    const std::uint64_t bits = u64(what);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string str(std::uint32_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b.data() + off), n);
    off += n;
    return s;
  }
};

}  // namespace

void Checkpoint::add(const std::string& name, const Tensor& t) {
  for (const auto& [n, _] : blocks) {
    if (n == name) throw ContractError("checkpoint: duplicate block '" + name + "'");
  }
  blocks.emplace_back(name, t);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, _] : blocks) {
    if (n == name) return true;
  }
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : blocks) {
    if (n == name) return t;
  }
  throw ParseError("checkpoint: missing block '" + name + "'");
}

Tensor Checkpoint::get_checked(const std::string& name, const Shape& expect) const {
  const Tensor& t = get(name);
  if (t.shape() != expect) {
    throw ShapeError("checkpoint: block '" + name + "' has shape " +
                     shape_str(t.shape()) + ", expected " + shape_str(expect));
  }
  return t;
}

std::string Checkpoint::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) {
    throw ParseError("checkpoint: missing metadata key '" + key + "'");
  }
  return it->second;
}

std::string Checkpoint::meta_or(const std::string& key, const std::string& d) const {
  auto it = metadata.find(key);
  return it == metadata.end() ? d : it->second;
}

std::vector<std::uint8_t> Checkpoint::encode() const {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 5);
  push_u32(out, static_cast<std::uint32_t>(metadata.size()));
  for (const auto& [k, v] : metadata) {  // std::map: sorted, deterministic
    push_u32(out, static_cast<std::uint32_t>(k.size()));
    out.insert(out.end(), k.begin(), k.end());
    push_u32(out, static_cast<std::uint32_t>(v.size()));
    out.insert(out.end(), v.begin(), v.end());
  }
  push_u32(out, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& [name, t] : blocks) {
    push_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    push_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (Index d : t.shape()) push_u64(out, static_cast<std::uint64_t>(d));
    for (Index i = 0; i < t.size(); ++i) push_f64(out, t.value()[i]);
  }
  return out;
}

Checkpoint Checkpoint::decode(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  r.need(5, "magic");
  if (std::memcmp(bytes.data(), kMagic, 5) != 0) {
    std::string found(reinterpret_cast<const char*>(bytes.data()),
                      std::min<std::size_t>(5, bytes.size()));
    throw ParseError("checkpoint: bad magic, expected 'DMIA1', found '" + found + "'");
  }
  r.off = 5;

  Checkpoint ck;
  const std::uint32_t n_meta = r.u32("metadata count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    const std::uint32_t klen = r.u32("metadata key length");
    std::string k = r.str(klen, "metadata key");
    const std::uint32_t vlen = r.u32("metadata value length");
    ck.metadata[k] = r.str(vlen, "metadata value");
  }
  const std::uint32_t n_blocks = r.u32("block count");
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    const std::uint32_t nlen = r.u32("block name length");
    std::string name = r.str(nlen, "block name");
    const std::uint32_t rank = r.u32("block rank");
    if (rank > 8) {
      throw ParseError("checkpoint: block '" + name + "' has implausible rank " +
                       std::to_string(rank));
    }
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<Index>(r.u64("block dim")));
    }
    const Index count = shape_size(shape);
    Arr vals(count);
    for (Index j = 0; j < count; ++j) vals[j] = r.f64("block values");
    ck.blocks.emplace_back(name, Tensor::from_array(shape, std::move(vals)));
  }
  if (r.off != bytes.size()) {
    throw ParseError("checkpoint: " + std::to_string(bytes.size() - r.off) +
                     " trailing bytes at offset " + std::to_string(r.off));
  }
  return ck;
}

void Checkpoint::save(const std::string& path) const {
  const auto bytes = encode();
  write_file_atomic(path, bytes.data(), bytes.size());
}

Checkpoint Checkpoint::load(const std::string& path) {
  return decode(read_file_bytes(path));
}

}  // namespace dmmia
