#include "pcdm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pcdm/errors.hpp"

namespace pcdm {

namespace {

constexpr char kMagic[8] = {'P', 'C', 'D', 'M', 'C', 'K', 'P', 'T'};
constexpr char kTrailer[4] = {'E', 'N', 'D', '!'};

class Writer {
 public:
  void raw(const char* p, size_t n) { out_.insert(out_.end(), p, p + n); }
  void u8(uint8_t v) { out_.push_back(v); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void values(const Tensor& t) {
    for (double v : t.data()) f64(v);
  }
  std::vector<uint8_t> take() { return std::move(out_); }

 private:
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& in) : in_(in) {}

  void need(size_t n) const {
    if (pos_ + n > in_.size()) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  void expect(const char* p, size_t n, const char* what) {
    need(n);
    if (std::memcmp(in_.data() + pos_, p, n) != 0) throw DataError(std::string("checkpoint: bad ") + what);
    pos_ += n;
  }
  uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> values(uint64_t n) {
    need(n * 8);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = f64();
    return v;
  }

 private:
  const std::vector<uint8_t>& in_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(ckpt.format_version);
  w.u64(ckpt.config_hash);
  w.u32(static_cast<uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<uint32_t>(ckpt.parameters.size()));
  for (const auto& [name, t] : ckpt.parameters) {
    w.str(name);
    w.u32(static_cast<uint32_t>(t.ndim()));
    for (int64_t d : t.shape()) w.u64(static_cast<uint64_t>(d));
    w.values(t);
  }
  w.u8(ckpt.adam ? 1 : 0);
  if (ckpt.adam) {
    const AdamState& a = *ckpt.adam;
    w.u64(static_cast<uint64_t>(a.step));
    w.f64(a.config.lr);
    w.f64(a.config.beta1);
    w.f64(a.config.beta2);
    w.f64(a.config.eps);
    w.f64(a.config.weight_decay);
    w.u32(static_cast<uint32_t>(a.m.size()));
    for (size_t i = 0; i < a.m.size(); ++i) {
      w.u64(static_cast<uint64_t>(a.m[i].numel()));
      w.values(a.m[i]);
      w.u64(static_cast<uint64_t>(a.v[i].numel()));
      w.values(a.v[i]);
    }
  }
  w.raw(kTrailer, sizeof kTrailer);
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  Checkpoint c;
  r.expect(kMagic, sizeof kMagic, "magic");
  c.format_version = r.u32();
  if (c.format_version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(c.format_version));
  c.config_hash = r.u64();
  const uint32_t n_meta = r.u32();
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    c.metadata[k] = r.str();
  }
  const uint32_t n_params = r.u32();
  for (uint32_t i = 0; i < n_params; ++i) {
    std::string name = r.str();
    const uint32_t ndim = r.u32();
    Shape shape;
    for (uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int64_t>(r.u64()));
    const int64_t n = shape_numel(shape);
    c.parameters.emplace_back(std::move(name), Tensor(shape, r.values(static_cast<uint64_t>(n))));
  }
  if (r.u8() == 1) {
    AdamState a;
    a.step = static_cast<int64_t>(r.u64());
    a.config.lr = r.f64();
    a.config.beta1 = r.f64();
    a.config.beta2 = r.f64();
    a.config.eps = r.f64();
    a.config.weight_decay = r.f64();
    const uint32_t n = r.u32();
    if (n != c.parameters.size()) throw DataError("checkpoint: optimizer state does not match parameters");
    for (uint32_t i = 0; i < n; ++i) {
      const Shape& shape = c.parameters[i].second.shape();
      const uint64_t nm = r.u64();
      if (static_cast<int64_t>(nm) != shape_numel(shape)) throw DataError("checkpoint: moment size mismatch");
      a.m.emplace_back(shape, r.values(nm));
      const uint64_t nv = r.u64();
      if (static_cast<int64_t>(nv) != shape_numel(shape)) throw DataError("checkpoint: moment size mismatch");
      a.v.emplace_back(shape, r.values(nv));
    }
    c.adam = std::move(a);
  }
  r.expect(kTrailer, sizeof kTrailer, "trailer");
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::vector<uint8_t> bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace pcdm
