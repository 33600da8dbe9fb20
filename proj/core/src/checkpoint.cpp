#include "engage/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "engage/error.hpp"

namespace engage::models {

namespace {

constexpr char kMagic[8] = {'E', 'N', 'G', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxDim = 1u << 20;

class Writer {
 public:
  template <typename T>
  void put(T value) {
    char b[sizeof(T)];
    std::memcpy(b, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    bytes.insert(bytes.end(), b, b + sizeof(T));
  }
  void u32(std::uint32_t v) { put(v); }
  void f64(double v) { put(v); }
  void matrix_row_major(const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }
  std::vector<char> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const char> b) : bytes_(b) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw DataError("checkpoint truncated");
    char b[sizeof(T)];
    std::memcpy(b, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint32_t dim() {
    const auto v = u32();
    if (v == 0 || v > kMaxDim) throw DataError("checkpoint dimension out of range");
    return v;
  }
  double f64() { return get<double>(); }
  Eigen::MatrixXd matrix_row_major(std::uint32_t rows, std::uint32_t cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = f64();
    return m;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

void write_stack(Writer& w, const Stack& s) {
  w.u32(static_cast<std::uint32_t>(s.layers.size()));
  for (const auto& l : s.layers) {
    w.u32(static_cast<std::uint32_t>(l.inputs()));
    w.u32(static_cast<std::uint32_t>(l.outputs()));
    w.u32(l.activation == nn::Activation::kGelu ? 0 : 1);
    w.f64(l.dropout);
    w.matrix_row_major(l.weight);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) w.f64(l.bias(i));
  }
  for (const auto& p : s.conditioning) {
    if (!p) {
      w.u32(0);
      continue;
    }
    w.u32(p->kind == timecond::ProjectionKind::kShift ? 1 : 2);
    w.u32(static_cast<std::uint32_t>(p->weight.rows()));
    w.u32(static_cast<std::uint32_t>(p->weight.cols()));
    w.matrix_row_major(p->weight);
    for (Eigen::Index i = 0; i < p->bias.size(); ++i) w.f64(p->bias(i));
  }
}

Stack read_stack(Reader& r) {
  Stack s;
  const auto n_layers = r.dim();
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    nn::DenseLayer l;
    const auto in = r.dim();
    const auto out = r.dim();
    const auto act = r.u32();
    if (act > 1) throw DataError("checkpoint: unknown activation tag");
    l.activation = act == 0 ? nn::Activation::kGelu : nn::Activation::kLinear;
    l.dropout = r.f64();
    if (!(l.dropout >= 0.0 && l.dropout < 1.0)) throw DataError("checkpoint: dropout out of range");
    l.weight = r.matrix_row_major(out, in);
    l.bias.resize(out);
    for (std::uint32_t k = 0; k < out; ++k) l.bias(k) = r.f64();
    if (!s.layers.empty() && s.layers.back().outputs() != in) throw DataError("checkpoint: layer widths do not chain");
    s.layers.push_back(std::move(l));
  }
  s.conditioning.resize(n_layers + 1);
  for (std::uint32_t slot = 0; slot <= n_layers; ++slot) {
    const auto kind = r.u32();
    if (kind == 0) continue;
    if (kind > 2) throw DataError("checkpoint: unknown projection kind");
    timecond::Projection p;
    p.kind = kind == 1 ? timecond::ProjectionKind::kShift : timecond::ProjectionKind::kScaleShift;
    const auto rows = r.dim();
    const auto cols = r.dim();
    p.weight = r.matrix_row_major(rows, cols);
    p.bias.resize(rows);
    for (std::uint32_t k = 0; k < rows; ++k) p.bias(k) = r.f64();
    if (p.width() != s.slot_width(slot)) throw DataError("checkpoint: projection width does not match its slot");
    s.conditioning[slot] = std::move(p);
  }
  return s;
}

}  // namespace

std::vector<char> encode_checkpoint(const Network& net) {
  Writer w;
  w.bytes.insert(w.bytes.end(), kMagic, kMagic + 8);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(net.modality));
  w.u32(static_cast<std::uint32_t>(net.strategy));
  w.u32(static_cast<std::uint32_t>(net.embeddings.spec().dim));
  w.f64(net.embeddings.spec().base);
  w.u32(net.gamepad ? 1 : 0);
  w.u32(net.frames ? 1 : 0);
  if (net.gamepad) write_stack(w, *net.gamepad);
  if (net.frames) write_stack(w, *net.frames);
  write_stack(w, net.head);
  return std::move(w.bytes);
}

Network decode_checkpoint(std::span<const char> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw DataError("checkpoint: bad magic");
  Reader r(bytes.subspan(8));
  if (r.u32() != kVersion) throw DataError("checkpoint: unsupported version");
  Network net;
  const auto modality = r.u32();
  const auto strategy = r.u32();
  if (modality > 2 || strategy > 3) throw DataError("checkpoint: unknown modality or strategy tag");
  net.modality = static_cast<Modality>(modality);
  net.strategy = static_cast<timecond::Strategy>(strategy);
  timecond::EmbeddingSpec spec;
  spec.dim = static_cast<int>(r.dim());
  spec.base = r.f64();
  if (spec.dim % 2 != 0) throw DataError("checkpoint: odd embedding dimension");
  net.embeddings = timecond::EmbeddingTable(spec);
  const bool has_gamepad = r.u32() != 0;
  const bool has_frames = r.u32() != 0;
  if (has_gamepad) net.gamepad = read_stack(r);
  if (has_frames) net.frames = read_stack(r);
  net.head = read_stack(r);
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  return net;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(net);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("I/O failure writing " + path.string());
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing file: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace engage::models
