#include "fairkan/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fairkan {
namespace {

constexpr char kMagic[4] = {'F', 'K', 'A', 'N'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int b = 0; b < 4; ++b) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  void u64(std::uint64_t v) {
    for (int b = 0; b < 8; ++b) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void matrix(const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t(data_[at_++]) << (8 * b);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= std::uint64_t(data_[at_++]) << (8 * b);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void matrix(Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = f64();
  }
  std::size_t position() const { return at_; }

 private:
  void need(std::size_t n) const {
    if (at_ + n > size_) throw FormatError("model stream truncated at byte " + std::to_string(at_));
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t at_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> serialize(const KanNetwork<double>& net) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kModelFormatVersion);
  w.u32(net.base_enabled() ? 1u : 0u);
  w.u32(static_cast<std::uint32_t>(net.depth()));
  for (const auto& L : net.layers()) {
    w.u32(static_cast<std::uint32_t>(L.in_dim));
    w.u32(static_cast<std::uint32_t>(L.out_dim));
    w.u32(static_cast<std::uint32_t>(L.grid.order()));
    w.u32(static_cast<std::uint32_t>(L.grid.intervals()));
    w.f64(L.grid.lo());
    w.f64(L.grid.hi());
    w.matrix(L.coeffs);
    w.matrix(L.base_weight);
    w.matrix(L.spline_scale);
  }
  auto& bytes = w.bytes();
  w.u64(fnv1a64(bytes.data(), bytes.size()));
  return std::move(w.bytes());
}

KanNetwork<double> deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a model file (bad magic)");
  }
  Reader r(bytes.data() + 4, bytes.size() - 4);
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model format version " + std::to_string(version) + " (this build reads " +
                      std::to_string(kModelFormatVersion) + ")");
  }
  const std::uint32_t flags = r.u32();
  const std::uint32_t depth = r.u32();
  if (depth == 0 || depth > 1024) throw FormatError("implausible layer count " + std::to_string(depth));
  std::vector<KanLayer<double>> layers;
  for (std::uint32_t l = 0; l < depth; ++l) {
    const auto in = r.u32();
    const auto out = r.u32();
    const auto order = r.u32();
    const auto intervals = r.u32();
    const double lo = r.f64();
    const double hi = r.f64();
    if (in == 0 || out == 0 || in > (1u << 20) || out > (1u << 20) || intervals > (1u << 20)) {
      throw FormatError("implausible layer shape in layer " + std::to_string(l));
    }
    SplineGrid<double> grid = [&] {
      try {
        return SplineGrid<double>(static_cast<int>(order), static_cast<int>(intervals), lo, hi);
      } catch (const ConfigError& e) {
        throw FormatError(std::string("invalid grid in model file: ") + e.what());
      }
    }();
    KanLayer<double> layer(static_cast<int>(in), static_cast<int>(out), grid);
    r.matrix(layer.coeffs);
    r.matrix(layer.base_weight);
    r.matrix(layer.spline_scale);
    layers.push_back(std::move(layer));
  }
  const std::size_t payload = 4 + r.position();
  const std::uint64_t stored = r.u64();
  if (stored != fnv1a64(bytes.data(), payload)) throw FormatError("model checksum mismatch (corrupted file)");
  if (payload + 8 != bytes.size()) throw FormatError("trailing bytes after model payload");
  try {
    return KanNetwork<double>(std::move(layers), (flags & 1u) != 0);
  } catch (const Error& e) {
    throw FormatError(std::string("inconsistent model file: ") + e.what());
  }
}

std::string export_text(const KanNetwork<double>& net) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "fairkan model v" << kModelFormatVersion << "\n";
  os << "base_enabled " << (net.base_enabled() ? 1 : 0) << "\n";
  os << "widths";
  for (int w : net.widths()) os << ' ' << w;
  os << "\n";
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const auto& L = net.layer(l);
    os << "layer " << l << " in " << L.in_dim << " out " << L.out_dim << " order " << L.grid.order()
       << " intervals " << L.grid.intervals() << " domain " << L.grid.lo() << ' ' << L.grid.hi() << "\n";
    for (int i = 0; i < L.in_dim; ++i) {
      for (int j = 0; j < L.out_dim; ++j) {
        os << "  edge " << i << ' ' << j << " base " << L.base_weight(i, j) << " scale "
           << L.spline_scale(i, j) << " coeffs";
        const auto e = L.edge_index(i, j);
        for (Eigen::Index c = 0; c < L.coeffs.cols(); ++c) os << ' ' << L.coeffs(e, c);
        os << "\n";
      }
    }
  }
  return os.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw UsageError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_model(const KanNetwork<double>& net, const std::filesystem::path& path) {
  const auto bytes = serialize(net);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

KanNetwork<double> load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace fairkan
