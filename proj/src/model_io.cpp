#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cbal/error.hpp"
#include "cbal/models.hpp"

namespace cbal {

namespace {

constexpr char kMagic[8] = {'C', 'B', 'A', 'L', 'M', 'D', 'L', '\0'};
// Guards against absurd lengths in corrupted files before allocating.
constexpr std::uint64_t kMaxCount = std::uint64_t{1} << 32;

std::uint64_t checksum(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    for (double d : v) f64(d);
  }
  void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::uint64_t count(std::size_t element_size) {
    const std::uint64_t n = u64();
    if (n > kMaxCount || n * element_size > in_.size() - pos_) {
      throw FormatError("model file: length field exceeds remaining bytes");
    }
    return n;
  }
  std::string str() {
    const auto n = count(1);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles() {
    const auto n = count(8);
    std::vector<double> v(n);
    for (auto& d : v) d = f64();
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("model file is truncated");
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void write_params(Writer& w, const ModelParams& params) {
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ConstantParams>) {
          w.f64(p.value);
        } else if constexpr (std::is_same_v<P, LinearParams>) {
          w.f64(p.bias);
          w.doubles(p.coef);
        } else if constexpr (std::is_same_v<P, ForestParams>) {
          w.doubles(p.importances);
          w.u64(p.trees.size());
          for (const auto& tree : p.trees) {
            w.u64(tree.nodes.size());
            for (const auto& n : tree.nodes) {
              w.i32(n.feature);
              w.f64(n.threshold);
              w.i32(n.left);
              w.i32(n.right);
              w.f64(n.value);
            }
          }
        } else {
          w.u8(static_cast<std::uint8_t>(p.head));
          w.f64(p.target_offset);
          w.f64(p.target_scale);
          w.u64(p.layers.size());
          for (const auto& layer : p.layers) {
            w.u64(layer.inputs);
            w.u64(layer.outputs);
            w.doubles(layer.weights);
            w.doubles(layer.bias);
          }
        }
      },
      params);
}

ModelParams read_params(Reader& r, ModelKind kind, std::size_t width) {
  switch (kind) {
    case ModelKind::Dummy:
      return ConstantParams{r.f64()};
    case ModelKind::AvgSkill:
    case ModelKind::Linear:
    case ModelKind::Logistic: {
      LinearParams p;
      p.bias = r.f64();
      p.coef = r.doubles();
      if (p.coef.size() != width) throw FormatError("model file: coefficient count mismatch");
      return p;
    }
    case ModelKind::RandomForest: {
      ForestParams p;
      p.importances = r.doubles();
      const auto n_trees = r.count(8);
      for (std::uint64_t t = 0; t < n_trees; ++t) {
        RegressionTree tree;
        const auto n_nodes = r.count(28);
        if (n_nodes == 0) throw FormatError("model file: empty tree");
        tree.nodes.resize(n_nodes);
        for (auto& n : tree.nodes) {
          n.feature = r.i32();
          n.threshold = r.f64();
          n.left = r.i32();
          n.right = r.i32();
          n.value = r.f64();
        }
        const auto limit = static_cast<std::int32_t>(n_nodes);
        for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
          const auto& n = tree.nodes[i];
          if (n.feature < 0) continue;
          const auto self = static_cast<std::int32_t>(i);
          if (n.feature >= static_cast<std::int32_t>(width) || n.left <= self ||
              n.right <= self || n.left >= limit || n.right >= limit) {
            throw FormatError("model file: malformed tree node");
          }
        }
        p.trees.push_back(std::move(tree));
      }
      if (p.trees.empty()) throw FormatError("model file: forest without trees");
      return p;
    }
    case ModelKind::MlpRegressor:
    case ModelKind::MlpSoftmax: {
      MlpParams p;
      const auto head = r.u8();
      if (head > 1) throw FormatError("model file: unknown network head");
      p.head = static_cast<MlpHead>(head);
      p.target_offset = r.f64();
      p.target_scale = r.f64();
      const auto depth = r.count(16);
      std::size_t expected_in = width;
      for (std::uint64_t l = 0; l < depth; ++l) {
        DenseLayer layer;
        layer.inputs = r.u64();
        layer.outputs = r.u64();
        layer.weights = r.doubles();
        layer.bias = r.doubles();
        if (layer.inputs != expected_in || layer.outputs == 0 ||
            layer.weights.size() != layer.inputs * layer.outputs ||
            layer.bias.size() != layer.outputs) {
          throw FormatError("model file: inconsistent layer shape");
        }
        expected_in = layer.outputs;
        p.layers.push_back(std::move(layer));
      }
      if (p.layers.empty() || expected_in != (p.head == MlpHead::Softmax ? 2u : 1u)) {
        throw FormatError("model file: bad network output width");
      }
      return p;
    }
  }
  throw FormatError("model file: unknown model kind");
}

}  // namespace

std::vector<std::uint8_t> serialize(const TrainedModel& model) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(model.kind));
  w.u64(model.schema_hash);
  w.u32(static_cast<std::uint32_t>(model.input_dim));
  w.u64(model.columns.size());
  for (auto c : model.columns) w.u64(c);
  w.u64(model.metadata.size());
  for (const auto& [k, v] : model.metadata) {
    w.str(k);
    w.str(v);
  }
  w.doubles(model.normalizer.mean());
  w.doubles(model.normalizer.stddev());
  write_params(w, model.params);
  const std::uint64_t sum = checksum(w.bytes());
  w.u64(sum);
  return std::move(w.bytes());
}

TrainedModel deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError("not a model file (bad magic)");
  }
  const auto body = bytes.first(bytes.size() - 8);
  Reader tail(bytes.subspan(bytes.size() - 8));
  if (tail.u64() != checksum(body)) throw FormatError("model file checksum mismatch");

  Reader r(body.subspan(sizeof kMagic));
  const auto version = r.u32();
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model format version " + std::to_string(version));
  }
  TrainedModel m;
  const auto kind = r.u32();
  if (kind > static_cast<std::uint32_t>(ModelKind::MlpSoftmax)) {
    throw FormatError("model file: unknown model kind");
  }
  m.kind = static_cast<ModelKind>(kind);
  m.schema_hash = r.u64();
  m.input_dim = r.u32();
  const auto n_cols = r.count(8);
  for (std::uint64_t i = 0; i < n_cols; ++i) {
    const auto c = r.u64();
    if (c >= m.input_dim) throw FormatError("model file: column index out of range");
    m.columns.push_back(c);
  }
  const auto n_meta = r.count(16);
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    auto k = r.str();
    m.metadata[k] = r.str();
  }
  auto mean = r.doubles();
  auto sd = r.doubles();
  if (mean.size() != m.input_dim || sd.size() != m.input_dim) {
    throw FormatError("model file: normalizer width mismatch");
  }
  try {
    m.normalizer = Normalizer::from_parts(std::move(mean), std::move(sd));
  } catch (const SchemaError& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  m.params = read_params(r, m.kind, m.columns.size());
  if (!r.done()) throw FormatError("model file has trailing bytes");
  return m;
}

void save_model(const std::string& path, const TrainedModel& model) {
  const auto bytes = serialize(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing '" + path + "'");
}

TrainedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open model file '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace cbal
