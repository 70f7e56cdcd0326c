// Model container ("NBLM"), all integers and floats little-endian.
//
//   magic "NBLM" | u16 version (1) | u16 reserved (0)
//   config: u32 layers, width, heads, kv_groups, ffn_width, vocab, max_context
//           u64 seed
//   u8 kind per layer (0 = attention, 1 = linearized)
//   u32 tensor count, then per tensor:
//     u16 name length | name bytes | u32 rows | u32 cols | rows*cols f64, column-major
//
// Tensor names:
//   token_embedding, position_embedding, final_norm, unembedding
//   blocks.{k}.{attn_norm,wq,wk,wv,wo}        attention layers only
//   blocks.{k}.{mlp_norm,w_up,w_down}
//   blocks.{k}.linear.{weight,bias,fit_nmse}  linearized layers only
// Vectors are stored as n x 1.

#include "nbl/toymodel.hpp"

#include "byte_order.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>

namespace nbl::toy {

namespace {

constexpr char kModelMagic[4] = {'N', 'B', 'L', 'M'};
constexpr std::uint16_t kModelVersion = 1;

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    unsigned char buf[sizeof(T)];
    detail::store_le(buf, v);
    bytes_.insert(bytes_.end(), buf, buf + sizeof(T));
  }

  void tensor(const std::string& name, const Matrix& m) {
    put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    bytes_.insert(bytes_.end(), name.begin(), name.end());
    put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) put<double>(m.data()[i]);
    ++tensor_count_;
  }

  std::vector<unsigned char>& bytes() { return bytes_; }
  std::uint32_t tensor_count() const { return tensor_count_; }

 private:
  std::vector<unsigned char> bytes_;
  std::uint32_t tensor_count_ = 0;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = detail::load_le<T>(bytes_.data() + pos_);
    pos_ += sizeof(T);
    return v;
  }

  std::string string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("model file truncated");
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

Matrix as_column(const Vector& v) { return Matrix(v); }

std::string block_name(LayerIndex k, const char* field) {
  return "blocks." + std::to_string(k) + "." + field;
}

}  // namespace

std::vector<unsigned char> serialize_model(const ToyTransformer& model) {
  const ToyConfig& c = model.config();
  ByteWriter head;
  for (char ch : kModelMagic) head.put<std::uint8_t>(static_cast<std::uint8_t>(ch));
  head.put<std::uint16_t>(kModelVersion);
  head.put<std::uint16_t>(0);
  head.put<std::uint32_t>(c.layers);
  head.put<std::uint32_t>(c.width);
  head.put<std::uint32_t>(c.heads);
  head.put<std::uint32_t>(c.kv_groups);
  head.put<std::uint32_t>(c.ffn_width);
  head.put<std::uint32_t>(c.vocab);
  head.put<std::uint32_t>(c.max_context);
  head.put<std::uint64_t>(c.seed);
  for (const Block& b : model.blocks()) head.put<std::uint8_t>(static_cast<std::uint8_t>(b.kind));

  ByteWriter body;
  body.tensor("token_embedding", model.token_embedding);
  body.tensor("position_embedding", model.position_embedding);
  body.tensor("final_norm", as_column(model.final_norm));
  body.tensor("unembedding", model.unembedding);
  for (LayerIndex k = 0; k < model.blocks().size(); ++k) {
    const Block& b = model.blocks()[k];
    if (b.kind == LayerKind::kAttention) {
      body.tensor(block_name(k, "attn_norm"), as_column(b.attn_norm));
      body.tensor(block_name(k, "wq"), b.wq);
      body.tensor(block_name(k, "wk"), b.wk);
      body.tensor(block_name(k, "wv"), b.wv);
      body.tensor(block_name(k, "wo"), b.wo);
    } else {
      body.tensor(block_name(k, "linear.weight"), b.linear->weight);
      body.tensor(block_name(k, "linear.bias"), as_column(b.linear->bias));
      body.tensor(block_name(k, "linear.fit_nmse"), Matrix::Constant(1, 1, b.linear->fit_nmse));
    }
    body.tensor(block_name(k, "mlp_norm"), as_column(b.mlp_norm));
    body.tensor(block_name(k, "w_up"), b.w_up);
    body.tensor(block_name(k, "w_down"), b.w_down);
  }

  head.put<std::uint32_t>(body.tensor_count());
  auto out = std::move(head.bytes());
  out.insert(out.end(), body.bytes().begin(), body.bytes().end());
  return out;
}

ToyTransformer deserialize_model(std::span<const unsigned char> bytes) {
  ByteReader in(bytes);
  if (in.string(4) != std::string(kModelMagic, 4)) throw FormatError("model file: bad magic");
  const auto version = in.get<std::uint16_t>();
  if (version != kModelVersion) {
    throw FormatError("model file: unsupported version " + std::to_string(version));
  }
  in.get<std::uint16_t>();

  ToyConfig c;
  c.layers = in.get<std::uint32_t>();
  c.width = in.get<std::uint32_t>();
  c.heads = in.get<std::uint32_t>();
  c.kv_groups = in.get<std::uint32_t>();
  c.ffn_width = in.get<std::uint32_t>();
  c.vocab = in.get<std::uint32_t>();
  c.max_context = in.get<std::uint32_t>();
  c.seed = in.get<std::uint64_t>();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  ToyTransformer model(c);
  for (Block& b : model.blocks()) {
    const auto kind = in.get<std::uint8_t>();
    if (kind > 1) throw FormatError("model file: unknown layer kind " + std::to_string(kind));
    b.kind = static_cast<LayerKind>(kind);
  }

  std::map<std::string, Matrix> tensors;
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = in.string(in.get<std::uint16_t>());
    const auto rows = in.get<std::uint32_t>();
    const auto cols = in.get<std::uint32_t>();
    const std::uint64_t n = static_cast<std::uint64_t>(rows) * cols;
    if (n > (std::uint64_t{1} << 60)) throw FormatError("model file: tensor " + name + " too large");
    in.need(n * sizeof(double));
    Matrix m(rows, cols);
    for (std::uint64_t j = 0; j < n; ++j) m.data()[j] = in.get<double>();
    if (!m.allFinite()) throw FormatError("model file: non-finite values in " + name);
    if (!tensors.emplace(name, std::move(m)).second) {
      throw FormatError("model file: duplicate tensor " + name);
    }
  }
  if (!in.done()) throw FormatError("model file: trailing bytes");

  auto take = [&tensors](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("model file: missing tensor " + name);
    if (it->second.rows() != rows || it->second.cols() != cols) {
      throw FormatError("model file: tensor " + name + " has shape " +
                        std::to_string(it->second.rows()) + "x" +
                        std::to_string(it->second.cols()));
    }
    Matrix m = std::move(it->second);
    tensors.erase(it);
    return m;
  };

  const Eigen::Index d = c.width;
  const Eigen::Index kv = c.kv_width();
  const Eigen::Index ff = c.ffn_width;
  model.token_embedding = take("token_embedding", c.vocab, d);
  model.position_embedding = take("position_embedding", c.max_context, d);
  model.final_norm = take("final_norm", d, 1).col(0);
  model.unembedding = take("unembedding", d, c.vocab);
  for (LayerIndex k = 0; k < c.layers; ++k) {
    Block& b = model.blocks()[k];
    if (b.kind == LayerKind::kAttention) {
      b.attn_norm = take(block_name(k, "attn_norm"), d, 1).col(0);
      b.wq = take(block_name(k, "wq"), d, d);
      b.wk = take(block_name(k, "wk"), d, kv);
      b.wv = take(block_name(k, "wv"), d, kv);
      b.wo = take(block_name(k, "wo"), d, d);
    } else {
      lmmse::LinearMap map;
      map.weight = take(block_name(k, "linear.weight"), d, d);
      map.bias = take(block_name(k, "linear.bias"), d, 1).col(0);
      map.fit_nmse = take(block_name(k, "linear.fit_nmse"), 1, 1)(0, 0);
      map.source_layer = k;
      b.linear = std::move(map);
    }
    b.mlp_norm = take(block_name(k, "mlp_norm"), d, 1).col(0);
    b.w_up = take(block_name(k, "w_up"), d, ff);
    b.w_down = take(block_name(k, "w_down"), ff, d);
  }
  if (!tensors.empty()) throw FormatError("model file: unexpected tensor " + tensors.begin()->first);
  return model;
}

void save_model(const ToyTransformer& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

ToyTransformer load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  try {
    return deserialize_model(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace nbl::toy
