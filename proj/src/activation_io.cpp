#include "nbl/activation_io.hpp"

#include "byte_order.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>

namespace nbl::io {

using detail::load_le;
using detail::store_le;

std::array<unsigned char, kHeaderBytes> encode_header(const DumpHeader& header) {
  std::array<unsigned char, kHeaderBytes> b{};
  for (std::size_t i = 0; i < kMagic.size(); ++i) {
    b[i] = static_cast<unsigned char>(kMagic[i]);
  }
  store_le<std::uint16_t>(&b[4], header.version);
  store_le<std::uint16_t>(&b[6], header.layer_index);
  b[8] = static_cast<unsigned char>(header.role);
  store_le<std::uint32_t>(&b[9], header.feature_dim);
  store_le<std::uint64_t>(&b[13], header.token_count);
  b[21] = static_cast<unsigned char>(header.dtype);
  b[22] = 0;
  b[23] = 0;
  return b;
}

DumpHeader decode_header(const unsigned char* b) {
  for (std::size_t i = 0; i < kMagic.size(); ++i) {
    if (b[i] != static_cast<unsigned char>(kMagic[i])) {
      throw FormatError("NBLA: bad magic");
    }
  }
  DumpHeader h;
  h.version = load_le<std::uint16_t>(&b[4]);
  if (h.version != kVersion) {
    throw FormatError("NBLA: unsupported version " + std::to_string(h.version));
  }
  h.layer_index = load_le<std::uint16_t>(&b[6]);
  if (b[8] > 1) throw FormatError("NBLA: unknown role " + std::to_string(b[8]));
  h.role = static_cast<Role>(b[8]);
  h.feature_dim = load_le<std::uint32_t>(&b[9]);
  h.token_count = load_le<std::uint64_t>(&b[13]);
  if (b[21] != 0) throw FormatError("NBLA: unsupported dtype " + std::to_string(b[21]));
  h.dtype = DType::kFloat32;
  if (b[22] != 0 || b[23] != 0) throw FormatError("NBLA: reserved bytes not zero");
  if (h.feature_dim < 1) throw FormatError("NBLA: feature dim must be >= 1");
  if (h.token_count < 1) throw FormatError("NBLA: token count must be >= 1");
  return h;
}

std::size_t write_dump(const DumpHeader& header, const ActivationMatrix& matrix,
                       std::ostream& sink) {
  if (header.feature_dim < 1 || header.token_count < 1) {
    throw ValidationError("NBLA: empty dump");
  }
  if (static_cast<std::uint64_t>(matrix.rows()) != header.feature_dim ||
      static_cast<std::uint64_t>(matrix.cols()) != header.token_count) {
    throw ValidationError("NBLA: header says " + std::to_string(header.feature_dim) +
                          "x" + std::to_string(header.token_count) +
                          " but matrix is " + std::to_string(matrix.rows()) + "x" +
                          std::to_string(matrix.cols()));
  }
  const auto head = encode_header(header);
  sink.write(reinterpret_cast<const char*>(head.data()), head.size());
  detail::write_le_array(sink, matrix.data(), static_cast<std::size_t>(matrix.size()));
  if (!sink) throw std::runtime_error("NBLA: write failed");
  return kHeaderBytes + sizeof(float) * static_cast<std::size_t>(matrix.size());
}

DumpHeader read_header(std::istream& source) {
  std::array<unsigned char, kHeaderBytes> b{};
  source.read(reinterpret_cast<char*>(b.data()), b.size());
  if (static_cast<std::size_t>(source.gcount()) != b.size()) {
    throw FormatError("NBLA: truncated header");
  }
  return decode_header(b.data());
}

Dump read_dump(std::istream& source) {
  Dump d;
  d.header = read_header(source);
  const std::uint64_t count =
      static_cast<std::uint64_t>(d.header.feature_dim) * d.header.token_count;
  if (count / d.header.feature_dim != d.header.token_count ||
      count > static_cast<std::uint64_t>(std::numeric_limits<Eigen::Index>::max())) {
    throw FormatError("NBLA: payload size overflow");
  }
  d.matrix.resize(d.header.feature_dim, static_cast<Eigen::Index>(d.header.token_count));
  if (!detail::read_le_array(source, d.matrix.data(), static_cast<std::size_t>(count))) {
    throw FormatError("NBLA: truncated payload");
  }
  if (!d.matrix.allFinite()) throw FormatError("NBLA: non-finite value in payload");
  return d;
}

std::string dump_filename(LayerIndex layer, Role role) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "layer%03u_%s.nbla", static_cast<unsigned>(layer),
                role == Role::kInput ? "input" : "output");
  return buf;
}

void write_dump_file(const std::filesystem::path& path, const DumpHeader& header,
                     const ActivationMatrix& matrix) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_dump(header, matrix, out);
}

Dump read_dump_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return read_dump(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

DumpWriter::DumpWriter(const std::filesystem::path& path, std::uint16_t layer_index,
                       Role role, std::uint32_t feature_dim)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
  if (feature_dim < 1) throw ValidationError("NBLA: feature dim must be >= 1");
  header_.layer_index = layer_index;
  header_.role = role;
  header_.feature_dim = feature_dim;
  header_.token_count = 0;
  const auto head = encode_header(header_);
  out_.write(reinterpret_cast<const char*>(head.data()), head.size());
}

DumpWriter::~DumpWriter() = default;

void DumpWriter::append(const ActivationMatrix& columns) {
  if (finished_) throw std::logic_error("NBLA: append after finish");
  if (static_cast<std::uint64_t>(columns.rows()) != header_.feature_dim) {
    throw ValidationError("NBLA: appended rows do not match feature dim");
  }
  if (!columns.allFinite()) throw ValidationError("NBLA: non-finite activation");
  detail::write_le_array(out_, columns.data(), static_cast<std::size_t>(columns.size()));
  if (!out_) throw std::runtime_error("NBLA: write failed for " + path_.string());
  header_.token_count += static_cast<std::uint64_t>(columns.cols());
}

void DumpWriter::finish() {
  if (finished_) return;
  if (header_.token_count == 0) throw ValidationError("NBLA: no tokens written");
  const auto head = encode_header(header_);
  out_.seekp(0);
  out_.write(reinterpret_cast<const char*>(head.data()), head.size());
  out_.close();
  if (!out_) throw std::runtime_error("NBLA: header patch failed for " + path_.string());
  finished_ = true;
}

}  // namespace nbl::io
