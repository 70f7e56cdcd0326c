#pragma once

// NBLA activation dumps.
//
// Layout (all integers little-endian, 24-byte header):
//
//   offset  size  field
//        0     4  magic "NBLA"
//        4     2  version (1)
//        6     2  layer index
//        8     1  role (0 = attention input X, 1 = attention output Y)
//        9     4  feature dim h
//       13     8  token count N
//       21     1  dtype (0 = float32)
//       22     2  reserved, zero
//       24  4*h*N payload, column-major (one token's h floats contiguous)

#include "nbl/common.hpp"

#include <array>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <string>

namespace nbl::io {

inline constexpr std::array<char, 4> kMagic = {'N', 'B', 'L', 'A'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 24;

enum class Role : std::uint8_t { kInput = 0, kOutput = 1 };
enum class DType : std::uint8_t { kFloat32 = 0 };

struct DumpHeader {
  std::uint16_t version = kVersion;
  std::uint16_t layer_index = 0;
  Role role = Role::kInput;
  std::uint32_t feature_dim = 0;
  std::uint64_t token_count = 0;
  DType dtype = DType::kFloat32;

  bool operator==(const DumpHeader&) const = default;
};

struct Dump {
  DumpHeader header;
  ActivationMatrix matrix;
};

std::array<unsigned char, kHeaderBytes> encode_header(const DumpHeader& header);
DumpHeader decode_header(const unsigned char* bytes);

// Writes header + payload. Returns bytes written (24 + 4*h*N).
std::size_t write_dump(const DumpHeader& header, const ActivationMatrix& matrix,
                       std::ostream& sink);

// Parses and validates magic, version, dtype, reserved bytes, payload length
// and finiteness.
Dump read_dump(std::istream& source);

// Header only; leaves the stream positioned at the payload.
DumpHeader read_header(std::istream& source);

// "layer007_input.nbla" / "layer007_output.nbla"
std::string dump_filename(LayerIndex layer, Role role);

void write_dump_file(const std::filesystem::path& path, const DumpHeader& header,
                     const ActivationMatrix& matrix);
Dump read_dump_file(const std::filesystem::path& path);

// Streams columns into a dump whose token count is not known up front. The
// header is rewritten with the final N on finish().
class DumpWriter {
 public:
  DumpWriter(const std::filesystem::path& path, std::uint16_t layer_index,
             Role role, std::uint32_t feature_dim);
  ~DumpWriter();

  DumpWriter(const DumpWriter&) = delete;
  DumpWriter& operator=(const DumpWriter&) = delete;

  void append(const ActivationMatrix& columns);
  template <typename Derived>
  void append(const Eigen::MatrixBase<Derived>& columns) {
    append(ActivationMatrix(columns.template cast<float>()));
  }

  // Patches the header. Throws if no token was appended.
  void finish();

  std::uint64_t token_count() const { return header_.token_count; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  DumpHeader header_;
  bool finished_ = false;
};

}  // namespace nbl::io
