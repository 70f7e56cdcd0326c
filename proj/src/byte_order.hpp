#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <type_traits>

namespace nbl::detail {

template <typename T>
void store_le(unsigned char* dst, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
            std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  const auto bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    dst[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFFu);
  }
}

template <typename T>
T load_le(const unsigned char* src) {
  static_assert(std::is_trivially_copyable_v<T>);
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
            std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<U>(static_cast<U>(src[i]) << (8 * i));
  }
  return std::bit_cast<T>(bits);
}

// Bulk little-endian array I/O. Host-order fast path on little-endian machines.
template <typename T>
void write_le_array(std::ostream& out, const T* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(count * sizeof(T)));
  } else {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < count; ++i) {
      store_le(buf, data[i]);
      out.write(reinterpret_cast<const char*>(buf), sizeof(T));
    }
  }
}

// Returns false on short read.
template <typename T>
bool read_le_array(std::istream& in, T* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(data),
            static_cast<std::streamsize>(count * sizeof(T)));
    return static_cast<std::size_t>(in.gcount()) == count * sizeof(T);
  } else {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < count; ++i) {
      in.read(reinterpret_cast<char*>(buf), sizeof(T));
      if (in.gcount() != sizeof(T)) return false;
      data[i] = load_le<T>(buf);
    }
    return true;
  }
}

}  // namespace nbl::detail
