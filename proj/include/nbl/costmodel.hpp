#pragma once

// Analytic inference cost for a model with m of its K attention layers
// replaced by linear maps.
//
//   prefill cost   (K - m) n^2 d + m n d
//   KV cache bytes 2 * bs * n * d * (g / h) * (K - m) * bytes_per_elem
//
// Sizes are displayed in binary GiB (2^30 bytes).

#include <cstdint>
#include <string>
#include <vector>

namespace nbl::cost {

struct InferenceProfile {
  std::uint64_t layers = 32;        // K
  std::uint64_t linearized = 0;     // m
  std::uint64_t context = 2048;     // n
  std::uint64_t width = 4096;       // d
  std::uint64_t batch = 1;          // bs
  std::uint64_t heads = 32;         // h
  std::uint64_t kv_groups = 8;      // g
  std::uint64_t bytes_per_elem = 2;

  // Throws ValidationError.
  void validate() const;
};

inline constexpr double kBytesPerGiB = 1073741824.0;

double prefill_cost(const InferenceProfile& p);

// prefill_cost(m = 0) / prefill_cost(m).
double prefill_speedup(const InferenceProfile& p);

// K / (K - m), the n -> infinity limit of prefill_speedup. Infinite for m = K.
double prefill_speedup_limit(const InferenceProfile& p);

double kv_cache_bytes(const InferenceProfile& p);
double kv_cache_gib(const InferenceProfile& p);

// Rows are context lengths, columns are linearized-layer counts, both in
// first-appearance order of the input profiles. Cells hold GiB.
struct CacheTable {
  std::vector<std::uint64_t> contexts;
  std::vector<std::uint64_t> linearized;
  std::vector<std::vector<double>> gib;  // [row][col]; NaN where no profile given
};

// Profiles must agree on everything except context and linearized.
CacheTable cache_table(const std::vector<InferenceProfile>& profiles);

// Aligned text, one decimal per cell.
std::string format_text(const CacheTable& table);

// {"unit":"GiB","contexts":[...],"linearized":[...],"gib":[[...],...]}
std::string format_json(const CacheTable& table);

// Cross product of contexts x linearized over a base profile.
std::vector<InferenceProfile> profile_grid(const InferenceProfile& base,
                                           const std::vector<std::uint64_t>& contexts,
                                           const std::vector<std::uint64_t>& linearized);

}  // namespace nbl::cost
