#include "nbl/costmodel.hpp"

#include "nbl/common.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace nbl::cost {

void InferenceProfile::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("invalid profile: " + what); };
  if (layers < 1) fail("layers must be >= 1");
  if (linearized > layers) fail("linearized (" + std::to_string(linearized) +
                                ") exceeds layers (" + std::to_string(layers) + ")");
  if (context < 1) fail("context must be >= 1");
  if (width < 1) fail("width must be >= 1");
  if (batch < 1) fail("batch must be >= 1");
  if (heads < 1) fail("heads must be >= 1");
  if (kv_groups < 1) fail("kv_groups must be >= 1");
  if (heads % kv_groups != 0) fail("kv_groups must divide heads");
  if (bytes_per_elem < 1) fail("bytes_per_elem must be >= 1");
}

double prefill_cost(const InferenceProfile& p) {
  p.validate();
  const double n = static_cast<double>(p.context);
  const double d = static_cast<double>(p.width);
  const double kept = static_cast<double>(p.layers - p.linearized);
  return kept * n * n * d + static_cast<double>(p.linearized) * n * d;
}

double prefill_speedup(const InferenceProfile& p) {
  p.validate();
  // cost(0) / cost(m) = K n / ((K - m) n + m), after cancelling n d.
  const double n = static_cast<double>(p.context);
  const double k = static_cast<double>(p.layers);
  const double m = static_cast<double>(p.linearized);
  return k * n / ((k - m) * n + m);
}

double prefill_speedup_limit(const InferenceProfile& p) {
  p.validate();
  if (p.linearized == p.layers) return std::numeric_limits<double>::infinity();
  return static_cast<double>(p.layers) / static_cast<double>(p.layers - p.linearized);
}

double kv_cache_bytes(const InferenceProfile& p) {
  p.validate();
  const double per_layer = 2.0 * static_cast<double>(p.batch) * static_cast<double>(p.context) *
                           static_cast<double>(p.width) * static_cast<double>(p.kv_groups) /
                           static_cast<double>(p.heads);
  return per_layer * static_cast<double>(p.layers - p.linearized) *
         static_cast<double>(p.bytes_per_elem);
}

double kv_cache_gib(const InferenceProfile& p) { return kv_cache_bytes(p) / kBytesPerGiB; }

CacheTable cache_table(const std::vector<InferenceProfile>& profiles) {
  if (profiles.empty()) throw ValidationError("cache table needs at least one profile");
  const InferenceProfile& first = profiles.front();
  CacheTable t;
  for (const auto& p : profiles) {
    p.validate();
    if (p.layers != first.layers || p.width != first.width || p.batch != first.batch ||
        p.heads != first.heads || p.kv_groups != first.kv_groups ||
        p.bytes_per_elem != first.bytes_per_elem) {
      throw ValidationError("cache table profiles differ beyond context and linearized count");
    }
    if (std::find(t.contexts.begin(), t.contexts.end(), p.context) == t.contexts.end()) {
      t.contexts.push_back(p.context);
    }
    if (std::find(t.linearized.begin(), t.linearized.end(), p.linearized) == t.linearized.end()) {
      t.linearized.push_back(p.linearized);
    }
  }
  t.gib.assign(t.contexts.size(),
               std::vector<double>(t.linearized.size(), std::numeric_limits<double>::quiet_NaN()));
  for (const auto& p : profiles) {
    const auto r = std::find(t.contexts.begin(), t.contexts.end(), p.context) - t.contexts.begin();
    const auto c =
        std::find(t.linearized.begin(), t.linearized.end(), p.linearized) - t.linearized.begin();
    t.gib[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = kv_cache_gib(p);
  }
  return t;
}

namespace {

std::string column_title(std::uint64_t m) {
  return m == 0 ? std::string("Original") : "NBL-" + std::to_string(m);
}

std::string one_decimal(double v) {
  if (std::isnan(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

}  // namespace

std::string format_text(const CacheTable& table) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Context"};
  for (auto m : table.linearized) header.push_back(column_title(m) + " (GiB)");
  cells.push_back(header);
  for (std::size_t r = 0; r < table.contexts.size(); ++r) {
    std::vector<std::string> row{std::to_string(table.contexts[r])};
    for (double v : table.gib[r]) row.push_back(one_decimal(v));
    cells.push_back(std::move(row));
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  }
  std::string out;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) out += "  ";
      out += std::string(widths[c] - row[c].size(), ' ') + row[c];
    }
    out += '\n';
  }
  return out;
}

std::string format_json(const CacheTable& table) {
  nlohmann::ordered_json j;
  j["unit"] = "GiB";
  j["contexts"] = table.contexts;
  j["linearized"] = table.linearized;
  auto rows = nlohmann::json::array();
  for (const auto& row : table.gib) {
    auto cells = nlohmann::json::array();
    for (double v : row) {
      if (std::isnan(v)) {
        cells.push_back(nullptr);
      } else {
        cells.push_back(v);
      }
    }
    rows.push_back(std::move(cells));
  }
  j["gib"] = std::move(rows);
  return j.dump(2);
}

std::vector<InferenceProfile> profile_grid(const InferenceProfile& base,
                                           const std::vector<std::uint64_t>& contexts,
                                           const std::vector<std::uint64_t>& linearized) {
  std::vector<InferenceProfile> out;
  for (auto n : contexts) {
    for (auto m : linearized) {
      InferenceProfile p = base;
      p.context = n;
      p.linearized = m;
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace nbl::cost
