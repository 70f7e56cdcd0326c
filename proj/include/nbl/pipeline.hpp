#pragma once

// Subcommand implementations behind the `nbl` CLI:
//   gen-model -> calibrate -> rank -> linearize -> eval, plus cost.

#include "nbl/common.hpp"
#include "nbl/costmodel.hpp"
#include "nbl/ranking.hpp"
#include "nbl/toymodel.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nbl::pipeline {

namespace fs = std::filesystem;

// Either a token file or a seeded synthetic corpus of uniform random ids.
struct TokenSource {
  std::optional<fs::path> token_file;  // whitespace-separated ids, one sequence per line
  std::uint64_t seed = 1;
  std::uint64_t token_count = 8192;
  std::uint32_t sequence_length = 0;  // 0 = model max context
};

struct PipelineConfig {
  fs::path model_path;
  fs::path output_model_path;
  fs::path dump_dir;
  fs::path report_path;
  TokenSource calibration;
  TokenSource evaluation{std::nullopt, 2, 4096, 0};
  ranking::Criterion criterion = ranking::Criterion::kCcaBound;
  ranking::Strategy strategy = ranking::Strategy::kOneShot;
  std::size_t m = 0;
  Regularization reg;

  // Recognized keys mirror the CLI flag names, e.g. {"model": "...", "m": 2,
  // "criterion": "cca_bound", "calib-tokens": 50000, "ridge": 1e-8}.
  // Unknown keys throw ValidationError.
  static PipelineConfig from_json_file(const fs::path& path);
  void apply_json(const std::string& text);
};

// Splits ids into sequences of at most max_len tokens.
std::vector<std::vector<toy::TokenId>> load_tokens(const TokenSource& source,
                                                   const toy::ToyConfig& model_config);
std::vector<std::vector<toy::TokenId>> synthetic_corpus(std::uint64_t seed,
                                                        std::uint64_t token_count,
                                                        std::uint32_t sequence_length,
                                                        std::uint32_t vocab);

void cmd_gen_model(const fs::path& out, const toy::ToyConfig& config);

struct CalibrationSummary {
  std::uint64_t token_count = 0;
  std::vector<fs::path> files;
};
CalibrationSummary cmd_calibrate(const PipelineConfig& config);

// Per-layer moments, cosine statistics and dims read back from a dump dir.
struct DumpedLayer {
  LayerIndex layer = 0;
  stats::MomentAccumulator moments;
  cca::CosineAccumulator cosine;
};
std::vector<DumpedLayer> read_dump_dir(const fs::path& dir);

struct RankReport {
  ranking::Criterion criterion = ranking::Criterion::kCcaBound;
  ranking::Strategy strategy = ranking::Strategy::kOneShot;
  std::size_t m = 0;
  std::uint64_t token_count = 0;
  std::vector<ranking::LayerScore> scores;  // ascending by score
  ranking::SelectionPlan plan;

  std::string to_json() const;
  static RankReport from_json(const std::string& text);
};
RankReport cmd_rank(const PipelineConfig& config);

struct LinearizeSummary {
  ranking::SelectionPlan plan;
  std::vector<double> fit_nmse;  // aligned with plan.layers
};
LinearizeSummary cmd_linearize(const PipelineConfig& config);

struct LayerEval {
  LayerIndex layer = 0;
  double empirical_nmse = 0.0;
  double fit_nmse = 0.0;
};

struct EvalReport {
  std::uint64_t token_count = 0;
  toy::Drift drift;
  double perplexity_a = 0.0;
  double perplexity_b = 0.0;
  std::vector<LayerEval> layers;  // linearized layers of model b

  std::string to_json() const;
};
// Compares model_b against model_a on the evaluation tokens. Per-layer NMSE
// applies model_b's maps to model_a's captured attention inputs.
EvalReport cmd_eval(const PipelineConfig& config, const fs::path& model_a,
                    const fs::path& model_b);

struct CostOutput {
  cost::CacheTable table;
  std::string text;
  std::string json;
};
CostOutput cmd_cost(const cost::InferenceProfile& base, const std::vector<std::uint64_t>& contexts,
                    const std::vector<std::uint64_t>& linearized);

}  // namespace nbl::pipeline
