#pragma once

#include "nbl/cca.hpp"
#include "nbl/common.hpp"
#include "nbl/lmmse.hpp"
#include "nbl/stats.hpp"
#include "nbl/toymodel.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nbl::ranking {

// Lower score = more substitutable.
enum class Criterion { kCcaBound, kDirectNmse, kCosine };
enum class Strategy { kOneShot, kGreedy };

std::string_view to_string(Criterion c);
std::string_view to_string(Strategy s);
Criterion parse_criterion(std::string_view name);  // "cca_bound" | "direct_nmse" | "cosine"
Strategy parse_strategy(std::string_view name);    // "one_shot" | "greedy"

struct LayerScore {
  LayerIndex layer_index = 0;
  Criterion criterion = Criterion::kCcaBound;
  double score = 0.0;
  std::optional<cca::CcaSpectrum> rho_spectrum;
};

struct SelectionPlan {
  std::vector<LayerIndex> layers;  // in selection order
  Criterion criterion = Criterion::kCcaBound;
  Strategy strategy = Strategy::kOneShot;
};

// Scores a layer from its (X, Y) moments. Both moment criteria are evaluated on
// the residual covariance set (X, X + Y). Cosine needs raw activations and
// throws ValidationError here.
LayerScore score_layer(const stats::CovarianceSet& cs, Criterion criterion,
                       LayerIndex layer = 0, const Regularization& reg = {});

LayerScore score_cosine(const cca::CosineAccumulator& acc, LayerIndex layer = 0);

// The m lowest scores, ties to the lower layer index.
SelectionPlan select_one_shot(std::span<const LayerScore> scores, std::size_t m);

// Scores every attention layer of `model` on the given sequences. Layers
// that are already linearized are skipped.
std::vector<LayerScore> score_model(const toy::ToyTransformer& model,
                                    std::span<const std::vector<toy::TokenId>> sequences,
                                    Criterion criterion, const Regularization& reg = {});

struct GreedyResult {
  SelectionPlan plan;
  toy::ToyTransformer model;              // with plan.layers substituted
  std::vector<lmmse::LinearMap> maps;     // aligned with plan.layers
  std::vector<std::vector<LayerScore>> rounds;  // scores seen in each round
};

// m rounds of: recalibrate the partially substituted model on `sequences`,
// score the remaining attention layers, substitute the lowest one with a map
// fitted on that round's captures.
GreedyResult greedy_select(const toy::ToyTransformer& model,
                           std::span<const std::vector<toy::TokenId>> sequences,
                           std::size_t m, Criterion criterion, const Regularization& reg = {});

// Per-layer statistics from a forward pass over `sequences`.
struct LayerCalibration {
  stats::MomentAccumulator moments;
  cca::CosineAccumulator cosine;
};

std::vector<LayerCalibration> calibrate_layers(const toy::ToyTransformer& model,
                                               std::span<const std::vector<toy::TokenId>> sequences,
                                               std::span<const LayerIndex> layers);

}  // namespace nbl::ranking
