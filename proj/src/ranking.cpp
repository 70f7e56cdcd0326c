#include "nbl/ranking.hpp"

#include "nbl/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

namespace nbl::ranking {

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::kCcaBound: return "cca_bound";
    case Criterion::kDirectNmse: return "direct_nmse";
    case Criterion::kCosine: return "cosine";
  }
  return "unknown";
}

std::string_view to_string(Strategy s) {
  return s == Strategy::kOneShot ? "one_shot" : "greedy";
}

Criterion parse_criterion(std::string_view name) {
  if (name == "cca_bound" || name == "cca") return Criterion::kCcaBound;
  if (name == "direct_nmse" || name == "nmse") return Criterion::kDirectNmse;
  if (name == "cosine") return Criterion::kCosine;
  throw ValidationError("unknown criterion '" + std::string(name) +
                        "' (expected cca_bound, direct_nmse or cosine)");
}

Strategy parse_strategy(std::string_view name) {
  if (name == "one_shot" || name == "one-shot") return Strategy::kOneShot;
  if (name == "greedy") return Strategy::kGreedy;
  throw ValidationError("unknown strategy '" + std::string(name) +
                        "' (expected one_shot or greedy)");
}

LayerScore score_layer(const stats::CovarianceSet& cs, Criterion criterion, LayerIndex layer,
                       const Regularization& reg) {
  LayerScore s;
  s.layer_index = layer;
  s.criterion = criterion;
  switch (criterion) {
    case Criterion::kCcaBound: {
      const auto residual = stats::derive_residual_covset(cs);
      auto spectrum =
          cca::canonical_correlations(cca::standardized_cross_correlation(residual, reg));
      s.score = cca::cca_nmse_bound(spectrum);
      s.rho_spectrum = std::move(spectrum);
      break;
    }
    case Criterion::kDirectNmse:
      s.score = cca::direct_nmse(stats::derive_residual_covset(cs), reg);
      break;
    case Criterion::kCosine:
      throw ValidationError("cosine criterion needs raw activations, not moments");
  }
  if (!std::isfinite(s.score)) {
    throw NumericError("non-finite score for layer " + std::to_string(layer));
  }
  return s;
}

LayerScore score_cosine(const cca::CosineAccumulator& acc, LayerIndex layer) {
  LayerScore s;
  s.layer_index = layer;
  s.criterion = Criterion::kCosine;
  s.score = acc.score();
  return s;
}

SelectionPlan select_one_shot(std::span<const LayerScore> scores, std::size_t m) {
  if (m > scores.size()) {
    throw ValidationError("cannot select " + std::to_string(m) + " layers from " +
                          std::to_string(scores.size()) + " scored");
  }
  std::vector<const LayerScore*> order;
  order.reserve(scores.size());
  std::set<LayerIndex> seen;
  for (const LayerScore& s : scores) {
    if (!seen.insert(s.layer_index).second) {
      throw ValidationError("duplicate score for layer " + std::to_string(s.layer_index));
    }
    order.push_back(&s);
  }
  std::sort(order.begin(), order.end(), [](const LayerScore* a, const LayerScore* b) {
    if (a->score != b->score) return a->score < b->score;
    return a->layer_index < b->layer_index;
  });
  SelectionPlan plan;
  plan.strategy = Strategy::kOneShot;
  if (!scores.empty()) plan.criterion = scores.front().criterion;
  for (std::size_t i = 0; i < m; ++i) plan.layers.push_back(order[i]->layer_index);
  return plan;
}

std::vector<LayerCalibration> calibrate_layers(const toy::ToyTransformer& model,
                                               std::span<const std::vector<toy::TokenId>> sequences,
                                               std::span<const LayerIndex> layers) {
  const auto d = static_cast<Eigen::Index>(model.config().width);
  const std::set<LayerIndex> capture(layers.begin(), layers.end());

  // Fixed chunking so the summation order does not depend on thread count.
  constexpr std::size_t kMaxChunks = 16;
  const std::size_t chunks = std::min(kMaxChunks, sequences.size());
  std::vector<std::vector<LayerCalibration>> partial(
      chunks, std::vector<LayerCalibration>(layers.size()));
  for (auto& per_chunk : partial) {
    for (auto& c : per_chunk) c.moments = stats::MomentAccumulator(d, d);
  }
  parallel_for(chunks, [&](std::size_t chunk) {
    const std::size_t begin = sequences.size() * chunk / chunks;
    const std::size_t end = sequences.size() * (chunk + 1) / chunks;
    for (std::size_t s = begin; s < end; ++s) {
      const auto fwd = model.forward(sequences[s], capture);
      for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& cap = fwd.captures.at(layers[i]);
        partial[chunk][i].moments.accumulate(cap.input, cap.output);
        partial[chunk][i].cosine.accumulate(cap.input, cap.output);
      }
    }
  });

  std::vector<LayerCalibration> out(layers.size());
  for (auto& c : out) c.moments = stats::MomentAccumulator(d, d);
  for (const auto& per_chunk : partial) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      out[i].moments.merge(per_chunk[i].moments);
      out[i].cosine.merge(per_chunk[i].cosine);
    }
  }
  return out;
}

namespace {

std::vector<LayerIndex> attention_layers(const toy::ToyTransformer& model) {
  std::vector<LayerIndex> out;
  for (LayerIndex k = 0; k < model.blocks().size(); ++k) {
    if (model.blocks()[k].kind == toy::LayerKind::kAttention) out.push_back(k);
  }
  return out;
}

std::vector<LayerScore> score_calibrated(std::span<const LayerIndex> layers,
                                         std::span<const LayerCalibration> calib,
                                         Criterion criterion, const Regularization& reg) {
  std::vector<LayerScore> scores(layers.size());
  parallel_for(layers.size(), [&](std::size_t i) {
    scores[i] = criterion == Criterion::kCosine
                    ? score_cosine(calib[i].cosine, layers[i])
                    : score_layer(calib[i].moments.finalize(), criterion, layers[i], reg);
  });
  return scores;
}

}  // namespace

std::vector<LayerScore> score_model(const toy::ToyTransformer& model,
                                    std::span<const std::vector<toy::TokenId>> sequences,
                                    Criterion criterion, const Regularization& reg) {
  const auto layers = attention_layers(model);
  const auto calib = calibrate_layers(model, sequences, layers);
  return score_calibrated(layers, calib, criterion, reg);
}

GreedyResult greedy_select(const toy::ToyTransformer& model,
                           std::span<const std::vector<toy::TokenId>> sequences,
                           std::size_t m, Criterion criterion, const Regularization& reg) {
  const std::size_t available = attention_layers(model).size();
  if (m > available) {
    throw ValidationError("greedy: cannot linearize " + std::to_string(m) + " of " +
                          std::to_string(available) + " attention layers");
  }
  GreedyResult result{SelectionPlan{{}, criterion, Strategy::kGreedy}, model, {}, {}};
  for (std::size_t round = 0; round < m; ++round) {
    const auto layers = attention_layers(result.model);
    std::vector<LayerCalibration> calib;
    try {
      calib = calibrate_layers(result.model, sequences, layers);
    } catch (const std::exception& e) {
      throw NumericError("greedy round " + std::to_string(round) +
                         ": calibration failed: " + e.what());
    }
    auto scores = score_calibrated(layers, calib, criterion, reg);
    const SelectionPlan pick = select_one_shot(scores, 1);
    const LayerIndex chosen = pick.layers.front();
    const std::size_t slot = static_cast<std::size_t>(
        std::find(layers.begin(), layers.end(), chosen) - layers.begin());
    lmmse::LinearMap map = lmmse::fit_lmmse(calib[slot].moments.finalize(), chosen, reg);
    const LayerIndex idx[1] = {chosen};
    result.model = toy::substitute(result.model, idx, std::span(&map, 1));
    result.plan.layers.push_back(chosen);
    result.maps.push_back(std::move(map));
    result.rounds.push_back(std::move(scores));
  }
  return result;
}

}  // namespace nbl::ranking
