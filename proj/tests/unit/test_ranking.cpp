#include "doctest.h"

#include "nbl/ranking.hpp"

#include "../test_helpers.hpp"

#include <set>

using namespace nbl;
using namespace nbl::ranking;

namespace {

std::vector<LayerScore> make_scores(std::initializer_list<double> values) {
  std::vector<LayerScore> out;
  LayerIndex k = 0;
  for (double v : values) out.push_back({k++, Criterion::kCcaBound, v, std::nullopt});
  return out;
}

toy::ToyConfig small_config() {
  toy::ToyConfig c;
  c.layers = 4;
  c.width = 16;
  c.heads = 4;
  c.kv_groups = 2;
  c.ffn_width = 32;
  c.vocab = 32;
  c.max_context = 32;
  c.seed = 9;
  return c;
}

std::vector<std::vector<toy::TokenId>> corpus(std::size_t sequences, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<toy::TokenId>> out(sequences, std::vector<toy::TokenId>(32));
  for (auto& s : out)
    for (auto& t : s) t = static_cast<toy::TokenId>(rng() % 32);
  return out;
}

void check_plan(const SelectionPlan& plan, std::size_t m, std::size_t k) {
  CHECK(plan.layers.size() == m);
  std::set<LayerIndex> distinct(plan.layers.begin(), plan.layers.end());
  CHECK(distinct.size() == m);
  for (LayerIndex l : plan.layers) CHECK(l < k);
}

}  // namespace

TEST_CASE("names") {
  for (auto c : {Criterion::kCcaBound, Criterion::kDirectNmse, Criterion::kCosine}) {
    CHECK(parse_criterion(to_string(c)) == c);
  }
  CHECK(parse_strategy("greedy") == Strategy::kGreedy);
  CHECK(parse_strategy(to_string(Strategy::kOneShot)) == Strategy::kOneShot);
  CHECK_THROWS_AS(parse_criterion("bogus"), ValidationError);
  CHECK_THROWS_AS(parse_strategy("bogus"), ValidationError);
}

TEST_CASE("one-shot selection") {
  const auto s = make_scores({0.5, 0.2, 0.9});
  CHECK(select_one_shot(s, 2).layers == std::vector<LayerIndex>{1, 0});
  CHECK(select_one_shot(make_scores({1, 1, 1}), 2).layers == std::vector<LayerIndex>{0, 1});
  CHECK(select_one_shot(s, 3).layers.size() == 3);
  CHECK(select_one_shot(s, 0).layers.empty());
  CHECK_THROWS_AS(select_one_shot(s, 4), ValidationError);
  auto dup = s;
  dup[2].layer_index = 0;
  CHECK_THROWS_AS(select_one_shot(dup, 1), ValidationError);
}

TEST_CASE("moment scores") {
  std::mt19937_64 rng(41);
  const Matrix x = testing::gaussian(6, 6, rng) * testing::gaussian(6, 20000, rng);

  SUBCASE("identity block") {
    const auto s = score_layer(testing::covset(x, Matrix::Zero(6, 20000)), Criterion::kCcaBound, 3);
    CHECK(s.score <= 1e-6);
    CHECK(s.layer_index == 3);
    REQUIRE(s.rho_spectrum.has_value());
    CHECK(s.rho_spectrum->rho.size() == 6);
  }
  SUBCASE("output independent of input") {
    // Y = -X + Z makes X + Y = Z.
    const Matrix z = testing::gaussian(6, 100000, rng);
    const Matrix xx = testing::gaussian(6, 100000, rng);
    const auto s = score_layer(testing::covset(xx, z - xx), Criterion::kCcaBound);
    CHECK(s.score >= 0.95 * 6);
    CHECK(s.score <= 6.0);
  }
  SUBCASE("direct nmse is below the bound") {
    const Matrix y = testing::gaussian(6, 6, rng) * x.array().cos().matrix();
    const auto cs = testing::covset(x, y);
    CHECK(score_layer(cs, Criterion::kDirectNmse).score <=
          score_layer(cs, Criterion::kCcaBound).score + 1e-9);
    CHECK_THROWS_AS(score_layer(cs, Criterion::kCosine), ValidationError);
  }
}

TEST_CASE("model scoring") {
  const auto model = toy::init_random(small_config());
  const auto seqs = corpus(24, 5);
  const auto bound = score_model(model, seqs, Criterion::kCcaBound);
  const auto nmse = score_model(model, seqs, Criterion::kDirectNmse);
  const auto cosine = score_model(model, seqs, Criterion::kCosine);
  REQUIRE(bound.size() == 4);
  REQUIRE(nmse.size() == 4);
  REQUIRE(cosine.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(bound[i].score >= 0.0);
    CHECK(bound[i].score <= 16.0);
    CHECK(nmse[i].score <= bound[i].score + 1e-9);
    CHECK(std::isfinite(cosine[i].score));
  }

  SUBCASE("calibration does not depend on thread count") {
    const std::vector<LayerIndex> layers = {0, 2};
    ::setenv("NBL_THREADS", "1", 1);
    const auto one = calibrate_layers(model, seqs, layers);
    ::setenv("NBL_THREADS", "3", 1);
    const auto three = calibrate_layers(model, seqs, layers);
    ::unsetenv("NBL_THREADS");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      CHECK(one[i].moments.sum_yx() == three[i].moments.sum_yx());
      CHECK(one[i].cosine.score() == three[i].cosine.score());
    }
  }
  SUBCASE("linearized layers are skipped") {
    const LayerIndex idx[] = {1};
    const auto calib = calibrate_layers(model, seqs, idx);
    const lmmse::LinearMap map = lmmse::fit_lmmse(calib[0].moments.finalize(), 1);
    const auto sub = toy::substitute(model, idx, std::span(&map, 1));
    const auto scores = score_model(sub, seqs, Criterion::kCcaBound);
    CHECK(scores.size() == 3);
    for (const auto& s : scores) CHECK(s.layer_index != 1);
  }
}

TEST_CASE("greedy selection") {
  const auto model = toy::init_random(small_config());
  const auto seqs = corpus(16, 6);
  const auto one_shot = select_one_shot(score_model(model, seqs, Criterion::kCcaBound), 1);
  const auto g1 = greedy_select(model, seqs, 1, Criterion::kCcaBound);
  CHECK(g1.plan.layers == one_shot.layers);
  CHECK(g1.plan.strategy == Strategy::kGreedy);

  const auto all = greedy_select(model, seqs, 4, Criterion::kCcaBound);
  check_plan(all.plan, 4, 4);
  CHECK(all.rounds.size() == 4);
  for (std::size_t r = 0; r < 4; ++r) CHECK(all.rounds[r].size() == 4 - r);
  CHECK(all.model.linearized_layers().size() == 4);
  CHECK(all.maps.size() == 4);

  const auto g2 = greedy_select(model, seqs, 2, Criterion::kDirectNmse);
  check_plan(g2.plan, 2, 4);
  CHECK_THROWS_AS(greedy_select(model, seqs, 5, Criterion::kCcaBound), ValidationError);
}
