// Acceptance checks A1-A10. One PASS/FAIL line per criterion; exit status is
// the number of failures.

#include "nbl/activation_io.hpp"
#include "nbl/cca.hpp"
#include "nbl/costmodel.hpp"
#include "nbl/lmmse.hpp"
#include "nbl/pipeline.hpp"
#include "nbl/ranking.hpp"
#include "nbl/stats.hpp"
#include "nbl/toymodel.hpp"

#include "test_helpers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#ifndef NBL_CLI_PATH
#define NBL_CLI_PATH "nbl"
#endif

namespace fs = std::filesystem;
using namespace nbl;
using nbl::testing::gaussian;
using nbl::testing::gaussian_vector;
using nbl::testing::rel_err;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome a1() {
  double worst_w = 0.0, worst_c = 0.0, worst_nmse = 0.0;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const int h_in = testing::uniform_int(1, 16, rng);
    const int h_out = testing::uniform_int(1, 16, rng);
    const Matrix a = gaussian(h_out, h_in, rng);
    const Vector c = gaussian_vector(h_out, rng);
    const Matrix x = gaussian(h_in, 4096, rng);
    const Matrix y = (a * x).colwise() + c;
    const auto cs = testing::covset(x, y);
    const auto map = lmmse::fit_lmmse(cs);
    worst_w = std::max(worst_w, rel_err(map.weight, a));
    worst_c = std::max(worst_c, rel_err(map.bias, c));
    worst_nmse = std::max(worst_nmse, cca::direct_nmse(cs));
  }
  return {worst_w <= 1e-6 && worst_c <= 1e-6 && worst_nmse <= 1e-10,
          "max rel err W " + fmt("%.2e", worst_w) + ", c " + fmt("%.2e", worst_c) +
              ", max direct_nmse " + fmt("%.2e", worst_nmse)};
}

Outcome a2() {
  double worst = 0.0;
  for (int seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(2000 + seed);
    const int h_in = testing::uniform_int(1, 16, rng);
    const int h_out = testing::uniform_int(1, 16, rng);
    const Matrix mix = gaussian(h_in, h_in, rng) + 3.0 * Matrix::Identity(h_in, h_in);
    const Matrix x = mix * gaussian(h_in, 2000, rng);
    const Matrix y = gaussian(h_out, h_in, rng) * x.array().tanh().matrix() +
                     0.5 * gaussian(h_out, 2000, rng);
    const auto cs = testing::covset(x, y);
    worst = std::max(worst, lmmse::orthogonality_residual(cs, lmmse::fit_lmmse(cs)));
  }
  return {worst <= 1e-6, "max orthogonality residual " + fmt("%.2e", worst)};
}

Outcome a3() {
  constexpr int kInstances = 120;
  constexpr Eigen::Index kN = 100000;
  double worst_gap = -1e300, worst_mc = 0.0;
  int taller = 0;
  for (int seed = 0; seed < kInstances; ++seed) {
    std::mt19937_64 rng(3000 + seed);
    // Walk the grid corners too: first instances pin h_in = 1 and h_out = 16.
    const int h_in = seed < 4 ? 1 + 15 * (seed & 1) : testing::uniform_int(1, 16, rng);
    const int h_out = seed < 4 ? 1 + 15 * (seed >> 1) : testing::uniform_int(1, 16, rng);
    if (h_out > h_in) ++taller;
    const double noise = std::exp(std::uniform_real_distribution<double>(-4.0, 1.5)(rng));
    const Matrix x = gaussian(h_in, h_in, rng) * gaussian(h_in, kN, rng);
    Matrix y = gaussian(h_out, h_in, rng) * x + noise * gaussian(h_out, kN, rng);
    y.colwise() += gaussian_vector(h_out, rng);
    const auto cs = testing::covset(x, y);

    const double nmse = cca::direct_nmse(cs);
    const double bound =
        cca::cca_nmse_bound(cca::canonical_correlations(cca::standardized_cross_correlation(cs)));
    worst_gap = std::max(worst_gap, nmse - bound);

    const auto map = lmmse::fit_lmmse(cs);
    const double mse = (y - lmmse::apply(map, x)).squaredNorm() / static_cast<double>(kN - 1);
    worst_mc = std::max(worst_mc, std::abs(mse / cs.cyy.trace() - nmse));
  }
  return {worst_gap <= 1e-9 && worst_mc <= 1e-3 && taller > 0,
          std::to_string(kInstances) + " instances (" + std::to_string(taller) +
              " with h_out > h_in), max nmse - bound " + fmt("%.2e", worst_gap) +
              ", max |MC - direct| " + fmt("%.2e", worst_mc)};
}

Outcome a4() {
  std::mt19937_64 rng(4000);
  const Matrix x = gaussian(8, 8, rng) * gaussian(8, 20000, rng);
  const auto same = cca::canonical_correlations(
      cca::standardized_cross_correlation(testing::covset(x, x)));
  const double min_rho = same.rho.minCoeff();
  const double same_bound = cca::cca_nmse_bound(same);

  const Matrix xi = gaussian(4, 100000, rng);
  const Matrix yi = gaussian(4, 100000, rng);
  const double indep_bound = cca::cca_nmse_bound(
      cca::canonical_correlations(cca::standardized_cross_correlation(testing::covset(xi, yi))));
  return {min_rho >= 1.0 - 1e-6 && same_bound <= 1e-5 && indep_bound >= 0.9 * 4.0,
          "Y=X: min rho " + fmt("%.9f", min_rho) + ", bound " + fmt("%.2e", same_bound) +
              "; independent: bound " + fmt("%.4f", indep_bound) + " (h_out 4)"};
}

Outcome a5() {
  const std::vector<std::uint64_t> contexts = {512, 1024, 2048, 4096, 128000};
  const std::vector<std::uint64_t> ms = {0, 4, 8, 12, 16};
  const double expected[5][5] = {{4, 3.5, 3.0, 2.5, 2.0},
                                 {8, 7.0, 6.0, 5.0, 4.0},
                                 {16, 14.0, 12.0, 10.0, 8.0},
                                 {32, 28.0, 24.0, 20.0, 16.0},
                                 {1000, 875.0, 750.0, 625.0, 500.0}};
  cost::InferenceProfile base;
  base.batch = 64;
  const auto table = cost::cache_table(cost::profile_grid(base, contexts, ms));
  int matched = 0;
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 5; ++c) {
      const double printed = std::round(table.gib[r][c] * 10.0) / 10.0;
      if (printed == expected[r][c]) ++matched;
    }
  }
  return {matched == 25, std::to_string(matched) + "/25 cells match to one decimal"};
}

Outcome a6() {
  cost::InferenceProfile p;
  p.layers = 32;
  p.linearized = 8;
  p.width = 4096;
  bool monotone = true;
  double prev = 0.0;
  for (std::uint64_t n = 1; n <= 10000000; n = n < 10 ? n + 1 : n * 10 / 7 + 1) {
    p.context = n;
    const double s = cost::prefill_speedup(p);
    if (s < prev) monotone = false;
    prev = s;
  }
  p.context = 10000000;
  const double at_limit = cost::prefill_speedup(p);
  p.linearized = 0;
  const double none = cost::prefill_speedup(p);
  const double gap = std::abs(at_limit - 4.0 / 3.0);
  return {monotone && gap <= 1e-3 && none == 1.0,
          std::string(monotone ? "monotone" : "NOT monotone") + ", |s(1e7) - 4/3| " +
              fmt("%.2e", gap) + ", m=0 gives " + fmt("%.17g", none)};
}

Outcome a7() {
  constexpr std::size_t kM = 2;
  std::string detail;
  bool pass = true;
  for (std::uint64_t seed : {11, 12, 13}) {
    toy::ToyConfig cfg;  // K=8, d=64, h=4, g=2, V=256
    cfg.seed = seed;
    const auto model = toy::init_random(cfg);
    const auto calib = pipeline::synthetic_corpus(100 + seed, 50000, cfg.max_context, cfg.vocab);
    const auto eval = pipeline::synthetic_corpus(200 + seed, 4096, cfg.max_context, cfg.vocab);

    std::vector<LayerIndex> layers(cfg.layers);
    std::iota(layers.begin(), layers.end(), 0u);
    const auto stats_per_layer = ranking::calibrate_layers(model, calib, layers);
    std::vector<ranking::LayerScore> scores;
    std::vector<lmmse::LinearMap> maps;
    for (LayerIndex k : layers) {
      const auto cs = stats_per_layer[k].moments.finalize();
      scores.push_back(ranking::score_layer(cs, ranking::Criterion::kCcaBound, k));
      maps.push_back(lmmse::fit_lmmse(cs, k));
    }
    const auto low = ranking::select_one_shot(scores, kM).layers;
    auto negated = scores;
    for (auto& s : negated) s.score = -s.score;
    const auto high = ranking::select_one_shot(negated, kM).layers;

    auto drift_of = [&](const std::vector<LayerIndex>& pick) {
      std::vector<lmmse::LinearMap> chosen;
      for (LayerIndex k : pick) chosen.push_back(maps[k]);
      const auto sub = toy::substitute(model, pick, chosen);
      double total = 0.0;
      for (const auto& seq : eval) total += toy::logit_drift(model, sub, seq).mean_kl;
      return total / static_cast<double>(eval.size());
    };
    const double d_low = drift_of(low);
    const double d_high = drift_of(high);
    pass = pass && d_low <= d_high;
    detail += "seed " + std::to_string(seed) + ": low {" + std::to_string(low[0]) + "," +
              std::to_string(low[1]) + "} " + fmt("%.4g", d_low) + " vs high {" +
              std::to_string(high[0]) + "," + std::to_string(high[1]) + "} " +
              fmt("%.4g", d_high) + "; ";
  }
  return {pass, detail};
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run(const std::string& cmd) {
  return std::system((cmd + " > /dev/null 2>&1").c_str());
}

Outcome a8() {
  const fs::path root = fs::temp_directory_path() / ("nbl_a8_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const std::string cli = NBL_CLI_PATH;
  for (const char* name : {"run1", "run2"}) {
    const fs::path dir = root / name;
    fs::create_directories(dir);
    const std::string d = dir.string();
    const std::vector<std::string> steps = {
        cli + " gen-model --out " + d + "/model.nblm --seed 5",
        cli + " calibrate --model " + d + "/model.nblm --dumps " + d +
            "/dumps --calib-seed 9 --calib-tokens 16384",
        cli + " rank --dumps " + d + "/dumps --m 2 --report " + d + "/rank.json",
        cli + " linearize --model " + d + "/model.nblm --report " + d + "/rank.json --m 2 --out " +
            d + "/model_nbl.nblm --calib-seed 9 --calib-tokens 16384",
        cli + " eval " + d + "/model.nblm " + d + "/model_nbl.nblm --eval-seed 3 --eval-tokens 2048 --report " +
            d + "/eval.json",
    };
    for (const auto& s : steps) {
      if (int rc = run(s); rc != 0) {
        return {false, "command failed (" + std::to_string(rc) + "): " + s};
      }
    }
  }
  std::size_t compared = 0;
  std::string mismatch;
  for (const auto& entry : fs::recursive_directory_iterator(root / "run1")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), root / "run1");
    const fs::path other = root / "run2" / rel;
    ++compared;
    if (!fs::exists(other) || read_bytes(entry.path()) != read_bytes(other)) {
      mismatch += rel.string() + " ";
    }
  }
  fs::remove_all(root);
  if (!mismatch.empty()) return {false, "differing files: " + mismatch};
  return {compared >= 5, std::to_string(compared) + " files byte-identical across runs"};
}

Outcome a9() {
  double worst = 0.0, worst_resid = 0.0;
  auto rel = [](const Matrix& a, const Matrix& b) {
    return (a - b).norm() / std::max(b.norm(), 1e-300);
  };
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(9000 + seed);
    const int h_in = testing::uniform_int(1, 16, rng);
    const int h_out = testing::uniform_int(1, 16, rng);
    const int n = testing::uniform_int(100, 5000, rng);
    Matrix x = gaussian(h_in, n, rng);
    x.colwise() += 5.0 * gaussian_vector(h_in, rng);
    const Matrix y = gaussian(h_out, h_in, rng) * x + gaussian(h_out, n, rng);

    // Unequal chunks merged in two different orders.
    const int cut1 = n / 3, cut2 = n / 3 + n / 5;
    stats::MomentAccumulator p1(h_in, h_out), p2(h_in, h_out), p3(h_in, h_out);
    p1.accumulate(x.leftCols(cut1), y.leftCols(cut1));
    p2.accumulate(x.middleCols(cut1, cut2 - cut1), y.middleCols(cut1, cut2 - cut1));
    p3.accumulate(x.rightCols(n - cut2), y.rightCols(n - cut2));
    const auto cs = stats::merge(stats::merge(p1, p2), p3).finalize();
    const auto oracle = testing::two_pass(x, y);
    worst = std::max({worst, rel(cs.mean_x, oracle.mean_x), rel(cs.mean_y, oracle.mean_y),
                      rel(cs.cxx, oracle.cxx), rel(cs.cyy, oracle.cyy), rel(cs.cyx, oracle.cyx)});

    const Matrix ys = gaussian(h_in, h_in, rng) * x + gaussian(h_in, n, rng);
    const auto derived = stats::derive_residual_covset(testing::covset(x, ys));
    const auto direct = testing::covset(x, x + ys);
    worst_resid = std::max({worst_resid, rel(derived.mean_y, direct.mean_y),
                            rel(derived.cyy, direct.cyy), rel(derived.cyx, direct.cyx),
                            rel(derived.cxx, direct.cxx)});
  }
  return {worst <= 1e-10 && worst_resid <= 1e-10,
          "max rel err vs two-pass " + fmt("%.2e", worst) + ", residual derivation " +
              fmt("%.2e", worst_resid)};
}

Outcome a10() {
  constexpr int kLayers = 6;
  constexpr int kDim = 8;
  constexpr Eigen::Index kTokens = 8000;
  const fs::path root = fs::temp_directory_path() / ("nbl_a10_" + std::to_string(::getpid()));
  bool pass = true;
  std::string detail;
  for (int seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(10000 + seed);
    const fs::path dir = root / std::to_string(seed);
    fs::create_directories(dir);
    // Noise grows with this permutation of layer indices.
    std::vector<LayerIndex> noise_order(kLayers);
    std::iota(noise_order.begin(), noise_order.end(), 0u);
    std::shuffle(noise_order.begin(), noise_order.end(), rng);
    // Same signal path in every layer, only the noise level differs.
    const Matrix mix = gaussian(kDim, kDim, rng);
    const Matrix signal = gaussian(kDim, kDim, rng);
    for (int rank = 0; rank < kLayers; ++rank) {
      const LayerIndex k = noise_order[rank];
      const double noise = 0.05 * std::pow(2.5, rank);
      const Matrix x = mix * gaussian(kDim, kTokens, rng);
      const Matrix y = signal * x + noise * gaussian(kDim, kTokens, rng);
      io::DumpHeader h;
      h.layer_index = static_cast<std::uint16_t>(k);
      h.feature_dim = kDim;
      h.token_count = kTokens;
      h.role = io::Role::kInput;
      io::write_dump_file(dir / io::dump_filename(k, io::Role::kInput), h, x.cast<float>());
      h.role = io::Role::kOutput;
      io::write_dump_file(dir / io::dump_filename(k, io::Role::kOutput), h, y.cast<float>());
    }

    std::vector<std::vector<LayerIndex>> orders;
    for (auto crit : {ranking::Criterion::kCcaBound, ranking::Criterion::kDirectNmse,
                      ranking::Criterion::kCosine}) {
      pipeline::PipelineConfig cfg;
      cfg.dump_dir = dir;
      cfg.criterion = crit;
      cfg.m = 2;
      const auto report = pipeline::cmd_rank(cfg);
      bool finite = report.scores.size() == kLayers;
      std::vector<LayerIndex> order;
      for (const auto& s : report.scores) {
        finite = finite && std::isfinite(s.score);
        order.push_back(s.layer_index);
      }
      if (!finite) {
        pass = false;
        detail += "seed " + std::to_string(seed) + " " + std::string(ranking::to_string(crit)) +
                  ": missing or non-finite scores; ";
      }
      orders.push_back(order);
    }
    const bool agree = orders[0] == orders[1] && orders[0] == noise_order;
    pass = pass && agree;
    if (!agree) detail += "seed " + std::to_string(seed) + ": cca/nmse orderings differ; ";
  }
  fs::remove_all(root);
  if (pass) detail = "5 cases, 3 criteria x 6 finite scores each, cca_bound and direct_nmse follow noise order";
  return {pass, detail};
}

}  // namespace

int main() {
  struct Check {
    const char* id;
    double budget_s;
    std::function<Outcome()> fn;
  };
  const std::vector<Check> checks = {
      {"A1", 5, a1},   {"A2", 5, a2}, {"A3", 60, a3},  {"A4", 30, a4},  {"A5", 1, a5},
      {"A6", 1, a6},   {"A7", 60, a7}, {"A8", 120, a8}, {"A9", 10, a9}, {"A10", 30, a10},
  };
  int failures = 0;
  for (const auto& c : checks) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool ok = o.pass && in_time;
    if (!ok) ++failures;
    std::printf("%-4s %s  %.2fs/%gs  %s%s\n", c.id, ok ? "PASS" : "FAIL", secs, c.budget_s,
                o.detail.c_str(), in_time ? "" : " [over time budget]");
    std::fflush(stdout);
  }
  return failures;
}
