#include "nbl/pipeline.hpp"

#include "nbl/activation_io.hpp"
#include "nbl/lmmse.hpp"
#include "nbl/parallel.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <regex>
#include <sstream>

namespace nbl::pipeline {

using nlohmann::ordered_json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void require_path(const fs::path& p, const char* what) {
  if (p.empty()) throw ValidationError(std::string("missing required path: ") + what);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::apply_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config: top level must be an object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "model") model_path = value.get<std::string>();
      else if (key == "out") output_model_path = value.get<std::string>();
      else if (key == "dumps") dump_dir = value.get<std::string>();
      else if (key == "report") report_path = value.get<std::string>();
      else if (key == "criterion") criterion = ranking::parse_criterion(value.get<std::string>());
      else if (key == "strategy") strategy = ranking::parse_strategy(value.get<std::string>());
      else if (key == "m") m = value.get<std::size_t>();
      else if (key == "calib-file") calibration.token_file = value.get<std::string>();
      else if (key == "calib-seed") calibration.seed = value.get<std::uint64_t>();
      else if (key == "calib-tokens") calibration.token_count = value.get<std::uint64_t>();
      else if (key == "seq-len") {
        calibration.sequence_length = value.get<std::uint32_t>();
        evaluation.sequence_length = calibration.sequence_length;
      } else if (key == "eval-file") evaluation.token_file = value.get<std::string>();
      else if (key == "eval-seed") evaluation.seed = value.get<std::uint64_t>();
      else if (key == "eval-tokens") evaluation.token_count = value.get<std::uint64_t>();
      else if (key == "ridge") reg.ridge_rel = value.get<double>();
      else if (key == "floor") reg.floor_rel = value.get<double>();
      else throw ValidationError("config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::type_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

PipelineConfig PipelineConfig::from_json_file(const fs::path& path) {
  PipelineConfig c;
  c.apply_json(read_text(path));
  return c;
}

// ---------------------------------------------------------------------------
// Tokens

std::vector<std::vector<toy::TokenId>> synthetic_corpus(std::uint64_t seed,
                                                        std::uint64_t token_count,
                                                        std::uint32_t sequence_length,
                                                        std::uint32_t vocab) {
  if (sequence_length < 1 || vocab < 1) throw ValidationError("corpus: empty sequence or vocab");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<toy::TokenId>> out;
  std::uint64_t left = token_count;
  while (left > 0) {
    const auto len = static_cast<std::size_t>(std::min<std::uint64_t>(left, sequence_length));
    std::vector<toy::TokenId> seq(len);
    for (auto& id : seq) id = static_cast<toy::TokenId>(rng() % vocab);
    out.push_back(std::move(seq));
    left -= len;
  }
  return out;
}

std::vector<std::vector<toy::TokenId>> load_tokens(const TokenSource& source,
                                                   const toy::ToyConfig& model_config) {
  const std::uint32_t max_len =
      source.sequence_length == 0 ? model_config.max_context : source.sequence_length;
  if (max_len > model_config.max_context) {
    throw ValidationError("sequence length " + std::to_string(max_len) +
                          " exceeds model max context " + std::to_string(model_config.max_context));
  }
  if (!source.token_file) {
    if (source.token_count < 1) throw ValidationError("token count must be >= 1");
    return synthetic_corpus(source.seed, source.token_count, max_len, model_config.vocab);
  }
  std::ifstream in(*source.token_file);
  if (!in) throw std::runtime_error("cannot open token file " + source.token_file->string());
  std::vector<std::vector<toy::TokenId>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<toy::TokenId> ids;
    std::string word;
    while (ls >> word) {
      std::size_t used = 0;
      unsigned long long v = 0;
      try {
        v = std::stoull(word, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != word.size() || v >= model_config.vocab) {
        throw ValidationError(source.token_file->string() + ":" + std::to_string(line_no) +
                              ": invalid token id '" + word + "'");
      }
      ids.push_back(static_cast<toy::TokenId>(v));
    }
    for (std::size_t i = 0; i < ids.size(); i += max_len) {
      const std::size_t end = std::min(ids.size(), i + max_len);
      out.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(i),
                       ids.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  if (out.empty()) throw ValidationError("token file has no tokens");
  return out;
}

// ---------------------------------------------------------------------------
// gen-model / calibrate

void cmd_gen_model(const fs::path& out, const toy::ToyConfig& config) {
  require_path(out, "--out");
  config.validate();
  toy::save_model(toy::init_random(config), out);
}

CalibrationSummary cmd_calibrate(const PipelineConfig& config) {
  require_path(config.model_path, "--model");
  require_path(config.dump_dir, "--dumps");
  const toy::ToyTransformer model = toy::load_model(config.model_path);
  const auto sequences = load_tokens(config.calibration, model.config());
  fs::create_directories(config.dump_dir);

  std::vector<LayerIndex> layers;
  for (LayerIndex k = 0; k < model.config().layers; ++k) {
    if (model.blocks()[k].kind == toy::LayerKind::kAttention) layers.push_back(k);
  }
  const std::set<LayerIndex> capture(layers.begin(), layers.end());

  CalibrationSummary summary;
  std::vector<std::unique_ptr<io::DumpWriter>> inputs, outputs;
  for (LayerIndex k : layers) {
    const auto in_path = config.dump_dir / io::dump_filename(k, io::Role::kInput);
    const auto out_path = config.dump_dir / io::dump_filename(k, io::Role::kOutput);
    inputs.push_back(std::make_unique<io::DumpWriter>(in_path, static_cast<std::uint16_t>(k),
                                                      io::Role::kInput, model.config().width));
    outputs.push_back(std::make_unique<io::DumpWriter>(out_path, static_cast<std::uint16_t>(k),
                                                       io::Role::kOutput, model.config().width));
    summary.files.push_back(in_path);
    summary.files.push_back(out_path);
  }

  // Forward passes run in parallel batches; writes stay in sequence order.
  const std::size_t batch = std::max<std::size_t>(1, worker_count() * 2);
  for (std::size_t start = 0; start < sequences.size(); start += batch) {
    const std::size_t count = std::min(batch, sequences.size() - start);
    std::vector<toy::ForwardResult> results(count);
    parallel_for(count, [&](std::size_t i) {
      results[i] = model.forward(sequences[start + i], capture);
    });
    for (const auto& r : results) {
      for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& cap = r.captures.at(layers[i]);
        inputs[i]->append(cap.input);
        outputs[i]->append(cap.output);
      }
      summary.token_count += static_cast<std::uint64_t>(r.logits.rows());
    }
  }
  for (auto& w : inputs) w->finish();
  for (auto& w : outputs) w->finish();
  return summary;
}

// ---------------------------------------------------------------------------
// Dumps -> statistics

std::vector<DumpedLayer> read_dump_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("dump directory not found: " + dir.string());
  static const std::regex kName(R"(layer(\d+)_(input|output)\.nbla)");
  std::map<LayerIndex, std::pair<fs::path, fs::path>> pairs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch match;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, match, kName)) continue;
    const auto k = static_cast<LayerIndex>(std::stoul(match[1].str()));
    (match[2].str() == "input" ? pairs[k].first : pairs[k].second) = entry.path();
  }
  if (pairs.empty()) throw std::runtime_error("no NBLA dumps in " + dir.string());

  std::vector<DumpedLayer> out;
  std::vector<std::pair<fs::path, fs::path>> paths;
  for (const auto& [k, p] : pairs) {
    if (p.first.empty() || p.second.empty()) {
      throw std::runtime_error("layer " + std::to_string(k) + " is missing its " +
                               (p.first.empty() ? "input" : "output") + " dump");
    }
    out.push_back(DumpedLayer{k, {}, {}});
    paths.push_back(p);
  }

  parallel_for(out.size(), [&](std::size_t i) {
    const io::Dump x = io::read_dump_file(paths[i].first);
    const io::Dump y = io::read_dump_file(paths[i].second);
    const LayerIndex k = out[i].layer;
    if (x.header.layer_index != k || y.header.layer_index != k ||
        x.header.role != io::Role::kInput || y.header.role != io::Role::kOutput) {
      throw FormatError("dump headers for layer " + std::to_string(k) +
                        " disagree with their file names");
    }
    if (x.matrix.rows() != y.matrix.rows() || x.matrix.cols() != y.matrix.cols()) {
      throw FormatError("layer " + std::to_string(k) + ": input and output dumps differ in shape");
    }
    out[i].moments = stats::MomentAccumulator(x.matrix.rows(), y.matrix.rows());
    out[i].moments.accumulate(x.matrix, y.matrix);
    out[i].cosine.accumulate(x.matrix, y.matrix);
  });
  return out;
}

// ---------------------------------------------------------------------------
// rank

namespace {

void sort_scores(std::vector<ranking::LayerScore>& scores) {
  std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.layer_index < b.layer_index;
  });
}

std::vector<ranking::LayerScore> score_dumps(const std::vector<DumpedLayer>& layers,
                                             ranking::Criterion criterion,
                                             const Regularization& reg) {
  std::vector<ranking::LayerScore> scores(layers.size());
  parallel_for(layers.size(), [&](std::size_t i) {
    scores[i] = criterion == ranking::Criterion::kCosine
                    ? ranking::score_cosine(layers[i].cosine, layers[i].layer)
                    : ranking::score_layer(layers[i].moments.finalize(), criterion,
                                           layers[i].layer, reg);
  });
  return scores;
}

}  // namespace

std::string RankReport::to_json() const {
  ordered_json j;
  j["criterion"] = ranking::to_string(criterion);
  j["strategy"] = ranking::to_string(strategy);
  j["m"] = m;
  j["token_count"] = token_count;
  j["selected"] = plan.layers;
  auto layers = ordered_json::array();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& s = scores[i];
    ordered_json e;
    e["index"] = s.layer_index;
    e["criterion"] = ranking::to_string(s.criterion);
    e["score"] = s.score;
    e["rank"] = i;
    e["selected"] = std::find(plan.layers.begin(), plan.layers.end(), s.layer_index) !=
                    plan.layers.end();
    if (s.rho_spectrum) {
      e["rho"] = std::vector<double>(s.rho_spectrum->rho.begin(), s.rho_spectrum->rho.end());
    }
    layers.push_back(std::move(e));
  }
  j["layers"] = std::move(layers);
  return j.dump(2) + "\n";
}

RankReport RankReport::from_json(const std::string& text) {
  RankReport r;
  try {
    const auto j = ordered_json::parse(text);
    r.criterion = ranking::parse_criterion(j.at("criterion").get<std::string>());
    r.strategy = ranking::parse_strategy(j.at("strategy").get<std::string>());
    r.m = j.at("m").get<std::size_t>();
    r.token_count = j.at("token_count").get<std::uint64_t>();
    r.plan.criterion = r.criterion;
    r.plan.strategy = r.strategy;
    r.plan.layers = j.at("selected").get<std::vector<LayerIndex>>();
    for (const auto& e : j.at("layers")) {
      ranking::LayerScore s;
      s.layer_index = e.at("index").get<LayerIndex>();
      s.criterion = ranking::parse_criterion(e.at("criterion").get<std::string>());
      s.score = e.at("score").get<double>();
      if (e.contains("rho")) {
        cca::CcaSpectrum spec;
        const auto rho = e.at("rho").get<std::vector<double>>();
        spec.rho = Eigen::Map<const Vector>(rho.data(), static_cast<Eigen::Index>(rho.size()));
        s.rho_spectrum = std::move(spec);
      }
      r.scores.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("rank report: ") + e.what());
  }
  return r;
}

RankReport cmd_rank(const PipelineConfig& config) {
  RankReport report;
  report.criterion = config.criterion;
  report.strategy = config.strategy;
  report.m = config.m;

  if (config.strategy == ranking::Strategy::kGreedy) {
    require_path(config.model_path, "--model");
    const auto model = toy::load_model(config.model_path);
    const auto sequences = load_tokens(config.calibration, model.config());
    auto greedy = ranking::greedy_select(model, sequences, config.m, config.criterion, config.reg);
    for (const auto& s : sequences) report.token_count += s.size();
    report.scores = ranking::score_model(model, sequences, config.criterion, config.reg);
    report.plan = std::move(greedy.plan);
  } else {
    require_path(config.dump_dir, "--dumps");
    const auto layers = read_dump_dir(config.dump_dir);
    report.token_count = layers.front().moments.count();
    report.scores = score_dumps(layers, config.criterion, config.reg);
    report.plan = ranking::select_one_shot(report.scores, config.m);
  }
  sort_scores(report.scores);
  if (!config.report_path.empty()) write_text(config.report_path, report.to_json());
  return report;
}

// ---------------------------------------------------------------------------
// linearize

LinearizeSummary cmd_linearize(const PipelineConfig& config) {
  require_path(config.model_path, "--model");
  require_path(config.output_model_path, "--out");
  const toy::ToyTransformer model = toy::load_model(config.model_path);
  if (config.m > model.config().layers) {
    throw ValidationError("m = " + std::to_string(config.m) + " exceeds layer count " +
                          std::to_string(model.config().layers));
  }

  LinearizeSummary summary;
  if (config.strategy == ranking::Strategy::kGreedy) {
    const auto sequences = load_tokens(config.calibration, model.config());
    auto greedy = ranking::greedy_select(model, sequences, config.m, config.criterion, config.reg);
    summary.plan = greedy.plan;
    for (const auto& map : greedy.maps) summary.fit_nmse.push_back(map.fit_nmse);
    toy::save_model(greedy.model, config.output_model_path);
    return summary;
  }

  // Without dumps the statistics are recomputed from the calibration tokens.
  std::vector<DumpedLayer> layers;
  if (!config.dump_dir.empty()) {
    layers = read_dump_dir(config.dump_dir);
  } else {
    std::vector<LayerIndex> attention;
    for (LayerIndex k = 0; k < model.config().layers; ++k) {
      if (model.blocks()[k].kind == toy::LayerKind::kAttention) attention.push_back(k);
    }
    const auto sequences = load_tokens(config.calibration, model.config());
    auto calib = ranking::calibrate_layers(model, sequences, attention);
    for (std::size_t i = 0; i < attention.size(); ++i) {
      layers.push_back({attention[i], std::move(calib[i].moments), calib[i].cosine});
    }
  }
  if (config.m > layers.size()) {
    throw ValidationError("m = " + std::to_string(config.m) + " exceeds the " +
                          std::to_string(layers.size()) + " dumped attention layers");
  }
  if (!config.report_path.empty() && fs::exists(config.report_path)) {
    const auto report = RankReport::from_json(read_text(config.report_path));
    if (report.strategy != ranking::Strategy::kOneShot) {
      throw ValidationError("report was produced by greedy selection; rerun linearize with --strategy greedy");
    }
    summary.plan = ranking::select_one_shot(report.scores, config.m);
  } else {
    summary.plan = ranking::select_one_shot(score_dumps(layers, config.criterion, config.reg),
                                            config.m);
  }

  std::vector<lmmse::LinearMap> maps;
  for (const LayerIndex k : summary.plan.layers) {
    const auto it = std::find_if(layers.begin(), layers.end(),
                                 [k](const DumpedLayer& l) { return l.layer == k; });
    if (it == layers.end()) throw std::runtime_error("no dumps for selected layer " + std::to_string(k));
    maps.push_back(lmmse::fit_lmmse(it->moments.finalize(), k, config.reg));
    summary.fit_nmse.push_back(maps.back().fit_nmse);
  }
  toy::save_model(toy::substitute(model, summary.plan.layers, maps), config.output_model_path);
  return summary;
}

// ---------------------------------------------------------------------------
// eval

std::string EvalReport::to_json() const {
  ordered_json j;
  j["token_count"] = token_count;
  j["mean_kl"] = drift.mean_kl;
  j["max_abs_logit_diff"] = drift.max_abs;
  j["perplexity_a"] = perplexity_a;
  j["perplexity_b"] = perplexity_b;
  auto arr = ordered_json::array();
  for (const auto& l : layers) {
    arr.push_back({{"index", l.layer}, {"empirical_nmse", l.empirical_nmse},
                   {"fit_nmse", l.fit_nmse}});
  }
  j["layers"] = std::move(arr);
  return j.dump(2) + "\n";
}

EvalReport cmd_eval(const PipelineConfig& config, const fs::path& model_a_path,
                    const fs::path& model_b_path) {
  const auto a = toy::load_model(model_a_path);
  const auto b = toy::load_model(model_b_path);
  if (a.config().vocab != b.config().vocab) {
    throw ValidationError("vocab mismatch: " + std::to_string(a.config().vocab) + " vs " +
                          std::to_string(b.config().vocab));
  }
  if (a.config().width != b.config().width) throw ValidationError("width mismatch");
  const auto sequences = load_tokens(config.evaluation, a.config());
  const auto linear = b.linearized_layers();
  const std::set<LayerIndex> capture(linear.begin(), linear.end());
  for (LayerIndex k : linear) {
    if (k >= a.config().layers) throw ValidationError("model b has more layers than model a");
  }

  struct Partial {
    double kl = 0.0, max_abs = 0.0, nll_a = 0.0, nll_b = 0.0;
    std::uint64_t positions = 0, predictions = 0;
    std::vector<double> err, sum_sq;
    std::vector<Vector> sum_y;
    std::vector<std::uint64_t> n;
  };
  std::vector<Partial> parts(sequences.size());
  parallel_for(sequences.size(), [&](std::size_t s) {
    const auto& seq = sequences[s];
    Partial& p = parts[s];
    const auto fa = a.forward(seq, capture);
    const auto fb = b.forward(seq);
    const auto drift = toy::logit_drift(fa.logits, fb.logits);
    const auto rows = static_cast<std::uint64_t>(fa.logits.rows());
    p.kl = drift.mean_kl * static_cast<double>(rows);
    p.max_abs = drift.max_abs;
    p.positions = rows;
    if (seq.size() >= 2) {
      const double pred = static_cast<double>(seq.size() - 1);
      p.nll_a = std::log(toy::perplexity(fa.logits, seq)) * pred;
      p.nll_b = std::log(toy::perplexity(fb.logits, seq)) * pred;
      p.predictions = seq.size() - 1;
    }
    for (LayerIndex k : linear) {
      const auto& cap = fa.captures.at(k);
      const Matrix pred = lmmse::apply(*b.blocks()[k].linear, cap.input);
      p.err.push_back((cap.output - pred).squaredNorm());
      p.sum_sq.push_back(cap.output.squaredNorm());
      p.sum_y.push_back(cap.output.rowwise().sum());
      p.n.push_back(static_cast<std::uint64_t>(cap.output.cols()));
    }
  });

  EvalReport report;
  double kl = 0.0, nll_a = 0.0, nll_b = 0.0;
  std::uint64_t predictions = 0;
  std::vector<double> err(linear.size(), 0.0), sum_sq(linear.size(), 0.0);
  std::vector<Vector> sum_y(linear.size(), Vector::Zero(a.config().width));
  std::uint64_t n = 0;
  for (const Partial& p : parts) {
    kl += p.kl;
    report.drift.max_abs = std::max(report.drift.max_abs, p.max_abs);
    report.token_count += p.positions;
    nll_a += p.nll_a;
    nll_b += p.nll_b;
    predictions += p.predictions;
    for (std::size_t i = 0; i < linear.size(); ++i) {
      err[i] += p.err[i];
      sum_sq[i] += p.sum_sq[i];
      sum_y[i] += p.sum_y[i];
    }
    if (!linear.empty()) n += p.n.front();
  }
  report.drift.mean_kl = kl / static_cast<double>(report.token_count);
  if (predictions > 0) {
    report.perplexity_a = std::exp(nll_a / static_cast<double>(predictions));
    report.perplexity_b = std::exp(nll_b / static_cast<double>(predictions));
  }
  for (std::size_t i = 0; i < linear.size(); ++i) {
    LayerEval le;
    le.layer = linear[i];
    le.fit_nmse = b.blocks()[linear[i]].linear->fit_nmse;
    const double centered = sum_sq[i] - sum_y[i].squaredNorm() / static_cast<double>(n);
    le.empirical_nmse = centered > 0.0 ? err[i] / centered : 0.0;
    report.layers.push_back(le);
  }
  if (!config.report_path.empty()) write_text(config.report_path, report.to_json());
  return report;
}

// ---------------------------------------------------------------------------
// cost

CostOutput cmd_cost(const cost::InferenceProfile& base, const std::vector<std::uint64_t>& contexts,
                    const std::vector<std::uint64_t>& linearized) {
  if (contexts.empty() || linearized.empty()) {
    throw ValidationError("cost: need at least one --ctx and one --m");
  }
  CostOutput out;
  out.table = cost::cache_table(cost::profile_grid(base, contexts, linearized));
  out.text = cost::format_text(out.table);
  out.json = cost::format_json(out.table);
  return out;
}

}  // namespace nbl::pipeline
