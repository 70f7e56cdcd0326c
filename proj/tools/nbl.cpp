// nbl: calibrate, rank, linearize and evaluate attention-layer substitution on
// toy transformers; print analytic KV-cache/prefill cost tables.
//
// Exit codes: 0 success, 2 validation error, 1 runtime error.

#include "nbl/pipeline.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <optional>

namespace {

using nbl::pipeline::PipelineConfig;

struct SharedFlags {
  std::string config_file;
  std::optional<std::string> model, out, dumps, report, criterion, strategy;
  std::optional<std::size_t> m;
  std::optional<std::string> calib_file, eval_file;
  std::optional<std::uint64_t> calib_seed, calib_tokens, eval_seed, eval_tokens;
  std::optional<std::uint32_t> seq_len;
  std::optional<double> ridge, floor;
};

void add_shared(CLI::App* cmd, SharedFlags& f) {
  cmd->add_option("--config", f.config_file, "JSON config; flags override its values");
  cmd->add_option("--model", f.model, "Model file");
  cmd->add_option("--dumps", f.dumps, "Directory of NBLA dumps");
  cmd->add_option("--report", f.report, "JSON report path");
  cmd->add_option("--criterion", f.criterion, "cca_bound | direct_nmse | cosine");
  cmd->add_option("--strategy", f.strategy, "one_shot | greedy");
  cmd->add_option("--m", f.m, "Number of attention layers to linearize");
  cmd->add_option("--calib-file", f.calib_file, "Calibration token file");
  cmd->add_option("--calib-seed", f.calib_seed, "Synthetic calibration corpus seed");
  cmd->add_option("--calib-tokens", f.calib_tokens, "Synthetic calibration token count");
  cmd->add_option("--eval-file", f.eval_file, "Evaluation token file");
  cmd->add_option("--eval-seed", f.eval_seed, "Synthetic evaluation corpus seed");
  cmd->add_option("--eval-tokens", f.eval_tokens, "Synthetic evaluation token count");
  cmd->add_option("--seq-len", f.seq_len, "Sequence length (0 = model max context)");
  cmd->add_option("--ridge", f.ridge, "Relative ridge added to C_XX");
  cmd->add_option("--floor", f.floor, "Relative eigenvalue floor for inverse square roots");
}

PipelineConfig resolve(const SharedFlags& f) {
  PipelineConfig c;
  if (!f.config_file.empty()) c = PipelineConfig::from_json_file(f.config_file);
  if (f.model) c.model_path = *f.model;
  if (f.out) c.output_model_path = *f.out;
  if (f.dumps) c.dump_dir = *f.dumps;
  if (f.report) c.report_path = *f.report;
  if (f.criterion) c.criterion = nbl::ranking::parse_criterion(*f.criterion);
  if (f.strategy) c.strategy = nbl::ranking::parse_strategy(*f.strategy);
  if (f.m) c.m = *f.m;
  if (f.calib_file) c.calibration.token_file = *f.calib_file;
  if (f.calib_seed) c.calibration.seed = *f.calib_seed;
  if (f.calib_tokens) c.calibration.token_count = *f.calib_tokens;
  if (f.eval_file) c.evaluation.token_file = *f.eval_file;
  if (f.eval_seed) c.evaluation.seed = *f.eval_seed;
  if (f.eval_tokens) c.evaluation.token_count = *f.eval_tokens;
  if (f.seq_len) {
    c.calibration.sequence_length = *f.seq_len;
    c.evaluation.sequence_length = *f.seq_len;
  }
  if (f.ridge) c.reg.ridge_rel = *f.ridge;
  if (f.floor) c.reg.floor_rel = *f.floor;
  if (!(c.reg.ridge_rel >= 0.0) || !(c.reg.floor_rel > 0.0)) {
    throw nbl::ValidationError("ridge must be >= 0 and floor > 0");
  }
  return c;
}

void print_plan(const nbl::ranking::SelectionPlan& plan) {
  std::cout << "plan (" << nbl::ranking::to_string(plan.strategy) << ", "
            << nbl::ranking::to_string(plan.criterion) << "):";
  for (auto k : plan.layers) std::cout << ' ' << k;
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-layer linearization toolkit"};
  app.require_subcommand(1);

  // gen-model
  auto* gen = app.add_subcommand("gen-model", "Write a seeded random toy model");
  nbl::toy::ToyConfig toy;
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output model file")->required();
  gen->add_option("--layers", toy.layers, "Layer count K");
  gen->add_option("--width", toy.width, "Model width d");
  gen->add_option("--heads", toy.heads, "Attention heads h");
  gen->add_option("--groups", toy.kv_groups, "KV groups g");
  gen->add_option("--ffn", toy.ffn_width, "MLP width");
  gen->add_option("--vocab", toy.vocab, "Vocabulary size");
  gen->add_option("--ctx", toy.max_context, "Max context length");
  gen->add_option("--seed", toy.seed, "Weight seed");

  SharedFlags calib_flags, rank_flags, lin_flags, eval_flags;
  auto* calibrate = app.add_subcommand("calibrate", "Capture attention inputs/outputs as NBLA dumps");
  add_shared(calibrate, calib_flags);
  auto* rank = app.add_subcommand("rank", "Score layers and write a JSON report");
  add_shared(rank, rank_flags);
  auto* linearize = app.add_subcommand("linearize", "Replace the selected layers with LMMSE maps");
  add_shared(linearize, lin_flags);
  linearize->add_option("--out", lin_flags.out, "Output model file");
  auto* eval = app.add_subcommand("eval", "Compare two models on held-out tokens");
  add_shared(eval, eval_flags);
  std::string model_a, model_b;
  eval->add_option("model_a", model_a, "Reference model")->required();
  eval->add_option("model_b", model_b, "Compressed model")->required();

  auto* cost = app.add_subcommand("cost", "KV-cache size table and prefill speed-up");
  nbl::cost::InferenceProfile profile;
  profile.batch = 64;
  std::vector<std::uint64_t> contexts, ms;
  bool cost_json = false;
  cost->add_option("--ctx", contexts, "Context length (repeatable)")->required();
  cost->add_option("--m", ms, "Linearized layer count (repeatable)")->required();
  cost->add_option("--batch", profile.batch, "Batch size");
  cost->add_option("--dim", profile.width, "Model width d");
  cost->add_option("--heads", profile.heads, "Attention heads h");
  cost->add_option("--groups", profile.kv_groups, "KV groups g");
  cost->add_option("--layers", profile.layers, "Attention layers K");
  cost->add_option("--bytes", profile.bytes_per_elem, "Bytes per element");
  cost->add_flag("--json", cost_json, "Print JSON instead of the text table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      nbl::pipeline::cmd_gen_model(gen_out, toy);
      std::cout << "wrote " << gen_out << '\n';
    } else if (calibrate->parsed()) {
      const auto summary = nbl::pipeline::cmd_calibrate(resolve(calib_flags));
      std::cout << "tokens: " << summary.token_count << "\nfiles: " << summary.files.size() << '\n';
    } else if (rank->parsed()) {
      const auto report = nbl::pipeline::cmd_rank(resolve(rank_flags));
      std::cout << "layer  " << nbl::ranking::to_string(report.criterion) << '\n';
      for (const auto& s : report.scores) {
        std::printf("%5u  %.6f%s\n", s.layer_index, s.score,
                    std::find(report.plan.layers.begin(), report.plan.layers.end(),
                              s.layer_index) != report.plan.layers.end()
                        ? "  *"
                        : "");
      }
      print_plan(report.plan);
    } else if (linearize->parsed()) {
      const auto summary = nbl::pipeline::cmd_linearize(resolve(lin_flags));
      print_plan(summary.plan);
      for (std::size_t i = 0; i < summary.plan.layers.size(); ++i) {
        std::printf("layer %u fit_nmse %.6g\n", summary.plan.layers[i], summary.fit_nmse[i]);
      }
    } else if (eval->parsed()) {
      const auto report = nbl::pipeline::cmd_eval(resolve(eval_flags), model_a, model_b);
      std::cout << report.to_json();
    } else if (cost->parsed()) {
      const auto out = nbl::pipeline::cmd_cost(profile, contexts, ms);
      if (cost_json) {
        std::cout << out.json << '\n';
      } else {
        std::cout << out.text;
        std::cout << "\nprefill speed-up (complexity ratio)\n";
        for (auto n : contexts) {
          for (auto m : ms) {
            auto p = profile;
            p.context = n;
            p.linearized = m;
            std::printf("  n=%-8llu m=%-3llu %.6f\n", static_cast<unsigned long long>(n),
                        static_cast<unsigned long long>(m), nbl::cost::prefill_speedup(p));
          }
        }
      }
    }
  } catch (const nbl::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
