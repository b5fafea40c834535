// muxdec: trace-driven streaming multiplexed-decoding simulator.
//
//   muxdec run      --trace t.jsonl --out-log log.jsonl --out-metrics m.json
//   muxdec gen      --kind pa|pt|multiplex --seed N --size N --out t.jsonl
//   muxdec validate --trace t.jsonl
//
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "muxdec/sim.hpp"
#include "muxdec/trace.hpp"

namespace {

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << contents;
}

void print_metrics(const muxdec::RunResult& result) {
  std::printf("%-22s %12s\n", "metric", "value");
  std::printf("%-22s %12s\n", "----------------------", "------------");
  for (const auto& [key, value] : result.metrics) std::printf("%-22s %12.6f\n", key.c_str(), value);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"streaming multiplexed-decoding simulator"};
  app.require_subcommand(1);

  muxdec::RunConfig cfg;
  std::string trace_path, out_log, out_metrics;
  std::string repr = "last3";

  CLI::App* run_cmd = app.add_subcommand("run", "replay a trace and write decision log + metrics");
  run_cmd->add_option("--trace", trace_path, "input trace (JSON lines)")->required();
  run_cmd->add_option("--out-log", out_log, "decision log output path")->required();
  run_cmd->add_option("--out-metrics", out_metrics, "metrics output path")->required();
  run_cmd->add_option("--alpha", cfg.alpha, "Gaussian factor for highlight candidates");
  run_cmd->add_option("--beta", cfg.beta, "interruption threshold scale");
  run_cmd->add_option("--gamma", cfg.gamma, "highlight consistency threshold");
  run_cmd->add_option("--warmup", cfg.warmup, "highlight warm-up frames");
  run_cmd->add_option("--seed", cfg.model.seed, "model seed");
  run_cmd->add_option("--max-response-tokens", cfg.max_response_tokens, "response length cap");
  run_cmd->add_option("--d-model", cfg.model.d_model, "embedding width");
  run_cmd->add_option("--layers", cfg.model.n_layers, "transformer layers");
  run_cmd->add_option("--heads", cfg.model.n_heads, "attention heads");
  run_cmd->add_option("--vocab", cfg.model.vocab_size, "vocabulary size");
  run_cmd->add_option("--bos-id", cfg.model.bos_id, "begin-of-sequence token id");
  run_cmd->add_option("--eos-id", cfg.model.eos_id, "end-of-sequence token id");
  run_cmd->add_option("--query-repr", repr, "query representation: last3 or mean")
      ->check(CLI::IsMember({"last3", "mean"}));

  std::string gen_kind = "pa", gen_out;
  std::uint64_t gen_seed = 0;
  std::size_t gen_size = 20;
  CLI::App* gen_cmd = app.add_subcommand("gen", "generate a synthetic trace");
  gen_cmd->add_option("--kind", gen_kind, "pa, pt, or multiplex")
      ->required()
      ->check(CLI::IsMember({"pa", "pt", "multiplex"}));
  gen_cmd->add_option("--seed", gen_seed, "generator and model seed")->required();
  gen_cmd->add_option("--size", gen_size, "frames (pa) or query count (pt, multiplex)");
  gen_cmd->add_option("--out", gen_out, "output trace path")->required();

  CLI::App* validate_cmd = app.add_subcommand("validate", "check a trace file");
  validate_cmd->add_option("--trace", trace_path, "input trace (JSON lines)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      cfg.repr = repr == "mean" ? muxdec::QueryRepr::mean_all : muxdec::QueryRepr::last_three;
      std::vector<muxdec::TraceEvent> events;
      try {
        events = muxdec::load_trace(trace_path);
        cfg.model.validate();
      } catch (const muxdec::TraceError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
      } catch (const muxdec::ConfigError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
      }
      muxdec::RunResult result = muxdec::run(events, cfg);
      write_file(out_log, muxdec::serialize_decision_log(result));
      write_file(out_metrics, muxdec::serialize_metrics(result));
      print_metrics(result);
    } else if (*gen_cmd) {
      auto events = muxdec::gen_trace(muxdec::gen_kind_from_string(gen_kind), gen_seed, gen_size);
      muxdec::save_trace(events, gen_out);
      std::cout << "wrote " << events.size() << " events to " << gen_out << "\n";
    } else if (*validate_cmd) {
      try {
        auto events = muxdec::load_trace(trace_path);
        std::cout << "OK: " << events.size() << " events\n";
      } catch (const muxdec::TraceError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
