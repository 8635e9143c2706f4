#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "al/config.hpp"
#include "al/error.hpp"
#include "al/pipeline.hpp"

namespace fs = std::filesystem;
using namespace al;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void mark_failed(const std::string& out_dir, const std::string& what) {
  if (out_dir.empty()) return;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::ofstream f(fs::path(out_dir) / "FAILED");
  f << what << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model compression experiments: distillation, lottery-ticket pruning, fusion, int8 quantization"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, coarse, data_path, fusion = "none", strategies, rates;
  std::optional<std::uint64_t> seed;
  bool dump = false, no_act_quant = false;

  auto* run = app.add_subcommand("run", "run the configured pipeline");
  run->add_option("--config", config_path, "config file")->required();
  run->add_option("--out", out_dir, "output directory (default: experiment.out_dir)");
  run->add_option("--seed", seed, "override experiment.seed");
  run->add_flag("--dump-probs", dump, "write per-clip probabilities to probs.csv");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset's test split");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--coarse", coarse, "coarse checkpoint for two-stage fusion");
  eval->add_option("--fusion", fusion, "none | two_stage | mtl");
  auto* eval_cfg = eval->add_option("--config", config_path, "regenerate the dataset from this config");
  auto* eval_data = eval->add_option("--data", data_path, "dataset manifest.csv");
  eval_cfg->excludes(eval_data);
  eval->add_option("--seed", seed, "override experiment.seed");
  eval->add_option("--out", out_dir, "directory for eval.csv and probs.csv");
  eval->add_flag("--dump-probs", dump, "write per-clip probabilities to probs.csv");
  eval->add_flag("--no-activation-quant", no_act_quant, "int8 models: keep activations in float");

  auto* sweep = app.add_subcommand("sweep", "grid of LTH strategies and pruning rates");
  sweep->add_option("--config", config_path, "config file")->required();
  sweep->add_option("--strategies", strategies, "comma list: small_weights,global_small_weights,large_final")
      ->required();
  sweep->add_option("--rates", rates, "comma list of per-round pruning rates")->required();
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_option("--seed", seed, "override experiment.seed");

  auto* gen = app.add_subcommand("generate-data", "write the synthetic dataset as tensor files plus manifest");
  gen->add_option("--config", config_path, "config file")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed, "override experiment.seed");

  auto* inspect = app.add_subcommand("inspect", "size, sparsity and weight histograms of a checkpoint");
  inspect->add_option("checkpoint", checkpoint, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) {
      ExperimentConfig cfg = load_config(config_path, seed);
      const std::string dir = out_dir.empty() ? cfg.out_dir : out_dir;
      try {
        RunOutput r = run_experiment(cfg, dir, dump);
        std::cout << report_header() << "\n";
        for (const auto& row : r.rows) std::cout << to_csv(row) << "\n";
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        mark_failed(dir, e.what());
        throw;
      }
    } else if (*eval) {
      EvalArgs args;
      args.checkpoint = checkpoint;
      if (!coarse.empty()) args.coarse_checkpoint = coarse;
      args.fusion = parse_fusion_mode(fusion);
      args.quantize_activations = !no_act_quant;
      const std::string dir = out_dir.empty() ? "." : out_dir;
      if (dump) args.dump_probs = (fs::path(dir) / "probs.csv").string();
      SceneDataset ds;
      if (!config_path.empty()) {
        ExperimentConfig cfg = load_config(config_path, seed);
        ds = prepare_data(cfg).ds;
      } else if (!data_path.empty()) {
        Checkpoint ck = load_checkpoint(checkpoint);
        ds = load_manifest(data_path, synth_hierarchy(ck.arch.head.num_classes));
      } else {
        throw ConfigError("eval needs --config or --data");
      }
      if (!out_dir.empty()) fs::create_directories(out_dir);
      MetricsRow row = eval_checkpoint(args, ds);
      std::cout << report_header() << "\n" << to_csv(row) << "\n";
      if (!out_dir.empty()) write_report((fs::path(out_dir) / "eval.csv").string(), {row});
    } else if (*sweep) {
      ExperimentConfig cfg = load_config(config_path, seed);
      std::vector<MaskStrategy> st;
      for (const auto& s : split_list(strategies)) {
        try {
          st.push_back(parse_mask_strategy(s));
        } catch (const Error& e) {
          throw ConfigError(std::string("--strategies: ") + e.what());
        }
      }
      std::vector<double> rs;
      for (const auto& s : split_list(rates)) {
        try {
          rs.push_back(std::stod(s));
        } catch (const std::exception&) {
          throw ConfigError("--rates: bad value '" + s + "'");
        }
      }
      const std::string dir = out_dir.empty() ? cfg.out_dir : out_dir;
      auto rows = run_sweep(cfg, st, rs, dir, thread_budget());
      std::ifstream in(fs::path(dir) / "sweep.csv");
      std::cout << in.rdbuf();
      for (const auto& r : rows) {
        if (r.status != "ok") std::cerr << "cell " << r.strategy << "/" << r.rate << ": " << r.status << "\n";
      }
    } else if (*gen) {
      ExperimentConfig cfg = load_config(config_path, seed);
      if (cfg.source != "synth") throw ConfigError("generate-data needs dataset.source = synth");
      SceneDataset ds = synth_generate(cfg.synth, cfg.dataset_seed());
      write_dataset(ds, out_dir);
      std::cout << "wrote " << ds.size() << " clips to " << out_dir << "\n";
    } else if (*inspect) {
      std::cout << inspect_checkpoint(checkpoint);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
