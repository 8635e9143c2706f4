#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "al/checkpoint.hpp"
#include "al/config.hpp"
#include "al/dataset.hpp"
#include "al/metrics.hpp"

namespace al {

/// Dataset plus the stacked, scaled tensors every stage trains and
/// evaluates on. Validation is the whole test split.
struct PreparedData {
  SceneDataset ds;
  FeatureStats stats;
  std::set<std::string> seen_devices;

  std::vector<std::string> train_ids;
  std::vector<std::string> train_devices;
  Tensor train_x, train_y, train_coarse;

  std::vector<std::size_t> test_idx;
  std::vector<std::string> test_ids;
  std::vector<std::string> test_devices;
  std::vector<std::size_t> test_labels;
  Tensor test_x;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

SgdOptions sgd_options(const TrainConfig& t, std::size_t train_size, std::uint64_t seed);

/// Trained model together with its pruning state.
struct TrainedModel {
  Model model;
  ParamStore params;
  ParamStore theta0;
  std::optional<PruneMask> mask;
  double weights_remaining = 1.0;
};

struct RoundSnapshot {
  std::size_t t = 0;
  TrainedModel model;
};

enum class ModelRole { fine, coarse };

/// Trains a student (LTH rounds when enabled). `teacher_logits` holds one
/// row per training example when distillation is on. Every round is
/// returned in order; the last one is the result.
std::vector<RoundSnapshot> train_student(const ExperimentConfig& cfg, const PreparedData& data, ModelRole role,
                                         const Tensor* teacher_logits, std::size_t member);

TrainedModel train_teacher(const ExperimentConfig& cfg, const PreparedData& data);

/// Probabilities [N, K] of the main head, plus the aux head when present.
struct ModelProbs {
  Tensor main;
  std::optional<Tensor> aux;
};
ModelProbs model_probs(const Checkpoint& ck, const Tensor& inputs, bool quantize_activations = true);

MetricsRow score_row(const PreparedData& data, const Tensor& probs);

struct RunOutput {
  std::vector<MetricsRow> rows;
  std::string report_path;
};

/// Executes the configured stages and writes `report.csv` plus checkpoints
/// under `out_dir`. Rows are rewritten after each stage, so a failure
/// leaves the finished rows in place.
RunOutput run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, bool dump_probs = false);

struct SweepRow {
  std::string strategy;
  double rate = 0.0;
  std::size_t iterations = 0;
  double weights_remaining = 1.0;
  double accuracy = 0.0;
  double log_loss = 0.0;
  double baseline_accuracy = 0.0;
  double baseline_log_loss = 0.0;
  std::string status = "ok";
};

/// One LTH search per (strategy, rate) cell, all branching off a single
/// dense first round. Cells run on up to `threads` workers; rows come back
/// in cell order. A failing cell is marked and the sweep continues.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::vector<MaskStrategy>& strategies,
                                const std::vector<double>& rates, const std::string& out_dir, std::size_t threads);
void write_sweep(const std::string& path, const std::vector<SweepRow>& rows);

struct EvalArgs {
  std::string checkpoint;
  std::optional<std::string> coarse_checkpoint;
  FusionMode fusion = FusionMode::none;
  bool renormalize = true;
  std::optional<std::string> dump_probs;
  bool quantize_activations = true;
};

/// Evaluates on the test split of `ds`.
MetricsRow eval_checkpoint(const EvalArgs& args, const SceneDataset& ds);

/// Size, sparsity and per-layer weight histograms.
std::string inspect_checkpoint(const std::string& path);

/// Threads allowed by AL_THREADS (defaults to the hardware count).
std::size_t thread_budget();

}  // namespace al
