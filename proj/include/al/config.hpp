#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "al/augment.hpp"
#include "al/dataset.hpp"
#include "al/distill.hpp"
#include "al/hash.hpp"
#include "al/mask.hpp"
#include "al/prune.hpp"

namespace al {

enum class FusionMode { none, two_stage, mtl };
std::string to_string(FusionMode m);
FusionMode parse_fusion_mode(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr_max = 0.05;
  double lr_min = 1e-4;
  double momentum = 0.9;
  /// Cycle length in epochs; 0 means one cycle over the whole run.
  std::size_t cycle_epochs = 0;
  double restart_multiplier = 2.0;
  double clip_norm = 0.0;
  bool select_cycle_end = true;
};

/// Plan defaults sized for 32x32 features.
inline AugmentPlan desk_augment_plan() {
  AugmentPlan p;
  p.spec = SpecAugmentParams{2, 2, 8, 8};
  return p;
}

struct ExperimentConfig {
  std::string id = "experiment";
  std::string out_dir = "out";

  // dataset
  std::string source = "synth";  // synth | manifest
  std::string manifest;
  SynthConfig synth;
  FeatureConfig features = synth_feature_config(32);

  AugmentPlan augment = desk_augment_plan();
  /// Extra waveform-augmented copies of each training clip.
  std::size_t waveform_copies = 1;

  std::string student_arch = "sic";
  std::string teacher_arch = "lic";
  TrainConfig train;
  TrainConfig teacher_train;

  bool distill = false;
  DistillConfig distill_cfg;

  bool lth = false;
  LthConfig lth_cfg;

  bool quantize = false;
  bool quantize_activations = true;

  FusionMode fusion = FusionMode::none;
  double mtl_weight = 0.5;
  bool renormalize_fused = true;

  std::size_t ensemble_members = 1;

  // seeds: the master seed is required, the named streams derive from it
  // unless set explicitly
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> seed_dataset, seed_init, seed_augment, seed_batch;

  std::uint64_t dataset_seed() const;
  std::uint64_t init_seed() const;
  std::uint64_t augment_seed() const;
  std::uint64_t batch_seed() const;

  /// Every key with its effective value, sorted, one `key = value` per line.
  std::string canonical() const;
  Digest hash() const;
  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Parses `section.key = value` lines; `#` starts a comment. Unknown or
/// repeated keys and unparsable values raise ConfigError with the line
/// number. `seed_override` replaces experiment.seed.
ExperimentConfig parse_config(const std::string& text, std::optional<std::uint64_t> seed_override = std::nullopt);
ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override = std::nullopt);

/// Applies one `key = value` assignment; used by the parser and by sweeps.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

}  // namespace al
