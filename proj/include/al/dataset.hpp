#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "al/features.hpp"
#include "al/fusion.hpp"
#include "al/hash.hpp"
#include "al/tensor.hpp"

namespace al {

enum class Split { train, test };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct DeviceProfile {
  std::string id;
  std::vector<float> band_gain;  // additive log-domain gain per mel band
  double noise_floor = -12.0;    // log-energy floor
  double gain_offset = 0.0;
};

struct ClipInfo {
  std::string id;
  std::size_t label = 0;
  std::string device;
  Split split = Split::train;
};

/// Raw (unscaled) feature tensors [frames, bands, channels] plus clip metadata.
/// `audio` is filled only for waveform-mode or WAV-backed datasets.
struct SceneDataset {
  ClassHierarchy hierarchy;
  std::vector<std::string> devices;  // every device, seen ones first
  std::vector<ClipInfo> clips;
  std::vector<Tensor> features;
  std::vector<AudioClip> audio;

  std::size_t size() const { return clips.size(); }
  std::size_t num_classes() const { return hierarchy.fine.size(); }
  Shape feature_shape() const;
  std::size_t coarse_label(std::size_t i) const { return hierarchy.parent[clips[i].label]; }
  std::vector<std::size_t> indices(Split split) const;
  Digest digest() const;
};

struct SynthConfig {
  std::size_t n_classes = 10;
  std::size_t n_devices = 6;
  std::size_t n_unseen = 2;
  std::size_t train_per_cell = 100;  // per (class, seen device)
  std::size_t test_per_cell = 20;    // per (class, device)
  std::size_t frames = 32;
  std::size_t bands = 32;
  bool waveform = false;
  /// Within-class variability; larger is harder.
  double noise = 2.5;
  double device_strength = 0.4;

  void validate() const;
};

/// STFT settings used by waveform mode (8 kHz, so 4224 samples give 32 frames).
FeatureConfig synth_feature_config(std::size_t bands);
constexpr double kSynthSampleRate = 8000.0;

/// Devices "a", "b", "c", "s1", ...; the last n_unseen never appear in train.
std::vector<DeviceProfile> synth_devices(const SynthConfig& config, std::uint64_t seed);
SceneDataset synth_generate(const SynthConfig& config, std::uint64_t seed);

/// Class hierarchy used for `k` synthetic classes: the scene hierarchy for
/// ten, otherwise class_i under group_(i mod 3).
ClassHierarchy synth_hierarchy(std::size_t k);

/// Rows `path,scene_label,device_id,split`. Paths are relative to the
/// manifest directory. `.wav` files run through the feature extractor,
/// anything else is read as a tensor file. All problems are collected and
/// reported in one InputError.
SceneDataset load_manifest(const std::string& path, const ClassHierarchy& hierarchy,
                           const FeatureConfig& features = synth_feature_config(32),
                           std::vector<std::string>* warnings = nullptr);
/// Writes every clip as a tensor file under `dir/features/` plus `dir/manifest.csv`.
void write_dataset(const SceneDataset& ds, const std::string& dir);

struct DeviceSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> seen_test;
  std::vector<std::size_t> unseen_test;
};

/// Index views; no clip data is copied.
DeviceSplit split_by_device(const SceneDataset& ds, const std::set<std::string>& seen);
/// Devices that appear in the train split.
std::set<std::string> train_devices(const SceneDataset& ds);

/// Stacks features of `idx` into [n, ...] after per-channel scaling.
Tensor stack_features(const SceneDataset& ds, std::span<const std::size_t> idx, const FeatureStats& stats);
/// One-hot [n, K] fine (or coarse) labels.
Tensor one_hot_labels(const SceneDataset& ds, std::span<const std::size_t> idx, bool coarse = false);
FeatureStats dataset_stats(const SceneDataset& ds, std::span<const std::size_t> idx);

}  // namespace al
