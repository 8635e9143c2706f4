#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "al/mask.hpp"
#include "al/nn.hpp"

namespace al {

/// Mask with every prunable parameter fully kept.
PruneMask initial_mask(const Model& model);

struct MaskOptions {
  MaskStrategy strategy = MaskStrategy::small_weights;
  /// Fraction of the currently surviving weights removed this round.
  double rate = 0.5;
  ScoreFn score = ScoreFn::final_magnitude;
  /// Needed by the init_magnitude and magnitude_increase scores.
  const ParamStore* theta0 = nullptr;
};

/// One pruning round over the surviving weights of `prev`.
///
/// - small_weights: per layer, remove round(rate * surviving) weights with
///   the lowest score (at least one weight per layer survives);
/// - global_small_weights: the same criterion ranked over all prunable
///   layers jointly, so whole layers may vanish;
/// - large_final: per layer, keep the round((1 - rate) * surviving)
///   highest-scoring weights.
///
/// Ties go by ascending flat index (and layer order for the global rank).
/// Layers with fewer than two survivors are left untouched and reported in
/// `warnings` when given.
PruneMask compute_mask(const ParamStore& final_params, const PruneMask& prev, const MaskOptions& options,
                       std::vector<std::string>* warnings = nullptr);

/// Survivors take their theta0 value bit-for-bit, pruned coordinates become
/// 0.0, unmasked tensors are reset to theta0.
ParamStore rewind(const ParamStore& params, const ParamStore& theta0, const PruneMask& mask);

/// Surviving prunable weights / all prunable weights.
double weights_remaining(const PruneMask& mask);

struct LthConfig {
  /// Total training rounds T; masks are computed after rounds 1 .. T-1.
  std::size_t iterations = 2;
  double rate = 0.5;
  MaskStrategy strategy = MaskStrategy::small_weights;
  ScoreFn score = ScoreFn::final_magnitude;

  void validate() const;
};

struct LthIteration {
  std::size_t t = 0;
  /// Fraction of prunable weights alive while this round trained.
  double weights_remaining = 1.0;
  std::vector<EpochMetrics> epochs;
  std::vector<std::string> warnings;
};

/// The search as an explicit state machine: train round t, then (while
/// t < T) mask the trained weights and rewind the survivors to theta0.
class LthSearch {
 public:
  LthSearch(Model model, ParamStore theta0, LthConfig config);

  /// Trains the current candidate for one round.
  void train(const BatchSource& data, const LossFn& loss, const SgdOptions& options);
  /// Masks and rewinds after a round; a no-op once t == T.
  void prune();
  /// Finishes a pending prune(), then train() and prune(); no-op once done.
  void step(const BatchSource& data, const LossFn& loss, const SgdOptions& options);

  bool done() const noexcept { return t_ == config_.iterations && trained_.has_value(); }
  std::size_t t() const noexcept { return t_; }

  /// Copy of this state continuing under a different configuration. Only
  /// valid while no mask has been computed yet, i.e. right after round 1.
  LthSearch branch(const LthConfig& config) const;

  const Model& model() const noexcept { return model_; }
  const LthConfig& config() const noexcept { return config_; }
  const ParamStore& theta0() const noexcept { return theta0_; }
  const PruneMask& mask() const noexcept { return mask_; }
  /// Weights of the most recent round (throws before the first round).
  const ParamStore& trained() const;
  /// Weights that the next round starts from.
  const ParamStore& candidate() const noexcept { return candidate_; }
  const std::vector<LthIteration>& history() const noexcept { return history_; }

 private:
  Model model_;
  LthConfig config_;
  ParamStore theta0_;
  ParamStore candidate_;
  std::optional<ParamStore> trained_;
  PruneMask mask_;
  std::size_t t_ = 0;
  bool pruned_since_train_ = true;
  std::vector<LthIteration> history_;
};

struct LthResult {
  Model model;
  ParamStore params;
  PruneMask mask;
  ParamStore theta0;
  std::vector<LthIteration> history;
};

/// Full search from a fresh initialization drawn with `init_seed`.
LthResult lth_search(const ArchSpec& spec, const BatchSource& data, const LthConfig& config, const LossFn& loss,
                     const SgdOptions& options, std::uint64_t init_seed);

inline constexpr std::size_t kHistogramBins = 32;

struct LayerHistogram {
  std::string name;
  LayerKind kind = LayerKind::conv;
  std::size_t total = 0;
  std::size_t surviving = 0;  // nonzero after masking
  double min = 0.0;
  double max = 0.0;
  std::array<std::size_t, kHistogramBins> counts{};
};

/// Per-tensor histograms of the nonzero weights. Conv tensors can be left
/// out so the table matches a dense-layers-only view.
std::vector<LayerHistogram> layer_weight_histogram(const Model& model, const ParamStore& params,
                                                   const PruneMask* mask, bool include_conv = true);

}  // namespace al
