#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "al/features.hpp"
#include "al/nn.hpp"
#include "al/rng.hpp"
#include "al/tensor.hpp"

namespace al {

// ---------------------------------------------------------------------------
// Feature-level
// ---------------------------------------------------------------------------

struct Mixed {
  Tensor x;
  Tensor y;
};

/// x = lambda x1 + (1 - lambda) x2, same for y.
Mixed mixup(const Tensor& x1, const Tensor& x2, const Tensor& y1, const Tensor& y2, double lambda);
/// lambda ~ Beta(alpha, alpha).
double mixup_lambda(Rng& rng, double alpha);

struct MaskBand {
  std::size_t start = 0;
  std::size_t width = 0;
};

struct SpecAugmentMasks {
  std::vector<MaskBand> time;
  std::vector<MaskBand> freq;
};

struct SpecAugmentParams {
  std::size_t time_masks = 2;
  std::size_t freq_masks = 2;
  std::size_t max_time_width = 40;
  std::size_t max_freq_width = 16;
};

/// Masks whole frames and whole mel bins of x [frames, bins, channels] with
/// the tensor mean. Widths are drawn from [0, max], starts uniformly.
Tensor spec_augment(const Tensor& x, const SpecAugmentParams& params, std::uint64_t seed,
                    SpecAugmentMasks* masks = nullptr);

/// out[f, b] = x[f, b] * ref[b] / device[b].
Tensor spectrum_correction(const Tensor& x, std::span<const float> ref_profile, std::span<const float> device_profile);
/// Mean over frames and clips of [frames, bins] spectra.
std::vector<float> mean_spectrum(std::span<const Tensor> spectra);
/// Same correction applied to log-mel features [frames, bins, channels]:
/// channel 0 gains ln(ref / device); deltas of a per-bin constant are zero,
/// so the other channels are untouched.
Tensor log_spectrum_correction(const Tensor& features, std::span<const float> ref_profile,
                               std::span<const float> device_profile);
/// Per-band mean of exp(channel 0) over the given feature tensors.
std::vector<float> log_mel_profile(std::span<const Tensor> features);

// ---------------------------------------------------------------------------
// Waveform-level
// ---------------------------------------------------------------------------

/// Linear-interpolation resample of `samples` to round(n / factor) samples,
/// then center crop or zero pad back to n.
std::vector<float> resample_fit(std::span<const float> samples, double factor);

AudioClip speed_change(const AudioClip& clip, double factor);
/// Resample by 2^(semitones / 12) and crop/pad; tempo changes with pitch.
AudioClip pitch_shift(const AudioClip& clip, double semitones);
/// Gaussian noise at the target SNR; nullopt leaves the clip unchanged.
AudioClip random_noise(const AudioClip& clip, std::optional<double> snr_db, std::uint64_t seed);
/// w * clip + (1 - w) * partner, keeping the label of `clip`.
AudioClip mix_audios(const AudioClip& clip, const AudioClip& partner, double weight);

double signal_power(std::span<const float> samples);

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

struct AugmentPlan {
  bool mixup = false;
  double mixup_alpha = 0.4;
  double mixup_prob = 1.0;

  bool spec_augment = false;
  double spec_augment_prob = 1.0;
  SpecAugmentParams spec;

  bool spec_correction = false;
  double spec_correction_prob = 0.5;

  bool pitch_shift = false;
  double max_semitones = 2.0;
  bool speed_change = false;
  double max_speed_delta = 0.2;
  bool random_noise = false;
  double min_snr_db = 10.0;
  double max_snr_db = 30.0;
  bool mix_audios = false;
  double mix_weight_min = 0.7;

  std::uint64_t seed = 0;

  /// Throws ParameterError naming the first bad field.
  void validate() const;
  bool any_feature_level() const { return mixup || spec_augment || spec_correction; }
  bool any_waveform_level() const { return pitch_shift || speed_change || random_noise || mix_audios; }
  std::string fingerprint() const;
};

/// One randomized pass of the enabled waveform schemes over `clip`.
/// `partner` is needed only when mix_audios is enabled.
AudioClip apply_waveform_plan(const AudioClip& clip, const AugmentPlan& plan, std::uint64_t clip_key,
                              const AudioClip* partner);

/// Per-device log-mel correction towards a reference device.
struct DeviceCorrection {
  std::vector<float> reference;
  std::vector<std::vector<float>> device_profiles;  // per training example
};

/// Training source applying the feature-level part of a plan per step.
/// Each example's random draws come from (plan seed, example key, step),
/// so results do not depend on batch composition order. Mixup pairs every
/// example with another member of the same batch; aux targets and teacher
/// logits are mixed with the same lambda.
class AugmentedSource : public BatchSource {
 public:
  AugmentedSource(Tensor inputs, Tensor targets, AugmentPlan plan, std::vector<std::uint64_t> keys = {});

  void set_aux_targets(Tensor aux) { aux_ = std::move(aux); }
  void set_teacher_logits(Tensor logits) { teacher_ = std::move(logits); }
  void set_correction(DeviceCorrection c) { correction_ = std::move(c); }

  std::size_t size() const override { return inputs_.dim(0); }
  Batch make_batch(std::span<const std::size_t> indices, std::uint64_t step) const override;

 private:
  Tensor inputs_;
  Tensor targets_;
  std::optional<Tensor> aux_;
  std::optional<Tensor> teacher_;
  std::optional<DeviceCorrection> correction_;
  AugmentPlan plan_;
  std::vector<std::uint64_t> keys_;
};

}  // namespace al
