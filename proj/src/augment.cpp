#include "al/augment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "al/error.hpp"

namespace al {

Mixed mixup(const Tensor& x1, const Tensor& x2, const Tensor& y1, const Tensor& y2, double lambda) {
  if (x1.shape() != x2.shape()) {
    throw DimensionError("mixup: input shapes " + shape_str(x1.shape()) + " and " + shape_str(x2.shape()));
  }
  if (y1.shape() != y2.shape()) {
    throw DimensionError("mixup: label shapes " + shape_str(y1.shape()) + " and " + shape_str(y2.shape()));
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("mixup: lambda must be in [0, 1]");
  const float l = static_cast<float>(lambda), m = static_cast<float>(1.0 - lambda);
  Mixed out{Tensor(x1.shape()), Tensor(y1.shape())};
  for (std::size_t i = 0; i < x1.numel(); ++i) out.x[i] = l * x1[i] + m * x2[i];
  for (std::size_t i = 0; i < y1.numel(); ++i) out.y[i] = l * y1[i] + m * y2[i];
  return out;
}

double mixup_lambda(Rng& rng, double alpha) {
  if (!(alpha > 0.0)) throw ParameterError("augment.mixup_alpha must be > 0");
  return beta_sample(rng, alpha, alpha);
}

Tensor spec_augment(const Tensor& x, const SpecAugmentParams& params, std::uint64_t seed, SpecAugmentMasks* masks) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("spec_augment expects [frames, bins(, channels)], got " + shape_str(x.shape()));
  }
  const std::size_t T = x.shape()[0], F = x.shape()[1], C = x.rank() == 3 ? x.shape()[2] : 1;
  if (params.time_masks > 0 && params.max_time_width >= T) {
    throw ParameterError("spec_augment: max time width " + std::to_string(params.max_time_width) +
                         " must be < frames (" + std::to_string(T) + ")");
  }
  if (params.freq_masks > 0 && params.max_freq_width >= F) {
    throw ParameterError("spec_augment: max freq width " + std::to_string(params.max_freq_width) +
                         " must be < bins (" + std::to_string(F) + ")");
  }
  Rng rng = make_rng(seed, "spec-augment");
  SpecAugmentMasks local;
  for (std::size_t i = 0; i < params.time_masks; ++i) {
    const std::size_t w = uniform_index(rng, params.max_time_width + 1);
    local.time.push_back({uniform_index(rng, T - w + 1), w});
  }
  for (std::size_t i = 0; i < params.freq_masks; ++i) {
    const std::size_t w = uniform_index(rng, params.max_freq_width + 1);
    local.freq.push_back({uniform_index(rng, F - w + 1), w});
  }
  Tensor out = x;
  if (!local.time.empty() || !local.freq.empty()) {
    double sum = 0.0;
    for (float v : x.data()) sum += v;
    const float fill = static_cast<float>(sum / static_cast<double>(x.numel()));
    for (const auto& m : local.time) {
      for (std::size_t t = m.start; t < m.start + m.width; ++t) {
        std::fill(out.raw() + t * F * C, out.raw() + (t + 1) * F * C, fill);
      }
    }
    for (const auto& m : local.freq) {
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t f = m.start; f < m.start + m.width; ++f) {
          std::fill(out.raw() + (t * F + f) * C, out.raw() + (t * F + f + 1) * C, fill);
        }
      }
    }
  }
  if (masks) *masks = std::move(local);
  return out;
}

namespace {

void check_profiles(std::span<const float> ref, std::span<const float> dev, std::size_t bins) {
  if (ref.size() != bins || dev.size() != bins) {
    throw DimensionError("spectrum correction: profiles have " + std::to_string(ref.size()) + "/" +
                         std::to_string(dev.size()) + " bins, spectrum " + std::to_string(bins));
  }
  for (std::size_t b = 0; b < bins; ++b) {
    if (!(ref[b] > 0.0f) || !(dev[b] > 0.0f)) {
      throw ParameterError("spectrum correction: profile bin " + std::to_string(b) + " is not positive");
    }
  }
}

}  // namespace

Tensor spectrum_correction(const Tensor& x, std::span<const float> ref_profile, std::span<const float> device_profile) {
  if (x.rank() != 2) throw DimensionError("spectrum_correction expects [frames, bins], got " + shape_str(x.shape()));
  const std::size_t bins = x.shape()[1];
  check_profiles(ref_profile, device_profile, bins);
  Tensor out = x;
  for (std::size_t f = 0; f < x.shape()[0]; ++f) {
    for (std::size_t b = 0; b < bins; ++b) out[f * bins + b] *= ref_profile[b] / device_profile[b];
  }
  return out;
}

std::vector<float> mean_spectrum(std::span<const Tensor> spectra) {
  if (spectra.empty()) throw ParameterError("mean_spectrum: no spectra");
  const std::size_t bins = spectra[0].shape().back();
  std::vector<double> acc(bins, 0.0);
  std::size_t rows = 0;
  for (const auto& s : spectra) {
    if (s.shape().back() != bins) throw DimensionError("mean_spectrum: bin count mismatch");
    for (std::size_t i = 0; i < s.numel(); ++i) acc[i % bins] += s[i];
    rows += s.numel() / bins;
  }
  std::vector<float> out(bins);
  for (std::size_t b = 0; b < bins; ++b) out[b] = static_cast<float>(acc[b] / static_cast<double>(rows));
  return out;
}

Tensor log_spectrum_correction(const Tensor& features, std::span<const float> ref_profile,
                               std::span<const float> device_profile) {
  if (features.rank() != 3) throw DimensionError("log_spectrum_correction expects [frames, bins, channels]");
  const std::size_t T = features.shape()[0], F = features.shape()[1], C = features.shape()[2];
  check_profiles(ref_profile, device_profile, F);
  Tensor out = features;
  for (std::size_t f = 0; f < F; ++f) {
    const float shift = std::log(ref_profile[f]) - std::log(device_profile[f]);
    for (std::size_t t = 0; t < T; ++t) out[(t * F + f) * C] += shift;
  }
  return out;
}

std::vector<float> log_mel_profile(std::span<const Tensor> features) {
  if (features.empty()) throw ParameterError("log_mel_profile: no clips");
  const std::size_t F = features[0].shape()[1], C = features[0].shape()[2];
  std::vector<double> acc(F, 0.0);
  std::size_t rows = 0;
  for (const auto& x : features) {
    const std::size_t T = x.shape()[0];
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t f = 0; f < F; ++f) acc[f] += std::exp(static_cast<double>(x[(t * F + f) * C]));
    }
    rows += T;
  }
  std::vector<float> out(F);
  for (std::size_t f = 0; f < F; ++f) out[f] = static_cast<float>(acc[f] / static_cast<double>(rows));
  return out;
}

// ---------------------------------------------------------------------------
// Waveform
// ---------------------------------------------------------------------------

std::vector<float> resample_fit(std::span<const float> samples, double factor) {
  if (!(factor > 0.0)) throw ParameterError("resample factor must be positive");
  const std::size_t n = samples.size();
  if (n == 0) return {};
  if (factor == 1.0) return {samples.begin(), samples.end()};
  const auto m = static_cast<std::size_t>(std::llround(static_cast<double>(n) / factor));
  std::vector<float> stretched(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double pos = static_cast<double>(i) * factor;
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    const float a = samples[std::min(lo, n - 1)], b = samples[std::min(lo + 1, n - 1)];
    stretched[i] = static_cast<float>(a + frac * (b - a));
  }
  std::vector<float> out(n, 0.0f);
  if (m >= n) {
    const std::size_t off = (m - n) / 2;
    std::copy(stretched.begin() + static_cast<std::ptrdiff_t>(off),
              stretched.begin() + static_cast<std::ptrdiff_t>(off + n), out.begin());
  } else {
    const std::size_t off = (n - m) / 2;
    std::copy(stretched.begin(), stretched.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
  }
  return out;
}

AudioClip speed_change(const AudioClip& clip, double factor) {
  if (!(factor >= 0.8 && factor <= 1.2)) throw ParameterError("speed factor must be in [0.8, 1.2]");
  AudioClip out = clip;
  out.samples = resample_fit(clip.samples, factor);
  return out;
}

AudioClip pitch_shift(const AudioClip& clip, double semitones) {
  if (!(std::fabs(semitones) <= 2.0)) throw ParameterError("pitch shift must be within 2 semitones");
  AudioClip out = clip;
  out.samples = resample_fit(clip.samples, std::pow(2.0, semitones / 12.0));
  return out;
}

double signal_power(std::span<const float> samples) {
  if (samples.empty()) return 0.0;
  double s = 0.0;
  for (float v : samples) s += static_cast<double>(v) * v;
  return s / static_cast<double>(samples.size());
}

AudioClip random_noise(const AudioClip& clip, std::optional<double> snr_db, std::uint64_t seed) {
  if (!snr_db) return clip;
  if (!(*snr_db >= 0.0)) throw ParameterError("random noise SNR must be >= 0 dB");
  const double sigma = std::sqrt(signal_power(clip.samples) / std::pow(10.0, *snr_db / 10.0));
  Rng rng = make_rng(seed, "random-noise");
  AudioClip out = clip;
  for (auto& s : out.samples) s += static_cast<float>(sigma * normal(rng));
  return out;
}

AudioClip mix_audios(const AudioClip& clip, const AudioClip& partner, double weight) {
  if (!(weight >= 0.0 && weight <= 1.0)) throw ParameterError("mix weight must be in [0, 1]");
  if (clip.samples.size() != partner.samples.size()) throw DimensionError("mix_audios: clip lengths differ");
  AudioClip out = clip;
  const auto w = static_cast<float>(weight), v = static_cast<float>(1.0 - weight);
  for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i] = w * clip.samples[i] + v * partner.samples[i];
  return out;
}

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

void AugmentPlan::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ParameterError(std::string("augment.") + name + " must be in [0, 1]");
  };
  prob(mixup_prob, "mixup_prob");
  prob(spec_augment_prob, "spec_augment_prob");
  prob(spec_correction_prob, "spec_correction_prob");
  if (!(mixup_alpha > 0.0)) throw ParameterError("augment.mixup_alpha must be > 0");
  if (!(max_semitones >= 0.0 && max_semitones <= 2.0)) throw ParameterError("augment.max_semitones must be in [0, 2]");
  if (!(max_speed_delta >= 0.0 && max_speed_delta <= 0.2)) {
    throw ParameterError("augment.max_speed_delta must be in [0, 0.2]");
  }
  if (!(min_snr_db >= 0.0 && max_snr_db >= min_snr_db)) throw ParameterError("augment SNR range is invalid");
  prob(mix_weight_min, "mix_weight_min");
}

std::string AugmentPlan::fingerprint() const {
  std::ostringstream s;
  s.precision(17);
  s << "mixup=" << mixup << ":" << mixup_alpha << ":" << mixup_prob << ";spec=" << spec_augment << ":"
    << spec_augment_prob << ":" << spec.time_masks << ":" << spec.freq_masks << ":" << spec.max_time_width << ":"
    << spec.max_freq_width << ";corr=" << spec_correction << ":" << spec_correction_prob << ";pitch=" << pitch_shift
    << ":" << max_semitones << ";speed=" << speed_change << ":" << max_speed_delta << ";noise=" << random_noise << ":"
    << min_snr_db << ":" << max_snr_db << ";mix=" << mix_audios << ":" << mix_weight_min << ";seed=" << seed;
  return to_hex(sha256(s.str()));
}

AudioClip apply_waveform_plan(const AudioClip& clip, const AugmentPlan& plan, std::uint64_t clip_key,
                              const AudioClip* partner) {
  Rng rng = make_rng(plan.seed, "waveform", clip_key);
  AudioClip out = clip;
  if (plan.pitch_shift) out = pitch_shift(out, uniform(rng, -plan.max_semitones, plan.max_semitones));
  if (plan.speed_change) out = speed_change(out, 1.0 + uniform(rng, -plan.max_speed_delta, plan.max_speed_delta));
  if (plan.random_noise) out = random_noise(out, uniform(rng, plan.min_snr_db, plan.max_snr_db), rng());
  if (plan.mix_audios) {
    if (!partner) throw ParameterError("mix_audios needs a partner clip");
    out = mix_audios(out, *partner, uniform(rng, plan.mix_weight_min, 1.0));
  }
  return out;
}

AugmentedSource::AugmentedSource(Tensor inputs, Tensor targets, AugmentPlan plan, std::vector<std::uint64_t> keys)
    : inputs_(std::move(inputs)), targets_(std::move(targets)), plan_(std::move(plan)), keys_(std::move(keys)) {
  plan_.validate();
  if (inputs_.dim(0) != targets_.dim(0)) throw DimensionError("AugmentedSource: input/target row counts differ");
  if (keys_.empty()) {
    keys_.resize(inputs_.dim(0));
    for (std::size_t i = 0; i < keys_.size(); ++i) keys_[i] = i;
  }
  if (keys_.size() != inputs_.dim(0)) throw DimensionError("AugmentedSource: one key per example required");
}

namespace {

Tensor row_of(const Tensor& t, std::size_t n) {
  Shape s(t.shape().begin() + 1, t.shape().end());
  const std::size_t per = shape_numel(s);
  return Tensor(s, std::vector<float>(t.raw() + n * per, t.raw() + (n + 1) * per));
}

void set_row(Tensor& t, std::size_t n, const Tensor& row) {
  std::copy(row.raw(), row.raw() + row.numel(), t.raw() + n * row.numel());
}

}  // namespace

Batch AugmentedSource::make_batch(std::span<const std::size_t> indices, std::uint64_t step) const {
  Batch b;
  b.indices.assign(indices.begin(), indices.end());
  b.inputs = gather_rows(inputs_, indices);
  b.targets = gather_rows(targets_, indices);
  if (aux_) b.aux_targets = gather_rows(*aux_, indices);
  if (teacher_) b.teacher_logits = gather_rows(*teacher_, indices);
  if (!plan_.any_feature_level()) return b;

  const std::size_t n = indices.size();
  std::vector<Rng> rngs;
  rngs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    rngs.push_back(make_rng(substream(plan_.seed, "augment-step", step), "example", keys_[indices[i]]));
  }
  for (std::size_t i = 0; i < n; ++i) {
    Rng& r = rngs[i];
    const double u_corr = uniform01(r), u_spec = uniform01(r);
    const std::uint64_t spec_seed = r();
    if (!plan_.spec_correction && !plan_.spec_augment) continue;
    Tensor x = row_of(b.inputs, i);
    if (plan_.spec_correction && correction_ && u_corr < plan_.spec_correction_prob) {
      x = log_spectrum_correction(x, correction_->reference, correction_->device_profiles.at(indices[i]));
    }
    if (plan_.spec_augment && u_spec < plan_.spec_augment_prob) x = spec_augment(x, plan_.spec, spec_seed);
    set_row(b.inputs, i, x);
  }
  if (plan_.mixup && n > 1) {
    const Tensor x0 = b.inputs, y0 = b.targets;
    const std::optional<Tensor> a0 = b.aux_targets, t0 = b.teacher_logits;
    for (std::size_t i = 0; i < n; ++i) {
      Rng& r = rngs[i];
      if (uniform01(r) >= plan_.mixup_prob) continue;
      const std::size_t j = uniform_index(r, n);
      const double lambda = mixup_lambda(r, plan_.mixup_alpha);
      Mixed m = mixup(row_of(x0, i), row_of(x0, j), row_of(y0, i), row_of(y0, j), lambda);
      set_row(b.inputs, i, m.x);
      set_row(b.targets, i, m.y);
      if (a0) set_row(*b.aux_targets, i, mixup(row_of(*a0, i), row_of(*a0, j), row_of(*a0, i), row_of(*a0, j), lambda).y);
      if (t0) {
        set_row(*b.teacher_logits, i,
                mixup(row_of(*t0, i), row_of(*t0, j), row_of(*t0, i), row_of(*t0, j), lambda).y);
      }
    }
  }
  return b;
}

}  // namespace al
