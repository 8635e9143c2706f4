#pragma once

#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "al/hash.hpp"
#include "al/tensor.hpp"

namespace al {

struct AudioClip {
  std::vector<float> samples;  // mono, in [-1, 1]
  double sample_rate = 16000.0;
  std::string device_id;
  std::string scene_label;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Reads a mono WAV file (16-bit PCM or 32-bit float).
AudioClip read_wav(const std::string& path);
/// Writes 32-bit float mono, or 16-bit PCM when `pcm16` is set.
void write_wav(const std::string& path, const AudioClip& clip, bool pcm16 = false);

enum class ChannelMode { deltas, repeat };

struct FeatureConfig {
  std::size_t n_fft = 2048;
  std::size_t win = 2048;
  std::size_t hop = 1024;
  std::size_t mel_bins = 128;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 means sample_rate / 2
  ChannelMode channels = ChannelMode::deltas;

  void validate() const;
  double upper_hz(double sample_rate) const { return fmax > 0.0 ? fmax : sample_rate / 2.0; }
  Digest fingerprint() const;
};

constexpr double kLogMelFloor = 1e-10;
constexpr std::size_t kDeltaWindow = 9;

/// Frames without centering: floor((len - win) / hop) + 1.
std::size_t frame_count(std::size_t length, std::size_t win, std::size_t hop);

std::vector<float> hann_window(std::size_t n);

/// Real inverse DFT of a one-sided spectrum of n/2 + 1 bins (unnormalized).
std::vector<float> inverse_rfft(std::span<const std::complex<float>> spectrum, std::size_t n);

/// Hann-windowed power spectrum, |X(b)|^2 per frame. Tensor[frames, n_fft/2 + 1].
Tensor stft_power(std::span<const float> samples, const FeatureConfig& config);
Tensor stft_power(const AudioClip& clip, const FeatureConfig& config);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters equally spaced on the mel scale. Each weight is the
/// triangle integrated over the bin's frequency span, so no row is empty
/// even when filters are narrower than a bin. Tensor[mel_bins, n_fft/2 + 1].
Tensor mel_filterbank(const FeatureConfig& config, double sample_rate);

/// ln(power @ filterbank^T + 1e-10). Tensor[frames, mel_bins].
Tensor log_mel(const Tensor& power, const Tensor& filterbank);

/// Regression delta over a 9-frame window. Edges are extended by point
/// reflection (x[-n] = 2 x[0] - x[n]) so linear trends stay linear.
Tensor delta(const Tensor& x);

/// [frames, bins] -> [frames, bins, 3].
Tensor assemble_channels(const Tensor& lmfb, ChannelMode mode = ChannelMode::deltas);

/// Per-channel min and max over a corpus.
struct FeatureStats {
  std::vector<float> min;
  std::vector<float> max;

  void validate() const;
  bool operator==(const FeatureStats&) const = default;
};

/// Stats of [..., channels] tensors, accumulated over every tensor given.
FeatureStats compute_stats(std::span<const Tensor> features);
void update_stats(FeatureStats& stats, const Tensor& features);

struct FeatureTensor {
  Tensor data;
  Digest fingerprint{};
};

/// (x - min) / (max - min) per channel, clipped to [0, 1].
Tensor scale_unit(const Tensor& features, const FeatureStats& stats);
Tensor unscale_unit(const Tensor& scaled, const FeatureStats& stats);

/// stft -> log-mel -> channels. Unscaled.
Tensor extract_raw(const AudioClip& clip, const FeatureConfig& config);
FeatureTensor extract_features(const AudioClip& clip, const FeatureConfig& config, const FeatureStats& stats);

/// Tensor file plus a `<path>.json` sidecar with shape and fingerprint.
void save_feature_file(const std::string& path, const FeatureTensor& ft);
FeatureTensor load_feature_file(const std::string& path);

}  // namespace al
