#include "al/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>

#include <json.hpp>

#include "al/binary_io.hpp"
#include "al/error.hpp"

namespace al {

namespace {

std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

std::uint16_t read_u16(std::istream& is) {
  unsigned char b[2];
  bin::read_exact(is, b, 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void write_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

AudioClip read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open wav file: " + path);
  char tag[4];
  bin::read_exact(is, tag, 4);
  if (std::string(tag, 4) != "RIFF") throw FormatError(path + ": not a RIFF file");
  bin::read_u32(is);
  bin::read_exact(is, tag, 4);
  if (std::string(tag, 4) != "WAVE") throw FormatError(path + ": not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (true) {
    bin::read_exact(is, tag, 4);
    const std::string id(tag, 4);
    const std::uint32_t size = bin::read_u32(is);
    if (id == "fmt ") {
      if (size < 16) throw FormatError(path + ": fmt chunk too short");
      format = read_u16(is);
      channels = read_u16(is);
      rate = bin::read_u32(is);
      bin::read_u32(is);
      read_u16(is);
      bits = read_u16(is);
      std::uint32_t rest = size - 16;
      if (format == 0xFFFE && rest >= 10) {
        read_u16(is);
        read_u16(is);
        bin::read_u32(is);
        format = read_u16(is);
        rest -= 10;
      }
      is.ignore(rest + (size & 1));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError(path + ": data chunk before fmt");
      if (channels != 1) throw InputError(path + ": expected mono, got " + std::to_string(channels) + " channels");
      AudioClip clip;
      clip.sample_rate = rate;
      if (format == 1 && bits == 16) {
        std::vector<std::int16_t> raw(size / 2);
        bin::read_exact(is, raw.data(), raw.size() * 2);
        clip.samples.resize(raw.size());
        for (std::size_t i = 0; i < raw.size(); ++i) clip.samples[i] = static_cast<float>(raw[i]) / 32768.0f;
      } else if (format == 3 && bits == 32) {
        clip.samples.resize(size / 4);
        bin::read_exact(is, clip.samples.data(), clip.samples.size() * 4);
      } else {
        throw FormatError(path + ": unsupported wav encoding (format " + std::to_string(format) + ", " +
                          std::to_string(bits) + " bits)");
      }
      return clip;
    } else {
      is.ignore(size + (size & 1));
      if (!is) throw FormatError(path + ": truncated chunk '" + id + "'");
    }
  }
}

void write_wav(const std::string& path, const AudioClip& clip, bool pcm16) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write wav file: " + path);
  const std::uint16_t bits = pcm16 ? 16 : 32;
  const std::uint32_t data_size = static_cast<std::uint32_t>(clip.samples.size() * bits / 8);
  const std::uint32_t rate = static_cast<std::uint32_t>(std::lround(clip.sample_rate));
  os.write("RIFF", 4);
  bin::write_u32(os, 36 + data_size);
  os.write("WAVEfmt ", 8);
  bin::write_u32(os, 16);
  write_u16(os, pcm16 ? 1 : 3);
  write_u16(os, 1);
  bin::write_u32(os, rate);
  bin::write_u32(os, rate * bits / 8);
  write_u16(os, bits / 8);
  write_u16(os, bits);
  os.write("data", 4);
  bin::write_u32(os, data_size);
  if (pcm16) {
    for (float s : clip.samples) {
      const float c = std::clamp(s, -1.0f, 1.0f);
      write_u16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0f))));
    }
  } else {
    bin::write_bytes(os, clip.samples.data(), clip.samples.size() * 4);
  }
  if (!os) throw InputError("failed writing wav file: " + path);
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void FeatureConfig::validate() const {
  if (n_fft < 2) throw ParameterError("features.n_fft must be >= 2");
  if (win == 0 || win > n_fft) throw ParameterError("features.win must be in [1, n_fft]");
  if (hop == 0 || hop > win) throw ParameterError("features.hop must be in [1, win]");
  if (mel_bins == 0) throw ParameterError("features.mel_bins must be positive");
  if (fmin < 0.0) throw ParameterError("features.fmin must be >= 0");
  if (fmax != 0.0 && fmax <= fmin) throw ParameterError("features.fmax must exceed fmin");
}

Digest FeatureConfig::fingerprint() const {
  std::ostringstream s;
  s.precision(17);
  s << "n_fft=" << n_fft << ";win=" << win << ";hop=" << hop << ";mel=" << mel_bins << ";fmin=" << fmin
    << ";fmax=" << fmax << ";channels=" << (channels == ChannelMode::deltas ? "deltas" : "repeat");
  return sha256(s.str());
}

std::size_t frame_count(std::size_t length, std::size_t win, std::size_t hop) {
  if (win == 0 || hop == 0) throw ParameterError("win and hop must be positive");
  if (length < win) {
    throw InputError("clip of " + std::to_string(length) + " samples is shorter than one window (" +
                     std::to_string(win) + ")");
  }
  return (length - win) / hop + 1;
}

std::vector<float> hann_window(std::size_t n) {
  std::vector<float> w(n);
  if (n == 1) {
    w[0] = 1.0f;
    return w;
  }
  // periodic Hann
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n)));
  }
  return w;
}

// ---------------------------------------------------------------------------
// STFT
// ---------------------------------------------------------------------------

Tensor stft_power(std::span<const float> samples, const FeatureConfig& config) {
  config.validate();
  const std::size_t frames = frame_count(samples.size(), config.win, config.hop);
  const std::size_t bins = config.n_fft / 2 + 1;
  const std::vector<float> window = hann_window(config.win);

  float* in = fftwf_alloc_real(config.n_fft);
  fftwf_complex* out = fftwf_alloc_complex(bins);
  fftwf_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    plan = fftwf_plan_dft_r2c_1d(static_cast<int>(config.n_fft), in, out, FFTW_ESTIMATE);
  }
  Tensor power({frames, bins});
  float* dst = power.raw();
  for (std::size_t f = 0; f < frames; ++f) {
    const float* src = samples.data() + f * config.hop;
    for (std::size_t i = 0; i < config.win; ++i) in[i] = src[i] * window[i];
    for (std::size_t i = config.win; i < config.n_fft; ++i) in[i] = 0.0f;
    fftwf_execute(plan);
    for (std::size_t b = 0; b < bins; ++b) {
      dst[f * bins + b] = out[b][0] * out[b][0] + out[b][1] * out[b][1];
    }
  }
  {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    fftwf_destroy_plan(plan);
  }
  fftwf_free(in);
  fftwf_free(out);
  return power;
}

std::vector<float> inverse_rfft(std::span<const std::complex<float>> spectrum, std::size_t n) {
  if (spectrum.size() != n / 2 + 1) throw DimensionError("inverse_rfft: expected " + std::to_string(n / 2 + 1) + " bins");
  fftwf_complex* in = fftwf_alloc_complex(spectrum.size());
  float* out = fftwf_alloc_real(n);
  fftwf_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    plan = fftwf_plan_dft_c2r_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  for (std::size_t b = 0; b < spectrum.size(); ++b) {
    in[b][0] = spectrum[b].real();
    in[b][1] = spectrum[b].imag();
  }
  fftwf_execute(plan);
  std::vector<float> result(out, out + n);
  {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    fftwf_destroy_plan(plan);
  }
  fftwf_free(in);
  fftwf_free(out);
  return result;
}

Tensor stft_power(const AudioClip& clip, const FeatureConfig& config) {
  return stft_power(std::span<const float>(clip.samples), config);
}

// ---------------------------------------------------------------------------
// Mel
// ---------------------------------------------------------------------------

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

// Antiderivative of the unit-height triangle (lo, mid, hi).
double triangle_cdf(double x, double lo, double mid, double hi) {
  if (x <= lo) return 0.0;
  if (x <= mid) return (x - lo) * (x - lo) / (2.0 * (mid - lo));
  if (x <= hi) return (mid - lo) / 2.0 + ((hi - mid) * (hi - mid) - (hi - x) * (hi - x)) / (2.0 * (hi - mid));
  return (hi - lo) / 2.0;
}

}  // namespace

Tensor mel_filterbank(const FeatureConfig& config, double sample_rate) {
  config.validate();
  if (sample_rate <= 0.0) throw ParameterError("sample_rate must be positive");
  const double top = config.upper_hz(sample_rate);
  if (top > sample_rate / 2.0 + 1e-9) throw ParameterError("features.fmax exceeds the Nyquist frequency");
  if (top <= config.fmin) throw ParameterError("features.fmax must exceed fmin");
  const std::size_t bins = config.n_fft / 2 + 1;
  const std::size_t m = config.mel_bins;
  const double df = sample_rate / static_cast<double>(config.n_fft);

  const double mlo = hz_to_mel(config.fmin), mhi = hz_to_mel(top);
  std::vector<double> edges(m + 2);
  for (std::size_t i = 0; i < m + 2; ++i) {
    edges[i] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) / static_cast<double>(m + 1));
  }
  Tensor fb({m, bins});
  for (std::size_t r = 0; r < m; ++r) {
    const double lo = edges[r], mid = edges[r + 1], hi = edges[r + 2];
    for (std::size_t b = 0; b < bins; ++b) {
      const double fc = static_cast<double>(b) * df;
      const double w = (triangle_cdf(fc + df / 2, lo, mid, hi) - triangle_cdf(fc - df / 2, lo, mid, hi)) / df;
      fb[r * bins + b] = static_cast<float>(w);
    }
  }
  return fb;
}

Tensor log_mel(const Tensor& power, const Tensor& filterbank) {
  if (power.rank() != 2 || filterbank.rank() != 2 || power.shape()[1] != filterbank.shape()[1]) {
    throw DimensionError("log_mel: power " + shape_str(power.shape()) + " vs filterbank " +
                         shape_str(filterbank.shape()));
  }
  const std::size_t frames = power.shape()[0], bins = power.shape()[1], m = filterbank.shape()[0];
  Tensor out({frames, m});
  for (std::size_t f = 0; f < frames; ++f) {
    const float* p = power.raw() + f * bins;
    for (std::size_t r = 0; r < m; ++r) {
      const float* w = filterbank.raw() + r * bins;
      double e = 0.0;
      for (std::size_t b = 0; b < bins; ++b) e += static_cast<double>(w[b]) * p[b];
      out[f * m + r] = static_cast<float>(std::log(e + kLogMelFloor));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Channels
// ---------------------------------------------------------------------------

Tensor delta(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("delta expects [frames, bins], got " + shape_str(x.shape()));
  const std::size_t frames = x.shape()[0], bins = x.shape()[1];
  constexpr std::ptrdiff_t n_half = kDeltaWindow / 2;
  if (frames < kDeltaWindow) {
    throw InputError("delta needs at least " + std::to_string(kDeltaWindow) + " frames, got " +
                     std::to_string(frames));
  }
  const auto t_max = static_cast<std::ptrdiff_t>(frames) - 1;
  auto at = [&](std::ptrdiff_t t, std::size_t b) -> double {
    if (t < 0) return 2.0 * x[b] - x[static_cast<std::size_t>(-t) * bins + b];
    if (t > t_max) {
      return 2.0 * x[static_cast<std::size_t>(t_max) * bins + b] -
             x[static_cast<std::size_t>(2 * t_max - t) * bins + b];
    }
    return x[static_cast<std::size_t>(t) * bins + b];
  };
  double denom = 0.0;
  for (std::ptrdiff_t n = 1; n <= n_half; ++n) denom += 2.0 * static_cast<double>(n * n);
  Tensor d({frames, bins});
  for (std::ptrdiff_t t = 0; t <= t_max; ++t) {
    for (std::size_t b = 0; b < bins; ++b) {
      double s = 0.0;
      for (std::ptrdiff_t n = 1; n <= n_half; ++n) s += static_cast<double>(n) * (at(t + n, b) - at(t - n, b));
      d[static_cast<std::size_t>(t) * bins + b] = static_cast<float>(s / denom);
    }
  }
  return d;
}

Tensor assemble_channels(const Tensor& lmfb, ChannelMode mode) {
  if (lmfb.rank() != 2) throw DimensionError("assemble_channels expects [frames, bins], got " + shape_str(lmfb.shape()));
  const std::size_t frames = lmfb.shape()[0], bins = lmfb.shape()[1];
  if (frames < kDeltaWindow) {
    throw InputError("assemble_channels needs at least " + std::to_string(kDeltaWindow) + " frames, got " +
                     std::to_string(frames));
  }
  Tensor d1 = lmfb, d2 = lmfb;
  if (mode == ChannelMode::deltas) {
    d1 = delta(lmfb);
    d2 = delta(d1);
  }
  Tensor out({frames, bins, 3});
  for (std::size_t i = 0; i < frames * bins; ++i) {
    out[i * 3] = lmfb[i];
    out[i * 3 + 1] = d1[i];
    out[i * 3 + 2] = d2[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scaling
// ---------------------------------------------------------------------------

void FeatureStats::validate() const {
  if (min.empty() || min.size() != max.size()) throw ParameterError("feature stats: channel count mismatch");
  for (std::size_t c = 0; c < min.size(); ++c) {
    if (!(max[c] > min[c])) {
      throw ParameterError("degenerate feature stats on channel " + std::to_string(c) + ": max == min");
    }
  }
}

void update_stats(FeatureStats& stats, const Tensor& features) {
  const std::size_t c = features.shape().back();
  if (stats.min.empty()) {
    stats.min.assign(c, std::numeric_limits<float>::infinity());
    stats.max.assign(c, -std::numeric_limits<float>::infinity());
  }
  if (stats.min.size() != c) throw DimensionError("feature stats: channel count mismatch");
  const float* p = features.raw();
  for (std::size_t i = 0; i < features.numel(); ++i) {
    const std::size_t ch = i % c;
    stats.min[ch] = std::min(stats.min[ch], p[i]);
    stats.max[ch] = std::max(stats.max[ch], p[i]);
  }
}

FeatureStats compute_stats(std::span<const Tensor> features) {
  FeatureStats s;
  for (const auto& f : features) update_stats(s, f);
  return s;
}

Tensor scale_unit(const Tensor& features, const FeatureStats& stats) {
  stats.validate();
  const std::size_t c = features.shape().back();
  if (stats.min.size() != c) throw DimensionError("scale_unit: stats have " + std::to_string(stats.min.size()) +
                                                  " channels, features " + std::to_string(c));
  Tensor out = features;
  float* p = out.raw();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const std::size_t ch = i % c;
    const float v = (p[i] - stats.min[ch]) / (stats.max[ch] - stats.min[ch]);
    p[i] = std::clamp(v, 0.0f, 1.0f);
  }
  return out;
}

Tensor unscale_unit(const Tensor& scaled, const FeatureStats& stats) {
  stats.validate();
  const std::size_t c = scaled.shape().back();
  if (stats.min.size() != c) throw DimensionError("unscale_unit: channel count mismatch");
  Tensor out = scaled;
  float* p = out.raw();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const std::size_t ch = i % c;
    p[i] = stats.min[ch] + p[i] * (stats.max[ch] - stats.min[ch]);
  }
  return out;
}

Tensor extract_raw(const AudioClip& clip, const FeatureConfig& config) {
  Tensor power = stft_power(clip, config);
  Tensor fb = mel_filterbank(config, clip.sample_rate);
  return assemble_channels(log_mel(power, fb), config.channels);
}

FeatureTensor extract_features(const AudioClip& clip, const FeatureConfig& config, const FeatureStats& stats) {
  return FeatureTensor{scale_unit(extract_raw(clip, config), stats), config.fingerprint()};
}

void save_feature_file(const std::string& path, const FeatureTensor& ft) {
  save_tensor_file(path, ft.data);
  nlohmann::json j;
  j["shape"] = ft.data.shape();
  j["fingerprint"] = to_hex(ft.fingerprint);
  std::ofstream os(path + ".json");
  if (!os) throw InputError("cannot write sidecar: " + path + ".json");
  os << j.dump(2) << "\n";
}

FeatureTensor load_feature_file(const std::string& path) {
  FeatureTensor ft;
  ft.data = load_tensor_file(path);
  std::ifstream is(path + ".json");
  if (!is) throw InputError("missing sidecar: " + path + ".json");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw FormatError(path + ".json: " + e.what());
  }
  const std::string hex = j.at("fingerprint").get<std::string>();
  if (hex.size() != 64) throw FormatError(path + ".json: bad fingerprint");
  for (std::size_t i = 0; i < 32; ++i) {
    ft.fingerprint[i] = static_cast<std::uint8_t>(std::stoul(hex.substr(2 * i, 2), nullptr, 16));
  }
  if (j.at("shape").get<Shape>() != ft.data.shape()) throw FormatError(path + ": sidecar shape mismatch");
  return ft;
}

}  // namespace al
