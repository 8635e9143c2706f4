#include "al/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "al/error.hpp"
#include "al/rng.hpp"

namespace al {

namespace fs = std::filesystem;

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ParameterError("unknown split '" + s + "' (expected train or test)");
}

Shape SceneDataset::feature_shape() const {
  if (features.empty()) return {};
  return features.front().shape();
}

std::vector<std::size_t> SceneDataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].split == split) out.push_back(i);
  }
  return out;
}

Digest SceneDataset::digest() const {
  Sha256 h;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    h.update(clips[i].id).update(clips[i].device).update(to_string(clips[i].split));
    const std::uint64_t label = clips[i].label;
    h.update(&label, sizeof label);
    h.update_span(features[i].data());
  }
  return h.finish();
}

void SynthConfig::validate() const {
  if (n_classes < 3) throw ParameterError("dataset.n_classes must be >= 3");
  if (n_devices == 0) throw ParameterError("dataset.n_devices must be positive");
  if (n_unseen >= n_devices) throw ParameterError("dataset.n_unseen must be < n_devices");
  if (train_per_cell == 0) throw ParameterError("dataset.train_per_cell must be positive");
  if (frames < kDeltaWindow) throw ParameterError("dataset.frames must be >= " + std::to_string(kDeltaWindow));
  if (bands == 0) throw ParameterError("dataset.bands must be positive");
  if (noise < 0.0) throw ParameterError("dataset.noise must be >= 0");
  if (device_strength < 0.0) throw ParameterError("dataset.device_strength must be >= 0");
}

FeatureConfig synth_feature_config(std::size_t bands) {
  FeatureConfig c;
  c.n_fft = 256;
  c.win = 256;
  c.hop = 128;
  c.mel_bins = bands;
  return c;
}

ClassHierarchy synth_hierarchy(std::size_t k) {
  if (k == 10) return dcase_hierarchy();
  std::vector<std::string> fine, coarse{"group_0", "group_1", "group_2"};
  std::map<std::string, std::string> parent;
  for (std::size_t i = 0; i < k; ++i) {
    fine.push_back("class_" + std::to_string(i));
    parent[fine.back()] = coarse[i % 3];
  }
  return ClassHierarchy::from_map(fine, coarse, parent);
}

namespace {

std::vector<float> smooth_curve(Rng& rng, std::size_t n, double amplitude) {
  std::vector<float> out(n, 0.0f);
  for (int term = 0; term < 3; ++term) {
    const double a = uniform(rng, -1.0, 1.0) * amplitude;
    const double f = 0.5 + uniform(rng, 0.0, 2.5);
    const double phase = uniform(rng, 0.0, 2 * M_PI);
    for (std::size_t b = 0; b < n; ++b) {
      out[b] += static_cast<float>(a * std::cos(2 * M_PI * f * static_cast<double>(b) / n + phase));
    }
  }
  return out;
}

std::string device_name(std::size_t d) {
  static const char* real[] = {"a", "b", "c"};
  return d < 3 ? real[d] : "s" + std::to_string(d - 2);
}

struct ClassModel {
  std::vector<float> envelope;    // mean log energy per band
  std::vector<float> mod_bands;   // where the temporal modulation lives
  double mod_rate = 1.0;          // cycles per clip
  double mod_depth = 0.0;
};

std::vector<ClassModel> class_models(const SynthConfig& cfg, const ClassHierarchy& h, std::uint64_t seed) {
  std::vector<std::vector<float>> groups;
  for (std::size_t c = 0; c < h.coarse.size(); ++c) {
    Rng rng = make_rng(seed, "coarse-prototype", c);
    groups.push_back(smooth_curve(rng, cfg.bands, 2.0));
  }
  std::vector<ClassModel> out;
  for (std::size_t k = 0; k < h.fine.size(); ++k) {
    Rng rng = make_rng(seed, "class-prototype", k);
    ClassModel m;
    m.envelope = smooth_curve(rng, cfg.bands, 0.9);
    for (std::size_t b = 0; b < cfg.bands; ++b) m.envelope[b] += groups[h.parent[k]][b] - 4.0f;
    m.mod_bands = smooth_curve(rng, cfg.bands, 1.0);
    for (auto& v : m.mod_bands) v = std::max(0.0f, v);
    m.mod_rate = 1.0 + static_cast<double>(uniform_index(rng, 4));
    m.mod_depth = uniform(rng, 0.3, 0.8);
    out.push_back(std::move(m));
  }
  return out;
}

Tensor clip_log_mel(const SynthConfig& cfg, const ClassModel& cls, const DeviceProfile& dev, Rng& rng) {
  const std::size_t T = cfg.frames, B = cfg.bands;
  Tensor lm({T, B});
  const double gain = uniform(rng, -0.5, 0.5) * cfg.noise + dev.gain_offset;
  const double phase = uniform(rng, 0.0, 2 * M_PI);
  for (std::size_t t = 0; t < T; ++t) {
    const double mod = cls.mod_depth * std::sin(2 * M_PI * cls.mod_rate * static_cast<double>(t) / T + phase);
    for (std::size_t b = 0; b < B; ++b) {
      lm[t * B + b] = static_cast<float>(cls.envelope[b] + gain + mod * cls.mod_bands[b] + 0.3 * cfg.noise * normal(rng));
    }
  }
  // class-independent transient events
  const std::size_t events = uniform_index(rng, 4);
  for (std::size_t e = 0; e < events; ++e) {
    const double t0 = uniform(rng, 0.0, T), b0 = uniform(rng, 0.0, B);
    const double wt = uniform(rng, 1.0, 4.0), wb = uniform(rng, 1.0, 4.0);
    const double amp = uniform(rng, 0.5, 2.0) * cfg.noise;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t b = 0; b < B; ++b) {
        const double dt = (t - t0) / wt, db = (b - b0) / wb;
        lm[t * B + b] += static_cast<float>(amp * std::exp(-0.5 * (dt * dt + db * db)));
      }
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      const double x = lm[t * B + b] + dev.band_gain[b];
      // soft floor: ln(e^x + e^floor)
      const double hi = std::max(x, dev.noise_floor), lo = std::min(x, dev.noise_floor);
      lm[t * B + b] = static_cast<float>(hi + std::log1p(std::exp(lo - hi)));
    }
  }
  return lm;
}

AudioClip synthesize_audio(const Tensor& lm, const FeatureConfig& fc, Rng& rng) {
  const std::size_t T = lm.shape()[0], B = lm.shape()[1];
  const std::size_t bins = fc.n_fft / 2 + 1;
  Tensor fb = mel_filterbank(fc, kSynthSampleRate);
  std::vector<std::size_t> band_of(bins, 0);
  for (std::size_t b = 0; b < bins; ++b) {
    for (std::size_t r = 1; r < B; ++r) {
      if (fb[r * bins + b] > fb[band_of[b] * bins + b]) band_of[b] = r;
    }
  }
  const std::vector<float> window = hann_window(fc.win);
  AudioClip clip;
  clip.sample_rate = kSynthSampleRate;
  clip.samples.assign((T - 1) * fc.hop + fc.win, 0.0f);
  std::vector<std::complex<float>> spec(bins);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < bins; ++b) {
      const double mag = std::sqrt(std::exp(static_cast<double>(lm[t * B + band_of[b]])));
      const double ph = uniform(rng, 0.0, 2 * M_PI);
      spec[b] = std::polar(static_cast<float>(mag), static_cast<float>(ph));
    }
    spec[0] = std::abs(spec[0]);
    spec[bins - 1] = std::abs(spec[bins - 1]);
    std::vector<float> frame = inverse_rfft(spec, fc.n_fft);
    for (std::size_t i = 0; i < fc.win; ++i) clip.samples[t * fc.hop + i] += frame[i] * window[i];
  }
  float peak = 0.0f;
  for (float s : clip.samples) peak = std::max(peak, std::fabs(s));
  if (peak > 0.0f) {
    for (auto& s : clip.samples) s *= 0.9f / peak;
  }
  return clip;
}

}  // namespace

std::vector<DeviceProfile> synth_devices(const SynthConfig& config, std::uint64_t seed) {
  std::vector<DeviceProfile> out;
  for (std::size_t d = 0; d < config.n_devices; ++d) {
    DeviceProfile p;
    p.id = device_name(d);
    if (d == 0) {
      p.band_gain.assign(config.bands, 0.0f);
      p.noise_floor = -30.0;
    } else {
      Rng rng = make_rng(seed, "device", d);
      p.band_gain = smooth_curve(rng, config.bands, 1.2 * config.device_strength);
      p.noise_floor = -7.0 + uniform(rng, -1.0, 1.0) * config.device_strength;
      p.gain_offset = uniform(rng, -0.5, 0.5) * config.device_strength;
    }
    out.push_back(std::move(p));
  }
  return out;
}

SceneDataset synth_generate(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  SceneDataset ds;
  ds.hierarchy = synth_hierarchy(config.n_classes);
  const auto devices = synth_devices(config, seed);
  for (const auto& d : devices) ds.devices.push_back(d.id);
  const auto classes = class_models(config, ds.hierarchy, seed);
  const FeatureConfig fc = synth_feature_config(config.bands);
  const std::size_t seen = config.n_devices - config.n_unseen;

  auto emit = [&](Split split, std::size_t k, std::size_t d, std::size_t n) {
    ClipInfo info;
    info.id = to_string(split) + "-" + devices[d].id + "-" + std::to_string(k) + "-" + std::to_string(n);
    info.label = k;
    info.device = devices[d].id;
    info.split = split;
    Rng rng = make_rng(seed, "clip", fnv1a(info.id));
    Tensor lm = clip_log_mel(config, classes[k], devices[d], rng);
    if (config.waveform) {
      AudioClip audio = synthesize_audio(lm, fc, rng);
      audio.device_id = info.device;
      audio.scene_label = ds.hierarchy.fine[k];
      ds.features.push_back(extract_raw(audio, fc));
      ds.audio.push_back(std::move(audio));
    } else {
      ds.features.push_back(assemble_channels(lm));
    }
    ds.clips.push_back(std::move(info));
  };
  for (std::size_t d = 0; d < seen; ++d) {
    for (std::size_t k = 0; k < config.n_classes; ++k) {
      for (std::size_t n = 0; n < config.train_per_cell; ++n) emit(Split::train, k, d, n);
    }
  }
  for (std::size_t d = 0; d < config.n_devices; ++d) {
    for (std::size_t k = 0; k < config.n_classes; ++k) {
      for (std::size_t n = 0; n < config.test_per_cell; ++n) emit(Split::test, k, d, n);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

SceneDataset load_manifest(const std::string& path, const ClassHierarchy& hierarchy, const FeatureConfig& features,
                           std::vector<std::string>* warnings) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open manifest: " + path);
  const fs::path base = fs::path(path).parent_path();
  SceneDataset ds;
  ds.hierarchy = hierarchy;
  std::vector<std::string> errors;
  std::set<std::string> ids;
  std::string line;
  std::size_t row = 0;
  bool header = false;
  std::vector<std::string> train_devs, test_devs;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto cols = split_csv(line);
    if (!header) {
      if (cols != std::vector<std::string>{"path", "scene_label", "device_id", "split"}) {
        throw InputError(path + ": expected header 'path,scene_label,device_id,split'");
      }
      header = true;
      continue;
    }
    const std::string where = "row " + std::to_string(row);
    if (cols.size() != 4) {
      errors.push_back(where + ": expected 4 columns, got " + std::to_string(cols.size()));
      continue;
    }
    const fs::path file = base / cols[0];
    bool ok = true;
    if (!fs::exists(file)) {
      errors.push_back(where + ": missing file '" + file.string() + "'");
      ok = false;
    }
    if (std::find(hierarchy.fine.begin(), hierarchy.fine.end(), cols[1]) == hierarchy.fine.end()) {
      errors.push_back(where + ": unknown scene label '" + cols[1] + "'");
      ok = false;
    }
    if (cols[2].empty()) {
      errors.push_back(where + ": empty device id");
      ok = false;
    }
    if (!ids.insert(cols[0]).second) {
      errors.push_back(where + ": duplicate id '" + cols[0] + "'");
      ok = false;
    }
    Split split = Split::train;
    try {
      split = parse_split(cols[3]);
    } catch (const ParameterError& e) {
      errors.push_back(where + ": " + e.what());
      ok = false;
    }
    if (!ok) continue;
    try {
      if (file.extension() == ".wav") {
        AudioClip clip = read_wav(file.string());
        clip.device_id = cols[2];
        clip.scene_label = cols[1];
        ds.features.push_back(extract_raw(clip, features));
        ds.audio.push_back(std::move(clip));
      } else {
        ds.features.push_back(load_tensor_file(file.string()));
      }
    } catch (const Error& e) {
      errors.push_back(where + ": " + e.what());
      continue;
    }
    ds.clips.push_back(ClipInfo{cols[0], hierarchy.fine_index(cols[1]), cols[2], split});
    auto& devs = split == Split::train ? train_devs : test_devs;
    if (std::find(devs.begin(), devs.end(), cols[2]) == devs.end()) devs.push_back(cols[2]);
  }
  if (!errors.empty()) {
    std::string msg = path + ": " + std::to_string(errors.size()) + " load error(s)";
    for (const auto& e : errors) msg += "\n  " + e;
    throw InputError(msg);
  }
  if (ds.clips.empty() && warnings) warnings->push_back(path + ": manifest has no clips");
  if (!ds.features.empty()) {
    for (std::size_t i = 1; i < ds.features.size(); ++i) {
      if (ds.features[i].shape() != ds.features[0].shape()) {
        throw InputError(path + ": clip '" + ds.clips[i].id + "' has shape " + shape_str(ds.features[i].shape()) +
                         ", expected " + shape_str(ds.features[0].shape()));
      }
    }
  }
  ds.devices = train_devs;
  for (const auto& d : test_devs) {
    if (std::find(ds.devices.begin(), ds.devices.end(), d) == ds.devices.end()) ds.devices.push_back(d);
  }
  if (ds.audio.size() != ds.clips.size()) ds.audio.clear();
  return ds;
}

void write_dataset(const SceneDataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "features");
  std::ofstream os(fs::path(dir) / "manifest.csv");
  if (!os) throw InputError("cannot write manifest in " + dir);
  os << "path,scene_label,device_id,split\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string rel = "features/" + ds.clips[i].id + ".alt";
    save_tensor_file((fs::path(dir) / rel).string(), ds.features[i]);
    os << rel << "," << ds.hierarchy.fine[ds.clips[i].label] << "," << ds.clips[i].device << ","
       << to_string(ds.clips[i].split) << "\n";
  }
  if (!os) throw InputError("failed writing manifest in " + dir);
}

// ---------------------------------------------------------------------------
// Views
// ---------------------------------------------------------------------------

DeviceSplit split_by_device(const SceneDataset& ds, const std::set<std::string>& seen) {
  if (seen.empty()) throw ParameterError("split_by_device: seen device set is empty");
  for (const auto& d : seen) {
    if (std::find(ds.devices.begin(), ds.devices.end(), d) == ds.devices.end()) {
      throw ParameterError("split_by_device: unknown device id '" + d + "'");
    }
  }
  DeviceSplit out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const bool is_seen = seen.count(ds.clips[i].device) != 0;
    if (ds.clips[i].split == Split::train) {
      if (is_seen) out.train.push_back(i);
    } else {
      (is_seen ? out.seen_test : out.unseen_test).push_back(i);
    }
  }
  return out;
}

std::set<std::string> train_devices(const SceneDataset& ds) {
  std::set<std::string> out;
  for (const auto& c : ds.clips) {
    if (c.split == Split::train) out.insert(c.device);
  }
  return out;
}

Tensor stack_features(const SceneDataset& ds, std::span<const std::size_t> idx, const FeatureStats& stats) {
  if (idx.empty()) throw ParameterError("stack_features: empty index list");
  Shape shape = ds.feature_shape();
  const std::size_t per = shape_numel(shape);
  shape.insert(shape.begin(), idx.size());
  Tensor out(shape);
  for (std::size_t n = 0; n < idx.size(); ++n) {
    Tensor scaled = scale_unit(ds.features.at(idx[n]), stats);
    std::copy(scaled.raw(), scaled.raw() + per, out.raw() + n * per);
  }
  return out;
}

Tensor one_hot_labels(const SceneDataset& ds, std::span<const std::size_t> idx, bool coarse) {
  const std::size_t k = coarse ? ds.hierarchy.coarse.size() : ds.num_classes();
  Tensor out({std::max<std::size_t>(idx.size(), 1), k});
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const std::size_t label = coarse ? ds.coarse_label(idx[n]) : ds.clips.at(idx[n]).label;
    out[n * k + label] = 1.0f;
  }
  return out;
}

FeatureStats dataset_stats(const SceneDataset& ds, std::span<const std::size_t> idx) {
  FeatureStats s;
  for (std::size_t i : idx) update_stats(s, ds.features.at(i));
  return s;
}

}  // namespace al
