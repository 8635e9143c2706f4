#include "al/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "al/error.hpp"
#include "al/rng.hpp"

namespace al {

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::none: return "none";
    case FusionMode::two_stage: return "two_stage";
    case FusionMode::mtl: return "mtl";
  }
  return "none";
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "none") return FusionMode::none;
  if (s == "two_stage") return FusionMode::two_stage;
  if (s == "mtl") return FusionMode::mtl;
  throw ConfigError("unknown fusion mode '" + s + "' (none, two_stage, mtl)");
}

namespace {

struct ValueError {
  std::string what;
};

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_integer(const std::string& s) {
  T v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ValueError{"expected a non-negative integer"};
  return v;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ValueError{"expected a number"};
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "on" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "off" || s == "0" || s == "no") return false;
  throw ValueError{"expected true or false"};
}

struct Key {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename Access>
Key size_key(std::string name, Access a) {
  return {std::move(name), [a](ExperimentConfig& c, const std::string& v) { a(c) = parse_integer<std::size_t>(v); },
          [a](const ExperimentConfig& c) { return std::to_string(a(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Access>
Key u64_key(std::string name, Access a) {
  return {std::move(name), [a](ExperimentConfig& c, const std::string& v) { a(c) = parse_integer<std::uint64_t>(v); },
          [a](const ExperimentConfig& c) { return std::to_string(a(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Access>
Key double_key(std::string name, Access a) {
  return {std::move(name), [a](ExperimentConfig& c, const std::string& v) { a(c) = parse_double(v); },
          [a](const ExperimentConfig& c) { return fmt(a(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Access>
Key bool_key(std::string name, Access a) {
  return {std::move(name), [a](ExperimentConfig& c, const std::string& v) { a(c) = parse_bool(v); },
          [a](const ExperimentConfig& c) { return a(const_cast<ExperimentConfig&>(c)) ? "true" : "false"; }};
}

template <typename Access>
Key string_key(std::string name, Access a) {
  return {std::move(name), [a](ExperimentConfig& c, const std::string& v) { a(c) = v; },
          [a](const ExperimentConfig& c) { return a(const_cast<ExperimentConfig&>(c)); }};
}

template <typename Access>
Key seed_key(std::string name, Access a) {
  return {std::move(name), [a](ExperimentConfig& c, const std::string& v) { a(c) = parse_integer<std::uint64_t>(v); },
          [a](const ExperimentConfig& c) {
            const auto& s = a(const_cast<ExperimentConfig&>(c));
            return s ? std::to_string(*s) : std::string("derived");
          }};
}

void train_keys(std::vector<Key>& keys, const std::string& section, TrainConfig ExperimentConfig::*member) {
  keys.push_back(size_key(section + ".epochs", [member](ExperimentConfig& c) -> auto& { return (c.*member).epochs; }));
  keys.push_back(
      size_key(section + ".batch_size", [member](ExperimentConfig& c) -> auto& { return (c.*member).batch_size; }));
  keys.push_back(double_key(section + ".lr_max", [member](ExperimentConfig& c) -> auto& { return (c.*member).lr_max; }));
  keys.push_back(double_key(section + ".lr_min", [member](ExperimentConfig& c) -> auto& { return (c.*member).lr_min; }));
  keys.push_back(
      double_key(section + ".momentum", [member](ExperimentConfig& c) -> auto& { return (c.*member).momentum; }));
  keys.push_back(
      size_key(section + ".cycle_epochs", [member](ExperimentConfig& c) -> auto& { return (c.*member).cycle_epochs; }));
  keys.push_back(double_key(section + ".restart_multiplier",
                            [member](ExperimentConfig& c) -> auto& { return (c.*member).restart_multiplier; }));
  keys.push_back(
      double_key(section + ".clip_norm", [member](ExperimentConfig& c) -> auto& { return (c.*member).clip_norm; }));
  keys.push_back(bool_key(section + ".select_cycle_end",
                          [member](ExperimentConfig& c) -> auto& { return (c.*member).select_cycle_end; }));
}

#define AL_REF(expr) [](ExperimentConfig & c) -> auto& { return c.expr; }

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(string_key("experiment.id", AL_REF(id)));
    k.push_back(string_key("experiment.out_dir", AL_REF(out_dir)));
    k.push_back(u64_key("experiment.seed", AL_REF(seed)));
    k.push_back(seed_key("seed.dataset", AL_REF(seed_dataset)));
    k.push_back(seed_key("seed.init", AL_REF(seed_init)));
    k.push_back(seed_key("seed.augment", AL_REF(seed_augment)));
    k.push_back(seed_key("seed.batch", AL_REF(seed_batch)));

    k.push_back(string_key("dataset.source", AL_REF(source)));
    k.push_back(string_key("dataset.manifest", AL_REF(manifest)));
    k.push_back(size_key("dataset.classes", AL_REF(synth.n_classes)));
    k.push_back(size_key("dataset.devices", AL_REF(synth.n_devices)));
    k.push_back(size_key("dataset.unseen", AL_REF(synth.n_unseen)));
    k.push_back(size_key("dataset.train_per_cell", AL_REF(synth.train_per_cell)));
    k.push_back(size_key("dataset.test_per_cell", AL_REF(synth.test_per_cell)));
    k.push_back(size_key("dataset.frames", AL_REF(synth.frames)));
    k.push_back(size_key("dataset.bands", AL_REF(synth.bands)));
    k.push_back(bool_key("dataset.waveform", AL_REF(synth.waveform)));
    k.push_back(double_key("dataset.noise", AL_REF(synth.noise)));
    k.push_back(double_key("dataset.device_strength", AL_REF(synth.device_strength)));

    k.push_back(size_key("features.n_fft", AL_REF(features.n_fft)));
    k.push_back(size_key("features.win", AL_REF(features.win)));
    k.push_back(size_key("features.hop", AL_REF(features.hop)));
    k.push_back(size_key("features.mel_bins", AL_REF(features.mel_bins)));
    k.push_back(double_key("features.fmin", AL_REF(features.fmin)));
    k.push_back(double_key("features.fmax", AL_REF(features.fmax)));
    k.push_back({"features.channels",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "deltas") {
                     c.features.channels = ChannelMode::deltas;
                   } else if (v == "repeat") {
                     c.features.channels = ChannelMode::repeat;
                   } else {
                     throw ValueError{"expected deltas or repeat"};
                   }
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(c.features.channels == ChannelMode::deltas ? "deltas" : "repeat");
                 }});

    k.push_back(bool_key("augment.mixup", AL_REF(augment.mixup)));
    k.push_back(double_key("augment.mixup_alpha", AL_REF(augment.mixup_alpha)));
    k.push_back(double_key("augment.mixup_prob", AL_REF(augment.mixup_prob)));
    k.push_back(bool_key("augment.spec_augment", AL_REF(augment.spec_augment)));
    k.push_back(double_key("augment.spec_augment_prob", AL_REF(augment.spec_augment_prob)));
    k.push_back(size_key("augment.time_masks", AL_REF(augment.spec.time_masks)));
    k.push_back(size_key("augment.freq_masks", AL_REF(augment.spec.freq_masks)));
    k.push_back(size_key("augment.max_time_width", AL_REF(augment.spec.max_time_width)));
    k.push_back(size_key("augment.max_freq_width", AL_REF(augment.spec.max_freq_width)));
    k.push_back(bool_key("augment.spec_correction", AL_REF(augment.spec_correction)));
    k.push_back(double_key("augment.spec_correction_prob", AL_REF(augment.spec_correction_prob)));
    k.push_back(bool_key("augment.pitch_shift", AL_REF(augment.pitch_shift)));
    k.push_back(double_key("augment.max_semitones", AL_REF(augment.max_semitones)));
    k.push_back(bool_key("augment.speed_change", AL_REF(augment.speed_change)));
    k.push_back(double_key("augment.max_speed_delta", AL_REF(augment.max_speed_delta)));
    k.push_back(bool_key("augment.random_noise", AL_REF(augment.random_noise)));
    k.push_back(double_key("augment.min_snr_db", AL_REF(augment.min_snr_db)));
    k.push_back(double_key("augment.max_snr_db", AL_REF(augment.max_snr_db)));
    k.push_back(bool_key("augment.mix_audios", AL_REF(augment.mix_audios)));
    k.push_back(double_key("augment.mix_weight_min", AL_REF(augment.mix_weight_min)));
    k.push_back(size_key("augment.waveform_copies", AL_REF(waveform_copies)));

    k.push_back(string_key("arch.student", AL_REF(student_arch)));
    k.push_back(string_key("arch.teacher", AL_REF(teacher_arch)));
    train_keys(k, "train", &ExperimentConfig::train);
    train_keys(k, "teacher", &ExperimentConfig::teacher_train);

    k.push_back(bool_key("distill.enabled", AL_REF(distill)));
    k.push_back(double_key("distill.tau", AL_REF(distill_cfg.tau)));
    k.push_back(double_key("distill.beta", AL_REF(distill_cfg.beta)));

    k.push_back(bool_key("lth.enabled", AL_REF(lth)));
    k.push_back(size_key("lth.iterations", AL_REF(lth_cfg.iterations)));
    k.push_back(double_key("lth.rate", AL_REF(lth_cfg.rate)));
    k.push_back({"lth.strategy",
                 [](ExperimentConfig& c, const std::string& v) {
                   try {
                     c.lth_cfg.strategy = parse_mask_strategy(v);
                   } catch (const Error& e) {
                     throw ValueError{e.what()};
                   }
                 },
                 [](const ExperimentConfig& c) { return to_string(c.lth_cfg.strategy); }});
    k.push_back({"lth.score",
                 [](ExperimentConfig& c, const std::string& v) {
                   try {
                     c.lth_cfg.score = parse_score_fn(v);
                   } catch (const Error& e) {
                     throw ValueError{e.what()};
                   }
                 },
                 [](const ExperimentConfig& c) { return to_string(c.lth_cfg.score); }});

    k.push_back(bool_key("quantize.enabled", AL_REF(quantize)));
    k.push_back(bool_key("quantize.activations", AL_REF(quantize_activations)));

    k.push_back({"fusion.mode",
                 [](ExperimentConfig& c, const std::string& v) {
                   try {
                     c.fusion = parse_fusion_mode(v);
                   } catch (const Error& e) {
                     throw ValueError{e.what()};
                   }
                 },
                 [](const ExperimentConfig& c) { return to_string(c.fusion); }});
    k.push_back(double_key("fusion.mtl_weight", AL_REF(mtl_weight)));
    k.push_back(bool_key("fusion.renormalize", AL_REF(renormalize_fused)));
    k.push_back(size_key("ensemble.members", AL_REF(ensemble_members)));
    std::sort(k.begin(), k.end(), [](const Key& a, const Key& b) { return a.name < b.name; });
    return k;
  }();
  return table;
}

#undef AL_REF

const Key* find_key(const std::string& name) {
  const auto& t = key_table();
  auto it = std::lower_bound(t.begin(), t.end(), name, [](const Key& k, const std::string& n) { return k.name < n; });
  return it != t.end() && it->name == name ? &*it : nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::uint64_t ExperimentConfig::dataset_seed() const { return seed_dataset.value_or(substream(seed, "dataset")); }
std::uint64_t ExperimentConfig::init_seed() const { return seed_init.value_or(substream(seed, "init")); }
std::uint64_t ExperimentConfig::augment_seed() const { return seed_augment.value_or(substream(seed, "augment")); }
std::uint64_t ExperimentConfig::batch_seed() const { return seed_batch.value_or(substream(seed, "batch")); }

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& k : key_table()) {
    // the output location does not change results
    if (k.name == "experiment.out_dir") continue;
    out += k.name + " = " + k.get(*this) + "\n";
  }
  return out;
}

Digest ExperimentConfig::hash() const { return sha256(canonical()); }

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.push_back(k.name);
  return out;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError("unknown key '" + key + "'");
  try {
    k->set(cfg, value);
  } catch (const ValueError& e) {
    throw ConfigError("bad value '" + value + "' for " + key + ": " + e.what);
  }
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& msg) { throw ConfigError(key + ": " + msg); };
  if (id.empty()) fail("experiment.id", "must not be empty");
  if (source != "synth" && source != "manifest") fail("dataset.source", "expected synth or manifest");
  if (source == "manifest" && manifest.empty()) fail("dataset.manifest", "required when dataset.source = manifest");
  auto wrap = [&](const std::string& key, auto&& f) {
    try {
      f();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      fail(key, e.what());
    }
  };
  if (source == "synth") wrap("dataset", [&] { synth.validate(); });
  wrap("features", [&] { features.validate(); });
  wrap("augment", [&] { augment.validate(); });
  if (augment.spec_augment) {
    const std::size_t frames = synth.frames, bands = source == "synth" ? synth.bands : features.mel_bins;
    if (augment.spec.max_time_width >= frames) fail("augment.max_time_width", "must be below the frame count");
    if (augment.spec.max_freq_width >= bands) fail("augment.max_freq_width", "must be below the band count");
  }
  if (augment.any_waveform_level() && !(source == "manifest" || synth.waveform)) {
    fail("augment", "waveform-level schemes need audio (dataset.waveform = true or a WAV manifest)");
  }
  for (const auto* name : {"student", "teacher"}) {
    const std::string& a = std::string(name) == "student" ? student_arch : teacher_arch;
    if (a != "sic" && a != "lic") fail(std::string("arch.") + name, "unknown preset '" + a + "' (sic, lic)");
  }
  for (const auto& [sec, t] : {std::pair<const char*, const TrainConfig*>{"train", &train}, {"teacher", &teacher_train}}) {
    if (t->epochs == 0) fail(std::string(sec) + ".epochs", "must be positive");
    if (t->batch_size == 0) fail(std::string(sec) + ".batch_size", "must be positive");
    if (!(t->lr_max > 0.0) || !(t->lr_min >= 0.0) || t->lr_min > t->lr_max) {
      fail(std::string(sec) + ".lr_max", "need 0 <= lr_min <= lr_max, lr_max > 0");
    }
    if (!(t->momentum >= 0.0 && t->momentum < 1.0)) fail(std::string(sec) + ".momentum", "must be in [0, 1)");
    if (!(t->restart_multiplier >= 1.0)) fail(std::string(sec) + ".restart_multiplier", "must be >= 1");
  }
  if (distill) wrap("distill", [&] { distill_cfg.validate(); });
  if (lth) wrap("lth", [&] { lth_cfg.validate(); });
  if (!(mtl_weight >= 0.0 && mtl_weight <= 1.0)) fail("fusion.mtl_weight", "must be in [0, 1]");
  if (ensemble_members == 0) fail("ensemble.members", "must be positive");
}

ExperimentConfig parse_config(const std::string& text, std::optional<std::uint64_t> seed_override) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(n) + ": expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.find('.') == std::string::npos) {
      throw ConfigError("line " + std::to_string(n) + ": key '" + key + "' has no section");
    }
    if (auto it = seen.find(key); it != seen.end()) {
      throw ConfigError("line " + std::to_string(n) + ": '" + key + "' already set on line " +
                        std::to_string(it->second));
    }
    seen[key] = n;
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(n) + ": " + e.what());
    }
  }
  if (seed_override) {
    cfg.seed = *seed_override;
  } else if (!seen.count("experiment.seed")) {
    throw ConfigError("experiment.seed is required (or pass --seed)");
  }
  cfg.augment.seed = cfg.augment_seed();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), seed_override);
}

}  // namespace al
