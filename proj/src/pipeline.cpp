#include "al/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <thread>

#include "al/augment.hpp"
#include "al/distill.hpp"
#include "al/error.hpp"
#include "al/fusion.hpp"
#include "al/ops.hpp"
#include "al/prune.hpp"
#include "al/quantize.hpp"
#include "al/rng.hpp"
#include "al/sizing.hpp"

namespace fs = std::filesystem;

namespace al {

namespace {

Tensor stack_scaled(const std::vector<Tensor>& raw, const FeatureStats& stats) {
  if (raw.empty()) return Tensor();
  Shape s = raw[0].shape();
  s.insert(s.begin(), raw.size());
  Tensor out(s);
  const std::size_t per = raw[0].numel();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i].shape() != raw[0].shape()) throw DimensionError("clips have differing feature shapes");
    Tensor x = scale_unit(raw[i], stats);
    std::copy(x.raw(), x.raw() + per, out.raw() + i * per);
  }
  return out;
}

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t k) {
  Tensor y({labels.size(), k});
  for (std::size_t i = 0; i < labels.size(); ++i) y[i * k + labels[i]] = 1.0f;
  return y;
}

std::array<std::size_t, 3> input_shape(const Tensor& stacked) {
  return {stacked.dim(1), stacked.dim(2), stacked.dim(3)};
}

FeatureConfig feature_config(const ExperimentConfig& cfg) {
  return cfg.source == "synth" ? synth_feature_config(cfg.synth.bands) : cfg.features;
}

ClassHierarchy config_hierarchy(const ExperimentConfig& cfg) { return synth_hierarchy(cfg.synth.n_classes); }

MetricsRow score(const Tensor& probs, const std::vector<std::size_t>& labels, const std::vector<std::string>& devices,
                 const std::set<std::string>& seen) {
  MetricsRow r;
  r.accuracy = accuracy(probs, labels);
  r.log_loss = log_loss(probs, labels);
  r.device_accuracy = grouped_accuracy(probs, labels, devices);
  std::vector<std::size_t> si, ui;
  for (std::size_t i = 0; i < labels.size(); ++i) (seen.count(devices[i]) ? si : ui).push_back(i);
  auto subset = [&](const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    std::vector<std::size_t> l;
    for (auto i : idx) l.push_back(labels[i]);
    return accuracy(gather_rows(probs, idx), l);
  };
  r.seen_accuracy = subset(si);
  r.unseen_accuracy = subset(ui);
  return r;
}

// Source, loss and optimizer settings for one model.
struct Setup {
  Model model;
  ParamStore theta0;
  std::unique_ptr<AugmentedSource> source;
  LossFn loss;
  SgdOptions options;
};

const char* role_name(ModelRole role) { return role == ModelRole::fine ? "student" : "coarse"; }

Setup make_setup(const ExperimentConfig& cfg, const PreparedData& data, ModelRole role, const Tensor* teacher_logits,
                 std::size_t member) {
  const bool fine = role == ModelRole::fine;
  const bool mtl = fine && cfg.fusion == FusionMode::mtl;
  const bool distill = fine && cfg.distill;
  if (distill && !teacher_logits) throw ParameterError("distillation needs teacher logits");
  const std::size_t k = fine ? data.ds.num_classes() : data.ds.hierarchy.coarse.size();
  ArchSpec spec = arch_preset(cfg.student_arch, input_shape(data.train_x), k);
  if (mtl) {
    spec.head.aux_classes = data.ds.hierarchy.coarse.size();
    spec.name += "-mtl";
  }
  if (!fine) spec.name += "-coarse";
  auto [model, theta0] = build_model(spec, substream(cfg.init_seed(), role_name(role), member));

  std::vector<std::uint64_t> keys;
  for (const auto& id : data.train_ids) keys.push_back(fnv1a(id));
  AugmentPlan plan = cfg.augment;
  plan.seed = substream(cfg.augment_seed(), role_name(role), member);
  auto src = std::make_unique<AugmentedSource>(data.train_x, fine ? data.train_y : data.train_coarse, plan, keys);
  if (mtl) src->set_aux_targets(data.train_coarse);
  if (distill) src->set_teacher_logits(*teacher_logits);
  if (plan.spec_correction) {
    // profiles of the scaled log-mel channel, per device
    std::map<std::string, std::vector<Tensor>> by_device;
    for (std::size_t i = 0; i < data.train_ids.size(); ++i) {
      by_device[data.train_devices[i]].push_back(gather_rows(data.train_x, std::vector<std::size_t>{i}).reshaped(
          {data.train_x.dim(1), data.train_x.dim(2), data.train_x.dim(3)}));
    }
    std::map<std::string, std::vector<float>> profiles;
    for (const auto& [dev, xs] : by_device) profiles[dev] = log_mel_profile(xs);
    DeviceCorrection c;
    c.reference = profiles.at(data.ds.devices.front());
    for (const auto& d : data.train_devices) c.device_profiles.push_back(profiles.at(d));
    src->set_correction(std::move(c));
  }

  LossFn loss;
  if (mtl) {
    const double w = cfg.mtl_weight;
    const DistillConfig dc = cfg.distill_cfg;
    loss = [w, dc, distill](Tape&, const ModelOutput& out, const Batch& b) {
      Var f = distill ? distill_loss(out.logits, *b.teacher_logits, b.targets, dc) : cross_entropy(out.logits, b.targets);
      Var c = cross_entropy(*out.aux_logits, *b.aux_targets);
      return add(scale(f, w), scale(c, 1.0 - w));
    };
  } else if (distill) {
    loss = distill_loss_fn(cfg.distill_cfg);
  } else {
    loss = cross_entropy_loss();
  }
  SgdOptions opts = sgd_options(cfg.train, data.train_x.dim(0), substream(cfg.batch_seed(), role_name(role), member));
  return Setup{model, theta0, std::move(src), std::move(loss), opts};
}

Checkpoint make_checkpoint(const Digest& hash, const TrainedModel& m, const std::vector<std::string>& labels,
                           const FeatureStats& stats, bool quantize, bool keep_theta0) {
  Checkpoint ck;
  ck.config_hash = hash;
  ck.arch = m.model.spec;
  ck.labels = labels;
  ck.stats = stats;
  ck.mask = m.mask;
  if (keep_theta0) ck.theta0 = snapshot_params(m.theta0);
  if (quantize) {
    ck.quantized = quantize_weights(m.params, m.mask ? &*m.mask : nullptr);
  } else {
    ck.params = snapshot_params(m.params);
  }
  return ck;
}

double dense_float_kb(const Model& m) { return size_kb(m.num_params(), 4); }

Tensor fuse(const ExperimentConfig& cfg, const ClassHierarchy& h, const Tensor& coarse, const Tensor& fine) {
  Tensor f = fuse_scores(coarse, fine, h);
  return cfg.renormalize_fused ? renormalize_rows(f) : f;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt_fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

std::size_t thread_budget() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("AL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) n = static_cast<std::size_t>(v);
  }
  return n;
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData d;
  if (cfg.source == "synth") {
    d.ds = synth_generate(cfg.synth, cfg.dataset_seed());
  } else {
    d.ds = load_manifest(cfg.manifest, config_hierarchy(cfg), cfg.features);
  }
  const auto train = d.ds.indices(Split::train);
  if (train.empty()) throw InputError("dataset has no training clips");
  d.seen_devices = train_devices(d.ds);

  std::vector<Tensor> raw;
  std::vector<std::size_t> labels;
  for (auto i : train) {
    d.train_ids.push_back(d.ds.clips[i].id);
    d.train_devices.push_back(d.ds.clips[i].device);
    raw.push_back(d.ds.features[i]);
    labels.push_back(d.ds.clips[i].label);
  }
  d.stats = compute_stats(raw);

  if (cfg.augment.any_waveform_level()) {
    if (d.ds.audio.size() != d.ds.size()) throw InputError("waveform augmentation needs audio for every clip");
    const FeatureConfig fc = feature_config(cfg);
    for (std::size_t c = 1; c <= cfg.waveform_copies; ++c) {
      for (auto i : train) {
        const auto& clip = d.ds.clips[i];
        Rng r = make_rng(cfg.augment_seed(), "waveform-partner", fnv1a(clip.id) + c);
        const std::size_t partner = train[uniform_index(r, train.size())];
        AudioClip a = apply_waveform_plan(d.ds.audio[i], cfg.augment, fnv1a(clip.id) + c, &d.ds.audio[partner]);
        d.train_ids.push_back(clip.id + "~w" + std::to_string(c));
        d.train_devices.push_back(clip.device);
        raw.push_back(extract_raw(a, fc));
        labels.push_back(clip.label);
      }
    }
  }
  d.train_x = stack_scaled(raw, d.stats);
  d.train_y = one_hot(labels, d.ds.num_classes());
  d.train_coarse = coarse_targets(d.train_y, d.ds.hierarchy);

  d.test_idx = d.ds.indices(Split::test);
  if (d.test_idx.empty()) throw InputError("dataset has no test clips");
  for (auto i : d.test_idx) {
    d.test_ids.push_back(d.ds.clips[i].id);
    d.test_devices.push_back(d.ds.clips[i].device);
    d.test_labels.push_back(d.ds.clips[i].label);
  }
  d.test_x = stack_features(d.ds, d.test_idx, d.stats);
  return d;
}

SgdOptions sgd_options(const TrainConfig& t, std::size_t train_size, std::uint64_t seed) {
  SgdOptions o;
  o.epochs = t.epochs;
  o.batch_size = t.batch_size;
  o.momentum = t.momentum;
  o.clip_norm = t.clip_norm;
  o.seed = seed;
  o.schedule.lr_max = t.lr_max;
  o.schedule.lr_min = t.lr_min;
  o.schedule.restart_multiplier = t.restart_multiplier;
  const std::size_t steps_per_epoch = (train_size + t.batch_size - 1) / t.batch_size;
  o.schedule.cycle_length = t.cycle_epochs * steps_per_epoch;
  o.select_cycle_end = t.select_cycle_end;
  return o;
}

std::vector<RoundSnapshot> train_student(const ExperimentConfig& cfg, const PreparedData& data, ModelRole role,
                                         const Tensor* teacher_logits, std::size_t member) {
  Setup s = make_setup(cfg, data, role, teacher_logits, member);
  std::vector<RoundSnapshot> out;
  if (!cfg.lth) {
    TrainResult r = sgd_train(s.model, snapshot_params(s.theta0), *s.source, s.loss, s.options);
    out.push_back({1, TrainedModel{s.model, std::move(r.params), s.theta0, std::nullopt, 1.0}});
    return out;
  }
  LthSearch search(s.model, snapshot_params(s.theta0), cfg.lth_cfg);
  while (!search.done()) {
    search.train(*s.source, s.loss, s.options);
    out.push_back({search.t(), TrainedModel{s.model, snapshot_params(search.trained()), s.theta0, search.mask(),
                                            weights_remaining(search.mask())}});
    search.prune();
  }
  return out;
}

TrainedModel train_teacher(const ExperimentConfig& cfg, const PreparedData& data) {
  ArchSpec spec = arch_preset(cfg.teacher_arch, input_shape(data.train_x), data.ds.num_classes());
  spec.name += "-teacher";
  auto [model, theta0] = build_model(spec, substream(cfg.init_seed(), "teacher"));
  std::vector<std::uint64_t> keys;
  for (const auto& id : data.train_ids) keys.push_back(fnv1a(id));
  AugmentPlan plan = cfg.augment;
  plan.seed = substream(cfg.augment_seed(), "teacher");
  plan.spec_correction = false;
  AugmentedSource src(data.train_x, data.train_y, plan, keys);
  SgdOptions opts = sgd_options(cfg.teacher_train, data.train_x.dim(0), substream(cfg.batch_seed(), "teacher"));
  TrainResult r = sgd_train(model, snapshot_params(theta0), src, cross_entropy_loss(), opts);
  return TrainedModel{model, std::move(r.params), theta0, std::nullopt, 1.0};
}

ModelProbs model_probs(const Checkpoint& ck, const Tensor& inputs, bool quantize_activations) {
  Model m = make_model(ck.arch);
  Predictions p;
  if (ck.quantized) {
    QuantForwardOptions o;
    o.quantize_activations = quantize_activations;
    p = quantized_forward(m, *ck.quantized, inputs, o);
  } else {
    ForwardOptions o;
    o.mask = ck.mask ? &*ck.mask : nullptr;
    p = predict(m, *ck.params, inputs, o);
  }
  ModelProbs out{softmax_rows(p.logits), std::nullopt};
  if (p.aux_logits) out.aux = softmax_rows(*p.aux_logits);
  return out;
}

MetricsRow score_row(const PreparedData& data, const Tensor& probs) {
  return score(probs, data.test_labels, data.test_devices, data.seen_devices);
}

RunOutput run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, bool dump_probs) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);
  fs::remove(fs::path(out_dir) / "FAILED");
  const Digest hash = cfg.hash();
  {
    std::ofstream c(fs::path(out_dir) / "config.txt");
    c << cfg.canonical();
    std::ofstream h(fs::path(out_dir) / "config.sha256");
    h << to_hex(hash) << "\n";
  }
  RunOutput out;
  out.report_path = (fs::path(out_dir) / "report.csv").string();
  auto flush = [&] { write_report(out.report_path, out.rows); };
  auto save = [&](const Checkpoint& ck, const std::string& name) {
    save_checkpoint((fs::path(out_dir) / name).string(), ck);
    return name;
  };

  const PreparedData data = prepare_data(cfg);
  const auto& h = data.ds.hierarchy;

  Tensor teacher_logits;
  if (cfg.distill) {
    TrainedModel teacher = train_teacher(cfg, data);
    Checkpoint ck = make_checkpoint(hash, teacher, h.fine, data.stats, false, false);
    MetricsRow r = score_row(data, model_probs(ck, data.test_x).main);
    r.experiment = cfg.id;
    r.system = cfg.teacher_arch + "/teacher";
    r.checkpoints = save(ck, "teacher.alck");
    r.dtype = ck.dtype();
    r.nonzero = ck.nonzero();
    r.size_kb = ck.size_kb();
    r.compression = compression_rate(dense_float_kb(teacher.model), r.size_kb);
    r.wall_time_s = seconds_since(t0);
    out.rows.push_back(r);
    flush();
    TeacherCache cache = TeacherCache::build(teacher.model, teacher.params, data.train_x, data.train_ids);
    teacher_logits = cache.lookup(data.train_ids);
  }
  const Tensor* tl = cfg.distill ? &teacher_logits : nullptr;

  std::string desc = cfg.student_arch;
  if (cfg.augment.any_feature_level() || cfg.augment.any_waveform_level()) desc += "+aug";
  if (cfg.distill) desc += "+tsl";
  if (cfg.fusion == FusionMode::mtl) desc += "+mtl";

  const bool system_row = cfg.quantize || cfg.fusion == FusionMode::two_stage || cfg.ensemble_members > 1;
  std::vector<Tensor> member_probs;
  std::vector<std::string> files;
  std::size_t system_nonzero = 0;
  double system_kb = 0.0, system_dense_kb = 0.0, system_wr = 1.0;

  for (std::size_t m = 0; m < cfg.ensemble_members; ++m) {
    const std::string suffix = cfg.ensemble_members > 1 ? "-m" + std::to_string(m) : "";
    auto rounds = train_student(cfg, data, ModelRole::fine, tl, m);
    for (const auto& rs : rounds) {
      Checkpoint ck = make_checkpoint(hash, rs.model, h.fine, data.stats, false, cfg.lth);
      MetricsRow r = score_row(data, model_probs(ck, data.test_x).main);
      r.experiment = cfg.id;
      r.system = desc;
      std::string name = "student" + suffix;
      if (cfg.lth) {
        r.system += "+lth(t=" + std::to_string(rs.t) + ",wr=" + fmt_fixed(rs.model.weights_remaining, 4) + "," +
                    to_string(cfg.lth_cfg.strategy) + ")";
        name += "-t" + std::to_string(rs.t);
      }
      if (!suffix.empty()) r.system += "/member" + std::to_string(m);
      r.checkpoints = save(ck, name + ".alck");
      r.dtype = ck.dtype();
      r.nonzero = ck.nonzero();
      r.size_kb = ck.size_kb();
      r.compression = compression_rate(dense_float_kb(rs.model.model), r.size_kb);
      r.weights_remaining = rs.model.weights_remaining;
      r.wall_time_s = seconds_since(t0);
      out.rows.push_back(r);
      flush();
      if (dump_probs && !system_row && &rs == &rounds.back() && m == 0) {
        write_probs((fs::path(out_dir) / "probs.csv").string(), data.test_ids, data.test_labels,
                    model_probs(ck, data.test_x).main);
      }
    }
    if (!system_row) continue;

    const TrainedModel& fine = rounds.back().model;
    if (m == 0) system_wr = fine.weights_remaining;
    Checkpoint fck = make_checkpoint(hash, fine, h.fine, data.stats, cfg.quantize, false);
    files.push_back(save(fck, "system" + suffix + "-fine.alck"));
    system_kb += fck.size_kb();
    system_nonzero += fck.nonzero();
    system_dense_kb += dense_float_kb(fine.model);
    ModelProbs fp = model_probs(fck, data.test_x, cfg.quantize_activations);
    Tensor probs = fp.main;
    if (cfg.fusion == FusionMode::two_stage) {
      auto crounds = train_student(cfg, data, ModelRole::coarse, nullptr, m);
      const TrainedModel& coarse = crounds.back().model;
      Checkpoint cck = make_checkpoint(hash, coarse, h.coarse, data.stats, cfg.quantize, false);
      files.push_back(save(cck, "system" + suffix + "-coarse.alck"));
      system_kb += cck.size_kb();
      system_nonzero += cck.nonzero();
      system_dense_kb += dense_float_kb(coarse.model);
      probs = fuse(cfg, h, model_probs(cck, data.test_x, cfg.quantize_activations).main, fp.main);
    } else if (cfg.fusion == FusionMode::mtl) {
      probs = fuse(cfg, h, *fp.aux, fp.main);
    }
    member_probs.push_back(probs);
  }

  if (system_row) {
    Tensor probs = member_probs.size() == 1 ? member_probs[0] : ensemble_average(member_probs);
    MetricsRow r = score_row(data, probs);
    r.experiment = cfg.id;
    r.system = desc;
    if (cfg.lth) {
      r.system += "+lth(T=" + std::to_string(cfg.lth_cfg.iterations) + ",wr=" + fmt_fixed(system_wr, 4) + "," +
                  to_string(cfg.lth_cfg.strategy) + ")";
    }
    if (cfg.quantize) r.system += "+int8";
    if (cfg.fusion == FusionMode::two_stage) r.system += "+two_stage";
    if (cfg.ensemble_members > 1) r.system += "+ensemble" + std::to_string(cfg.ensemble_members);
    for (const auto& f : files) r.checkpoints += (r.checkpoints.empty() ? "" : ";") + f;
    r.dtype = cfg.quantize ? "int8" : "float32";
    r.nonzero = system_nonzero;
    r.size_kb = system_kb;
    r.compression = compression_rate(system_dense_kb, system_kb);
    r.weights_remaining = system_wr;
    r.wall_time_s = seconds_since(t0);
    out.rows.push_back(r);
    flush();
    if (dump_probs) write_probs((fs::path(out_dir) / "probs.csv").string(), data.test_ids, data.test_labels, probs);
  }
  return out;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::vector<MaskStrategy>& strategies,
                                const std::vector<double>& rates, const std::string& out_dir, std::size_t threads) {
  if (strategies.empty() || rates.empty()) throw ConfigError("sweep needs at least one strategy and one rate");
  fs::create_directories(out_dir);
  const PreparedData data = prepare_data(cfg);
  Tensor teacher_logits;
  if (cfg.distill) {
    TrainedModel teacher = train_teacher(cfg, data);
    teacher_logits = TeacherCache::build(teacher.model, teacher.params, data.train_x, data.train_ids).lookup(data.train_ids);
  }
  Setup s = make_setup(cfg, data, ModelRole::fine, cfg.distill ? &teacher_logits : nullptr, 0);
  LthConfig base_cfg = cfg.lth_cfg;
  LthSearch base(s.model, snapshot_params(s.theta0), base_cfg);
  base.train(*s.source, s.loss, s.options);

  auto evaluate = [&](const LthSearch& search) {
    ForwardOptions o;
    o.mask = &search.mask();
    Tensor probs = softmax_rows(predict(search.model(), search.trained(), data.test_x, o).logits);
    return std::pair{accuracy(probs, data.test_labels), log_loss(probs, data.test_labels)};
  };
  const auto [base_acc, base_ll] = evaluate(base);

  struct Cell {
    MaskStrategy strategy;
    double rate;
  };
  std::vector<Cell> cells;
  for (auto st : strategies) {
    for (double r : rates) cells.push_back({st, r});
  }
  std::vector<SweepRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      SweepRow& row = rows[i];
      row.strategy = to_string(cells[i].strategy);
      row.rate = cells[i].rate;
      row.iterations = base_cfg.iterations;
      row.baseline_accuracy = base_acc;
      row.baseline_log_loss = base_ll;
      try {
        LthConfig c = base_cfg;
        c.strategy = cells[i].strategy;
        c.rate = cells[i].rate;
        LthSearch search = base.branch(c);
        while (!search.done()) search.step(*s.source, s.loss, s.options);
        row.weights_remaining = weights_remaining(search.mask());
        std::tie(row.accuracy, row.log_loss) = evaluate(search);
      } catch (const std::exception& e) {
        row.status = std::string("failed: ") + e.what();
        std::replace(row.status.begin(), row.status.end(), ',', ';');
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  write_sweep((fs::path(out_dir) / "sweep.csv").string(), rows);
  return rows;
}

void write_sweep(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << std::setprecision(17);
  out << "strategy,rate,iterations,weights_remaining,accuracy,log_loss,baseline_accuracy,baseline_log_loss,status\n";
  for (const auto& r : rows) {
    out << r.strategy << "," << r.rate << "," << r.iterations << "," << r.weights_remaining << "," << r.accuracy << ","
        << r.log_loss << "," << r.baseline_accuracy << "," << r.baseline_log_loss << "," << r.status << "\n";
  }
}

MetricsRow eval_checkpoint(const EvalArgs& args, const SceneDataset& ds) {
  Checkpoint ck = load_checkpoint(args.checkpoint);
  if (ck.arch.head.num_classes != ds.num_classes()) {
    throw ParameterError("class-count mismatch: checkpoint has " + std::to_string(ck.arch.head.num_classes) +
                         " classes, dataset has " + std::to_string(ds.num_classes()));
  }
  if (!ck.labels.empty() && ck.labels != ds.hierarchy.fine) throw ParameterError("checkpoint labels differ from dataset");
  const auto idx = ds.indices(Split::test);
  if (idx.empty()) throw InputError("dataset has no test clips");
  FeatureStats stats = ck.stats ? *ck.stats : dataset_stats(ds, ds.indices(Split::train));
  const Tensor x = stack_features(ds, idx, stats);

  ModelProbs fp = model_probs(ck, x, args.quantize_activations);
  Tensor probs = fp.main;
  double kb = ck.size_kb();
  std::size_t nonzero = ck.nonzero();
  std::string files = fs::path(args.checkpoint).filename().string();
  ExperimentConfig fusion_cfg;
  fusion_cfg.renormalize_fused = args.renormalize;
  if (args.fusion == FusionMode::two_stage) {
    if (!args.coarse_checkpoint) throw ConfigError("two-stage fusion needs --coarse CHECKPOINT");
    Checkpoint cck = load_checkpoint(*args.coarse_checkpoint);
    if (cck.arch.head.num_classes != ds.hierarchy.coarse.size()) {
      throw ParameterError("class-count mismatch: coarse checkpoint has " + std::to_string(cck.arch.head.num_classes) +
                           " classes, hierarchy has " + std::to_string(ds.hierarchy.coarse.size()));
    }
    probs = fuse(fusion_cfg, ds.hierarchy, model_probs(cck, x, args.quantize_activations).main, fp.main);
    kb += cck.size_kb();
    nonzero += cck.nonzero();
    files += ";" + fs::path(*args.coarse_checkpoint).filename().string();
  } else if (args.fusion == FusionMode::mtl) {
    if (!fp.aux) throw ParameterError("MTL fusion needs a checkpoint with a coarse head");
    probs = fuse(fusion_cfg, ds.hierarchy, *fp.aux, fp.main);
  }

  std::vector<std::size_t> labels;
  std::vector<std::string> ids, devices;
  for (auto i : idx) {
    labels.push_back(ds.clips[i].label);
    ids.push_back(ds.clips[i].id);
    devices.push_back(ds.clips[i].device);
  }
  std::set<std::string> seen = train_devices(ds);
  if (seen.empty()) seen.insert(ds.devices.begin(), ds.devices.end());
  MetricsRow r = score(probs, labels, devices, seen);
  r.experiment = "eval";
  r.system = ck.arch.name + (args.fusion == FusionMode::none ? "" : "+" + to_string(args.fusion));
  r.checkpoints = files;
  r.dtype = ck.dtype();
  r.nonzero = nonzero;
  r.size_kb = kb;
  r.weights_remaining = ck.mask ? weights_remaining(*ck.mask) : 1.0;
  r.compression = compression_rate(dense_float_kb(make_model(ck.arch)), kb);
  if (args.dump_probs) write_probs(*args.dump_probs, ids, labels, probs);
  return r;
}

std::string inspect_checkpoint(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  Model m = make_model(ck.arch);
  const ParamStore params = ck.quantized ? dequantize_params(*ck.quantized) : *ck.params;
  const PruneMask* mask = ck.mask ? &*ck.mask : nullptr;
  std::ostringstream o;
  o << "checkpoint " << path << "\n";
  o << "arch        " << ck.arch.name << " input " << ck.arch.input_shape[0] << "x" << ck.arch.input_shape[1] << "x"
    << ck.arch.input_shape[2] << ", " << ck.arch.head.num_classes << " classes";
  if (ck.arch.head.aux_classes) o << " + " << *ck.arch.head.aux_classes << " aux";
  o << "\n";
  o << "config      " << to_hex(ck.config_hash) << "\n";
  o << "dtype       " << ck.dtype() << "\n";
  o << "parameters  " << m.num_params() << " (" << m.prunable_names().size() << " prunable tensors)\n";
  o << "nonzero     " << ck.nonzero() << "\n";
  o << "size        " << fmt_fixed(ck.size_kb(), 3) << " KB (dense float32 " << fmt_fixed(dense_float_kb(m), 3)
    << " KB, x" << fmt_fixed(compression_rate(dense_float_kb(m), ck.size_kb()), 2) << ")\n";
  if (mask) {
    o << "remaining   " << fmt_fixed(100.0 * weights_remaining(*mask), 3) << "% of prunable weights ("
      << to_string(mask->strategy) << ", " << mask->rounds << " rounds)\n";
  }
  o << "\nlayer                               kind   total      nonzero    min         max\n";
  for (const auto& hst : layer_weight_histogram(m, params, mask)) {
    o << std::left << std::setw(36) << hst.name << std::setw(7) << (hst.kind == LayerKind::conv ? "conv" : "dense")
      << std::setw(11) << hst.total << std::setw(11) << hst.surviving << std::setw(12) << fmt_fixed(hst.min, 5)
      << fmt_fixed(hst.max, 5) << "\n";
    o << "  ";
    for (auto c : hst.counts) o << c << " ";
    o << "\n";
  }
  return o.str();
}

}  // namespace al
