#include "al/prune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "al/error.hpp"

namespace al {

PruneMask initial_mask(const Model& model) {
  PruneMask mask;
  for (const auto& p : model.params) {
    if (p.prunable) mask.add_ones(p.name, p.shape);
  }
  return mask;
}

namespace {

void check_rate(double rate) {
  if (!(rate > 0.0 && rate < 1.0)) {
    throw ParameterError("prune rate must lie in (0, 1), got " + std::to_string(rate));
  }
}

struct Candidate {
  double score;
  std::size_t layer;
  std::size_t index;
};

bool prune_first(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score < b.score;
  if (a.layer != b.layer) return a.layer < b.layer;
  return a.index < b.index;
}

bool keep_first(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.layer != b.layer) return a.layer < b.layer;
  return a.index < b.index;
}

double score_of(ScoreFn fn, float final_value, float init_value) {
  switch (fn) {
    case ScoreFn::final_magnitude: return std::fabs(static_cast<double>(final_value));
    case ScoreFn::init_magnitude: return std::fabs(static_cast<double>(init_value));
    case ScoreFn::magnitude_increase:
      return std::fabs(static_cast<double>(final_value)) - std::fabs(static_cast<double>(init_value));
  }
  return 0.0;
}

std::size_t round_count(double x) { return static_cast<std::size_t>(std::llround(x)); }

}  // namespace

PruneMask compute_mask(const ParamStore& final_params, const PruneMask& prev, const MaskOptions& options,
                       std::vector<std::string>* warnings) {
  check_rate(options.rate);
  const bool needs_init = options.score != ScoreFn::final_magnitude;
  if (needs_init && options.theta0 == nullptr) {
    throw ParameterError("score function " + to_string(options.score) + " needs the initial weights");
  }

  PruneMask next = prev;
  next.strategy = options.strategy;
  next.rate = options.rate;
  next.rounds = prev.rounds + 1;

  // candidates per layer, skipping layers that cannot lose a weight
  std::vector<std::vector<Candidate>> per_layer(prev.size());
  for (std::size_t l = 0; l < prev.size(); ++l) {
    const auto& entry = prev.entries()[l];
    const Tensor& w = final_params.at(entry.name);
    if (w.shape() != entry.shape) {
      throw DimensionError("mask " + entry.name + " has shape " + shape_str(entry.shape) + ", params " +
                           shape_str(w.shape()));
    }
    const Tensor* w0 = nullptr;
    if (needs_init) {
      w0 = &options.theta0->at(entry.name);
      if (w0->shape() != entry.shape) throw DimensionError("theta0 shape mismatch for " + entry.name);
    }
    auto& cands = per_layer[l];
    for (std::size_t i = 0; i < entry.keep.size(); ++i) {
      if (!entry.keep[i]) continue;
      cands.push_back({score_of(options.score, w[i], w0 ? (*w0)[i] : 0.0f), l, i});
    }
    if (cands.size() < 2) {
      if (warnings) {
        warnings->push_back("layer " + entry.name + " has " + std::to_string(cands.size()) +
                            " surviving weights; skipped");
      }
      cands.clear();
    }
  }

  auto drop = [&](const Candidate& c) { next.at(prev.entries()[c.layer].name).keep[c.index] = 0; };

  switch (options.strategy) {
    case MaskStrategy::small_weights:
      for (auto& cands : per_layer) {
        if (cands.empty()) continue;
        std::size_t k = std::min(round_count(options.rate * cands.size()), cands.size() - 1);
        std::sort(cands.begin(), cands.end(), prune_first);
        for (std::size_t i = 0; i < k; ++i) drop(cands[i]);
      }
      break;
    case MaskStrategy::large_final:
      for (auto& cands : per_layer) {
        if (cands.empty()) continue;
        std::size_t keep = std::max<std::size_t>(1, round_count((1.0 - options.rate) * cands.size()));
        std::sort(cands.begin(), cands.end(), keep_first);
        for (std::size_t i = keep; i < cands.size(); ++i) drop(cands[i]);
      }
      break;
    case MaskStrategy::global_small_weights: {
      std::vector<Candidate> all;
      for (const auto& cands : per_layer) all.insert(all.end(), cands.begin(), cands.end());
      if (all.empty()) break;
      std::size_t k = std::min(round_count(options.rate * all.size()), all.size() - 1);
      if (k == 0) break;
      // deterministic k-th element selection; order among the pruned set is irrelevant
      std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k - 1), all.end(), prune_first);
      const Candidate pivot = all[k - 1];
      for (const auto& c : all) {
        if (!prune_first(pivot, c)) drop(c);
      }
      break;
    }
  }
  return next;
}

ParamStore rewind(const ParamStore& params, const ParamStore& theta0, const PruneMask& mask) {
  if (params.size() != theta0.size()) {
    throw ParameterError("rewind: params have " + std::to_string(params.size()) + " tensors, theta0 has " +
                         std::to_string(theta0.size()));
  }
  ParamStore out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.names()[i];
    if (!theta0.contains(name)) throw ParameterError("rewind: theta0 has no tensor " + name);
    const Tensor& init = theta0.at(name);
    if (init.shape() != params.tensor(i).shape()) {
      throw DimensionError("rewind: shape mismatch for " + name + ": " + shape_str(params.tensor(i).shape()) +
                           " vs " + shape_str(init.shape()));
    }
    Tensor t(init.shape(), std::vector<float>(init.data().begin(), init.data().end()));
    if (mask.contains(name)) {
      const auto& e = mask.at(name);
      if (e.shape != init.shape()) throw DimensionError("rewind: mask shape mismatch for " + name);
      for (std::size_t j = 0; j < e.keep.size(); ++j) {
        if (!e.keep[j]) t[j] = 0.0f;
      }
    }
    out.add(name, std::move(t));
  }
  for (const auto& e : mask.entries()) {
    if (!params.contains(e.name)) throw ParameterError("rewind: mask names unknown tensor " + e.name);
  }
  return out;
}

double weights_remaining(const PruneMask& mask) {
  std::size_t total = mask.total_prunable();
  if (total == 0) return 1.0;
  return static_cast<double>(mask.total_surviving()) / static_cast<double>(total);
}

void LthConfig::validate() const {
  if (iterations < 1) throw ParameterError("LTH iterations must be >= 1");
  if (iterations > 1) check_rate(rate);
}

LthSearch::LthSearch(Model model, ParamStore theta0, LthConfig config)
    : model_(std::move(model)), config_(config), theta0_(std::move(theta0)) {
  config_.validate();
  for (const auto& p : model_.params) {
    if (!theta0_.contains(p.name)) throw ParameterError("theta0 lacks parameter " + p.name);
    if (theta0_.at(p.name).shape() != p.shape) throw DimensionError("theta0 shape mismatch for " + p.name);
  }
  candidate_ = snapshot_params(theta0_);
  mask_ = initial_mask(model_);
}

void LthSearch::train(const BatchSource& data, const LossFn& loss, const SgdOptions& options) {
  if (t_ >= config_.iterations) throw ParameterError("LTH search already finished all iterations");
  if (!pruned_since_train_) throw ParameterError("LTH search: prune() must run between training rounds");
  LthIteration it;
  it.t = t_ + 1;
  it.weights_remaining = weights_remaining(mask_);
  try {
    TrainResult r = sgd_train(model_, snapshot_params(candidate_), data, loss, options, &mask_);
    it.epochs = std::move(r.epochs);
    trained_ = std::move(r.params);
  } catch (const NumericError& e) {
    throw NumericError("LTH iteration " + std::to_string(it.t) + "/" + std::to_string(config_.iterations) +
                       ": " + e.what());
  }
  t_ = it.t;
  pruned_since_train_ = false;
  history_.push_back(std::move(it));
}

void LthSearch::prune() {
  if (!trained_) throw ParameterError("LTH search: nothing trained yet");
  if (pruned_since_train_) return;
  pruned_since_train_ = true;
  if (t_ >= config_.iterations) return;
  MaskOptions opts{config_.strategy, config_.rate, config_.score, &theta0_};
  std::vector<std::string> warnings;
  mask_ = compute_mask(*trained_, mask_, opts, &warnings);
  candidate_ = rewind(*trained_, theta0_, mask_);
  auto& log = history_.back().warnings;
  log.insert(log.end(), warnings.begin(), warnings.end());
}

void LthSearch::step(const BatchSource& data, const LossFn& loss, const SgdOptions& options) {
  if (!pruned_since_train_) prune();
  if (done()) return;
  train(data, loss, options);
  prune();
}

LthSearch LthSearch::branch(const LthConfig& config) const {
  if (mask_.rounds != 0) throw ParameterError("LTH search: cannot branch after a mask round");
  config.validate();
  if (config.iterations < t_) throw ParameterError("LTH search: branch has fewer iterations than already run");
  LthSearch copy = *this;
  copy.config_ = config;
  return copy;
}

const ParamStore& LthSearch::trained() const {
  if (!trained_) throw ParameterError("LTH search: nothing trained yet");
  return *trained_;
}

LthResult lth_search(const ArchSpec& spec, const BatchSource& data, const LthConfig& config, const LossFn& loss,
                     const SgdOptions& options, std::uint64_t init_seed) {
  config.validate();
  if (options.epochs < 1) throw ParameterError("epochs must be >= 1");
  auto [model, theta0] = build_model(spec, init_seed);
  LthSearch search(model, snapshot_params(theta0), config);
  while (!search.done()) search.step(data, loss, options);
  return LthResult{search.model(), snapshot_params(search.trained()), search.mask(), search.theta0(),
                   search.history()};
}

std::vector<LayerHistogram> layer_weight_histogram(const Model& model, const ParamStore& params,
                                                   const PruneMask* mask, bool include_conv) {
  std::vector<LayerHistogram> out;
  for (const auto& p : model.params) {
    if (p.role != ParamRole::kernel) continue;
    if (p.kind == LayerKind::conv && !include_conv) continue;
    const Tensor& w = params.at(p.name);
    const std::vector<std::uint8_t>* keep = nullptr;
    if (mask && mask->contains(p.name)) keep = &mask->at(p.name).keep;
    LayerHistogram h;
    h.name = p.name;
    h.kind = p.kind;
    h.total = w.numel();
    std::vector<float> vals;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      if (keep && !(*keep)[i]) continue;
      if (w[i] != 0.0f) vals.push_back(w[i]);
    }
    h.surviving = vals.size();
    if (!vals.empty()) {
      auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
      h.min = *lo;
      h.max = *hi;
      double width = (h.max - h.min) / static_cast<double>(kHistogramBins);
      for (float v : vals) {
        std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - h.min) / width) : 0;
        h.counts[std::min(b, kHistogramBins - 1)] += 1;
      }
    }
    out.push_back(h);
  }
  return out;
}

}  // namespace al
