#include "al/nn.hpp"

#include <json.hpp>

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <type_traits>

#include "al/ops.hpp"
#include "al/rng.hpp"

namespace al {

// ---------------------------------------------------------------------------
// ArchSpec
// ---------------------------------------------------------------------------

void ArchSpec::validate() const {
  for (std::size_t i = 0; i < 3; ++i) {
    if (input_shape[i] == 0) throw ParameterError("arch.input_shape[" + std::to_string(i) + "] must be positive");
  }
  if (stem.filters > 0) {
    if (stem.kernel == 0) throw ParameterError("arch.stem.kernel must be positive");
    if (stem.stride == 0) throw ParameterError("arch.stem.stride must be positive");
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string p = "arch.blocks[" + std::to_string(i) + "].";
    if (b.branch1x1 == 0) throw ParameterError(p + "branch1x1 must be positive");
    if (b.branch3x3 == 0) throw ParameterError(p + "branch3x3 must be positive");
    if (b.branch5x5 == 0) throw ParameterError(p + "branch5x5 must be positive");
    if (b.pool_proj == 0) throw ParameterError(p + "pool_proj must be positive");
  }
  if (head.num_classes == 0) throw ParameterError("arch.head.num_classes must be positive");
  if (head.aux_classes && *head.aux_classes == 0) throw ParameterError("arch.head.aux_classes must be positive");
}

ArchSpec sic_preset(std::array<std::size_t, 3> input_shape, std::size_t num_classes) {
  ArchSpec s;
  s.name = "sic";
  s.input_shape = input_shape;
  s.stem = StemSpec{24, 3, 2, true};
  s.blocks = {
      InceptionBlockSpec{16, 32, 16, 16, true},
      InceptionBlockSpec{32, 56, 32, 32, false},
  };
  s.head.num_classes = num_classes;
  return s;
}

ArchSpec lic_preset(std::array<std::size_t, 3> input_shape, std::size_t num_classes) {
  ArchSpec s;
  s.name = "lic";
  s.input_shape = input_shape;
  s.stem = StemSpec{32, 3, 2, true};
  s.blocks = {
      InceptionBlockSpec{16, 48, 24, 16, true},
      InceptionBlockSpec{48, 96, 48, 48, true},
      InceptionBlockSpec{64, 112, 56, 64, false},
  };
  s.head.num_classes = num_classes;
  return s;
}

ArchSpec arch_preset(const std::string& name, std::array<std::size_t, 3> input_shape, std::size_t num_classes) {
  if (name == "sic") return sic_preset(input_shape, num_classes);
  if (name == "lic") return lic_preset(input_shape, num_classes);
  throw ParameterError("unknown architecture preset '" + name + "'");
}

std::string arch_to_json(const ArchSpec& spec) {
  nlohmann::json j;
  j["name"] = spec.name;
  j["input_shape"] = spec.input_shape;
  j["stem"] = {{"filters", spec.stem.filters},
               {"kernel", spec.stem.kernel},
               {"stride", spec.stem.stride},
               {"pool_after", spec.stem.pool_after}};
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : spec.blocks) {
    blocks.push_back({{"branch1x1", b.branch1x1},
                      {"branch3x3", b.branch3x3},
                      {"branch5x5", b.branch5x5},
                      {"pool_proj", b.pool_proj},
                      {"pool_after", b.pool_after}});
  }
  j["blocks"] = blocks;
  j["head"] = {{"num_classes", spec.head.num_classes}};
  if (spec.head.aux_classes) j["head"]["aux_classes"] = *spec.head.aux_classes;
  return j.dump();
}

ArchSpec arch_from_json(const std::string& text) {
  ArchSpec s;
  try {
    auto j = nlohmann::json::parse(text);
    s.name = j.at("name").get<std::string>();
    s.input_shape = j.at("input_shape").get<std::array<std::size_t, 3>>();
    const auto& st = j.at("stem");
    s.stem = StemSpec{st.at("filters").get<std::size_t>(), st.at("kernel").get<std::size_t>(),
                      st.at("stride").get<std::size_t>(), st.at("pool_after").get<bool>()};
    for (const auto& b : j.at("blocks")) {
      s.blocks.push_back(InceptionBlockSpec{b.at("branch1x1").get<std::size_t>(), b.at("branch3x3").get<std::size_t>(),
                                            b.at("branch5x5").get<std::size_t>(), b.at("pool_proj").get<std::size_t>(),
                                            b.at("pool_after").get<bool>()});
    }
    s.head.num_classes = j.at("head").at("num_classes").get<std::size_t>();
    if (j.at("head").contains("aux_classes")) s.head.aux_classes = j.at("head").at("aux_classes").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid architecture blob: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

void ParamStore::add(std::string name, Tensor value) {
  if (contains(name)) throw ParameterError("duplicate parameter name " + name);
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParameterError("unknown parameter " + name);
  return tensors_[it->second];
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParameterError("unknown parameter " + name);
  return tensors_[it->second];
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

Digest ParamStore::digest() const {
  Sha256 h;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    h.update(names_[i]);
    for (std::size_t d : tensors_[i].shape()) {
      const std::uint64_t d64 = d;
      h.update(&d64, sizeof d64);
    }
    h.update_span(tensors_[i].data());
  }
  return h.finish();
}

ParamStore snapshot_params(const ParamStore& params) {
  ParamStore copy;
  for (std::size_t i = 0; i < params.size(); ++i) {
    copy.add(params.names()[i], Tensor(params.tensor(i).shape(),
                                       std::vector<float>(params.tensor(i).data().begin(), params.tensor(i).data().end())));
  }
  return copy;
}

bool params_bit_equal(const ParamStore& a, const ParamStore& b) {
  if (a.names() != b.names()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!bit_equal(a.tensor(i), b.tensor(i))) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Model graph
// ---------------------------------------------------------------------------

const ParamInfo& Model::info(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p;
  }
  throw ParameterError("model has no parameter " + name);
}

std::size_t Model::num_params() const {
  std::size_t n = 0;
  for (const auto& p : params) n += shape_numel(p.shape);
  return n;
}

std::vector<std::string> Model::prunable_names() const {
  std::vector<std::string> out;
  for (const auto& p : params) {
    if (p.prunable) out.push_back(p.name);
  }
  return out;
}

namespace {

std::string block_prefix(std::size_t i) { return "block" + std::to_string(i); }

void add_conv(std::vector<ParamInfo>& out, const std::string& layer, std::size_t k, std::size_t cin, std::size_t f) {
  out.push_back(ParamInfo{layer + "/kernel", Shape{k, k, cin, f}, ParamRole::kernel, LayerKind::conv, false, true});
  out.push_back(ParamInfo{layer + "/bias", Shape{f}, ParamRole::bias, LayerKind::conv, false, false});
}

void add_dense(std::vector<ParamInfo>& out, const std::string& layer, std::size_t din, std::size_t f) {
  out.push_back(ParamInfo{layer + "/kernel", Shape{din, f}, ParamRole::kernel, LayerKind::dense, true, false});
  out.push_back(ParamInfo{layer + "/bias", Shape{f}, ParamRole::bias, LayerKind::dense, true, false});
}

}  // namespace

Model make_model(const ArchSpec& spec) {
  spec.validate();
  Model m;
  m.spec = spec;
  std::size_t c = spec.input_shape[2];
  if (spec.stem.filters > 0) {
    add_conv(m.params, "stem/conv", spec.stem.kernel, c, spec.stem.filters);
    c = spec.stem.filters;
  }
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const auto& b = spec.blocks[i];
    const std::string p = block_prefix(i);
    add_conv(m.params, p + "/b1x1", 1, c, b.branch1x1);
    add_conv(m.params, p + "/b3x3", 3, c, b.branch3x3);
    add_conv(m.params, p + "/b5x5", 5, c, b.branch5x5);
    add_conv(m.params, p + "/pool_proj", 1, c, b.pool_proj);
    c = b.out_channels();
  }
  add_dense(m.params, "head/main", c, spec.head.num_classes);
  if (spec.head.aux_classes) add_dense(m.params, "head/aux", c, *spec.head.aux_classes);

  return m;
}

std::pair<Model, ParamStore> build_model(const ArchSpec& spec, std::uint64_t seed) {
  Model model = make_model(spec);
  ParamStore store;
  for (const auto& p : model.params) {
    Tensor t(p.shape);
    if (p.role == ParamRole::kernel) {
      std::size_t fan_in = 1;
      for (std::size_t i = 0; i + 1 < p.shape.size(); ++i) fan_in *= p.shape[i];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      Rng rng = make_rng(seed, "init/" + p.name);
      for (auto& v : t.data()) {
        float x = 0.0f;
        while (x == 0.0f) x = static_cast<float>(uniform(rng, -limit, limit));
        v = x;
      }
    }
    store.add(p.name, std::move(t));
  }
  return {std::move(model), std::move(store)};
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

template <typename T, typename Store>
class ForwardContext {
 public:
  ForwardContext(const Store& params, BasicTape<T>& tape, const ForwardOptions& options)
      : params_(params), tape_(tape), options_(options) {}

  BasicVar<T> param(const std::string& name) {
    BasicVar<T> leaf = tape_.leaf(lookup(name), options_.requires_grad, name);
    if (options_.mask && options_.mask->contains(name)) {
      return mul(leaf, tape_.constant(options_.mask->as_tensor(name).template cast<T>()));
    }
    return leaf;
  }

  BasicVar<T> layer_input(BasicVar<T> x) {
    if constexpr (std::is_same_v<T, float>) {
      if (options_.activation_transform) return tape_.constant(options_.activation_transform(x.value()));
    }
    return x;
  }

  BasicVar<T> conv(BasicVar<T> x, const std::string& layer, std::size_t stride) {
    BasicVar<T> k = param(layer + "/kernel");
    BasicVar<T> y = conv2d(layer_input(x), k, stride, Padding::same);
    return relu(add_bias(y, param(layer + "/bias")));
  }

  BasicVar<T> dense(BasicVar<T> x, const std::string& layer) {
    BasicVar<T> y = matmul(layer_input(x), param(layer + "/kernel"));
    return add_bias(y, param(layer + "/bias"));
  }

 private:
  const BasicTensor<T>& lookup(const std::string& name) const {
    if constexpr (std::is_same_v<Store, ParamStore>) {
      return params_.at(name);
    } else {
      auto it = params_.find(name);
      if (it == params_.end()) throw ParameterError("missing parameter " + name);
      return it->second;
    }
  }

  const Store& params_;
  BasicTape<T>& tape_;
  const ForwardOptions& options_;
};

template <typename T, typename Store>
BasicModelOutput<T> forward_impl(const Model& model, const Store& params, BasicTape<T>& tape,
                                 const BasicTensor<T>& batch, const ForwardOptions& options) {
  const auto& in = model.spec.input_shape;
  if (batch.rank() != 4 || batch.dim(1) != in[0] || batch.dim(2) != in[1] || batch.dim(3) != in[2]) {
    throw DimensionError("forward: batch " + shape_str(batch.shape()) + " does not match input shape [N x" +
                         std::to_string(in[0]) + "x" + std::to_string(in[1]) + "x" + std::to_string(in[2]) + "]");
  }
  if (options.activation_transform && options.requires_grad) {
    throw ParameterError("activation transforms are inference-only");
  }
  ForwardContext<T, Store> ctx(params, tape, options);
  BasicVar<T> x = tape.constant(batch);
  const ArchSpec& spec = model.spec;
  if (spec.stem.filters > 0) {
    x = ctx.conv(x, "stem/conv", spec.stem.stride);
    if (spec.stem.pool_after) x = max_pool2d(x, 2, 2, Padding::same);
  }
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const std::string p = block_prefix(i);
    BasicVar<T> b1 = ctx.conv(x, p + "/b1x1", 1);
    BasicVar<T> b3 = ctx.conv(x, p + "/b3x3", 1);
    BasicVar<T> b5 = ctx.conv(x, p + "/b5x5", 1);
    BasicVar<T> bp = ctx.conv(max_pool2d(x, 3, 1, Padding::same), p + "/pool_proj", 1);
    x = concat_last<T>({b1, b3, b5, bp});
    if (spec.blocks[i].pool_after) x = max_pool2d(x, 2, 2, Padding::same);
  }
  BasicVar<T> pooled = global_avg_pool(x);
  BasicModelOutput<T> out;
  out.logits = ctx.dense(pooled, "head/main");
  if (spec.head.aux_classes) out.aux_logits = ctx.dense(pooled, "head/aux");
  return out;
}

}  // namespace

ModelOutput forward(const Model& model, const ParamStore& params, Tape& tape, const Tensor& batch,
                    const ForwardOptions& options) {
  return forward_impl<float>(model, params, tape, batch, options);
}

BasicModelOutput<double> forward_f64(const Model& model, const std::map<std::string, BasicTensor<double>>& params,
                                     BasicTape<double>& tape, const BasicTensor<double>& batch,
                                     const ForwardOptions& options) {
  if (options.activation_transform) throw ParameterError("activation transforms need the float forward pass");
  return forward_impl<double>(model, params, tape, batch, options);
}

Predictions predict(const Model& model, const ParamStore& params, const Tensor& inputs, const ForwardOptions& options,
                    std::size_t batch_size) {
  if (inputs.rank() != 4) throw DimensionError("predict expects [N,frames,mels,channels], got " + shape_str(inputs.shape()));
  ForwardOptions opts = options;
  opts.requires_grad = false;
  const std::size_t n = inputs.dim(0);
  const std::size_t k = model.spec.head.num_classes;
  const std::size_t row = inputs.numel() / n;
  Predictions out;
  std::vector<float> logits(n * k);
  std::vector<float> aux;
  const std::size_t ka = model.spec.head.aux_classes.value_or(0);
  if (ka) aux.resize(n * ka);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t m = std::min(batch_size, n - start);
    Shape s = inputs.shape();
    s[0] = m;
    Tensor chunk(s, std::vector<float>(inputs.raw() + start * row, inputs.raw() + (start + m) * row));
    Tape tape;
    ModelOutput o = forward(model, params, tape, chunk, opts);
    std::copy(o.logits.value().raw(), o.logits.value().raw() + m * k, logits.begin() + static_cast<std::ptrdiff_t>(start * k));
    if (ka) {
      std::copy(o.aux_logits->value().raw(), o.aux_logits->value().raw() + m * ka,
                aux.begin() + static_cast<std::ptrdiff_t>(start * ka));
    }
  }
  out.logits = Tensor(Shape{n, k}, std::move(logits));
  if (ka) out.aux_logits = Tensor(Shape{n, ka}, std::move(aux));
  return out;
}

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

namespace {

struct CyclePos {
  std::uint64_t offset;  // step within the cycle, 0 .. length
  std::uint64_t length;
};

CyclePos locate(const LrSchedule& s, std::uint64_t step) {
  std::uint64_t length = std::max<std::uint64_t>(s.cycle_length, 1);
  double exact = static_cast<double>(length);
  std::uint64_t start = 0;
  const double mult = std::max(1.0, s.restart_multiplier);
  // A cycle of length L covers L + 1 steps: offsets 0 .. L inclusive.
  while (step > start + length) {
    start += length + 1;
    exact *= mult;
    length = std::max<std::uint64_t>(static_cast<std::uint64_t>(std::floor(exact)), 1);
  }
  return {step - start, length};
}

}  // namespace

double lr_at(const LrSchedule& s, std::uint64_t step) {
  const CyclePos pos = locate(s, step);
  if (pos.offset == 0) return s.lr_max;
  if (pos.offset == pos.length) return s.lr_min;
  const double frac = static_cast<double>(pos.offset) / static_cast<double>(pos.length);
  const double lr = s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
  return std::clamp(lr, std::min(s.lr_min, s.lr_max), std::max(s.lr_min, s.lr_max));
}

bool is_cycle_end(const LrSchedule& s, std::uint64_t step) {
  const CyclePos pos = locate(s, step);
  return pos.offset == pos.length;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices) {
  const std::size_t row = t.numel() / t.dim(0);
  std::vector<float> out(indices.size() * row);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= t.dim(0)) throw DimensionError("gather_rows: index out of range");
    std::copy(t.raw() + indices[i] * row, t.raw() + (indices[i] + 1) * row, out.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  Shape s = t.shape();
  s[0] = indices.size();
  return Tensor(s, std::move(out));
}

TensorBatchSource::TensorBatchSource(Tensor inputs, Tensor targets)
    : inputs_(std::move(inputs)), targets_(std::move(targets)) {
  if (inputs_.dim(0) != targets_.dim(0)) {
    throw DimensionError("inputs and targets disagree on example count");
  }
}

Batch TensorBatchSource::make_batch(std::span<const std::size_t> indices, std::uint64_t) const {
  Batch b;
  b.inputs = gather_rows(inputs_, indices);
  b.targets = gather_rows(targets_, indices);
  b.indices.assign(indices.begin(), indices.end());
  return b;
}

LossFn cross_entropy_loss() {
  return [](Tape&, const ModelOutput& out, const Batch& batch) { return cross_entropy(out.logits, batch.targets); };
}

TrainResult sgd_train(const Model& model, ParamStore params, const BatchSource& data, const LossFn& loss_fn,
                      const SgdOptions& options, const PruneMask* mask) {
  if (options.epochs == 0) throw ParameterError("sgd_train: epochs must be >= 1");
  if (options.batch_size == 0) throw ParameterError("sgd_train: batch_size must be >= 1");
  const std::size_t n = data.size();
  if (n == 0) throw InputError("sgd_train: empty training data");

  const std::uint64_t steps_per_epoch = (n + options.batch_size - 1) / options.batch_size;
  const std::uint64_t total_steps = steps_per_epoch * options.epochs;
  LrSchedule schedule = options.schedule;
  if (schedule.cycle_length == 0) schedule.cycle_length = std::max<std::uint64_t>(total_steps - 1, 1);

  std::vector<const std::vector<std::uint8_t>*> keep(params.size(), nullptr);
  if (mask) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string& name = params.names()[i];
      if (!mask->contains(name)) continue;
      keep[i] = &mask->at(name).keep;
      if (keep[i]->size() != params.tensor(i).numel()) throw DimensionError("mask/parameter size mismatch for " + name);
      for (std::size_t j = 0; j < keep[i]->size(); ++j) {
        if (!(*keep[i])[j]) params.tensor(i)[j] = 0.0f;
      }
    }
  }

  std::vector<std::vector<float>> velocity(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) velocity[i].assign(params.tensor(i).numel(), 0.0f);

  TrainResult result;
  std::optional<ParamStore> selected;
  std::vector<std::size_t> order(n);
  std::uint64_t step = 0;
  ForwardOptions fopts;
  fopts.mask = mask;
  fopts.requires_grad = true;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(options.seed, "batch-order", epoch);
    shuffle(order, rng);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t start = 0; start < n; start += options.batch_size, ++step) {
      const std::size_t m = std::min(options.batch_size, n - start);
      std::span<const std::size_t> idx(order.data() + start, m);
      Batch batch = data.make_batch(idx, step);
      Tape tape;
      ModelOutput out = forward(model, params, tape, batch.inputs, fopts);
      Var loss = loss_fn(tape, out, batch);
      const float lv = loss.value().item();
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch + 1) + ")");
      }
      loss_sum += static_cast<double>(lv) * static_cast<double>(m);
      GradMap grads = tape.backward(loss);

      double norm_sq = 0.0;
      if (options.clip_norm > 0.0) {
        for (const auto& [name, g] : grads) {
          for (float v : g.data()) norm_sq += static_cast<double>(v) * v;
        }
      }
      const double clip = (options.clip_norm > 0.0 && norm_sq > options.clip_norm * options.clip_norm)
                              ? options.clip_norm / std::sqrt(norm_sq)
                              : 1.0;
      lr = lr_at(schedule, step);
      const float lrf = static_cast<float>(lr);
      const float mu = static_cast<float>(options.momentum);
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto it = grads.find(params.names()[i]);
        if (it == grads.end()) continue;
        auto g = it->second.data();
        auto& v = velocity[i];
        auto w = params.tensor(i).data();
        const auto* kp = keep[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
          float gj = g[j];
          if (clip != 1.0) gj = static_cast<float>(gj * clip);
          v[j] = mu * v[j] + gj;
          w[j] -= lrf * v[j];
          if (kp && !(*kp)[j]) {
            w[j] = 0.0f;
            v[j] = 0.0f;
          }
        }
      }
      if (options.select_cycle_end && is_cycle_end(schedule, step)) {
        selected = snapshot_params(params);
        result.selected_step = step;
      }
    }
    result.epochs.push_back(EpochMetrics{epoch + 1, loss_sum / static_cast<double>(n), lr});
  }
  result.steps = step;
  if (selected && result.selected_step + 1 != step) {
    result.params = std::move(*selected);
  } else {
    result.params = std::move(params);
    result.selected_step = step - 1;
  }
  return result;
}

}  // namespace al
