#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "al/autograd.hpp"
#include "al/hash.hpp"
#include "al/mask.hpp"
#include "al/tensor.hpp"

namespace al {

// ---------------------------------------------------------------------------
// Architecture description
// ---------------------------------------------------------------------------

/// Naive inception block: four parallel branches (1x1, 3x3, 5x5 convs and
/// a 3x3 max-pool followed by a 1x1 projection) concatenated on channels.
struct InceptionBlockSpec {
  std::size_t branch1x1 = 0;
  std::size_t branch3x3 = 0;
  std::size_t branch5x5 = 0;
  std::size_t pool_proj = 0;
  bool pool_after = false;  // 2x2 max-pool, stride 2

  std::size_t out_channels() const { return branch1x1 + branch3x3 + branch5x5 + pool_proj; }
  bool operator==(const InceptionBlockSpec&) const = default;
};

/// Optional leading convolution. filters == 0 disables it.
struct StemSpec {
  std::size_t filters = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool pool_after = false;

  bool operator==(const StemSpec&) const = default;
};

struct HeadSpec {
  std::size_t num_classes = 10;
  /// Second output layer on the shared trunk (multi-task coarse head).
  std::optional<std::size_t> aux_classes;

  bool operator==(const HeadSpec&) const = default;
};

struct ArchSpec {
  std::string name = "custom";
  std::array<std::size_t, 3> input_shape{32, 32, 3};  // frames, mel bins, channels
  StemSpec stem;
  std::vector<InceptionBlockSpec> blocks;
  HeadSpec head;

  /// Throws ParameterError naming the first invalid field.
  void validate() const;
  bool operator==(const ArchSpec&) const = default;
};

/// Shallow inception: two blocks.
ArchSpec sic_preset(std::array<std::size_t, 3> input_shape = {32, 32, 3}, std::size_t num_classes = 10);
/// Large inception: three blocks with more filters.
ArchSpec lic_preset(std::array<std::size_t, 3> input_shape = {32, 32, 3}, std::size_t num_classes = 10);
/// "sic" or "lic"; anything else is a ParameterError.
ArchSpec arch_preset(const std::string& name, std::array<std::size_t, 3> input_shape, std::size_t num_classes);

std::string arch_to_json(const ArchSpec& spec);
ArchSpec arch_from_json(const std::string& json);

// ---------------------------------------------------------------------------
// Parameters and model graph
// ---------------------------------------------------------------------------

enum class ParamRole { kernel, bias };
enum class LayerKind { conv, dense };

struct ParamInfo {
  std::string name;
  Shape shape;
  ParamRole role = ParamRole::kernel;
  LayerKind kind = LayerKind::conv;
  bool output_layer = false;
  /// Kernels of non-output layers. Biases and classifier layers stay dense.
  bool prunable = false;
};

/// Ordered name -> tensor map. Iteration follows insertion (layer) order.
class ParamStore {
 public:
  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t size() const noexcept { return names_.size(); }
  std::size_t total_elements() const;

  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }

  /// SHA-256 over names, shapes and raw value bytes.
  Digest digest() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Deep copy of a store (recorded as the rewind target).
ParamStore snapshot_params(const ParamStore& params);
bool params_bit_equal(const ParamStore& a, const ParamStore& b);

struct Model {
  ArchSpec spec;
  std::vector<ParamInfo> params;

  const ParamInfo& info(const std::string& name) const;
  std::size_t num_params() const;
  std::vector<std::string> prunable_names() const;
};

/// Graph only, no weights.
Model make_model(const ArchSpec& spec);

/// Model graph plus He-uniform kernels and zero biases. Each tensor draws
/// from its own substream of `seed`, so two specs that share a layer name
/// and shape also share its initial values.
std::pair<Model, ParamStore> build_model(const ArchSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Applied to the input of every conv and dense layer (inference only).
using ActivationTransform = std::function<Tensor(const Tensor&)>;

struct ForwardOptions {
  const PruneMask* mask = nullptr;
  bool requires_grad = false;
  ActivationTransform activation_transform;
};

template <typename T>
struct BasicModelOutput {
  BasicVar<T> logits;
  std::optional<BasicVar<T>> aux_logits;
};
using ModelOutput = BasicModelOutput<float>;

/// Records the forward pass on `tape`. Parameters become named leaves; a
/// masked parameter is multiplied by its mask before use.
ModelOutput forward(const Model& model, const ParamStore& params, Tape& tape, const Tensor& batch,
                    const ForwardOptions& options = {});

/// Same graph in double precision, for numerical gradient checks.
BasicModelOutput<double> forward_f64(const Model& model, const std::map<std::string, BasicTensor<double>>& params,
                                     BasicTape<double>& tape, const BasicTensor<double>& batch,
                                     const ForwardOptions& options = {});

struct Predictions {
  Tensor logits;
  std::optional<Tensor> aux_logits;
};

/// Batched inference over inputs [N, frames, mels, channels].
Predictions predict(const Model& model, const ParamStore& params, const Tensor& inputs,
                    const ForwardOptions& options = {}, std::size_t batch_size = 64);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Cosine decay with warm restarts. Cycle k spans cycle_length * m^k steps
/// after its first step; its final step sits exactly at lr_min and the
/// following step restarts at lr_max.
struct LrSchedule {
  double lr_max = 0.1;
  double lr_min = 1e-5;
  std::uint64_t cycle_length = 0;
  double restart_multiplier = 2.0;
};

double lr_at(const LrSchedule& schedule, std::uint64_t step);
bool is_cycle_end(const LrSchedule& schedule, std::uint64_t step);

struct Batch {
  Tensor inputs;
  Tensor targets;
  std::optional<Tensor> aux_targets;
  std::optional<Tensor> teacher_logits;
  std::vector<std::size_t> indices;
};

class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual std::size_t size() const = 0;
  /// Assembles the batch for the given example indices. `step` is the
  /// global optimizer step, available for per-step augmentation streams.
  virtual Batch make_batch(std::span<const std::size_t> indices, std::uint64_t step) const = 0;
};

/// In-memory source: inputs [N, ...] and targets [N, K].
class TensorBatchSource : public BatchSource {
 public:
  TensorBatchSource(Tensor inputs, Tensor targets);
  std::size_t size() const override { return inputs_.dim(0); }
  Batch make_batch(std::span<const std::size_t> indices, std::uint64_t step) const override;

 private:
  Tensor inputs_;
  Tensor targets_;
};

/// Gathers rows of a [N, ...] tensor.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices);

using LossFn = std::function<Var(Tape&, const ModelOutput&, const Batch&)>;

/// Mean cross-entropy of the main head against batch.targets.
LossFn cross_entropy_loss();

struct SgdOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  /// Global gradient-norm clip; 0 disables it.
  double clip_norm = 0.0;
  std::uint64_t seed = 0;
  /// cycle_length == 0 means one cycle that ends on the last step.
  LrSchedule schedule;
  /// Return the weights from the last step where the learning rate sat at
  /// its minimum, instead of the final step.
  bool select_cycle_end = true;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double last_lr = 0.0;
};

struct TrainResult {
  ParamStore params;
  std::vector<EpochMetrics> epochs;
  std::uint64_t steps = 0;
  std::uint64_t selected_step = 0;
};

/// Minibatch SGD with momentum. Masked coordinates get no update and are
/// held at exactly 0.0.
TrainResult sgd_train(const Model& model, ParamStore params, const BatchSource& data, const LossFn& loss_fn,
                      const SgdOptions& options, const PruneMask* mask = nullptr);

}  // namespace al
