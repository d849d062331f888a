#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latcert/tape.hpp"
#include "latcert/tensor.hpp"

namespace latcert {

using TokenId = std::uint32_t;

enum class LayerKind { EmbeddingLookup, Conv1d, Relu, MeanPool, Affine, LogSoftmax };

std::string_view to_string(LayerKind kind);
/// Throws FormatError for unknown names.
LayerKind layer_kind_from_string(std::string_view name);

/// One layer of a stack.
///
/// `in`/`out` are vocabulary size and embedding width for an embedding
/// lookup, channel counts for conv1d and affine, and the (unchanged) channel
/// count for relu, mean-pool and log-softmax. `width` is the conv kernel width.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t width = 0;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Architecture {
  std::vector<LayerSpec> encoder;
  std::vector<LayerSpec> classifier;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Throws StructuralError unless consecutive layers are shape compatible,
/// the encoder ends in a vector, and the classifier ends in log-softmax.
void validate(const Architecture& arch);

std::size_t latent_dim(const Architecture& arch);
std::size_t class_count(const Architecture& arch);
/// Shortest token sequence the encoder accepts (valid convolutions shrink it).
std::size_t min_sequence_length(const Architecture& arch);

/// Embedding -> conv1d -> relu -> mean-pool -> affine encoder with an
/// affine -> relu -> affine -> log-softmax head.
struct TextCnnDims {
  std::size_t vocab = 0;
  std::size_t embed_dim = 0;
  std::size_t channels = 16;
  std::size_t width = 3;
  std::size_t latent = 4;
  std::size_t hidden = 16;
  std::size_t classes = 2;
};
Architecture text_cnn(const TextCnnDims& dims);

enum class Partition { Encoder, Classifier };

struct Parameter {
  std::string name;
  Partition partition = Partition::Encoder;
  bool trainable = true;
  Tensor value;

  friend bool operator==(const Parameter&, const Parameter&) = default;
};

/// Named parameter tensors in insertion order. Names are unique; every
/// parameter belongs to exactly one partition.
class ParameterSet {
 public:
  void add(Parameter p);

  [[nodiscard]] const Parameter* find(std::string_view name) const noexcept;
  [[nodiscard]] Parameter* find(std::string_view name) noexcept;
  /// Throws LookupError for unknown names.
  [[nodiscard]] const Tensor& tensor(std::string_view name) const;
  [[nodiscard]] Tensor& tensor(std::string_view name);

  [[nodiscard]] std::span<const Parameter> items() const noexcept { return items_; }
  [[nodiscard]] std::span<Parameter> items() noexcept { return items_; }
  [[nodiscard]] std::size_t size() const noexcept { return items_.size(); }
  [[nodiscard]] std::size_t scalar_count() const noexcept;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<Parameter> items_;
};

/// "encoder.<layer>.<slot>" or "classifier.<layer>.<slot>".
std::string parameter_name(Partition part, std::size_t layer, std::string_view slot);

inline constexpr int kCheckpointFormatVersion = 1;

/// Architecture, parameters, and the smoothing sigma the model was trained for.
struct ModelCheckpoint {
  Architecture architecture;
  ParameterSet parameters;
  double sigma = 1.0;
  int format_version = kCheckpointFormatVersion;

  friend bool operator==(const ModelCheckpoint&, const ModelCheckpoint&) = default;
};

/// Random initialisation (He-uniform weights, zero biases). An embedding
/// lookup layer takes `embedding_table` as its frozen table.
ModelCheckpoint init_model(const Architecture& arch, std::optional<Tensor> embedding_table,
                           double sigma, std::uint64_t seed);

/// Model parameters recorded on a tape. Trainable parameters become
/// differentiable leaves; frozen ones (and everything when
/// `differentiable` is false) are constants.
class TapedModel {
 public:
  TapedModel(Tape& tape, const ModelCheckpoint& model, bool differentiable = true);

  [[nodiscard]] Tape& tape() const noexcept { return *tape_; }
  [[nodiscard]] const ModelCheckpoint& model() const noexcept { return *model_; }

  /// Gathers embedding rows for `tokens`; requires a leading embedding layer.
  Var embed(std::span<const TokenId> tokens) const;
  /// Runs the encoder from its first non-embedding layer.
  Var encode(Var input) const;
  /// Runs the classifier head; returns log-probabilities.
  Var classify(Var latent) const;

  /// Weight/bias leaf of encoder layer `layer`.
  Var encoder_param(std::size_t layer, std::string_view slot) const;

 private:
  Var param(Partition part, std::size_t layer, std::string_view slot) const;
  Var run(const std::vector<LayerSpec>& layers, Partition part, std::size_t first, Var x) const;

  Tape* tape_;
  const ModelCheckpoint* model_;
  bool differentiable_;
};

/// Result of a taped forward pass s(x) -> s(x) + n -> f.
struct ForwardPass {
  std::unique_ptr<Tape> tape;
  Var latent;
  Var log_probs;
  Tensor class_probs;
};

/// `input` feeds the first non-embedding encoder layer (for an embedding
/// encoder: the embedded [len, dim] sequence).
ForwardPass forward(const ModelCheckpoint& model, const Tensor& input,
                    const Tensor* noise = nullptr);
ForwardPass forward(const ModelCheckpoint& model, std::span<const TokenId> tokens,
                    const Tensor* noise = nullptr);

/// Reverse sweep from a scalar on the pass's tape. The tape is single use.
Gradients gradient(ForwardPass& pass, Var loss, double loss_seed = 1.0);

/// Plain encoder evaluation s(x).
Tensor encode(const ModelCheckpoint& model, std::span<const TokenId> tokens);

/// Allocation-free classifier head for repeated noisy evaluation.
class ClassifierEvaluator {
 public:
  explicit ClassifierEvaluator(const ModelCheckpoint& model);

  /// log f(latent + noise); `noise` may be empty.
  std::span<const double> log_probs(std::span<const double> latent, std::span<const double> noise);
  /// argmax_y f_y(latent + noise), taken on the logits; lowest index on ties.
  std::size_t predict(std::span<const double> latent, std::span<const double> noise);

  [[nodiscard]] std::size_t classes() const noexcept { return classes_; }
  [[nodiscard]] std::size_t latent_dim() const noexcept { return latent_dim_; }

 private:
  std::span<const double> run(std::span<const double> latent, std::span<const double> noise, bool normalize);

  struct Step {
    LayerKind kind;
    const Tensor* weight = nullptr;
    const Tensor* bias = nullptr;
  };
  std::vector<Step> steps_;
  std::vector<double> a_;
  std::vector<double> b_;
  std::size_t classes_ = 0;
  std::size_t latent_dim_ = 0;
};

}  // namespace latcert
