#include "latcert/model.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "latcert/error.hpp"
#include "latcert/kernels.hpp"
#include "latcert/random.hpp"

namespace latcert {

namespace {

constexpr std::string_view kKindNames[] = {"embedding", "conv1d", "relu",
                                           "mean_pool", "affine", "log_softmax"};

std::string layer_label(Partition part, std::size_t index, LayerKind kind) {
  return std::string(part == Partition::Encoder ? "encoder" : "classifier") + " layer " +
         std::to_string(index) + " (" + std::string(to_string(kind)) + ")";
}

enum class Rank { Unknown, Sequence, Vector };

struct StackState {
  Rank rank = Rank::Unknown;
  std::size_t channels = 0;
};

StackState check_stack(const std::vector<LayerSpec>& layers, Partition part, StackState state) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string where = layer_label(part, i, l.kind);
    auto expect_in = [&](std::size_t in) {
      if (state.channels != 0 && in != state.channels) {
        throw StructuralError(where + ": expects " + std::to_string(in) + " inputs, previous layer produces " +
                              std::to_string(state.channels));
      }
    };
    switch (l.kind) {
      case LayerKind::EmbeddingLookup:
        if (part != Partition::Encoder || i != 0) throw StructuralError(where + ": must be the first encoder layer");
        if (l.in == 0 || l.out == 0) throw StructuralError(where + ": empty vocabulary or dimension");
        state = {Rank::Sequence, l.out};
        break;
      case LayerKind::Conv1d:
        if (state.rank == Rank::Vector) throw StructuralError(where + ": needs a sequence input");
        if (l.in == 0 || l.out == 0 || l.width == 0) throw StructuralError(where + ": zero dimension");
        expect_in(l.in);
        state = {Rank::Sequence, l.out};
        break;
      case LayerKind::Relu:
        if (l.in != l.out) throw StructuralError(where + ": in/out differ");
        if (l.in != 0) expect_in(l.in);
        if (state.channels == 0) state.channels = l.in;
        break;
      case LayerKind::MeanPool:
        if (state.rank == Rank::Vector) throw StructuralError(where + ": needs a sequence input");
        if (l.in != l.out) throw StructuralError(where + ": in/out differ");
        if (l.in != 0) expect_in(l.in);
        state = {Rank::Vector, state.channels != 0 ? state.channels : l.in};
        break;
      case LayerKind::Affine:
        if (state.rank == Rank::Sequence) throw StructuralError(where + ": needs a vector input (add mean_pool)");
        if (l.in == 0 || l.out == 0) throw StructuralError(where + ": zero dimension");
        expect_in(l.in);
        state = {Rank::Vector, l.out};
        break;
      case LayerKind::LogSoftmax:
        if (part != Partition::Classifier) throw StructuralError(where + ": not allowed in the encoder");
        if (i + 1 != layers.size()) throw StructuralError(where + ": must be the last classifier layer");
        if (state.rank == Rank::Sequence) throw StructuralError(where + ": needs a vector input");
        if (l.in != l.out) throw StructuralError(where + ": in/out differ");
        if (l.in != 0) expect_in(l.in);
        state = {Rank::Vector, state.channels != 0 ? state.channels : l.in};
        break;
    }
  }
  return state;
}

double he_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

}  // namespace

std::string_view to_string(LayerKind kind) { return kKindNames[static_cast<int>(kind)]; }

LayerKind layer_kind_from_string(std::string_view name) {
  for (int i = 0; i < 6; ++i) {
    if (kKindNames[i] == name) return static_cast<LayerKind>(i);
  }
  throw FormatError("unknown layer kind '" + std::string(name) + "'");
}

void validate(const Architecture& arch) {
  if (arch.encoder.empty()) throw StructuralError("encoder has no layers");
  if (arch.classifier.empty() || arch.classifier.back().kind != LayerKind::LogSoftmax) {
    throw StructuralError("classifier must end with log_softmax");
  }
  StackState s = check_stack(arch.encoder, Partition::Encoder, {});
  if (s.rank == Rank::Sequence) throw StructuralError("encoder must end with a vector (add mean_pool)");
  if (s.channels == 0) throw StructuralError("encoder latent dimension is undetermined");
  s.rank = Rank::Vector;
  const StackState c = check_stack(arch.classifier, Partition::Classifier, s);
  if (c.channels < 2) throw StructuralError("classifier needs at least two classes");
}

std::size_t latent_dim(const Architecture& arch) {
  return check_stack(arch.encoder, Partition::Encoder, {}).channels;
}

std::size_t class_count(const Architecture& arch) {
  StackState s = check_stack(arch.encoder, Partition::Encoder, {});
  s.rank = Rank::Vector;
  return check_stack(arch.classifier, Partition::Classifier, s).channels;
}

std::size_t min_sequence_length(const Architecture& arch) {
  std::size_t len = 1;
  for (const LayerSpec& l : arch.encoder) {
    if (l.kind == LayerKind::Conv1d) len += l.width - 1;
  }
  return len;
}

Architecture text_cnn(const TextCnnDims& d) {
  Architecture a;
  a.encoder = {
      {LayerKind::EmbeddingLookup, d.vocab, d.embed_dim, 0},
      {LayerKind::Conv1d, d.embed_dim, d.channels, d.width},
      {LayerKind::Relu, d.channels, d.channels, 0},
      {LayerKind::MeanPool, d.channels, d.channels, 0},
      {LayerKind::Affine, d.channels, d.latent, 0},
  };
  a.classifier = {
      {LayerKind::Affine, d.latent, d.hidden, 0},
      {LayerKind::Relu, d.hidden, d.hidden, 0},
      {LayerKind::Affine, d.hidden, d.classes, 0},
      {LayerKind::LogSoftmax, d.classes, d.classes, 0},
  };
  validate(a);
  return a;
}

void ParameterSet::add(Parameter p) {
  if (find(p.name) != nullptr) throw StructuralError("duplicate parameter '" + p.name + "'");
  items_.push_back(std::move(p));
}

const Parameter* ParameterSet::find(std::string_view name) const noexcept {
  for (const Parameter& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

Parameter* ParameterSet::find(std::string_view name) noexcept {
  for (Parameter& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const Tensor& ParameterSet::tensor(std::string_view name) const {
  const Parameter* p = find(name);
  if (p == nullptr) throw LookupError("unknown parameter '" + std::string(name) + "'");
  return p->value;
}

Tensor& ParameterSet::tensor(std::string_view name) {
  Parameter* p = find(name);
  if (p == nullptr) throw LookupError("unknown parameter '" + std::string(name) + "'");
  return p->value;
}

std::size_t ParameterSet::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const Parameter& p : items_) n += p.value.size();
  return n;
}

std::string parameter_name(Partition part, std::size_t layer, std::string_view slot) {
  return std::string(part == Partition::Encoder ? "encoder." : "classifier.") +
         std::to_string(layer) + "." + std::string(slot);
}

ModelCheckpoint init_model(const Architecture& arch, std::optional<Tensor> embedding_table,
                           double sigma, std::uint64_t seed) {
  validate(arch);
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be positive");
  Rng rng(derive_seed(seed, "init"));
  ModelCheckpoint m;
  m.architecture = arch;
  m.sigma = sigma;
  auto init_stack = [&](const std::vector<LayerSpec>& layers, Partition part) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& l = layers[i];
      if (l.kind == LayerKind::EmbeddingLookup) {
        if (!embedding_table || embedding_table->shape() != Shape{l.in, l.out}) {
          throw StructuralError("embedding layer needs a [" + std::to_string(l.in) + ", " +
                                std::to_string(l.out) + "] table");
        }
        m.parameters.add({parameter_name(part, i, "table"), part, false, *embedding_table});
      } else if (l.kind == LayerKind::Conv1d || l.kind == LayerKind::Affine) {
        const bool conv = l.kind == LayerKind::Conv1d;
        const std::size_t fan_in = conv ? l.in * l.width : l.in;
        Tensor w(conv ? Shape{l.out, l.width, l.in} : Shape{l.out, l.in});
        const double bound = he_bound(fan_in);
        for (double& v : w.data()) v = rng.uniform(-bound, bound);
        m.parameters.add({parameter_name(part, i, "weight"), part, true, std::move(w)});
        m.parameters.add({parameter_name(part, i, "bias"), part, true, Tensor(Shape{l.out}, 0.0)});
      }
    }
  };
  init_stack(arch.encoder, Partition::Encoder);
  init_stack(arch.classifier, Partition::Classifier);
  return m;
}

TapedModel::TapedModel(Tape& tape, const ModelCheckpoint& model, bool differentiable)
    : tape_(&tape), model_(&model), differentiable_(differentiable) {}

Var TapedModel::param(Partition part, std::size_t layer, std::string_view slot) const {
  const std::string name = parameter_name(part, layer, slot);
  const Parameter* p = model_->parameters.find(name);
  if (p == nullptr) throw StructuralError("model is missing parameter '" + name + "'");
  if (differentiable_ && p->trainable) return tape_->parameter(name, p->value);
  return tape_->cached_constant(name, p->value);
}

Var TapedModel::encoder_param(std::size_t layer, std::string_view slot) const {
  return param(Partition::Encoder, layer, slot);
}

Var TapedModel::embed(std::span<const TokenId> tokens) const {
  const auto& enc = model_->architecture.encoder;
  if (enc.empty() || enc.front().kind != LayerKind::EmbeddingLookup) {
    throw StructuralError("encoder has no embedding layer; pass real-valued input instead");
  }
  if (tokens.empty()) throw StructuralError("empty token sequence");
  const Tensor& table = model_->parameters.tensor(parameter_name(Partition::Encoder, 0, "table"));
  const std::size_t dim = table.dim(1);
  Tensor out(Shape{tokens.size(), dim});
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= table.dim(0)) {
      throw LookupError("token id " + std::to_string(tokens[t]) + " outside vocabulary of " +
                        std::to_string(table.dim(0)));
    }
    std::copy_n(table.data().data() + tokens[t] * dim, dim, out.data().data() + t * dim);
  }
  return tape_->constant(std::move(out));
}

Var TapedModel::run(const std::vector<LayerSpec>& layers, Partition part, std::size_t first, Var x) const {
  for (std::size_t i = first; i < layers.size(); ++i) {
    switch (layers[i].kind) {
      case LayerKind::EmbeddingLookup:
        throw StructuralError("embedding lookup must be applied through embed()");
      case LayerKind::Conv1d:
        x = ad::conv1d(x, param(part, i, "weight"), param(part, i, "bias"));
        break;
      case LayerKind::Relu:
        x = ad::relu(x);
        break;
      case LayerKind::MeanPool:
        x = ad::mean_rows(x);
        break;
      case LayerKind::Affine:
        x = ad::affine(x, param(part, i, "weight"), param(part, i, "bias"));
        break;
      case LayerKind::LogSoftmax:
        x = ad::log_softmax(x);
        break;
    }
  }
  return x;
}

Var TapedModel::encode(Var input) const {
  const auto& enc = model_->architecture.encoder;
  const std::size_t first = (!enc.empty() && enc.front().kind == LayerKind::EmbeddingLookup) ? 1 : 0;
  return run(enc, Partition::Encoder, first, input);
}

Var TapedModel::classify(Var latent) const {
  return run(model_->architecture.classifier, Partition::Classifier, 0, latent);
}

namespace {

ForwardPass finish_forward(std::unique_ptr<Tape> tape, const TapedModel& tm, Var input,
                           const Tensor* noise) {
  ForwardPass pass;
  pass.latent = tm.encode(input);
  Var noisy = pass.latent;
  if (noise != nullptr) {
    require_same_shape(pass.latent.value(), *noise, "forward noise");
    noisy = ad::add(pass.latent, tape->constant(*noise));
  }
  pass.log_probs = tm.classify(noisy);
  pass.class_probs = pass.log_probs.value();
  for (double& v : pass.class_probs.data()) v = std::exp(v);
  pass.tape = std::move(tape);
  return pass;
}

}  // namespace

ForwardPass forward(const ModelCheckpoint& model, const Tensor& input, const Tensor* noise) {
  validate(model.architecture);
  auto tape = std::make_unique<Tape>();
  TapedModel tm(*tape, model);
  Var in = tape->constant(input);
  return finish_forward(std::move(tape), tm, in, noise);
}

ForwardPass forward(const ModelCheckpoint& model, std::span<const TokenId> tokens, const Tensor* noise) {
  validate(model.architecture);
  auto tape = std::make_unique<Tape>();
  TapedModel tm(*tape, model);
  Var in = tm.embed(tokens);
  return finish_forward(std::move(tape), tm, in, noise);
}

Gradients gradient(ForwardPass& pass, Var loss, double loss_seed) {
  if (!pass.tape) throw UsageError("forward pass has no tape");
  return pass.tape->gradient(loss, loss_seed);
}

Tensor encode(const ModelCheckpoint& model, std::span<const TokenId> tokens) {
  Tape tape;
  TapedModel tm(tape, model, false);
  return tm.encode(tm.embed(tokens)).value();
}

ClassifierEvaluator::ClassifierEvaluator(const ModelCheckpoint& model) {
  const Architecture& arch = model.architecture;
  validate(arch);
  latent_dim_ = latcert::latent_dim(arch);
  classes_ = class_count(arch);
  std::size_t widest = latent_dim_;
  for (std::size_t i = 0; i < arch.classifier.size(); ++i) {
    const LayerSpec& l = arch.classifier[i];
    Step s{l.kind};
    if (l.kind == LayerKind::Affine) {
      s.weight = &model.parameters.tensor(parameter_name(Partition::Classifier, i, "weight"));
      s.bias = &model.parameters.tensor(parameter_name(Partition::Classifier, i, "bias"));
    }
    widest = std::max({widest, l.in, l.out});
    steps_.push_back(s);
  }
  a_.resize(widest);
  b_.resize(widest);
}

std::span<const double> ClassifierEvaluator::run(std::span<const double> latent, std::span<const double> noise,
                                                 bool normalize) {
  std::size_t width = latent_dim_;
  for (std::size_t i = 0; i < width; ++i) a_[i] = noise.empty() ? latent[i] : latent[i] + noise[i];
  for (const Step& s : steps_) {
    switch (s.kind) {
      case LayerKind::Affine: {
        const std::size_t out = s.weight->dim(0);
        kernels::affine(std::span<const double>(a_.data(), width), *s.weight, s.bias->data(),
                        std::span<double>(b_.data(), out));
        a_.swap(b_);
        width = out;
        break;
      }
      case LayerKind::Relu:
        kernels::relu(std::span<double>(a_.data(), width));
        break;
      case LayerKind::LogSoftmax:
        if (!normalize) break;
        kernels::log_softmax(std::span<const double>(a_.data(), width), std::span<double>(b_.data(), width));
        a_.swap(b_);
        break;
      default:
        throw StructuralError("unsupported classifier layer");
    }
  }
  return {a_.data(), classes_};
}

std::span<const double> ClassifierEvaluator::log_probs(std::span<const double> latent,
                                                       std::span<const double> noise) {
  return run(latent, noise, true);
}

std::size_t ClassifierEvaluator::predict(std::span<const double> latent, std::span<const double> noise) {
  // log-softmax is monotone, so the logits already decide the argmax.
  return kernels::argmax(run(latent, noise, false));
}

}  // namespace latcert
