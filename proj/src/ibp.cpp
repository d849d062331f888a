#include "latcert/ibp.hpp"

#include <algorithm>
#include <cmath>

#include "latcert/error.hpp"

namespace latcert {

IntervalTensor::IntervalTensor(Tensor l, Tensor u) : lower(std::move(l)), upper(std::move(u)) {
  require_same_shape(lower, upper, "interval bounds");
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (!std::isfinite(lower[i]) || !std::isfinite(upper[i])) throw DomainError("interval bound is not finite");
    if (lower[i] > upper[i]) {
      throw DomainError("interval lower bound exceeds upper bound at index " + std::to_string(i));
    }
  }
}

bool IntervalTensor::contains(const Tensor& point, double slack) const {
  if (point.shape() != lower.shape()) return false;
  for (std::size_t i = 0; i < point.size(); ++i) {
    if (point[i] < lower[i] - slack || point[i] > upper[i] + slack) return false;
  }
  return true;
}

const Tensor& embedding_table(const ModelCheckpoint& model) {
  const auto& enc = model.architecture.encoder;
  if (enc.empty() || enc.front().kind != LayerKind::EmbeddingLookup) {
    throw StructuralError("encoder has no embedding layer");
  }
  return model.parameters.tensor(parameter_name(Partition::Encoder, 0, "table"));
}

IntervalTensor input_interval(std::span<const TokenId> tokens, const SubstitutionTable& table,
                              const Tensor& embeddings) {
  if (embeddings.rank() != 2) throw StructuralError("embedding table must be rank 2");
  if (tokens.empty()) throw StructuralError("empty token sequence");
  const std::size_t vocab = embeddings.dim(0);
  const std::size_t dim = embeddings.dim(1);
  Tensor lo(Shape{tokens.size(), dim});
  Tensor hi(Shape{tokens.size(), dim});
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const TokenId tok = tokens[t];
    if (tok >= vocab) throw LookupError("token id " + std::to_string(tok) + " has no embedding");
    for (std::size_t d = 0; d < dim; ++d) lo.at(t, d) = hi.at(t, d) = embeddings.at(tok, d);
    for (TokenId s : table.substitutes(tok)) {
      if (s >= vocab) throw LookupError("substitute id " + std::to_string(s) + " has no embedding");
      for (std::size_t d = 0; d < dim; ++d) {
        lo.at(t, d) = std::min(lo.at(t, d), embeddings.at(s, d));
        hi.at(t, d) = std::max(hi.at(t, d), embeddings.at(s, d));
      }
    }
  }
  return {std::move(lo), std::move(hi)};
}

TapedInterval propagate(const TapedModel& model, Var lower, Var upper) {
  const auto& enc = model.model().architecture.encoder;
  std::size_t first = 0;
  if (!enc.empty() && enc.front().kind == LayerKind::EmbeddingLookup) first = 1;
  for (std::size_t i = first; i < enc.size(); ++i) {
    const LayerKind kind = enc[i].kind;
    switch (kind) {
      case LayerKind::Affine:
      case LayerKind::Conv1d: {
        const Var w = model.encoder_param(i, "weight");
        const Var b = model.encoder_param(i, "bias");
        const Var center = ad::scale(ad::add(lower, upper), 0.5);
        const Var radius = ad::scale(ad::sub(upper, lower), 0.5);
        const bool conv = kind == LayerKind::Conv1d;
        const Var c = conv ? ad::conv1d(center, w, b) : ad::affine(center, w, b);
        const Var r = conv ? ad::conv1d_abs(radius, w) : ad::affine_abs(radius, w);
        lower = ad::sub(c, r);
        upper = ad::add(c, r);
        break;
      }
      case LayerKind::Relu:
        lower = ad::relu(lower);
        upper = ad::relu(upper);
        break;
      case LayerKind::MeanPool:
        lower = ad::mean_rows(lower);
        upper = ad::mean_rows(upper);
        break;
      default:
        throw StructuralError("encoder layer " + std::to_string(i) + " (" + std::string(to_string(kind)) +
                              ") has no interval propagation rule");
    }
  }
  return {lower, upper};
}

IntervalTensor propagate(const ModelCheckpoint& model, const IntervalTensor& bounds) {
  Tape tape;
  TapedModel tm(tape, model, false);
  const TapedInterval out = propagate(tm, tape.constant(bounds.lower), tape.constant(bounds.upper));
  return {out.lower.value(), out.upper.value()};
}

double r_hat(const Tensor& center, const IntervalTensor& bounds) {
  require_same_shape(center, bounds.lower, "r_hat center");
  constexpr double kSlack = 1e-9;
  double sum = 0.0;
  for (std::size_t i = 0; i < center.size(); ++i) {
    const double c = center[i];
    if (c < bounds.lower[i] - kSlack || c > bounds.upper[i] + kSlack) {
      throw SoundnessError("latent coordinate " + std::to_string(i) + " lies outside its IBP bounds");
    }
    const double m = std::max(bounds.upper[i] - c, c - bounds.lower[i]);
    sum += m * m;
  }
  return std::sqrt(sum);
}

Var r_hat(Var center, Var lower, Var upper) {
  return ad::sqrt(ad::sum(ad::square(ad::maximum(ad::sub(upper, center), ad::sub(center, lower)))));
}

LatentBounds latent_bounds(const ModelCheckpoint& model, std::span<const TokenId> tokens,
                           const SubstitutionTable& table) {
  LatentBounds out;
  out.center = encode(model, tokens);
  out.bounds = propagate(model, input_interval(tokens, table, embedding_table(model)));
  out.r_hat = r_hat(out.center, out.bounds);
  return out;
}

}  // namespace latcert
