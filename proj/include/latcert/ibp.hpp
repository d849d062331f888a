#pragma once

#include <span>

#include "latcert/corpus.hpp"
#include "latcert/model.hpp"
#include "latcert/tape.hpp"
#include "latcert/tensor.hpp"

namespace latcert {

/// Elementwise bounds lower <= upper on an activation tensor.
struct IntervalTensor {
  IntervalTensor() = default;
  /// Throws StructuralError on a shape mismatch, DomainError if lower > upper
  /// anywhere or an entry is not finite.
  IntervalTensor(Tensor lower, Tensor upper);

  Tensor lower;
  Tensor upper;

  [[nodiscard]] bool contains(const Tensor& point, double slack = 0.0) const;
};

/// Box over the embeddings of {token_i} and its substitutes, per position and
/// coordinate. `embeddings` is the [vocab, dim] table.
IntervalTensor input_interval(std::span<const TokenId> tokens, const SubstitutionTable& table,
                              const Tensor& embeddings);

/// Bounds through the encoder (from its first non-embedding layer).
/// Throws StructuralError for layer kinds without interval semantics.
IntervalTensor propagate(const ModelCheckpoint& model, const IntervalTensor& bounds);

struct TapedInterval {
  Var lower;
  Var upper;
};

/// Taped propagation; gradients reach the encoder parameters through both bounds.
TapedInterval propagate(const TapedModel& model, Var lower, Var upper);

/// sqrt(sum_i max(u_i - c_i, c_i - l_i)^2). Throws SoundnessError when the
/// center lies outside the bounds by more than 1e-9.
double r_hat(const Tensor& center, const IntervalTensor& bounds);

/// Taped R-hat; ties in the max send the gradient to the upper branch.
Var r_hat(Var center, Var lower, Var upper);

/// s(x), its latent box, and R-hat for one token sequence.
struct LatentBounds {
  Tensor center;
  IntervalTensor bounds;
  double r_hat = 0.0;
};

LatentBounds latent_bounds(const ModelCheckpoint& model, std::span<const TokenId> tokens,
                           const SubstitutionTable& table);

/// Embedding table of an encoder that starts with an embedding lookup.
const Tensor& embedding_table(const ModelCheckpoint& model);

}  // namespace latcert
