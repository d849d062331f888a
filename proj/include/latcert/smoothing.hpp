#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "latcert/model.hpp"
#include "latcert/statcore.hpp"
#include "latcert/tensor.hpp"

namespace latcert {

/// Clamp applied to probabilities before every inverse-CDF evaluation.
inline constexpr double kProbabilityClamp = 1e-6;

/// Gaussian latent noise N(0, sigma^2 I) of dimension `dim`.
struct NoiseSpec {
  double sigma = 1.0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;

  /// Throws ConfigError unless sigma is positive and finite.
  void validate() const;
};

/// Noise vector for one draw. Coordinate j is sigma * Phi^-1(u) where u comes
/// from hashing (seed, draw_index, j), so any draw can be produced on its own.
Tensor sample_noise(const NoiseSpec& spec, std::uint64_t draw_index);
void sample_noise(const NoiseSpec& spec, std::uint64_t draw_index, std::span<double> out);

/// Precomputed draws [first, first + count) of one NoiseSpec.
class NoiseBank {
 public:
  NoiseBank(const NoiseSpec& spec, std::uint64_t first, std::uint64_t count);

  [[nodiscard]] std::span<const double> draw(std::uint64_t i) const noexcept {
    return {data_.data() + i * dim_, dim_};
  }
  [[nodiscard]] std::uint64_t count() const noexcept { return count_; }
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }

 private:
  std::size_t dim_;
  std::uint64_t count_;
  std::vector<double> data_;
};

struct VoteCounts {
  std::vector<std::int64_t> counts;

  [[nodiscard]] std::int64_t total() const noexcept;
  /// Most voted class; lowest index on ties.
  [[nodiscard]] std::size_t top() const;
  /// Most voted class other than top(); lowest index on ties.
  [[nodiscard]] std::size_t runner_up() const;
};

/// Monte-Carlo mean of f(latent + n) over draws [first, first + draws).
std::vector<double> soft_expectation(ClassifierEvaluator& head, std::span<const double> latent,
                                     const NoiseSpec& spec, std::uint64_t draws, std::uint64_t first = 0);
std::vector<double> soft_expectation(const ModelCheckpoint& model, std::span<const TokenId> tokens,
                                     const NoiseSpec& spec, std::uint64_t draws);

/// Argmax votes of f(latent + n) over draws [first, first + draws).
VoteCounts hard_votes(ClassifierEvaluator& head, std::span<const double> latent, const NoiseSpec& spec,
                      std::uint64_t draws, std::uint64_t first = 0);
VoteCounts hard_votes(ClassifierEvaluator& head, std::span<const double> latent, const NoiseBank& bank);
VoteCounts hard_votes(const ModelCheckpoint& model, std::span<const TokenId> tokens, const NoiseSpec& spec,
                      std::uint64_t draws);

/// sigma/2 * (Phi^-1(p_top) - Phi^-1(p_runner)) after clamping both into
/// [eps, 1 - eps]. Throws DomainError if p_top < p_runner or sigma <= 0.
double soft_radius(Probability p_top, Probability p_runner, double sigma);

/// sigma * Phi^-1(p_a_lower), or nullopt when p_a_lower <= 1/2 (no certificate).
std::optional<double> hard_radius(Probability p_a_lower, double sigma);

/// Clamps into [kProbabilityClamp, 1 - kProbabilityClamp].
double clamp_probability(double p) noexcept;

}  // namespace latcert
