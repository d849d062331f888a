#include "latcert/smoothing.hpp"

#include <algorithm>
#include <cmath>

#include "latcert/error.hpp"
#include "latcert/kernels.hpp"
#include "latcert/random.hpp"

namespace latcert {

namespace {

void require_draws(std::uint64_t draws) {
  if (draws == 0) throw DomainError("at least one noise draw is required");
}

void check_latent(const ClassifierEvaluator& head, std::span<const double> latent, const NoiseSpec& spec) {
  spec.validate();
  if (latent.size() != head.latent_dim() || spec.dim != head.latent_dim()) {
    throw StructuralError("latent dimension " + std::to_string(latent.size()) + " / noise dimension " +
                          std::to_string(spec.dim) + " do not match the classifier input " +
                          std::to_string(head.latent_dim()));
  }
}

NoiseSpec spec_for(const ModelCheckpoint& model, const NoiseSpec& spec) {
  NoiseSpec s = spec;
  if (s.dim == 0) s.dim = latent_dim(model.architecture);
  return s;
}

}  // namespace

void NoiseSpec::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("noise sigma must be positive and finite");
}

void sample_noise(const NoiseSpec& spec, std::uint64_t draw_index, std::span<double> out) {
  spec.validate();
  const std::uint64_t base = derive_seed(spec.seed, draw_index);
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = spec.sigma * std_normal_quantile(bits_to_open_unit(derive_seed(base, j)));
  }
}

Tensor sample_noise(const NoiseSpec& spec, std::uint64_t draw_index) {
  Tensor t(Shape{spec.dim});
  sample_noise(spec, draw_index, t.data());
  return t;
}

NoiseBank::NoiseBank(const NoiseSpec& spec, std::uint64_t first, std::uint64_t count)
    : dim_(spec.dim), count_(count), data_(count * spec.dim) {
  for (std::uint64_t i = 0; i < count; ++i) {
    sample_noise(spec, first + i, std::span<double>(data_.data() + i * dim_, dim_));
  }
}

std::int64_t VoteCounts::total() const noexcept {
  std::int64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

std::size_t VoteCounts::top() const {
  if (counts.empty()) throw UsageError("empty vote counts");
  return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

std::size_t VoteCounts::runner_up() const {
  if (counts.size() < 2) throw UsageError("runner-up needs at least two classes");
  const std::size_t a = top();
  std::size_t best = a == 0 ? 1 : 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (i != a && counts[i] > counts[best]) best = i;
  }
  return best;
}

std::vector<double> soft_expectation(ClassifierEvaluator& head, std::span<const double> latent,
                                     const NoiseSpec& spec, std::uint64_t draws, std::uint64_t first) {
  require_draws(draws);
  check_latent(head, latent, spec);
  std::vector<double> mean(head.classes(), 0.0);
  std::vector<double> noise(spec.dim);
  for (std::uint64_t i = 0; i < draws; ++i) {
    sample_noise(spec, first + i, noise);
    const auto lp = head.log_probs(latent, noise);
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += std::exp(lp[c]);
  }
  for (double& m : mean) m /= static_cast<double>(draws);
  return mean;
}

std::vector<double> soft_expectation(const ModelCheckpoint& model, std::span<const TokenId> tokens,
                                     const NoiseSpec& spec, std::uint64_t draws) {
  ClassifierEvaluator head(model);
  const Tensor latent = encode(model, tokens);
  return soft_expectation(head, latent.data(), spec_for(model, spec), draws);
}

VoteCounts hard_votes(ClassifierEvaluator& head, std::span<const double> latent, const NoiseSpec& spec,
                      std::uint64_t draws, std::uint64_t first) {
  require_draws(draws);
  check_latent(head, latent, spec);
  VoteCounts v{std::vector<std::int64_t>(head.classes(), 0)};
  std::vector<double> noise(spec.dim);
  for (std::uint64_t i = 0; i < draws; ++i) {
    sample_noise(spec, first + i, noise);
    ++v.counts[head.predict(latent, noise)];
  }
  return v;
}

VoteCounts hard_votes(ClassifierEvaluator& head, std::span<const double> latent, const NoiseBank& bank) {
  require_draws(bank.count());
  if (latent.size() != head.latent_dim() || bank.dim() != head.latent_dim()) {
    throw StructuralError("noise bank dimension does not match the classifier input");
  }
  VoteCounts v{std::vector<std::int64_t>(head.classes(), 0)};
  for (std::uint64_t i = 0; i < bank.count(); ++i) ++v.counts[head.predict(latent, bank.draw(i))];
  return v;
}

VoteCounts hard_votes(const ModelCheckpoint& model, std::span<const TokenId> tokens, const NoiseSpec& spec,
                      std::uint64_t draws) {
  ClassifierEvaluator head(model);
  const Tensor latent = encode(model, tokens);
  return hard_votes(head, latent.data(), spec_for(model, spec), draws);
}

double clamp_probability(double p) noexcept {
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

double soft_radius(Probability p_top, Probability p_runner, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("soft_radius: sigma must be positive");
  if (p_top < p_runner) throw DomainError("soft_radius: p_top is below p_runner");
  const double a = std_normal_quantile(clamp_probability(p_top.value()));
  const double b = std_normal_quantile(clamp_probability(p_runner.value()));
  return sigma * (0.5 * (a - b));
}

std::optional<double> hard_radius(Probability p_a_lower, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("hard_radius: sigma must be positive");
  if (p_a_lower.value() <= 0.5) return std::nullopt;
  return sigma * std_normal_quantile(clamp_probability(p_a_lower.value()));
}

}  // namespace latcert
