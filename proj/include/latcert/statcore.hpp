#pragma once

#include <cstdint>

namespace latcert {

/// A real number in [0, 1]. Construction outside the range throws DomainError.
class Probability {
 public:
  constexpr Probability() = default;
  explicit Probability(double value);

  [[nodiscard]] double value() const noexcept { return value_; }
  explicit operator double() const noexcept { return value_; }

  friend bool operator==(Probability, Probability) = default;
  friend auto operator<=>(Probability, Probability) = default;

 private:
  double value_ = 0.0;
};

/// Success count out of a positive number of trials.
struct BinomialObservation {
  BinomialObservation(std::int64_t successes, std::int64_t trials);

  std::int64_t successes;
  std::int64_t trials;
};

/// Largest trial count supported by the log-factorial table.
inline constexpr std::int64_t kMaxBinomialTrials = 1 << 18;

/// Standard normal cumulative distribution function.
Probability std_normal_cdf(double x);

/// Standard normal density.
double std_normal_pdf(double x) noexcept;

/// Inverse of the standard normal CDF. Requires p strictly inside (0, 1).
double std_normal_quantile(Probability p);
double std_normal_quantile(double p);

/// Natural log of the Binomial(trials, p) mass at k, exact via log-factorials.
double binomial_log_pmf(std::int64_t k, std::int64_t trials, double p);

/// P[Binomial(trials, p) >= k].
double binomial_survival(std::int64_t k, std::int64_t trials, double p);

/// Exact two-sided binomial test (minimum-likelihood rule).
///
/// Sums the Binomial(total, p0) mass of every outcome whose probability does
/// not exceed that of the observed count, with a relative tie tolerance of
/// 1e-7. The masses are summed in ascending order, so the result is a
/// function of the multiset of included masses only.
Probability pvalue_binom(std::int64_t obs_a, std::int64_t total, Probability p0);

/// One-sided Clopper-Pearson lower confidence bound for a binomial rate.
///
/// Returns the largest L with P[Binomial(trials, L) >= successes] <= 1 - confidence,
/// located by bisection on the survival function.
Probability lower_conf_bound(std::int64_t successes, std::int64_t trials,
                             Probability confidence);

}  // namespace latcert
