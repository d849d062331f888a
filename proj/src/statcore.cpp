#include "latcert/statcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "latcert/error.hpp"

namespace latcert {

namespace {

constexpr double kTieTolerance = 1e-7;
constexpr double kBisectionTolerance = 1e-12;

const std::vector<double>& log_factorials() {
  static const std::vector<double> table = [] {
    std::vector<double> t(static_cast<std::size_t>(kMaxBinomialTrials) + 1);
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = std::lgamma(static_cast<double>(i) + 1.0);
    }
    return t;
  }();
  return table;
}

void check_counts(std::int64_t k, std::int64_t n, const char* what) {
  if (n < 1 || k < 0 || k > n) {
    throw DomainError(std::string(what) + ": invalid counts k=" + std::to_string(k) +
                      " n=" + std::to_string(n));
  }
  if (n > kMaxBinomialTrials) {
    throw DomainError(std::string(what) + ": trials " + std::to_string(n) +
                      " exceed supported maximum " + std::to_string(kMaxBinomialTrials));
  }
}

double rational_quantile(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  auto tail = [&](double q) {
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  };
  if (p < p_low) return tail(std::sqrt(-2.0 * std::log(p)));
  if (p > 1.0 - p_low) return -tail(std::sqrt(-2.0 * std::log1p(-p)));
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

Probability::Probability(double value) : value_(value) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw DomainError("probability out of [0,1]: " + std::to_string(value));
  }
}

BinomialObservation::BinomialObservation(std::int64_t s, std::int64_t t)
    : successes(s), trials(t) {
  if (t < 1 || s < 0 || s > t) {
    throw DomainError("binomial observation requires 0 <= successes <= trials, trials >= 1");
  }
}

Probability std_normal_cdf(double x) {
  if (!std::isfinite(x)) throw DomainError("std_normal_cdf: non-finite input");
  return Probability(0.5 * std::erfc(-x / std::numbers::sqrt2));
}

double std_normal_pdf(double x) noexcept {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("std_normal_quantile: p must lie in (0,1), got " + std::to_string(p));
  }
  // 1 - p is exact above the median, so this makes the function exactly odd
  // about 1/2.
  if (p > 0.5) return -std_normal_quantile(1.0 - p);
  double x = rational_quantile(p);
  x -= (std_normal_cdf(x).value() - p) / std_normal_pdf(x);
  return x;
}

double std_normal_quantile(Probability p) { return std_normal_quantile(p.value()); }

double binomial_log_pmf(std::int64_t k, std::int64_t n, double p) {
  check_counts(k, n, "binomial_log_pmf");
  if (p == 0.0) return k == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
  if (p == 1.0) return k == n ? 0.0 : -std::numeric_limits<double>::infinity();
  const auto& lf = log_factorials();
  const double log_p = std::log(p);
  // 1 - p is exact for p >= 1/2, which keeps log(p) == log(1-p) at p = 1/2.
  const double log_q = p < 0.5 ? std::log1p(-p) : std::log(1.0 - p);
  const auto ku = static_cast<std::size_t>(k);
  const auto nu = static_cast<std::size_t>(n);
  const double log_choose = lf[nu] - (lf[ku] + lf[nu - ku]);
  return log_choose + (static_cast<double>(k) * log_p + static_cast<double>(n - k) * log_q);
}

double binomial_survival(std::int64_t k, std::int64_t n, double p) {
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  double sum = 0.0;
  for (std::int64_t i = n; i >= k; --i) sum += std::exp(binomial_log_pmf(i, n, p));
  return std::min(sum, 1.0);
}

Probability pvalue_binom(std::int64_t obs_a, std::int64_t total, Probability p0) {
  check_counts(obs_a, total, "pvalue_binom");
  const double threshold = binomial_log_pmf(obs_a, total, p0.value()) + std::log1p(kTieTolerance);
  std::vector<double> included;
  included.reserve(static_cast<std::size_t>(total) + 1);
  for (std::int64_t i = 0; i <= total; ++i) {
    const double lp = binomial_log_pmf(i, total, p0.value());
    if (lp <= threshold) included.push_back(lp);
  }
  std::sort(included.begin(), included.end());
  const double peak = included.back();
  double scaled = 0.0;
  for (double lp : included) scaled += std::exp(lp - peak);
  const double pvalue = std::exp(peak + std::log(scaled));
  return Probability(std::clamp(pvalue, std::numeric_limits<double>::denorm_min(), 1.0));
}

Probability lower_conf_bound(std::int64_t successes, std::int64_t trials, Probability confidence) {
  check_counts(successes, trials, "lower_conf_bound");
  if (!(confidence.value() > 0.0 && confidence.value() < 1.0)) {
    throw DomainError("lower_conf_bound: confidence must lie in (0,1)");
  }
  if (successes == 0) return Probability(0.0);
  const double alpha = 1.0 - confidence.value();
  double lo = 0.0;
  double hi = static_cast<double>(successes) / static_cast<double>(trials);
  if (binomial_survival(successes, trials, hi) <= alpha) return Probability(hi);
  while (hi - lo > kBisectionTolerance) {
    const double mid = 0.5 * (lo + hi);
    if (binomial_survival(successes, trials, mid) <= alpha) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return Probability(lo);
}

}  // namespace latcert
