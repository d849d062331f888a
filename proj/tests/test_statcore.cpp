#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "latcert/error.hpp"
#include "latcert/random.hpp"
#include "latcert/statcore.hpp"
#include "oracles.hpp"

using namespace latcert;

TEST_CASE("probability and observation domains") {
  CHECK_THROWS_AS(Probability(-0.1), DomainError);
  CHECK_THROWS_AS(Probability(1.5), DomainError);
  CHECK_THROWS_AS(Probability(std::nan("")), DomainError);
  CHECK(Probability(0.0).value() == 0.0);
  CHECK(Probability(1.0).value() == 1.0);
  CHECK_THROWS_AS(BinomialObservation(5, 3), DomainError);
  CHECK_THROWS_AS(BinomialObservation(-1, 3), DomainError);
  CHECK_THROWS_AS(BinomialObservation(0, 0), DomainError);
}

TEST_CASE("normal cdf examples") {
  CHECK(std_normal_cdf(0.0).value() == 0.5);
  const double expected = static_cast<double>(oracle::normal_cdf(1.2815515655L));
  CHECK(std::fabs(expected - 0.9) < 1e-9);
  CHECK(std::fabs(std_normal_cdf(1.2815515655).value() - expected) < 1e-12);
  for (double x : {0.1, 1.0, 3.0}) {
    CHECK(std::fabs(std_normal_cdf(-x).value() + std_normal_cdf(x).value() - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(std_normal_cdf(std::numeric_limits<double>::infinity()), DomainError);
  CHECK_THROWS_AS(std_normal_cdf(std::nan("")), DomainError);
}

TEST_CASE("normal cdf agrees with the erf series and is monotone") {
  double prev = 0.0;
  for (double x = -5.0; x <= 5.0; x += 0.125) {
    const double v = std_normal_cdf(x).value();
    CHECK(std::fabs(v - static_cast<double>(oracle::normal_cdf(x))) < 1e-14);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("normal quantile examples") {
  CHECK(std_normal_quantile(0.5) == 0.0);
  const double q = std_normal_quantile(0.9);
  CHECK(std::fabs(q - static_cast<double>(oracle::normal_quantile(0.9L))) < 1e-12);
  CHECK(std::fabs(q - 1.2815515655) < 1e-9);
  CHECK(std::fabs(std_normal_quantile(0.23) + std_normal_quantile(0.77)) < 1e-9);
  CHECK_THROWS_AS(std_normal_quantile(0.0), DomainError);
  CHECK_THROWS_AS(std_normal_quantile(1.0), DomainError);
  CHECK_THROWS_AS(std_normal_quantile(1.2), DomainError);
}

TEST_CASE("normal quantile round trip over random probabilities") {
  Rng rng(1234);
  for (int i = 0; i < 1000; ++i) {
    double p = rng.uniform(1e-10, 1.0 - 1e-10);
    if (i % 3 == 1) p = std::pow(10.0, -rng.uniform(1.0, 10.0));
    if (i % 3 == 2) p = 1.0 - std::pow(10.0, -rng.uniform(1.0, 10.0));
    CHECK(std::fabs(std_normal_cdf(std_normal_quantile(p)).value() - p) <= 1e-9);
  }
  // Far tails stay accurate down to 1e-12.
  for (double p : {1e-12, 1e-11, 1.0 - 1e-12}) {
    CHECK(std::fabs(std_normal_cdf(std_normal_quantile(p)).value() - p) <= 1e-9);
  }
}

TEST_CASE("quantile is exactly odd about one half") {
  for (double p : {0.6, 0.75, 0.9, 0.99, 0.999999}) {
    CHECK(std_normal_quantile(p) == -std_normal_quantile(1.0 - p));
  }
}

TEST_CASE("binomial p-value examples") {
  CHECK(pvalue_binom(5, 10, Probability(0.5)).value() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::fabs(pvalue_binom(10, 10, Probability(0.5)).value() - 2.0 / 1024.0) < 1e-15);
  CHECK(pvalue_binom(0, 1, Probability(0.5)).value() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(pvalue_binom(11, 10, Probability(0.5)), DomainError);
  CHECK_THROWS_AS(pvalue_binom(-1, 10, Probability(0.5)), DomainError);
  CHECK_THROWS_AS(pvalue_binom(0, 0, Probability(0.5)), DomainError);
}

TEST_CASE("binomial p-value matches enumeration") {
  for (int n = 1; n <= 40; ++n) {
    for (int k = 0; k <= n; ++k) {
      for (double p0 : {0.5, 0.2, 0.65}) {
        const double got = pvalue_binom(k, n, Probability(p0)).value();
        CHECK(std::fabs(got - static_cast<double>(oracle::pvalue(k, n, p0))) <= 1e-9);
        CHECK(got > 0.0);
        CHECK(got <= 1.0);
      }
    }
  }
}

TEST_CASE("binomial p-value symmetric at one half") {
  for (int n = 1; n <= 120; ++n) {
    for (int k = 0; k <= n; ++k) {
      CHECK(pvalue_binom(k, n, Probability(0.5)) == pvalue_binom(n - k, n, Probability(0.5)));
    }
  }
}

TEST_CASE("lower confidence bound examples") {
  CHECK(lower_conf_bound(0, 50, Probability(0.999)).value() == 0.0);
  CHECK(std::fabs(lower_conf_bound(10, 10, Probability(0.95)).value() - std::pow(0.05, 0.1)) < 1e-6);
  const double l = lower_conf_bound(5, 10, Probability(0.95)).value();
  CHECK(std::fabs(l - static_cast<double>(oracle::lower_bound(5, 10, 0.95L))) < 1e-9);
  CHECK(std::fabs(l - 0.2224) < 1e-3);
  CHECK_THROWS_AS(lower_conf_bound(11, 10, Probability(0.95)), DomainError);
  CHECK_THROWS_AS(lower_conf_bound(5, 10, Probability(1.0)), DomainError);
  CHECK_THROWS_AS(lower_conf_bound(5, 10, Probability(0.0)), DomainError);
}

TEST_CASE("lower confidence bound matches enumeration and stays below the rate") {
  for (int n = 1; n <= 40; ++n) {
    for (int k = 0; k <= n; ++k) {
      const double got = lower_conf_bound(k, n, Probability(0.99)).value();
      CHECK(std::fabs(got - static_cast<double>(oracle::lower_bound(k, n, 0.99L))) <= 1e-9);
      CHECK(got <= static_cast<double>(k) / n);
    }
  }
  for (int n : {100, 2000, 30000}) {
    CHECK(std::fabs(lower_conf_bound(n, n, Probability(0.999)).value() - std::pow(0.001, 1.0 / n)) < 1e-6);
  }
}

TEST_CASE("lower confidence bound monotone in successes and confidence") {
  const std::vector<double> levels{0.5, 0.8, 0.9, 0.95, 0.99, 0.999};
  for (int n = 1; n <= 50; ++n) {
    for (int k = 0; k <= n; ++k) {
      for (std::size_t c = 0; c < levels.size(); ++c) {
        const double v = lower_conf_bound(k, n, Probability(levels[c])).value();
        if (k < n) CHECK(v <= lower_conf_bound(k + 1, n, Probability(levels[c])).value());
        if (c + 1 < levels.size()) CHECK(v >= lower_conf_bound(k, n, Probability(levels[c + 1])).value());
      }
    }
  }
}

TEST_CASE("lower confidence bound coverage") {
  std::vector<double> bound(101);
  for (int k = 0; k <= 100; ++k) bound[k] = lower_conf_bound(k, 100, Probability(0.95)).value();
  Rng rng(77);
  int misses = 0;
  constexpr int kTrials = 10000;
  for (int t = 0; t < kTrials; ++t) {
    int k = 0;
    for (int i = 0; i < 100; ++i) k += rng.bernoulli(0.7) ? 1 : 0;
    if (bound[k] > 0.7) ++misses;
  }
  CHECK(misses <= kTrials * 6 / 100);
}

TEST_CASE("log pmf and survival against enumeration") {
  for (int n : {1, 7, 30, 60}) {
    for (int k = 0; k <= n; ++k) {
      const double p = 0.37;
      CHECK(std::exp(binomial_log_pmf(k, n, p)) ==
            doctest::Approx(static_cast<double>(oracle::binom_pmf(k, n, p))).epsilon(1e-10));
      CHECK(std::fabs(binomial_survival(k, n, p) - static_cast<double>(oracle::survival(k, n, p))) < 1e-12);
    }
  }
}
