#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "latcert/error.hpp"
#include "latcert/smoothing.hpp"
#include "oracles.hpp"

using namespace latcert;

namespace {

// Encoder affine 2->2, classifier affine 2->3 with zero weights and the given bias.
ModelCheckpoint constant_logits(std::vector<double> bias) {
  Architecture a;
  a.encoder = {{LayerKind::Affine, 2, 2, 0}};
  a.classifier = {{LayerKind::Affine, 2, bias.size(), 0}, {LayerKind::LogSoftmax, bias.size(), bias.size(), 0}};
  ModelCheckpoint m = init_model(a, std::nullopt, 1.0, 1);
  m.parameters.tensor(parameter_name(Partition::Classifier, 0, "weight")).fill(0.0);
  m.parameters.tensor(parameter_name(Partition::Classifier, 0, "bias")) = Tensor::vector(std::move(bias));
  return m;
}

}  // namespace

TEST_CASE("noise spec validation") {
  CHECK_THROWS_AS((NoiseSpec{0.0, 4, 1}.validate()), ConfigError);
  CHECK_THROWS_AS((NoiseSpec{-1.0, 4, 1}.validate()), ConfigError);
  CHECK_THROWS_AS((NoiseSpec{INFINITY, 4, 1}.validate()), ConfigError);
  CHECK_NOTHROW((NoiseSpec{0.5, 4, 1}.validate()));
}

TEST_CASE("noise moments") {
  for (double sigma : {0.5, 1.0, 2.0}) {
    const NoiseSpec spec{sigma, 4, 42};
    constexpr int kDraws = 100000;
    std::vector<double> sum(4, 0.0), sq(4, 0.0);
    std::vector<double> buf(4);
    for (int d = 0; d < kDraws; ++d) {
      sample_noise(spec, static_cast<std::uint64_t>(d), buf);
      for (std::size_t j = 0; j < 4; ++j) {
        sum[j] += buf[j];
        sq[j] += buf[j] * buf[j];
      }
    }
    for (std::size_t j = 0; j < 4; ++j) {
      const double mean = sum[j] / kDraws;
      const double sd = std::sqrt(sq[j] / kDraws - mean * mean);
      CHECK(std::fabs(mean) < 0.02 * sigma);
      CHECK(std::fabs(sd / sigma - 1.0) < 0.02);
    }
  }
}

TEST_CASE("noise is a pure function of seed and draw index") {
  const NoiseSpec spec{1.0, 6, 7};
  CHECK(sample_noise(spec, 12) == sample_noise(spec, 12));
  CHECK_FALSE(sample_noise(spec, 12) == sample_noise(spec, 13));
  CHECK_FALSE(sample_noise(spec, 12) == sample_noise(NoiseSpec{1.0, 6, 8}, 12));
  std::vector<double> buf(6);
  sample_noise(spec, 12, buf);
  CHECK(std::equal(buf.begin(), buf.end(), sample_noise(spec, 12).data().begin()));
  const NoiseBank bank(spec, 10, 5);
  for (std::uint64_t i = 0; i < 5; ++i) {
    const Tensor ref = sample_noise(spec, 10 + i);
    CHECK(std::equal(bank.draw(i).begin(), bank.draw(i).end(), ref.data().begin()));
  }
}

TEST_CASE("soft expectation examples") {
  const auto& t = fixture::toy();
  const ModelCheckpoint& m = t.robust.model;
  const auto& tokens = t.corpus.test[0].tokens;
  const std::size_t dim = latent_dim(m.architecture);

  SUBCASE("one draw is one noisy forward pass") {
    const NoiseSpec spec{1.0, dim, 5};
    const Tensor n0 = sample_noise(spec, 0);
    const auto p = soft_expectation(m, tokens, spec, 1);
    const ForwardPass pass = forward(m, tokens, &n0);
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::fabs(p[k] - pass.class_probs[k]) < 1e-12);
  }
  SUBCASE("vanishing sigma recovers the noiseless probabilities") {
    const auto p = soft_expectation(m, tokens, NoiseSpec{1e-9, dim, 5}, 20);
    const ForwardPass pass = forward(m, tokens);
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::fabs(p[k] - pass.class_probs[k]) < 1e-6);
  }
  SUBCASE("entries sum to one and independent estimates agree") {
    const auto a = soft_expectation(m, tokens, NoiseSpec{2.0, dim, 1}, 5000);
    const auto b = soft_expectation(m, tokens, NoiseSpec{2.0, dim, 2}, 5000);
    double sa = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      sa += a[k];
      // Values in [0, 1] with mean p have variance at most p (1 - p).
      const double p = 0.5 * (a[k] + b[k]);
      const double se = std::sqrt(2.0 * p * (1.0 - p) / 5000.0);
      CHECK(std::fabs(a[k] - b[k]) <= 3.0 * se + 1e-12);
    }
    CHECK(std::fabs(sa - 1.0) < 1e-9);
  }
  SUBCASE("zero draws are rejected") {
    CHECK_THROWS_AS(soft_expectation(m, tokens, NoiseSpec{1.0, dim, 1}, 0), DomainError);
    CHECK_THROWS_AS(hard_votes(m, tokens, NoiseSpec{1.0, dim, 1}, 0), DomainError);
  }
}

TEST_CASE("hard votes") {
  const ModelCheckpoint m = constant_logits({0.0, 0.0, 5.0});
  ClassifierEvaluator head(m);
  const std::vector<double> latent{0.3, -0.2};
  const VoteCounts v = hard_votes(head, latent, NoiseSpec{1.0, 2, 9}, 250);
  CHECK(v.counts == std::vector<std::int64_t>{0, 0, 250});
  CHECK(v.total() == 250);
  CHECK(v.top() == 2);
  CHECK(v.runner_up() == 0);

  const ModelCheckpoint tie = constant_logits({1.0, 1.0, 1.0});
  ClassifierEvaluator tie_head(tie);
  CHECK(hard_votes(tie_head, latent, NoiseSpec{1.0, 2, 9}, 10).counts == std::vector<std::int64_t>{10, 0, 0});

  const VoteCounts tied{{4, 7, 7}};
  CHECK(tied.top() == 1);
  CHECK(tied.runner_up() == 2);
}

TEST_CASE("vote fractions converge to a high-draw reference") {
  const auto& t = fixture::toy();
  const ModelCheckpoint& m = t.plain.model;
  ClassifierEvaluator head(m);
  const std::size_t dim = latent_dim(m.architecture);
  std::size_t informative = 0;
  for (std::size_t i = 0; i < 40 && informative < 3; ++i) {
    const Tensor z = encode(m, t.corpus.test[i].tokens);
    const VoteCounts ref = hard_votes(head, z.data(), NoiseSpec{2.0, dim, 1}, 100000);
    const double p_ref = static_cast<double>(ref.counts[0]) / 100000.0;
    if (p_ref < 0.05 || p_ref > 0.95) continue;
    ++informative;
    const VoteCounts small = hard_votes(head, z.data(), NoiseSpec{2.0, dim, 2}, 20000);
    CHECK(small.total() == 20000);
    CHECK(std::fabs(static_cast<double>(small.counts[0]) / 20000.0 - p_ref) <= 0.01);
  }
  CHECK(informative > 0);
}

TEST_CASE("soft radius examples and properties") {
  CHECK(soft_radius(Probability(0.5), Probability(0.5), 1.0) == 0.0);
  const double expected = 0.5 * static_cast<double>(oracle::normal_quantile(0.8L) - oracle::normal_quantile(0.2L));
  CHECK(std::fabs(soft_radius(Probability(0.8), Probability(0.2), 1.0) - expected) < 1e-9);
  CHECK(std::fabs(expected - 0.8416) < 1e-4);
  for (double s : {0.5, 2.0, 3.0, 7.25}) {
    CHECK(soft_radius(Probability(0.7), Probability(0.1), s) == s * soft_radius(Probability(0.7), Probability(0.1), 1.0));
  }
  CHECK(soft_radius(Probability(0.8), Probability(0.2), 2.0) == 2.0 * soft_radius(Probability(0.8), Probability(0.2), 1.0));
  CHECK_THROWS_AS(soft_radius(Probability(0.2), Probability(0.3), 1.0), DomainError);
  CHECK_THROWS_AS(soft_radius(Probability(0.6), Probability(0.3), 0.0), DomainError);
  // Saturated inputs are clamped, not infinite.
  const double sat = soft_radius(Probability(1.0), Probability(0.0), 1.0);
  CHECK(std::isfinite(sat));
  CHECK(sat == doctest::Approx(-std_normal_quantile(kProbabilityClamp)).epsilon(1e-12));
  double prev = -1.0;
  for (double p = 0.3; p < 0.99; p += 0.05) {
    const double r = soft_radius(Probability(p), Probability(0.3), 1.0);
    CHECK(r > prev);
    prev = r;
  }
  prev = 1e9;
  for (double q = 0.0; q < 0.6; q += 0.05) {
    const double r = soft_radius(Probability(0.6), Probability(q), 1.0);
    CHECK(r < prev);
    prev = r;
  }
}

TEST_CASE("hard radius examples and properties") {
  const double q9 = static_cast<double>(oracle::normal_quantile(0.9L));
  CHECK(std::fabs(*hard_radius(Probability(0.9), 1.0) - q9) < 1e-9);
  CHECK(std::fabs(*hard_radius(Probability(0.9), 2.0) - 2.0 * q9) < 1e-9);
  CHECK(std::fabs(*hard_radius(Probability(0.9), 1.0) - 1.28155) < 1e-5);
  CHECK_FALSE(hard_radius(Probability(0.5), 1.0).has_value());
  CHECK_FALSE(hard_radius(Probability(0.2), 1.0).has_value());
  const auto tiny = hard_radius(Probability(0.5 + 1e-9), 1.0);
  REQUIRE(tiny.has_value());
  CHECK(*tiny > 0.0);
  CHECK(*tiny < 1e-8);
  for (double s : {0.5, 3.0}) CHECK(*hard_radius(Probability(0.8), s) == s * *hard_radius(Probability(0.8), 1.0));
}

TEST_CASE("two-class soft radius equals the hard radius exactly") {
  for (double p = 0.51; p < 0.9999; p += 0.0137) {
    for (double s : {0.5, 1.0, 2.0}) {
      CHECK(soft_radius(Probability(p), Probability(1.0 - p), s) == *hard_radius(Probability(p), s));
    }
  }
}
