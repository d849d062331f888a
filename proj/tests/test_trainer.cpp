#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "latcert/error.hpp"
#include "latcert/ibp.hpp"
#include "latcert/kernels.hpp"
#include "latcert/trainer.hpp"
#include "oracles.hpp"

using namespace latcert;

namespace {

// Final classifier layer zeroed and given `bias`, so f is constant.
ModelCheckpoint constant_head(const SyntheticCorpus& c, std::size_t classes, std::vector<double> bias) {
  TextCnnDims d;
  d.vocab = c.embeddings.vocab.size();
  d.embed_dim = c.embeddings.dim();
  d.classes = classes;
  ModelCheckpoint m = init_model(text_cnn(d), c.embeddings.matrix, 1.0, 3);
  m.parameters.tensor(parameter_name(Partition::Classifier, 2, "weight")).fill(0.0);
  m.parameters.tensor(parameter_name(Partition::Classifier, 2, "bias")) = Tensor::vector(std::move(bias));
  return m;
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t failed = 0;
};

GradCheck compare(const ModelCheckpoint& m, const std::function<LossValue(const ModelCheckpoint&)>& loss) {
  GradCheck out;
  const LossValue base = loss(m);
  for (const Parameter& p : m.parameters.items()) {
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.value.size(); i += 2) {
      ModelCheckpoint probe = m;
      Tensor& w = probe.parameters.tensor(p.name);
      const auto fd = oracle::probe_derivative(
          [&](double v) {
            w[i] = v;
            return loss(probe).value;
          },
          p.value[i], 1e-4);
      const double a = base.gradients.count(p.name) ? base.gradients.at(p.name)[i] : 0.0;
      const double scale = std::max(std::fabs(a), std::fabs(fd.derivative));
      if (fd.kink || scale < 1e-8) continue;
      ++out.checked;
      if (std::fabs(a - fd.derivative) / scale >= 1e-3) ++out.failed;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("train config validation and schedule") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.upper_bound_regime());
  c.margin = 0.2;
  CHECK_FALSE(c.upper_bound_regime());
  c = TrainConfig{};
  c.sigma = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.gamma = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.noise_samples = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = TrainConfig{};
  c.gamma = 4.0;
  c.warmup_steps = 100;
  CHECK(c.gamma_at(0) == 0.0);
  double prev = -1.0;
  for (std::uint64_t s = 0; s <= 150; ++s) {
    CHECK(c.gamma_at(s) >= prev);
    prev = c.gamma_at(s);
  }
  CHECK(c.gamma_at(100) == 4.0);
  CHECK(c.gamma_at(50) == 2.0);
  c.warmup_steps = 0;
  CHECK(c.gamma_at(0) == 4.0);
}

TEST_CASE("cross-entropy examples") {
  const auto& c = fixture::toy().corpus;
  const Dataset batch(c.train.begin(), c.train.begin() + 8);

  const ModelCheckpoint uniform = constant_head(c, 4, {0.0, 0.0, 0.0, 0.0});
  Dataset four = batch;
  for (std::size_t i = 0; i < four.size(); ++i) four[i].label = static_cast<int>(i % 4);
  const LossValue u = loss_cls(uniform, four, NoiseSpec{1.0, 4, 1}, 2);
  CHECK(std::fabs(u.value - std::log(4.0)) < 1e-12);

  // True class overwhelmingly likely: the clamp caps the loss at -log(1 - eps).
  Dataset zeros = batch;
  for (auto& ex : zeros) ex.label = 0;
  const ModelCheckpoint sure = constant_head(c, 2, {800.0, 0.0});
  const LossValue s = loss_cls(sure, zeros, NoiseSpec{1.0, 4, 1}, 1);
  CHECK(std::fabs(s.value + std::log1p(-kProbabilityClamp)) < 1e-15);
  CHECK(std::fabs(s.value - 1e-6) < 1e-9);
  for (const auto& [name, g] : s.gradients) {
    for (double v : g.data()) CHECK(v == 0.0);
  }

  Dataset bad = batch;
  bad[0].label = 5;
  CHECK_THROWS_AS(loss_cls(sure, bad, NoiseSpec{1.0, 4, 1}, 1), DataError);
  CHECK_THROWS_AS(loss_cls(sure, batch, NoiseSpec{1.0, 4, 1}, 0), DomainError);
}

TEST_CASE("loss gradients match finite differences") {
  const auto& c = fixture::toy().corpus;
  const Dataset batch(c.train.begin(), c.train.begin() + 4);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ModelCheckpoint m = fixture::fresh_model(c, 1.0, 40 + seed);
    const NoiseSpec noise{1.0, latent_dim(m.architecture), seed};
    const GradCheck cls = compare(m, [&](const ModelCheckpoint& mm) { return loss_cls(mm, batch, noise, 1); });
    CHECK(cls.failed == 0);
    CHECK(cls.checked > 100);
    const GradCheck rob =
        compare(m, [&](const ModelCheckpoint& mm) { return loss_robust(mm, batch, c.table, noise, 1.0, 2); });
    CHECK(rob.failed == 0);
    CHECK(rob.checked > 100);
  }
}

TEST_CASE("robust hinge terms") {
  const auto& t = fixture::toy();
  const ModelCheckpoint& m = t.robust.model;
  std::vector<const LabeledExample*> batch;
  for (std::size_t i = 0; i < 16; ++i) batch.push_back(&t.corpus.train[i]);
  const NoiseSpec noise{1.0, latent_dim(m.architecture), 3};

  BatchLoss bl = batch_loss(m, batch, t.corpus.table, noise, 1, 1.0, 2.5);
  double mean_hinge = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(bl.hinge[i] == std::max(0.0, bl.r_hat[i] - bl.r[i] + 1.0));
    CHECK(bl.r_hat[i] == doctest::Approx(latent_bounds(m, batch[i]->tokens, t.corpus.table).r_hat).epsilon(1e-12));
    mean_hinge += bl.hinge[i];
  }
  mean_hinge /= static_cast<double>(batch.size());
  CHECK(bl.robust.value()[0] == doctest::Approx(mean_hinge).epsilon(1e-12));
  const StepDiagnostics& d = bl.diagnostics;
  CHECK(std::fabs(d.total_loss - (d.loss_cls + 2.5 * d.loss_robust)) <= 1e-12);
  CHECK(d.gamma_effective == 2.5);

  // A hinge with a very negative margin is inactive everywhere: zero loss, zero gradient.
  const Dataset plain(t.corpus.train.begin(), t.corpus.train.begin() + 16);
  const LossValue off = loss_robust(m, plain, t.corpus.table, noise, -100.0, 1);
  CHECK(off.value == 0.0);
  for (const auto& [name, g] : off.gradients) {
    for (double v : g.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("training is deterministic and gamma zero is plain cross-entropy") {
  const auto& t = fixture::toy();
  const ModelCheckpoint init = fixture::fresh_model(t.corpus, 1.0, 5);
  const Dataset data(t.corpus.train.begin(), t.corpus.train.begin() + 200);

  TrainConfig cfg = fixture::quick_config(4.0);
  const TrainResult a = train(init, data, t.corpus.table, cfg);
  const TrainResult b = train(init, data, t.corpus.table, cfg);
  CHECK(a.model == b.model);
  CHECK(format_training_log(a) == format_training_log(b));

  TrainConfig zero = fixture::quick_config(0.0);
  TrainConfig ce_only = zero;
  ce_only.phase1_epochs = zero.phase1_epochs + zero.phase2_epochs;
  ce_only.phase2_epochs = 0;
  const TrainResult z = train(init, data, t.corpus.table, zero);
  const TrainResult ce = train(init, data, t.corpus.table, ce_only);
  CHECK(z.model.parameters == ce.model.parameters);
  REQUIRE(z.epochs.size() == ce.epochs.size());
  for (std::size_t e = 0; e < z.epochs.size(); ++e) {
    CHECK(z.epochs[e].mean.loss_cls == ce.epochs[e].mean.loss_cls);
    CHECK(z.epochs[e].mean.total_loss == ce.epochs[e].mean.total_loss);
  }
}

TEST_CASE("training log composition and warm-up") {
  const TrainResult& r = fixture::toy().robust;
  CHECK_FALSE(r.diverged);
  CHECK(r.upper_bound_regime);
  double prev_gamma = 0.0;
  for (const EpochDiagnostics& e : r.epochs) {
    if (e.phase == 1) {
      CHECK(e.mean.gamma_effective == 0.0);
      CHECK(e.mean.total_loss == e.mean.loss_cls);
    }
    CHECK(e.mean.gamma_effective >= prev_gamma);
    prev_gamma = e.mean.gamma_effective;
  }
  CHECK(r.epochs.back().mean.gamma_effective == 4.0);
  CHECK(r.hinge_checks > 0);
  CHECK(r.hinge_violations == 0);
  const std::string log = format_training_log(r);
  CHECK(log.rfind("phase,epoch,steps,gamma_effective,loss_cls,loss_robust,total_loss", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(log.begin(), log.end(), '\n')) == r.epochs.size() + 1);
}

TEST_CASE("trained model is accurate on the default corpus") {
  SyntheticSpec spec;
  spec.seed = 3;
  const SyntheticCorpus c = generate_synthetic(spec);
  TrainConfig cfg;
  cfg.seed = 4;
  const TrainResult r = train(fixture::fresh_model(c, 1.0, 6), c.train, c.table, cfg);
  std::size_t correct = 0;
  ClassifierEvaluator head(r.model);
  for (const auto& ex : c.test) {
    const Tensor z = encode(r.model, ex.tokens);
    correct += static_cast<int>(head.predict(z.data(), {})) == ex.label ? 1 : 0;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(c.test.size()) >= 0.95);
}

TEST_CASE("divergence keeps the last good parameters") {
  const auto& t = fixture::toy();
  TrainConfig cfg = fixture::quick_config(4.0);
  cfg.adam.lr = 1e7;
  cfg.phase1_epochs = 0;
  cfg.warmup_steps = 0;
  const Dataset data(t.corpus.train.begin(), t.corpus.train.begin() + 100);
  const TrainResult r = train(fixture::fresh_model(t.corpus, 1.0, 5), data, t.corpus.table, cfg);
  CHECK(r.diverged);
  CHECK_FALSE(r.divergence_message.empty());
  for (const Parameter& p : r.model.parameters.items()) CHECK(p.value.all_finite());
}

TEST_CASE("training rejects bad inputs") {
  const auto& t = fixture::toy();
  const ModelCheckpoint init = fixture::fresh_model(t.corpus, 1.0, 5);
  CHECK_THROWS_AS(train(init, {}, t.corpus.table, fixture::quick_config()), DataError);
  TrainConfig bad = fixture::quick_config();
  bad.batch_size = 0;
  CHECK_THROWS_AS(train(init, t.corpus.train, t.corpus.table, bad), ConfigError);
}

TEST_CASE("bound check") {
  const auto& t = fixture::toy();
  const Dataset sample(t.corpus.test.begin(), t.corpus.test.begin() + 96);
  TrainConfig cfg = fixture::quick_config(4.0);

  const BoundReport rep = bound_check(t.robust.model, sample, t.corpus.table, cfg, 2000);
  CHECK(rep.examples == sample.size());
  CHECK(rep.hinge_violations == 0);
  CHECK_FALSE(rep.batches.empty());
  for (const BoundBatch& b : rep.batches) {
    CHECK(b.bound == doctest::Approx(b.loss_cls + cfg.gamma * b.loss_robust).epsilon(1e-12));
    CHECK(b.gap >= 0.0);
  }

  cfg.gamma = 0.5;
  CHECK_THROWS_AS(bound_check(t.robust.model, sample, t.corpus.table, cfg, 100), ConfigError);
}
