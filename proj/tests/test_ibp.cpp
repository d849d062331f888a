#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "latcert/error.hpp"
#include "latcert/ibp.hpp"
#include "latcert/random.hpp"
#include "oracles.hpp"

using namespace latcert;

namespace {

ModelCheckpoint vector_encoder(std::vector<LayerSpec> encoder, std::size_t latent) {
  Architecture a;
  a.encoder = std::move(encoder);
  a.classifier = {{LayerKind::Affine, latent, 2, 0}, {LayerKind::LogSoftmax, 2, 2, 0}};
  return init_model(a, std::nullopt, 1.0, 3);
}

std::vector<TokenId> sample_neighbor(std::span<const TokenId> tokens, const SubstitutionTable& table, Rng& rng) {
  std::vector<TokenId> out;
  for (const auto& o : position_options(tokens, table)) out.push_back(o[rng.below(o.size())]);
  return out;
}

}  // namespace

TEST_CASE("interval tensor validation") {
  CHECK_THROWS_AS(IntervalTensor(Tensor::vector({0.0, 1.0}), Tensor::vector({1.0})), StructuralError);
  CHECK_THROWS_AS(IntervalTensor(Tensor::vector({2.0}), Tensor::vector({1.0})), DomainError);
  CHECK_THROWS_AS(IntervalTensor(Tensor::vector({0.0}), Tensor::vector({INFINITY})), DomainError);
  const IntervalTensor box(Tensor::vector({0.0, -1.0}), Tensor::vector({1.0, 1.0}));
  CHECK(box.contains(Tensor::vector({0.5, 1.0})));
  CHECK_FALSE(box.contains(Tensor::vector({1.5, 0.0})));
  CHECK(box.contains(Tensor::vector({1.0 + 1e-12, 0.0}), 1e-9));
}

TEST_CASE("input interval examples") {
  Tensor emb(Shape{3, 2}, std::vector<double>{0.0, 1.0, 2.0, -1.0, 5.0, 5.0});
  SubstitutionTable table(3);
  const std::vector<TokenId> one{1};
  table.set(0, one);

  const IntervalTensor lone = input_interval(std::vector<TokenId>{2}, table, emb);
  CHECK(lone.lower == lone.upper);
  CHECK(lone.lower.at(0, 0) == 5.0);

  const IntervalTensor box = input_interval(std::vector<TokenId>{0, 2}, table, emb);
  CHECK(box.lower.shape() == Shape{2, 2});
  CHECK(box.lower.at(0, 0) == 0.0);
  CHECK(box.lower.at(0, 1) == -1.0);
  CHECK(box.upper.at(0, 0) == 2.0);
  CHECK(box.upper.at(0, 1) == 1.0);

  CHECK_THROWS_AS(input_interval(std::vector<TokenId>{3}, table, emb), LookupError);
}

TEST_CASE("substituted embeddings lie inside the input box") {
  const auto& c = fixture::toy().corpus;
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    const auto& ex = c.test[rng.below(c.test.size())];
    const IntervalTensor box = input_interval(ex.tokens, c.table, c.embeddings.matrix);
    const auto nb = sample_neighbor(ex.tokens, c.table, rng);
    for (std::size_t i = 0; i < nb.size(); ++i) {
      for (std::size_t d = 0; d < c.embeddings.dim(); ++d) {
        const double v = c.embeddings.matrix.at(nb[i], d);
        CHECK(box.lower.at(i, d) <= v);
        CHECK(v <= box.upper.at(i, d));
      }
    }
  }
}

TEST_CASE("propagate examples") {
  SUBCASE("affine") {
    ModelCheckpoint m = vector_encoder({{LayerKind::Affine, 2, 1, 0}}, 1);
    Tensor& w = m.parameters.tensor(parameter_name(Partition::Encoder, 0, "weight"));
    w[0] = 1.0;
    w[1] = -1.0;
    const IntervalTensor out = propagate(m, IntervalTensor(Tensor::vector({0.0, 0.0}), Tensor::vector({1.0, 1.0})));
    CHECK(out.lower[0] == -1.0);
    CHECK(out.upper[0] == 1.0);
  }
  SUBCASE("relu") {
    ModelCheckpoint m = vector_encoder({{LayerKind::Affine, 1, 1, 0}, {LayerKind::Relu, 1, 1, 0}}, 1);
    m.parameters.tensor(parameter_name(Partition::Encoder, 0, "weight"))[0] = 1.0;
    const IntervalTensor out = propagate(m, IntervalTensor(Tensor::vector({-1.0}), Tensor::vector({1.0})));
    CHECK(out.lower[0] == 0.0);
    CHECK(out.upper[0] == 1.0);
  }
  SUBCASE("unsupported layer kind") {
    ModelCheckpoint m = vector_encoder({{LayerKind::Affine, 2, 2, 0}}, 2);
    m.architecture.encoder.push_back({LayerKind::LogSoftmax, 2, 2, 0});
    CHECK_THROWS_AS(propagate(m, IntervalTensor(Tensor::vector({0.0, 0.0}), Tensor::vector({1.0, 1.0}))),
                    StructuralError);
  }
}

TEST_CASE("zero-width box reproduces the forward pass") {
  const auto& t = fixture::toy();
  for (const ModelCheckpoint* m : {&t.robust.model, &t.plain.model}) {
    for (std::size_t i = 0; i < 10; ++i) {
      const auto& tokens = t.corpus.test[i].tokens;
      const LatentBounds lb = latent_bounds(*m, tokens, SubstitutionTable(t.corpus.embeddings.vocab.size()));
      const Tensor z = encode(*m, tokens);
      for (std::size_t j = 0; j < z.size(); ++j) {
        CHECK(std::fabs(lb.bounds.lower[j] - z[j]) < 1e-12);
        CHECK(std::fabs(lb.bounds.upper[j] - z[j]) < 1e-12);
      }
      CHECK(lb.r_hat < 1e-12);
    }
  }
}

TEST_CASE("r_hat examples") {
  CHECK(r_hat(Tensor::vector({0.0}), IntervalTensor(Tensor::vector({-1.0}), Tensor::vector({2.0}))) == 2.0);
  CHECK(r_hat(Tensor::vector({0.0, 0.0}),
              IntervalTensor(Tensor::vector({-3.0, 0.0}), Tensor::vector({0.0, 4.0}))) == 5.0);
  CHECK(r_hat(Tensor::vector({1.0, 2.0}), IntervalTensor(Tensor::vector({1.0, 2.0}), Tensor::vector({1.0, 2.0}))) ==
        0.0);
  CHECK_THROWS_AS(r_hat(Tensor::vector({3.0}), IntervalTensor(Tensor::vector({0.0}), Tensor::vector({1.0}))),
                  SoundnessError);
  CHECK_NOTHROW(r_hat(Tensor::vector({1.0 + 1e-10}), IntervalTensor(Tensor::vector({0.0}), Tensor::vector({1.0}))));
}

TEST_CASE("latent bounds are sound on trained and random models") {
  const auto& t = fixture::toy();
  std::vector<ModelCheckpoint> models{t.robust.model, t.plain.model};
  for (std::uint64_t s = 0; s < 3; ++s) models.push_back(fixture::fresh_model(t.corpus, 1.0, 100 + s));
  Rng rng(12);
  for (const ModelCheckpoint& m : models) {
    for (std::size_t e = 0; e < 5; ++e) {
      const auto& tokens = t.corpus.test[rng.below(t.corpus.test.size())].tokens;
      const LatentBounds lb = latent_bounds(m, tokens, t.corpus.table);
      CHECK(lb.bounds.contains(lb.center));
      for (int k = 0; k < 200; ++k) {
        const Tensor z = encode(m, sample_neighbor(tokens, t.corpus.table, rng));
        CHECK(lb.bounds.contains(z));
        double sq = 0.0;
        for (std::size_t j = 0; j < z.size(); ++j) sq += (z[j] - lb.center[j]) * (z[j] - lb.center[j]);
        CHECK(std::sqrt(sq) <= lb.r_hat + 1e-9);
      }
    }
  }
}

TEST_CASE("enlarging a substitution set never shrinks r_hat") {
  const auto& t = fixture::toy();
  const ModelCheckpoint& m = t.robust.model;
  Rng rng(13);
  const std::size_t vocab = t.corpus.embeddings.vocab.size();
  for (int trial = 0; trial < 30; ++trial) {
    const auto& tokens = t.corpus.test[rng.below(t.corpus.test.size())].tokens;
    SubstitutionTable table = t.corpus.table;
    double prev = latent_bounds(m, tokens, table).r_hat;
    for (int grow = 0; grow < 4; ++grow) {
      const TokenId head = tokens[rng.below(tokens.size())];
      std::vector<TokenId> subs(table.substitutes(head).begin(), table.substitutes(head).end());
      subs.push_back(static_cast<TokenId>(rng.below(vocab)));
      table.set(head, subs);
      const double next = latent_bounds(m, tokens, table).r_hat;
      CHECK(next >= prev);
      prev = next;
    }
  }
}

TEST_CASE("taped r_hat gradient matches finite differences") {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 4;
    Tensor c(Shape{n}), l(Shape{n}), u(Shape{n});
    for (std::size_t i = 0; i < n; ++i) {
      c[i] = rng.normal();
      l[i] = c[i] - rng.uniform(0.1, 1.0);
      u[i] = c[i] + rng.uniform(0.1, 1.0);
    }
    Tape tape;
    const Var r = r_hat(tape.parameter("c", c), tape.parameter("l", l), tape.parameter("u", u));
    CHECK(r.value()[0] == doctest::Approx(r_hat(c, IntervalTensor(l, u))).epsilon(1e-14));
    const Gradients g = tape.gradient(r);
    for (const auto& [name, base] : {std::pair<std::string, Tensor>{"c", c}, {"l", l}, {"u", u}}) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto fd = oracle::probe_derivative(
            [&, name = name](double v) {
              Tensor cc = c, ll = l, uu = u;
              (name == "c" ? cc : name == "l" ? ll : uu)[i] = v;
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += std::pow(std::max(uu[j] - cc[j], cc[j] - ll[j]), 2);
              return std::sqrt(s);
            },
            base[i], 1e-6);
        if (fd.kink) continue;
        const double a = g.at(name)[i];
        const double scale = std::max(std::fabs(a), std::fabs(fd.derivative));
        if (scale < 1e-8) continue;
        CHECK(std::fabs(a - fd.derivative) / scale < 1e-3);
      }
    }
  }
}

TEST_CASE("r_hat ties send the gradient to the upper branch") {
  Tape tape;
  const Var r = r_hat(tape.parameter("c", Tensor::vector({0.0})), tape.parameter("l", Tensor::vector({-1.0})),
                      tape.parameter("u", Tensor::vector({1.0})));
  const Gradients g = tape.gradient(r);
  CHECK(g.at("u")[0] == 1.0);
  CHECK(g.at("l")[0] == 0.0);
  CHECK(g.at("c")[0] == -1.0);
}

TEST_CASE("taped propagation matches the plain one") {
  const auto& t = fixture::toy();
  const ModelCheckpoint& m = t.robust.model;
  const auto& tokens = t.corpus.test[3].tokens;
  const IntervalTensor in = input_interval(tokens, t.corpus.table, embedding_table(m));
  const IntervalTensor plain = propagate(m, in);
  Tape tape;
  TapedModel tm(tape, m);
  const TapedInterval taped = propagate(tm, tape.constant(in.lower), tape.constant(in.upper));
  CHECK(taped.lower.value() == plain.lower);
  CHECK(taped.upper.value() == plain.upper);
}
