#include "latcert/certifier.hpp"

#include "latcert/error.hpp"
#include "latcert/ibp.hpp"
#include "latcert/parallel.hpp"

namespace latcert {

namespace {

void check_alpha(Probability alpha) {
  if (!(alpha.value() > 0.0 && alpha.value() < 1.0)) throw DomainError("alpha must lie in (0,1)");
}

}  // namespace

std::optional<std::size_t> predict_from_votes(const VoteCounts& votes, Probability alpha) {
  check_alpha(alpha);
  const std::size_t a = votes.top();
  const std::size_t b = votes.runner_up();
  const std::int64_t n = votes.counts[a] + votes.counts[b];
  if (n == 0) return std::nullopt;
  if (pvalue_binom(votes.counts[a], n, Probability(0.5)) <= alpha) return a;
  return std::nullopt;
}

std::optional<std::size_t> predict(const ModelCheckpoint& model, std::span<const TokenId> tokens,
                                   const NoiseSpec& spec, std::uint64_t t, Probability alpha) {
  return predict_from_votes(hard_votes(model, tokens, spec, t), alpha);
}

CertificationRecord decide(std::size_t cls_a, std::int64_t cnt_a, std::uint64_t t2, Probability alpha,
                           double sigma, double r_hat) {
  check_alpha(alpha);
  CertificationRecord r;
  r.cls_a = cls_a;
  r.cnt_a = cnt_a;
  r.t2 = t2;
  r.alpha = alpha.value();
  r.radius_r_hat = r_hat;
  r.p_a_lower = lower_conf_bound(cnt_a, static_cast<std::int64_t>(t2), Probability(1.0 - alpha.value())).value();
  if (const auto radius = hard_radius(Probability(r.p_a_lower), sigma)) {
    r.radius_r = *radius;
    r.certified = *radius >= r_hat;
  }
  if (r.certified) r.predicted = cls_a;
  return r;
}

CertificationRecord certify(const ModelCheckpoint& model, std::span<const TokenId> tokens,
                            const SubstitutionTable& table, const NoiseSpec& spec, std::uint64_t t1,
                            std::uint64_t t2, Probability alpha) {
  if (t1 == 0 || t2 == 0) throw DomainError("certify: t1 and t2 must be positive");
  const LatentBounds lb = latent_bounds(model, tokens, table);
  ClassifierEvaluator head(model);
  const VoteCounts selection = hard_votes(head, lb.center.data(), spec, t1, 0);
  const std::size_t cls_a = selection.top();
  const VoteCounts estimation = hard_votes(head, lb.center.data(), spec, t2, t1);
  CertificationRecord r = decide(cls_a, estimation.counts[cls_a], t2, alpha, spec.sigma, lb.r_hat);
  r.t1 = t1;
  r.seed = spec.seed;
  return r;
}

CertificationSummary summarize(std::span<const CertificationRecord> records) {
  CertificationSummary s;
  s.examples = records.size();
  for (const CertificationRecord& r : records) {
    if (r.certified) {
      ++s.certified;
      if (r.predicted && static_cast<int>(*r.predicted) == r.label) ++s.certified_correct;
    } else {
      ++s.abstained;
    }
    if (static_cast<int>(r.cls_a) == r.label) ++s.clean_correct;
  }
  if (s.examples > 0) {
    const auto n = static_cast<double>(s.examples);
    s.certified_accuracy = static_cast<double>(s.certified_correct) / n;
    s.clean_accuracy = static_cast<double>(s.clean_correct) / n;
    s.abstention_rate = static_cast<double>(s.abstained) / n;
  }
  return s;
}

CertificationRun certify_dataset(const ModelCheckpoint& model, const Dataset& data,
                                 const SubstitutionTable& table, const CertifyOptions& options) {
  validate(model.architecture);
  CertificationRun run;
  run.records.resize(data.size());
  const std::size_t dim = latent_dim(model.architecture);
  parallel_for(data.size(), options.jobs, [&](std::size_t i) {
    const LabeledExample& ex = data[i];
    try {
      const NoiseSpec spec{model.sigma, dim, options.seed ^ ex.id};
      CertificationRecord r = certify(model, ex.tokens, table, spec, options.t1, options.t2, options.alpha);
      r.example_id = ex.id;
      r.label = ex.label;
      run.records[i] = std::move(r);
    } catch (const ExampleError&) {
      throw;
    } catch (const std::exception& e) {
      throw ExampleError(ex.id, e.what());
    }
  });
  run.summary = summarize(run.records);
  return run;
}

}  // namespace latcert
