#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "latcert/corpus.hpp"
#include "latcert/model.hpp"
#include "latcert/smoothing.hpp"
#include "latcert/statcore.hpp"

namespace latcert {

/// Returns the top class iff the two-sided binomial test of the top two
/// counts against p0 = 1/2 rejects at level alpha; nullopt means abstain.
std::optional<std::size_t> predict_from_votes(const VoteCounts& votes, Probability alpha);

/// Votes over draws [0, t) of the smoothed hard classifier, then
/// predict_from_votes.
std::optional<std::size_t> predict(const ModelCheckpoint& model, std::span<const TokenId> tokens,
                                   const NoiseSpec& spec, std::uint64_t t, Probability alpha);

struct CertificationRecord {
  std::uint64_t example_id = 0;
  int label = -1;
  /// Present only for certified examples.
  std::optional<std::size_t> predicted;
  /// Majority class of the selection draws (kept even when abstaining).
  std::size_t cls_a = 0;
  std::int64_t cnt_a = 0;
  double p_a_lower = 0.0;
  /// sigma * Phi^-1(p_a_lower), or 0 when p_a_lower <= 1/2.
  double radius_r = 0.0;
  double radius_r_hat = 0.0;
  bool certified = false;
  double alpha = 0.0;
  std::uint64_t t1 = 0;
  std::uint64_t t2 = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const CertificationRecord&, const CertificationRecord&) = default;
};

/// Certification decision from the estimation counts alone.
CertificationRecord decide(std::size_t cls_a, std::int64_t cnt_a, std::uint64_t t2, Probability alpha,
                           double sigma, double r_hat);

struct CertifyOptions {
  std::uint64_t t1 = 50;
  std::uint64_t t2 = 2000;
  Probability alpha{0.01};
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

/// Selection over draws [0, t1), estimation over [t1, t1 + t2) of the noise
/// stream `spec`, R-hat from interval propagation of the substitution box.
CertificationRecord certify(const ModelCheckpoint& model, std::span<const TokenId> tokens,
                            const SubstitutionTable& table, const NoiseSpec& spec, std::uint64_t t1,
                            std::uint64_t t2, Probability alpha);

struct CertificationSummary {
  std::size_t examples = 0;
  std::size_t certified = 0;
  std::size_t certified_correct = 0;
  std::size_t clean_correct = 0;
  std::size_t abstained = 0;
  /// Abstentions count as errors; 0 for an empty dataset.
  double certified_accuracy = 0.0;
  /// Fraction whose selection class cls_A equals the label.
  double clean_accuracy = 0.0;
  double abstention_rate = 0.0;
};

CertificationSummary summarize(std::span<const CertificationRecord> records);

struct CertificationRun {
  std::vector<CertificationRecord> records;
  CertificationSummary summary;
};

/// Certifies every example with noise seed `options.seed ^ example_id`.
/// Records come back in dataset order and do not depend on `options.jobs`.
/// A failing example aborts the run with an ExampleError naming its id.
CertificationRun certify_dataset(const ModelCheckpoint& model, const Dataset& data,
                                 const SubstitutionTable& table, const CertifyOptions& options);

}  // namespace latcert
