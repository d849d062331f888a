#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latcert/corpus.hpp"
#include "latcert/model.hpp"
#include "latcert/smoothing.hpp"

namespace latcert {

struct AttackOutcome {
  std::uint64_t example_id = 0;
  int label = -1;
  std::vector<TokenId> adversarial;
  std::size_t clean_prediction = 0;
  std::size_t prediction = 0;
  /// prediction != label.
  bool success = false;
  /// Model evaluations spent by the search; the clean evaluation is free.
  std::uint64_t queries = 0;

  friend bool operator==(const AttackOutcome&, const AttackOutcome&) = default;
};

/// The smoothed model as seen by an attacker: a fixed bank of noise draws,
/// hard-vote argmax for predictions and the mean f_y as a score.
class SmoothedQuery {
 public:
  SmoothedQuery(const ModelCheckpoint& model, std::uint64_t draws, std::uint64_t seed);

  struct Result {
    std::size_t prediction = 0;
    /// Mean over draws of f_label(s(x) + n).
    double score = 0.0;
  };
  Result evaluate(std::span<const TokenId> tokens, std::size_t label);
  /// Majority class of the hard votes over the bank, lowest index on ties.
  std::size_t predict(std::span<const TokenId> tokens);

  [[nodiscard]] const ModelCheckpoint& model() const noexcept { return *model_; }

 private:
  const ModelCheckpoint* model_;
  ClassifierEvaluator head_;
  NoiseBank bank_;
  std::vector<std::int64_t> votes_;
};

struct AttackConfig {
  std::uint64_t draws = 32;
  std::uint64_t seed = 0;
};

/// Left-to-right passes; at each position tries every option and keeps the
/// one with the lowest true-class score (earliest wins ties). Stops on
/// success, after `max_passes`, or when a pass changes nothing.
AttackOutcome greedy_substitution_attack(const ModelCheckpoint& model, const LabeledExample& example,
                                         const SubstitutionTable& table, std::size_t max_passes,
                                         const AttackConfig& config = {});

/// Baseline: `tries` uniformly random members of the neighbourhood.
AttackOutcome random_substitution_attack(const ModelCheckpoint& model, const LabeledExample& example,
                                         const SubstitutionTable& table, std::size_t tries,
                                         const AttackConfig& config = {});

struct OracleConfig {
  std::size_t cap = 4096;
  std::uint64_t draws = 32;
  std::uint64_t seed = 0;
  /// Class a neighbour must keep; defaults to the label.
  std::optional<std::size_t> reference_class;
};

struct OracleOutcome {
  AttackOutcome outcome;
  bool skipped = false;
  std::uint64_t neighborhood = 0;
  /// Members evaluated before stopping.
  std::uint64_t enumerated = 0;
  /// The reference class used for flips.
  std::size_t reference = 0;
  /// A member whose majority class differs from the reference was found.
  bool flipped = false;
};

/// Enumerates the neighbourhood in lexicographic option order and stops at
/// the first member whose hard-vote majority differs from the reference.
/// Neighbourhoods above the cap are skipped without evaluation.
OracleOutcome exhaustive_oracle(const ModelCheckpoint& model, const LabeledExample& example,
                                const SubstitutionTable& table, const OracleConfig& config = {});

/// Up to `edit_budget` random edits (duplicate a token in place, substitute
/// it, or delete it), stopping at the first edit that flips the prediction.
/// The sequence never shrinks below what the encoder accepts.
AttackOutcome editing_attack(const ModelCheckpoint& model, const LabeledExample& example,
                             const SubstitutionTable& table, std::size_t edit_budget, std::uint64_t seed,
                             const AttackConfig& config = {});

enum class AttackKind { Greedy, Random, Exhaustive, Editing };

AttackKind attack_kind_from_string(std::string_view name);
std::string_view to_string(AttackKind kind);

struct AttackRunOptions {
  AttackKind kind = AttackKind::Greedy;
  /// Passes for greedy, tries for random, edit budget for editing.
  std::size_t budget = 2;
  std::size_t cap = 4096;
  AttackConfig config;
  std::size_t jobs = 1;
};

struct AttackSummary {
  std::size_t examples = 0;
  std::size_t successes = 0;
  std::size_t skipped = 0;
  /// Fraction of evaluated examples whose prediction survived; 0 when none.
  double empirical_robust_accuracy = 0.0;
  double success_rate = 0.0;
  double mean_queries = 0.0;
};

struct AttackRun {
  std::vector<AttackOutcome> outcomes;
  /// Exhaustive runs only: examples skipped for exceeding the cap.
  std::vector<bool> skipped;
  AttackSummary summary;
};

/// Attacks every example; outcomes are in dataset order regardless of jobs.
AttackRun run_attack(const ModelCheckpoint& model, const Dataset& data, const SubstitutionTable& table,
                     const AttackRunOptions& options);

}  // namespace latcert
