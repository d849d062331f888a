#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "latcert/adam.hpp"
#include "latcert/corpus.hpp"
#include "latcert/model.hpp"
#include "latcert/smoothing.hpp"
#include "latcert/tape.hpp"

namespace latcert {

struct TrainConfig {
  double sigma = 1.0;
  double gamma = 4.0;
  double margin = 1.0;
  std::size_t noise_samples = 1;
  AdamHyper adam{.lr = 0.01};
  /// Cross-entropy-only epochs before the robust term is switched on.
  std::size_t phase1_epochs = 5;
  std::size_t phase2_epochs = 15;
  /// Phase-2 steps over which gamma ramps linearly from 0.
  std::uint64_t warmup_steps = 200;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  /// Throws ConfigError for nonsensical values.
  void validate() const;
  /// gamma * margin >= 1, the regime where the hinge dominates the
  /// certification-error indicator.
  [[nodiscard]] bool upper_bound_regime() const noexcept { return gamma * margin >= 1.0; }
  /// Effective gamma at phase-2 step `step` (0-based).
  [[nodiscard]] double gamma_at(std::uint64_t step) const noexcept;
};

struct StepDiagnostics {
  double loss_cls = 0.0;
  double loss_robust = 0.0;
  double total_loss = 0.0;
  double gamma_effective = 0.0;
  double mean_r = 0.0;
  double mean_r_hat = 0.0;
  /// Mean of 1(R_hat >= R) over the batch.
  double cert_error_indicator_mean = 0.0;
};

/// Losses of one batch recorded on a single tape.
///
/// Both terms share the same noisy passes. `total` is cls + gamma * robust,
/// and is cls itself when gamma is 0, so the robust branch is then left out
/// of the backward sweep.
struct BatchLoss {
  std::unique_ptr<Tape> tape;
  Var cls;
  Var robust;
  Var total;
  StepDiagnostics diagnostics;
  std::vector<double> r;
  std::vector<double> r_hat;
  std::vector<double> hinge;
};

/// Noise for example b, sample j is draw b * k + j of `noise`.
BatchLoss batch_loss(const ModelCheckpoint& model, std::span<const LabeledExample* const> batch,
                     const SubstitutionTable& table, const NoiseSpec& noise, std::size_t k, double margin,
                     double gamma_effective);

struct LossValue {
  double value = 0.0;
  Gradients gradients;
};

/// Mean over batch and k noise samples of -log clamp(f_y(s(x) + n)).
LossValue loss_cls(const ModelCheckpoint& model, std::span<const LabeledExample> batch, const NoiseSpec& noise,
                   std::size_t k);

/// Mean over the batch of max(0, R_hat - R + m) with R from the k-sample
/// plug-in soft expectation.
LossValue loss_robust(const ModelCheckpoint& model, std::span<const LabeledExample> batch,
                      const SubstitutionTable& table, const NoiseSpec& noise, double margin, std::size_t k);

struct EpochDiagnostics {
  int phase = 1;
  std::size_t epoch = 0;
  std::uint64_t steps = 0;
  StepDiagnostics mean;
};

struct TrainResult {
  ModelCheckpoint model;
  /// Snapshot at the end of phase 1.
  ModelCheckpoint phase1_model;
  std::vector<EpochDiagnostics> epochs;
  std::uint64_t steps = 0;
  /// Per-example hinge-dominance checks on batches with gamma_eff * m >= 1.
  std::uint64_t hinge_checks = 0;
  std::uint64_t hinge_violations = 0;
  bool upper_bound_regime = false;
  bool diverged = false;
  /// Set when diverged; `model` then holds the last good parameters.
  std::string divergence_message;
};

/// Two-phase training. `initial` supplies the architecture, frozen embeddings and
/// starting parameters.
TrainResult train(const ModelCheckpoint& initial, const Dataset& data, const SubstitutionTable& table,
                  const TrainConfig& config);

/// One row per epoch.
std::string format_training_log(const TrainResult& result);

struct BoundBatch {
  std::size_t examples = 0;
  double loss_cls = 0.0;
  double loss_robust = 0.0;
  /// loss_cls + gamma * loss_robust.
  double bound = 0.0;
  /// Mean of 1(R <= R_hat), i.e. 1 - mean 1(R - R_hat > 0).
  double cert_error = 0.0;
  double gap = 0.0;
};

struct BoundReport {
  std::size_t examples = 0;
  std::uint64_t hinge_violations = 0;
  std::vector<BoundBatch> batches;
  BoundBatch overall;
};

/// Evaluates the hinge-dominance inequality per example and the bound gap
/// per batch, using `high_draws` noise draws for the soft expectations.
/// Refuses (ConfigError) when gamma * margin < 1.
BoundReport bound_check(const ModelCheckpoint& model, const Dataset& sample, const SubstitutionTable& table,
                            const TrainConfig& config, std::uint64_t high_draws);

}  // namespace latcert
