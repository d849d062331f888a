#include "latcert/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latcert/error.hpp"
#include "latcert/ibp.hpp"
#include "latcert/io.hpp"
#include "latcert/random.hpp"

namespace latcert {

namespace {

constexpr double kDivergenceLimit = 1e6;

void check_label(const LabeledExample& ex, std::size_t classes) {
  if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= classes) {
    throw DataError("example " + std::to_string(ex.id) + ": label " + std::to_string(ex.label) +
                    " outside [0, " + std::to_string(classes) + ")");
  }
}

std::vector<const LabeledExample*> pointers(std::span<const LabeledExample> batch) {
  std::vector<const LabeledExample*> out;
  out.reserve(batch.size());
  for (const LabeledExample& ex : batch) out.push_back(&ex);
  return out;
}

void accumulate(StepDiagnostics& acc, const StepDiagnostics& d, double w) {
  acc.loss_cls += w * d.loss_cls;
  acc.loss_robust += w * d.loss_robust;
  acc.total_loss += w * d.total_loss;
  acc.mean_r += w * d.mean_r;
  acc.mean_r_hat += w * d.mean_r_hat;
  acc.cert_error_indicator_mean += w * d.cert_error_indicator_mean;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(sigma > 0.0) || !std::isfinite(sigma)) fail("sigma must be positive");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) fail("gamma must be nonnegative");
  if (!std::isfinite(margin)) fail("margin must be finite");
  if (noise_samples == 0) fail("noise_samples must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(adam.lr > 0.0)) fail("learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    fail("Adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) fail("Adam epsilon must be positive");
}

double TrainConfig::gamma_at(std::uint64_t step) const noexcept {
  if (warmup_steps == 0 || step >= warmup_steps) return gamma;
  return gamma * (static_cast<double>(step) / static_cast<double>(warmup_steps));
}

BatchLoss batch_loss(const ModelCheckpoint& model, std::span<const LabeledExample* const> batch,
                     const SubstitutionTable& table, const NoiseSpec& noise, std::size_t k, double margin,
                     double gamma_effective) {
  if (k == 0) throw DomainError("at least one noise sample per example is required");
  if (batch.empty()) throw DataError("empty batch");
  noise.validate();
  const std::size_t classes = class_count(model.architecture);
  const std::size_t dim = latent_dim(model.architecture);
  if (noise.dim != dim) throw StructuralError("noise dimension does not match the latent dimension");
  const Tensor& emb = embedding_table(model);

  BatchLoss out;
  out.tape = std::make_unique<Tape>();
  Tape& tape = *out.tape;
  TapedModel tm(tape, model);

  std::vector<Var> ce_terms;
  std::vector<Var> hinges;
  ce_terms.reserve(batch.size() * k);
  hinges.reserve(batch.size());
  out.r.reserve(batch.size());
  out.r_hat.reserve(batch.size());
  out.hinge.reserve(batch.size());
  double indicator_sum = 0.0;

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const LabeledExample& ex = *batch[b];
    check_label(ex, classes);
    const auto y = static_cast<std::size_t>(ex.label);
    const Var latent = tm.encode(tm.embed(ex.tokens));

    std::vector<Var> probs;
    probs.reserve(k);
    for (std::size_t j = 0; j < k; ++j) {
      const Var n = tape.constant(sample_noise(noise, b * k + j));
      const Var log_probs = tm.classify(ad::add(latent, n));
      const Var p = ad::exp(log_probs);
      probs.push_back(p);
      const Var py = ad::clamp(ad::pick(p, y), kProbabilityClamp, 1.0 - kProbabilityClamp);
      ce_terms.push_back(ad::scale(ad::log(py), -1.0));
    }
    const Var expected = k == 1 ? probs.front() : ad::scale(ad::add_n(probs), 1.0 / static_cast<double>(k));
    const Var top = ad::clamp(ad::pick(expected, y), kProbabilityClamp, 1.0 - kProbabilityClamp);
    const Var runner = ad::clamp(ad::pick_runner_up(expected, y), kProbabilityClamp, 1.0 - kProbabilityClamp);
    const Var radius =
        ad::scale(ad::scale(ad::sub(ad::normal_quantile(top), ad::normal_quantile(runner)), 0.5), noise.sigma);

    const IntervalTensor box = input_interval(ex.tokens, table, emb);
    const TapedInterval lat = propagate(tm, tape.constant(box.lower), tape.constant(box.upper));
    const Var rh = r_hat(latent, lat.lower, lat.upper);
    const Var hinge = ad::relu(ad::add_scalar(ad::sub(rh, radius), margin));
    hinges.push_back(hinge);

    const double r = radius.value()[0];
    const double r_hat_v = rh.value()[0];
    out.r.push_back(r);
    out.r_hat.push_back(r_hat_v);
    out.hinge.push_back(hinge.value()[0]);
    if (r_hat_v >= r) indicator_sum += 1.0;
  }

  const auto n_ce = static_cast<double>(ce_terms.size());
  const auto n_b = static_cast<double>(batch.size());
  out.cls = ad::scale(ad::add_n(ce_terms), 1.0 / n_ce);
  out.robust = ad::scale(ad::add_n(hinges), 1.0 / n_b);
  out.total = gamma_effective == 0.0 ? out.cls : ad::add(out.cls, ad::scale(out.robust, gamma_effective));

  StepDiagnostics& d = out.diagnostics;
  d.loss_cls = out.cls.value()[0];
  d.loss_robust = out.robust.value()[0];
  d.total_loss = out.total.value()[0];
  d.gamma_effective = gamma_effective;
  d.mean_r = std::accumulate(out.r.begin(), out.r.end(), 0.0) / n_b;
  d.mean_r_hat = std::accumulate(out.r_hat.begin(), out.r_hat.end(), 0.0) / n_b;
  d.cert_error_indicator_mean = indicator_sum / n_b;
  return out;
}

LossValue loss_cls(const ModelCheckpoint& model, std::span<const LabeledExample> batch, const NoiseSpec& noise,
                   std::size_t k) {
  const auto ptrs = pointers(batch);
  SubstitutionTable empty(embedding_table(model).dim(0));
  BatchLoss bl = batch_loss(model, ptrs, empty, noise, k, 0.0, 0.0);
  LossValue out;
  out.value = bl.cls.value()[0];
  out.gradients = bl.tape->gradient(bl.cls);
  return out;
}

LossValue loss_robust(const ModelCheckpoint& model, std::span<const LabeledExample> batch,
                      const SubstitutionTable& table, const NoiseSpec& noise, double margin, std::size_t k) {
  const auto ptrs = pointers(batch);
  BatchLoss bl = batch_loss(model, ptrs, table, noise, k, margin, 0.0);
  LossValue out;
  out.value = bl.robust.value()[0];
  out.gradients = bl.tape->gradient(bl.robust);
  return out;
}

TrainResult train(const ModelCheckpoint& initial, const Dataset& data, const SubstitutionTable& table,
                  const TrainConfig& config) {
  config.validate();
  validate(initial.architecture);
  if (data.empty()) throw DataError("training set is empty");
  const std::size_t classes = class_count(initial.architecture);
  validate_dataset(data, embedding_table(initial).dim(0), classes);

  TrainResult result;
  result.model = initial;
  result.model.sigma = config.sigma;
  result.upper_bound_regime = config.upper_bound_regime();
  AdamState adam;
  Rng order_rng(derive_seed(config.seed, "train.shuffle"));
  const std::uint64_t noise_root = derive_seed(config.seed, "train.noise");
  const std::size_t dim = latent_dim(initial.architecture);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t phase2_step = 0;
  const std::size_t total_epochs = config.phase1_epochs + config.phase2_epochs;

  for (std::size_t epoch = 0; epoch < total_epochs; ++epoch) {
    const bool phase2 = epoch >= config.phase1_epochs;
    if (epoch == config.phase1_epochs) result.phase1_model = result.model;
    order_rng.shuffle(order);
    EpochDiagnostics ed;
    ed.phase = phase2 ? 2 : 1;
    ed.epoch = epoch;
    double weight_sum = 0.0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const LabeledExample*> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data[order[i]]);

      const double gamma_eff = phase2 ? config.gamma_at(phase2_step) : 0.0;
      const NoiseSpec noise{config.sigma, dim, derive_seed(noise_root, result.steps)};
      BatchLoss bl = batch_loss(result.model, batch, table, noise, config.noise_samples, config.margin, gamma_eff);
      const double total = bl.diagnostics.total_loss;
      if (!std::isfinite(total) || total > kDivergenceLimit) {
        result.diverged = true;
        result.divergence_message = "loss " + format_double(total) + " at step " + std::to_string(result.steps) +
                                    "; keeping the parameters from before this step";
        break;
      }
      if (gamma_eff * config.margin >= 1.0) {
        result.hinge_checks += bl.hinge.size();
        for (std::size_t b = 0; b < bl.hinge.size(); ++b) {
          const double indicator = bl.r_hat[b] >= bl.r[b] ? 1.0 : 0.0;
          if (!(gamma_eff * bl.hinge[b] >= indicator)) ++result.hinge_violations;
        }
      }
      Gradients grads = bl.tape->gradient(bl.total);
      bool finite = true;
      for (const auto& [name, g] : grads) finite = finite && g.all_finite();
      if (!finite) {
        result.diverged = true;
        result.divergence_message = "non-finite gradient at step " + std::to_string(result.steps) +
                                    "; keeping the parameters from before this step";
        break;
      }
      adam_step(result.model.parameters, grads, adam, config.adam);

      const auto w = static_cast<double>(batch.size());
      accumulate(ed.mean, bl.diagnostics, w);
      ed.mean.gamma_effective = gamma_eff;
      weight_sum += w;
      ++ed.steps;
      ++result.steps;
      if (phase2) ++phase2_step;
    }
    if (weight_sum > 0.0) {
      const double g = ed.mean.gamma_effective;
      StepDiagnostics scaled;
      accumulate(scaled, ed.mean, 1.0 / weight_sum);
      scaled.gamma_effective = g;
      ed.mean = scaled;
      result.epochs.push_back(ed);
    }
    if (result.diverged) break;
  }
  if (result.phase1_model.parameters.size() == 0) result.phase1_model = result.model;
  return result;
}

std::string format_training_log(const TrainResult& result) {
  std::string out =
      "phase,epoch,steps,gamma_effective,loss_cls,loss_robust,total_loss,mean_r,mean_r_hat,"
      "cert_error_indicator_mean\n";
  for (const EpochDiagnostics& e : result.epochs) {
    const StepDiagnostics& d = e.mean;
    out += std::to_string(e.phase) + "," + std::to_string(e.epoch) + "," + std::to_string(e.steps) + "," +
           format_double(d.gamma_effective) + "," + format_double(d.loss_cls) + "," +
           format_double(d.loss_robust) + "," + format_double(d.total_loss) + "," + format_double(d.mean_r) +
           "," + format_double(d.mean_r_hat) + "," + format_double(d.cert_error_indicator_mean) + "\n";
  }
  return out;
}

BoundReport bound_check(const ModelCheckpoint& model, const Dataset& sample, const SubstitutionTable& table,
                            const TrainConfig& config, std::uint64_t high_draws) {
  config.validate();
  if (!config.upper_bound_regime()) {
    throw ConfigError("bound_check: gamma * margin = " + format_double(config.gamma * config.margin) +
                      " is below 1, so the hinge term does not dominate the certification-error indicator");
  }
  if (high_draws == 0) throw DomainError("bound_check: high_draws must be positive");
  const std::size_t classes = class_count(model.architecture);
  const std::size_t dim = latent_dim(model.architecture);
  ClassifierEvaluator head(model);
  const NoiseBank bank(NoiseSpec{config.sigma, dim, derive_seed(config.seed, "bound.noise")}, 0, high_draws);

  BoundReport report;
  report.examples = sample.size();
  auto finish = [&](BoundBatch b) {
    const auto n = static_cast<double>(b.examples);
    b.loss_cls /= n;
    b.loss_robust /= n;
    b.cert_error /= n;
    b.bound = b.loss_cls + config.gamma * b.loss_robust;
    b.gap = b.bound - b.cert_error;
    return b;
  };
  BoundBatch current;
  BoundBatch all;
  for (const LabeledExample& ex : sample) {
    check_label(ex, classes);
    const auto y = static_cast<std::size_t>(ex.label);
    const LatentBounds lb = latent_bounds(model, ex.tokens, table);
    std::vector<double> expected(classes, 0.0);
    double ce = 0.0;
    for (std::uint64_t i = 0; i < bank.count(); ++i) {
      const auto lp = head.log_probs(lb.center.data(), bank.draw(i));
      for (std::size_t c = 0; c < classes; ++c) expected[c] += std::exp(lp[c]);
      ce -= std::log(clamp_probability(std::exp(lp[y])));
    }
    for (double& e : expected) e /= static_cast<double>(bank.count());
    ce /= static_cast<double>(bank.count());
    std::size_t runner = y == 0 ? 1 : 0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (c != y && expected[c] > expected[runner]) runner = c;
    }
    const double a = std_normal_quantile(clamp_probability(expected[y]));
    const double b = std_normal_quantile(clamp_probability(expected[runner]));
    const double r = config.sigma * (0.5 * (a - b));
    const double hinge = std::max(0.0, (lb.r_hat - r) + config.margin);
    const double indicator = lb.r_hat >= r ? 1.0 : 0.0;
    if (!(config.gamma * hinge >= indicator)) ++report.hinge_violations;
    for (BoundBatch* acc : {&current, &all}) {
      ++acc->examples;
      acc->loss_cls += ce;
      acc->loss_robust += hinge;
      acc->cert_error += indicator;
    }
    if (current.examples == config.batch_size) {
      report.batches.push_back(finish(current));
      current = BoundBatch{};
    }
  }
  if (current.examples > 0) report.batches.push_back(finish(current));
  if (all.examples > 0) report.overall = finish(all);
  return report;
}

}  // namespace latcert
