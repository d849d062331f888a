#include "latcert/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "latcert/error.hpp"
#include "latcert/kernels.hpp"
#include "latcert/parallel.hpp"
#include "latcert/random.hpp"

namespace latcert {

namespace {

NoiseSpec attack_noise(const ModelCheckpoint& model, std::uint64_t seed) {
  return {model.sigma, latent_dim(model.architecture), derive_seed(seed, "attack.noise")};
}

std::size_t label_of(const LabeledExample& ex, const ModelCheckpoint& model) {
  if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= class_count(model.architecture)) {
    throw DataError("example " + std::to_string(ex.id) + ": label out of range");
  }
  return static_cast<std::size_t>(ex.label);
}

AttackOutcome start(const LabeledExample& ex, std::size_t clean) {
  AttackOutcome o;
  o.example_id = ex.id;
  o.label = ex.label;
  o.adversarial = ex.tokens;
  o.clean_prediction = clean;
  o.prediction = clean;
  o.success = static_cast<int>(clean) != ex.label;
  return o;
}

}  // namespace

SmoothedQuery::SmoothedQuery(const ModelCheckpoint& model, std::uint64_t draws, std::uint64_t seed)
    : model_(&model), head_(model), bank_(attack_noise(model, seed), 0, draws), votes_(head_.classes()) {
  if (draws == 0) throw DomainError("attack draw count must be positive");
}

SmoothedQuery::Result SmoothedQuery::evaluate(std::span<const TokenId> tokens, std::size_t label) {
  const Tensor latent = encode(*model_, tokens);
  std::fill(votes_.begin(), votes_.end(), 0);
  double score = 0.0;
  for (std::uint64_t i = 0; i < bank_.count(); ++i) {
    const auto lp = head_.log_probs(latent.data(), bank_.draw(i));
    ++votes_[kernels::argmax(lp)];
    score += std::exp(lp[label]);
  }
  Result r;
  r.prediction = static_cast<std::size_t>(std::max_element(votes_.begin(), votes_.end()) - votes_.begin());
  r.score = score / static_cast<double>(bank_.count());
  return r;
}

std::size_t SmoothedQuery::predict(std::span<const TokenId> tokens) {
  const Tensor latent = encode(*model_, tokens);
  std::fill(votes_.begin(), votes_.end(), 0);
  for (std::uint64_t i = 0; i < bank_.count(); ++i) ++votes_[head_.predict(latent.data(), bank_.draw(i))];
  return static_cast<std::size_t>(std::max_element(votes_.begin(), votes_.end()) - votes_.begin());
}

AttackOutcome greedy_substitution_attack(const ModelCheckpoint& model, const LabeledExample& example,
                                         const SubstitutionTable& table, std::size_t max_passes,
                                         const AttackConfig& config) {
  const std::size_t y = label_of(example, model);
  SmoothedQuery q(model, config.draws, config.seed);
  const auto clean = q.evaluate(example.tokens, y);
  AttackOutcome o = start(example, clean.prediction);
  if (o.success) return o;
  const auto options = position_options(example.tokens, table);
  double current = clean.score;
  for (std::size_t pass = 0; pass < max_passes && !o.success; ++pass) {
    bool changed = false;
    for (std::size_t i = 0; i < options.size() && !o.success; ++i) {
      if (options[i].size() < 2) continue;
      const TokenId held = o.adversarial[i];
      TokenId best = held;
      double best_score = current;
      std::size_t best_prediction = o.prediction;
      for (TokenId cand : options[i]) {
        if (cand == held) continue;
        o.adversarial[i] = cand;
        const auto r = q.evaluate(o.adversarial, y);
        ++o.queries;
        if (r.score < best_score) {
          best = cand;
          best_score = r.score;
          best_prediction = r.prediction;
        }
      }
      o.adversarial[i] = best;
      if (best != held) {
        changed = true;
        current = best_score;
        o.prediction = best_prediction;
        o.success = best_prediction != y;
      }
    }
    if (!changed) break;
  }
  return o;
}

AttackOutcome random_substitution_attack(const ModelCheckpoint& model, const LabeledExample& example,
                                         const SubstitutionTable& table, std::size_t tries,
                                         const AttackConfig& config) {
  const std::size_t y = label_of(example, model);
  SmoothedQuery q(model, config.draws, config.seed);
  AttackOutcome o = start(example, q.predict(example.tokens));
  if (o.success) return o;
  const auto options = position_options(example.tokens, table);
  if (neighborhood_size(example.tokens, table) <= 1) return o;
  Rng rng(derive_seed(derive_seed(config.seed, "attack.random"), example.id));
  std::vector<TokenId> cand(example.tokens);
  for (std::size_t t = 0; t < tries; ++t) {
    for (std::size_t i = 0; i < options.size(); ++i) cand[i] = options[i][rng.below(options[i].size())];
    const std::size_t pred = q.predict(cand);
    ++o.queries;
    if (pred != y) {
      o.adversarial = cand;
      o.prediction = pred;
      o.success = true;
      break;
    }
  }
  return o;
}

OracleOutcome exhaustive_oracle(const ModelCheckpoint& model, const LabeledExample& example,
                                const SubstitutionTable& table, const OracleConfig& config) {
  OracleOutcome out;
  out.neighborhood = neighborhood_size(example.tokens, table);
  const std::size_t y = label_of(example, model);
  out.reference = config.reference_class.value_or(y);
  out.outcome.example_id = example.id;
  out.outcome.label = example.label;
  out.outcome.adversarial = example.tokens;
  if (out.neighborhood > config.cap) {
    out.skipped = true;
    return out;
  }
  SmoothedQuery q(model, config.draws, config.seed);
  bool first = true;
  out.enumerated = enumerate_neighborhood(example.tokens, table, [&](std::span<const TokenId> member) {
    const std::size_t pred = q.predict(member);
    if (first) {
      out.outcome.clean_prediction = pred;
      out.outcome.prediction = pred;
      first = false;
    } else {
      ++out.outcome.queries;
    }
    if (pred != out.reference) {
      out.flipped = true;
      out.outcome.adversarial.assign(member.begin(), member.end());
      out.outcome.prediction = pred;
      return false;
    }
    return true;
  });
  out.outcome.success = out.outcome.prediction != y;
  return out;
}

AttackOutcome editing_attack(const ModelCheckpoint& model, const LabeledExample& example,
                             const SubstitutionTable& table, std::size_t edit_budget, std::uint64_t seed,
                             const AttackConfig& config) {
  if (edit_budget == 0) throw DomainError("editing attack needs an edit budget of at least 1");
  const std::size_t y = label_of(example, model);
  SmoothedQuery q(model, config.draws, config.seed);
  AttackOutcome o = start(example, q.predict(example.tokens));
  if (o.success) return o;
  const std::size_t min_len = std::max<std::size_t>(1, min_sequence_length(model.architecture));
  Rng rng(derive_seed(derive_seed(seed, "attack.edit"), example.id));
  std::vector<TokenId> cur(example.tokens);
  enum Op { Duplicate, Substitute, Delete };
  for (std::size_t e = 0; e < edit_budget; ++e) {
    std::vector<std::size_t> substitutable;
    for (std::size_t i = 0; i < cur.size(); ++i) {
      if (!table.substitutes(cur[i]).empty()) substitutable.push_back(i);
    }
    std::vector<Op> ops{Duplicate};
    if (!substitutable.empty()) ops.push_back(Substitute);
    if (cur.size() > min_len) ops.push_back(Delete);
    switch (ops[rng.below(ops.size())]) {
      case Duplicate: {
        const std::size_t i = rng.below(cur.size());
        const TokenId copy = cur[i];
        cur.insert(cur.begin() + static_cast<std::ptrdiff_t>(i), copy);
        break;
      }
      case Substitute: {
        const std::size_t i = substitutable[rng.below(substitutable.size())];
        const auto subs = table.substitutes(cur[i]);
        cur[i] = subs[rng.below(subs.size())];
        break;
      }
      case Delete:
        cur.erase(cur.begin() + static_cast<std::ptrdiff_t>(rng.below(cur.size())));
        break;
    }
    const std::size_t pred = q.predict(cur);
    ++o.queries;
    if (pred != y) {
      o.adversarial = cur;
      o.prediction = pred;
      o.success = true;
      break;
    }
  }
  return o;
}

AttackKind attack_kind_from_string(std::string_view name) {
  if (name == "greedy") return AttackKind::Greedy;
  if (name == "random") return AttackKind::Random;
  if (name == "exhaustive") return AttackKind::Exhaustive;
  if (name == "editing") return AttackKind::Editing;
  throw ConfigError("unknown attack '" + std::string(name) + "' (expected greedy, random, exhaustive or editing)");
}

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::Greedy:
      return "greedy";
    case AttackKind::Random:
      return "random";
    case AttackKind::Exhaustive:
      return "exhaustive";
    case AttackKind::Editing:
      return "editing";
  }
  return "unknown";
}

AttackRun run_attack(const ModelCheckpoint& model, const Dataset& data, const SubstitutionTable& table,
                     const AttackRunOptions& options) {
  validate(model.architecture);
  AttackRun run;
  run.outcomes.resize(data.size());
  std::vector<char> skipped(data.size(), 0);
  parallel_for(data.size(), options.jobs, [&](std::size_t i) {
    const LabeledExample& ex = data[i];
    try {
      switch (options.kind) {
        case AttackKind::Greedy:
          run.outcomes[i] = greedy_substitution_attack(model, ex, table, options.budget, options.config);
          break;
        case AttackKind::Random:
          run.outcomes[i] = random_substitution_attack(model, ex, table, options.budget, options.config);
          break;
        case AttackKind::Editing:
          run.outcomes[i] =
              editing_attack(model, ex, table, options.budget, options.config.seed, options.config);
          break;
        case AttackKind::Exhaustive: {
          OracleConfig oc;
          oc.cap = options.cap;
          oc.draws = options.config.draws;
          oc.seed = options.config.seed;
          OracleOutcome o = exhaustive_oracle(model, ex, table, oc);
          skipped[i] = o.skipped ? 1 : 0;
          run.outcomes[i] = std::move(o.outcome);
          break;
        }
      }
    } catch (const ExampleError&) {
      throw;
    } catch (const std::exception& e) {
      throw ExampleError(ex.id, e.what());
    }
  });
  run.skipped.assign(skipped.begin(), skipped.end());
  AttackSummary& s = run.summary;
  s.examples = data.size();
  double queries = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (run.skipped[i]) {
      ++s.skipped;
      continue;
    }
    if (run.outcomes[i].success) ++s.successes;
    queries += static_cast<double>(run.outcomes[i].queries);
  }
  const std::size_t evaluated = s.examples - s.skipped;
  if (evaluated > 0) {
    const auto n = static_cast<double>(evaluated);
    s.success_rate = static_cast<double>(s.successes) / n;
    s.empirical_robust_accuracy = 1.0 - s.success_rate;
    s.mean_queries = queries / n;
  }
  return run;
}

}  // namespace latcert
