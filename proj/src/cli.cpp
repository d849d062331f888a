#include "latcert/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <ostream>

#include <CLI11.hpp>

#include "latcert/attacks.hpp"
#include "latcert/certifier.hpp"
#include "latcert/checkpoint.hpp"
#include "latcert/corpus.hpp"
#include "latcert/error.hpp"
#include "latcert/ibp.hpp"
#include "latcert/io.hpp"
#include "latcert/random.hpp"
#include "latcert/report.hpp"
#include "latcert/trainer.hpp"

namespace latcert::cli {

namespace fs = std::filesystem;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitDiverged = 3;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto end = comma == std::string::npos ? text.size() : comma;
    const std::string item = trim(std::string_view(text).substr(start, end - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// Files written by one invocation. Unless commit() runs, everything written
// (and the directory, if this run created it) is removed again.
class OutputDir {
 public:
  OutputDir(fs::path dir, bool dry_run) : dir_(std::move(dir)), dry_run_(dry_run) {
    if (dir_.empty()) throw ConfigError("--out is required");
    if (dry_run_) return;
    if (fs::exists(dir_) && !fs::is_directory(dir_)) throw ConfigError(dir_.string() + " is not a directory");
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_);
      created_ = true;
    }
  }
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;

  ~OutputDir() {
    if (committed_ || dry_run_) return;
    std::error_code ec;
    for (const fs::path& p : written_) fs::remove(p, ec);
    if (created_) fs::remove_all(dir_, ec);
  }

  void write(const std::string& name, std::string_view contents) {
    if (dry_run_) return;
    const fs::path p = dir_ / name;
    written_.push_back(p);
    write_file_atomic(p, contents);
    names_.push_back(p.string());
  }

  void commit(RunManifest manifest) {
    if (dry_run_) return;
    manifest.outputs = names_;
    write_file_atomic(dir_ / "manifest.json", format_manifest(manifest));
    committed_ = true;
  }

  [[nodiscard]] const fs::path& path() const noexcept { return dir_; }

 private:
  fs::path dir_;
  bool dry_run_;
  bool created_ = false;
  bool committed_ = false;
  std::vector<fs::path> written_;
  std::vector<std::string> names_;
};

struct Common {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string config;
  bool dry_run = false;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Root seed; every component derives a tagged sub-seed")->capture_default_str();
  sub->add_option("--jobs", c.jobs, "Per-example worker threads")->capture_default_str();
  sub->add_option("--config", c.config, "key=value file mirroring the flags (flags win)");
  sub->add_flag("--dry-run", c.dry_run, "Validate inputs and configuration without writing anything");
  sub->add_option("--out", c.out, "Output directory")->required();
}

struct CorpusFiles {
  Embeddings embeddings;
  SubstitutionTable table;
};

CorpusFiles load_corpus(const fs::path& dir, RunManifest& m) {
  CorpusFiles c;
  const fs::path emb = dir / "embeddings.txt";
  const fs::path subs = dir / "substitutions.json";
  c.embeddings = load_embeddings(emb);
  c.table = load_substitution_table(subs, c.embeddings.vocab);
  m.inputs.push_back(emb.string());
  m.inputs.push_back(subs.string());
  return c;
}

Dataset load_split(const fs::path& dir, const std::string& split, const Vocabulary& vocab, RunManifest& m) {
  const fs::path p = dir / (split + ".tsv");
  m.inputs.push_back(p.string());
  return load_dataset(p, vocab);
}

ModelCheckpoint load_model(const std::string& path, const Embeddings& emb, RunManifest& m) {
  ModelCheckpoint model = load_checkpoint(path);
  m.inputs.push_back(path);
  const Tensor& table = embedding_table(model);
  if (table.dim(0) != emb.vocab.size()) {
    throw ConfigError("model vocabulary (" + std::to_string(table.dim(0)) + " words) does not match the corpus (" +
                      std::to_string(emb.vocab.size()) + " words)");
  }
  return model;
}

void limit_dataset(Dataset& data, std::size_t limit) {
  if (limit > 0 && data.size() > limit) data.resize(limit);
}

void snapshot(const CLI::App* sub, RunManifest& m) {
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_name(false, true);
    if (name.empty() || name == "--help" || name == "-h") continue;
    std::string key = opt->get_lnames().empty() ? name : opt->get_lnames().front();
    std::string value;
    if (opt->count() > 0) {
      for (const std::string& r : opt->reduced_results()) value += (value.empty() ? "" : ",") + r;
    } else {
      value = opt->get_default_str();
    }
    m.config[key] = value;
  }
}

// ---- subcommand bodies -----------------------------------------------------

struct TrainFlags {
  std::string data;
  TrainConfig config;
  TextCnnDims dims;
};

void add_train_flags(CLI::App* sub, TrainFlags& t) {
  sub->add_option("--data", t.data, "Corpus directory (embeddings.txt, substitutions.json, train.tsv)")->required();
  sub->add_option("--sigma", t.config.sigma, "Latent noise standard deviation")->capture_default_str();
  sub->add_option("--gamma", t.config.gamma, "Weight of the robust loss")->capture_default_str();
  sub->add_option("--margin", t.config.margin, "Hinge margin m")->capture_default_str();
  sub->add_option("--lr", t.config.adam.lr, "Adam learning rate")->capture_default_str();
  sub->add_option("--phase1-epochs", t.config.phase1_epochs, "Cross-entropy-only epochs")->capture_default_str();
  sub->add_option("--phase2-epochs", t.config.phase2_epochs, "Epochs with the robust term")->capture_default_str();
  sub->add_option("--warmup-steps", t.config.warmup_steps, "Linear gamma warm-up length")->capture_default_str();
  sub->add_option("--batch-size", t.config.batch_size, "Examples per step")->capture_default_str();
  sub->add_option("--noise-samples", t.config.noise_samples, "Noise draws per example and step")
      ->capture_default_str();
  sub->add_option("--channels", t.dims.channels, "Conv channels")->capture_default_str();
  sub->add_option("--width", t.dims.width, "Conv kernel width")->capture_default_str();
  sub->add_option("--latent", t.dims.latent, "Latent dimension")->capture_default_str();
  sub->add_option("--hidden", t.dims.hidden, "Classifier hidden units")->capture_default_str();
}

TrainResult train_from_flags(const TrainFlags& t, const CorpusFiles& corpus, const Dataset& train_set,
                             std::uint64_t seed, std::size_t classes) {
  TextCnnDims dims = t.dims;
  dims.vocab = corpus.embeddings.vocab.size();
  dims.embed_dim = corpus.embeddings.dim();
  dims.classes = classes;
  const ModelCheckpoint init =
      init_model(text_cnn(dims), corpus.embeddings.matrix, t.config.sigma, derive_seed(seed, "init"));
  TrainConfig cfg = t.config;
  cfg.seed = derive_seed(seed, "train");
  return train(init, train_set, corpus.table, cfg);
}

std::size_t class_count_of(const Dataset& d) {
  int top = 1;
  for (const LabeledExample& ex : d) top = std::max(top, ex.label);
  return static_cast<std::size_t>(top) + 1;
}

struct CertifyFlags {
  std::string split = "test";
  std::uint64_t t1 = 50;
  std::uint64_t t2 = 2000;
  double alpha = 0.01;
  std::size_t limit = 0;
};

void add_certify_flags(CLI::App* sub, CertifyFlags& c, bool with_t2_alpha) {
  sub->add_option("--split", c.split, "Dataset split file stem inside --data")->capture_default_str();
  sub->add_option("--t1", c.t1, "Selection draws")->capture_default_str();
  if (with_t2_alpha) {
    sub->add_option("--t2", c.t2, "Estimation draws")->capture_default_str();
    sub->add_option("--alpha", c.alpha, "Significance level")->capture_default_str();
  }
  sub->add_option("--limit", c.limit, "Use only the first N examples (0 = all)")->capture_default_str();
}

CertifyOptions certify_options(const CertifyFlags& c, std::uint64_t seed, std::size_t jobs) {
  CertifyOptions o;
  o.t1 = c.t1;
  o.t2 = c.t2;
  o.alpha = Probability(c.alpha);
  o.seed = derive_seed(seed, "certify");
  o.jobs = jobs;
  return o;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    const std::string line = trim(std::string_view(text).substr(start, end - start));
    start = end + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    if (key.empty()) throw FormatError("config line " + std::to_string(line_no) + ": empty key");
    if (key == "config") throw FormatError("config line " + std::to_string(line_no) + ": nested config files are not supported");
    out.emplace_back(std::move(key), value);
  }
  return out;
}

std::vector<std::string> config_arguments(const fs::path& path) {
  std::vector<std::string> args;
  for (const auto& [key, value] : parse_config(read_file(path))) {
    if (value == "true" || value == "false") {
      if (value == "true") args.push_back("--" + key);
      continue;
    }
    args.push_back("--" + key);
    args.push_back(value);
  }
  return args;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  const auto started = std::chrono::steady_clock::now();

  // Config-file flags go first so that command-line flags (taking the last
  // value) override them.
  std::vector<std::string> args = raw_args;
  try {
    for (std::size_t i = 1; i < raw_args.size(); ++i) {
      std::string path;
      if (raw_args[i] == "--config" && i + 1 < raw_args.size()) path = raw_args[i + 1];
      if (raw_args[i].rfind("--config=", 0) == 0) path = raw_args[i].substr(9);
      if (path.empty()) continue;
      const auto injected = config_arguments(path);
      args.insert(args.begin() + 1, injected.begin(), injected.end());
      break;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }

  CLI::App app{"Latent-space randomized smoothing: training, certification and attacks for token classifiers"};
  app.name("latcert");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", std::string(kToolVersion));

  Common common;

  // gen-data
  SyntheticSpec spec;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic confounded corpus");
  add_common(gen, common);
  gen->add_option("--vocab-size", spec.vocab_size, "Vocabulary size")->capture_default_str();
  gen->add_option("--clusters", spec.clusters, "Content clusters")->capture_default_str();
  gen->add_option("--cluster-size", spec.cluster_size, "Words per cluster (headword + substitutes)")
      ->capture_default_str();
  gen->add_option("--content-strength", spec.content_strength, "Class prototype norm")->capture_default_str();
  gen->add_option("--purity", spec.content_purity, "Probability a content token matches the intended class")
      ->capture_default_str();
  gen->add_option("--rho", spec.rho, "Train-time style/label agreement")->capture_default_str();
  gen->add_option("--seq-len", spec.seq_len, "Tokens per example")->capture_default_str();
  gen->add_option("--content-tokens", spec.content_tokens, "Content tokens per example")->capture_default_str();
  gen->add_option("--classes", spec.classes, "Number of classes")->capture_default_str();
  gen->add_option("--embed-dim", spec.embed_dim, "Embedding dimension")->capture_default_str();
  gen->add_option("--train-size", spec.train_size, "Training examples")->capture_default_str();
  gen->add_option("--test-size", spec.test_size, "Test examples per test split")->capture_default_str();

  // train
  TrainFlags tflags;
  auto* tr = app.add_subcommand("train", "Train encoder and classifier (cross-entropy, then the robust term)");
  add_common(tr, common);
  add_train_flags(tr, tflags);

  // certify
  CertifyFlags cflags;
  std::string model_path;
  std::string data_dir;
  auto* ce = app.add_subcommand("certify", "Certify a dataset split");
  add_common(ce, common);
  ce->add_option("--data", data_dir, "Corpus directory")->required();
  ce->add_option("--model", model_path, "Checkpoint (model.json)")->required();
  add_certify_flags(ce, cflags, true);

  // attack
  std::string attack_name = "greedy";
  std::size_t budget = 2;
  AttackConfig aconf;
  std::size_t cap = 4096;
  auto* at = app.add_subcommand("attack", "Run an empirical attack against the smoothed model");
  add_common(at, common);
  at->add_option("--data", data_dir, "Corpus directory")->required();
  at->add_option("--model", model_path, "Checkpoint (model.json)")->required();
  at->add_option("--attack", attack_name, "greedy, random, exhaustive or editing")->capture_default_str();
  at->add_option("--budget", budget, "Passes (greedy), tries (random) or edits (editing)")->capture_default_str();
  at->add_option("--draws", aconf.draws, "Noise draws per query")->capture_default_str();
  at->add_option("--cap", cap, "Neighbourhood cap for the exhaustive attack")->capture_default_str();
  at->add_option("--split", cflags.split, "Dataset split file stem")->capture_default_str();
  at->add_option("--limit", cflags.limit, "Use only the first N examples (0 = all)")->capture_default_str();

  // tradeoff
  TrainFlags xflags;
  CertifyFlags xcert;
  std::string gammas = "0.25,1,4";
  auto* to = app.add_subcommand("tradeoff", "Train at each gamma, certify, and tabulate clean vs certified accuracy");
  add_common(to, common);
  add_train_flags(to, xflags);
  add_certify_flags(to, xcert, true);
  to->add_option("--gammas", gammas, "Comma-separated gamma grid")->capture_default_str();

  // alpha-sweep
  CertifyFlags sflags;
  std::string pairs = "2000:0.001,300:0.05";
  auto* as = app.add_subcommand("alpha-sweep", "Certify one checkpoint under several (t2, alpha) pairs");
  add_common(as, common);
  as->add_option("--data", data_dir, "Corpus directory")->required();
  as->add_option("--model", model_path, "Checkpoint (model.json)")->required();
  as->add_option("--pairs", pairs, "Comma-separated t2:alpha pairs")->capture_default_str();
  add_certify_flags(as, sflags, false);

  for (CLI::App* sub : {gen, tr, ce, at, to, as}) {
    sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    for (CLI::Option* opt : sub->get_options()) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }

  std::vector<const char*> argv{"latcert"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  CLI::App* sub = app.get_subcommands().front();
  RunManifest manifest;
  manifest.command = sub->get_name();
  snapshot(sub, manifest);
  manifest.seeds["root"] = common.seed;

  try {
    OutputDir dir(common.out, common.dry_run);
    int code = 0;
    if (sub == gen) {
      spec.seed = derive_seed(common.seed, "gen-data");
      manifest.seeds["gen-data"] = spec.seed;
      const SyntheticCorpus c = generate_synthetic(spec);
      dir.write("embeddings.txt", format_embeddings(c.embeddings));
      dir.write("substitutions.json", format_substitution_table(c.table, c.embeddings.vocab));
      dir.write("train.tsv", format_dataset(c.train, c.embeddings.vocab));
      dir.write("test.tsv", format_dataset(c.test, c.embeddings.vocab));
      dir.write("test_intervened.tsv", format_dataset(c.test_intervened, c.embeddings.vocab));
      out << "generated " << c.train.size() << " train / " << c.test.size() << " test examples\n";
    } else if (sub == tr) {
      const CorpusFiles corpus = load_corpus(tflags.data, manifest);
      const Dataset train_set = load_split(tflags.data, "train", corpus.embeddings.vocab, manifest);
      tflags.config.validate();
      manifest.seeds["init"] = derive_seed(common.seed, "init");
      manifest.seeds["train"] = derive_seed(common.seed, "train");
      if (!tflags.config.upper_bound_regime()) {
        err << "note: gamma * margin < 1; the hinge term does not bound the certification error\n";
      }
      if (common.dry_run) {
        out << "configuration ok\n";
        return 0;
      }
      const TrainResult r = train_from_flags(tflags, corpus, train_set, common.seed, class_count_of(train_set));
      dir.write("model.json", checkpoint_to_json(r.model));
      dir.write("phase1.json", checkpoint_to_json(r.phase1_model));
      dir.write("train_log.csv", format_training_log(r));
      manifest.config["upper_bound_regime"] = r.upper_bound_regime ? "true" : "false";
      manifest.config["hinge_checks"] = std::to_string(r.hinge_checks);
      manifest.config["hinge_violations"] = std::to_string(r.hinge_violations);
      if (r.diverged) {
        manifest.config["diverged"] = r.divergence_message;
        err << "error: training diverged: " << r.divergence_message << "\n";
        code = kExitDiverged;
      } else {
        out << "trained " << r.steps << " steps\n";
      }
    } else if (sub == ce) {
      const CorpusFiles corpus = load_corpus(data_dir, manifest);
      Dataset data = load_split(data_dir, cflags.split, corpus.embeddings.vocab, manifest);
      limit_dataset(data, cflags.limit);
      const ModelCheckpoint model = load_model(model_path, corpus.embeddings, manifest);
      const CertifyOptions opts = certify_options(cflags, common.seed, common.jobs);
      manifest.seeds["certify"] = opts.seed;
      if (common.dry_run) {
        out << "configuration ok\n";
        return 0;
      }
      const CertificationRun run = certify_dataset(model, data, corpus.table, opts);
      dir.write("certify.jsonl", format_certification_report(run));
      dir.write("certify_summary.csv",
                certification_summary_csv_header() + certification_summary_csv_row(run.summary));
      out << "certified accuracy " << format_double(run.summary.certified_accuracy) << " over "
          << run.summary.examples << " examples\n";
    } else if (sub == at) {
      const CorpusFiles corpus = load_corpus(data_dir, manifest);
      Dataset data = load_split(data_dir, cflags.split, corpus.embeddings.vocab, manifest);
      limit_dataset(data, cflags.limit);
      const ModelCheckpoint model = load_model(model_path, corpus.embeddings, manifest);
      AttackRunOptions opts;
      opts.kind = attack_kind_from_string(attack_name);
      opts.budget = budget;
      opts.cap = cap;
      opts.config = aconf;
      opts.config.seed = derive_seed(common.seed, "attack");
      opts.jobs = common.jobs;
      manifest.seeds["attack"] = opts.config.seed;
      if (opts.kind == AttackKind::Editing && budget == 0) throw ConfigError("--budget must be at least 1");
      if (common.dry_run) {
        out << "configuration ok\n";
        return 0;
      }
      const AttackRun run = run_attack(model, data, corpus.table, opts);
      dir.write("attack.jsonl", format_attack_report(run, opts.kind, corpus.embeddings.vocab));
      dir.write("attack_summary.csv", attack_summary_csv(run.summary, opts.kind));
      out << "empirical robust accuracy " << format_double(run.summary.empirical_robust_accuracy) << "\n";
    } else if (sub == to) {
      const CorpusFiles corpus = load_corpus(xflags.data, manifest);
      const Dataset train_set = load_split(xflags.data, "train", corpus.embeddings.vocab, manifest);
      Dataset eval = load_split(xflags.data, xcert.split, corpus.embeddings.vocab, manifest);
      limit_dataset(eval, xcert.limit);
      std::vector<double> grid;
      for (const std::string& g : split_list(gammas)) grid.push_back(parse_double(g, "--gammas"));
      if (grid.empty()) throw ConfigError("--gammas is empty");
      const CertifyOptions opts = certify_options(xcert, common.seed, common.jobs);
      if (common.dry_run) {
        out << "configuration ok\n";
        return 0;
      }
      std::string csv = "gamma,clean_accuracy,certified_accuracy,abstention_rate\n";
      for (double g : grid) {
        TrainFlags f = xflags;
        f.config.gamma = g;
        const TrainResult r = train_from_flags(f, corpus, train_set, common.seed, class_count_of(train_set));
        if (r.diverged) throw Error("training at gamma " + format_double(g) + " diverged: " + r.divergence_message);
        const CertificationRun run = certify_dataset(r.model, eval, corpus.table, opts);
        csv += format_double(g) + "," + format_double(run.summary.clean_accuracy) + "," +
               format_double(run.summary.certified_accuracy) + "," + format_double(run.summary.abstention_rate) +
               "\n";
        out << "gamma " << format_double(g) << ": clean " << format_double(run.summary.clean_accuracy)
            << ", certified " << format_double(run.summary.certified_accuracy) << "\n";
      }
      dir.write("tradeoff.csv", csv);
    } else if (sub == as) {
      const CorpusFiles corpus = load_corpus(data_dir, manifest);
      Dataset data = load_split(data_dir, sflags.split, corpus.embeddings.vocab, manifest);
      limit_dataset(data, sflags.limit);
      const ModelCheckpoint model = load_model(model_path, corpus.embeddings, manifest);
      std::vector<std::pair<std::uint64_t, double>> grid;
      for (const std::string& p : split_list(pairs)) {
        const auto colon = p.find(':');
        if (colon == std::string::npos) throw ConfigError("--pairs entry '" + p + "' is not t2:alpha");
        const double t2 = parse_double(p.substr(0, colon), "--pairs t2");
        const double alpha = parse_double(p.substr(colon + 1), "--pairs alpha");
        if (!(t2 >= 1.0) || t2 != std::floor(t2)) throw ConfigError("--pairs t2 must be a positive integer");
        if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("--pairs alpha must lie in (0,1)");
        grid.emplace_back(static_cast<std::uint64_t>(t2), alpha);
      }
      if (grid.empty()) throw ConfigError("--pairs is empty");
      if (common.dry_run) {
        out << "configuration ok\n";
        return 0;
      }
      std::string csv = "t2,alpha," + certification_summary_csv_header();
      for (const auto& [t2, alpha] : grid) {
        CertifyFlags f = sflags;
        f.t2 = t2;
        f.alpha = alpha;
        const CertificationRun run = certify_dataset(model, data, corpus.table, certify_options(f, common.seed, common.jobs));
        csv += std::to_string(t2) + "," + format_double(alpha) + "," + certification_summary_csv_row(run.summary);
        out << "t2 " << t2 << ", alpha " << format_double(alpha) << ": certified "
            << format_double(run.summary.certified_accuracy) << "\n";
      }
      dir.write("alpha_sweep.csv", csv);
    }
    if (common.dry_run) {
      out << "configuration ok\n";
      return 0;
    }
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    dir.commit(std::move(manifest));
    return code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace latcert::cli
