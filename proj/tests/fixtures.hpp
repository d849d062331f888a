#pragma once

#include <algorithm>
#include <filesystem>
#include <string>

#include "latcert/corpus.hpp"
#include "latcert/model.hpp"
#include "latcert/random.hpp"
#include "latcert/trainer.hpp"

namespace fixture {

using namespace latcert;

inline SyntheticSpec small_spec(std::uint64_t seed = 7) {
  SyntheticSpec s;
  s.train_size = 600;
  s.test_size = 200;
  s.seed = seed;
  return s;
}

inline ModelCheckpoint fresh_model(const SyntheticCorpus& c, double sigma, std::uint64_t seed) {
  TextCnnDims d;
  d.vocab = c.embeddings.vocab.size();
  d.embed_dim = c.embeddings.dim();
  d.classes = static_cast<std::size_t>(1 + *std::max_element(c.cluster_class.begin(), c.cluster_class.end()));
  return init_model(text_cnn(d), c.embeddings.matrix, sigma, seed);
}

inline TrainConfig quick_config(double gamma = 4.0) {
  TrainConfig cfg;
  cfg.gamma = gamma;
  cfg.phase1_epochs = 3;
  cfg.phase2_epochs = 6;
  cfg.warmup_steps = 40;
  cfg.seed = 99;
  return cfg;
}

/// Small corpus plus models trained with and without the robust term,
/// built once per process.
struct Toy {
  SyntheticCorpus corpus;
  TrainResult robust;
  TrainResult plain;
};

inline const Toy& toy() {
  static const Toy t = [] {
    Toy x;
    x.corpus = generate_synthetic(small_spec());
    const ModelCheckpoint init = fresh_model(x.corpus, 1.0, 5);
    x.robust = train(init, x.corpus.train, x.corpus.table, quick_config(4.0));
    x.plain = train(init, x.corpus.train, x.corpus.table, quick_config(0.0));
    return x;
  }();
  return t;
}

/// Fresh scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("latcert-test-" + tag + "-" + std::to_string(derive_seed(mix64(++counter), tag)));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace fixture
