#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "latcert/model.hpp"
#include "latcert/tensor.hpp"

namespace latcert {

/// Word <-> row index of the embedding matrix.
class Vocabulary {
 public:
  /// Throws FormatError on a duplicate word.
  TokenId add(std::string word);

  [[nodiscard]] std::optional<TokenId> find(std::string_view word) const;
  /// Throws LookupError naming the word.
  [[nodiscard]] TokenId id(std::string_view word) const;
  [[nodiscard]] const std::string& word(TokenId id) const;
  [[nodiscard]] std::size_t size() const noexcept { return words_.size(); }
  [[nodiscard]] const std::vector<std::string>& words() const noexcept { return words_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

struct Embeddings {
  Vocabulary vocab;
  Tensor matrix;  // [vocab, dim]

  [[nodiscard]] std::size_t dim() const { return matrix.rank() == 2 ? matrix.dim(1) : 0; }
};

/// Allowed substitutes per word, by token id.
///
/// Entries never contain the headword itself and hold no duplicates; words
/// without an entry have an empty substitute set.
class SubstitutionTable {
 public:
  SubstitutionTable() = default;
  explicit SubstitutionTable(std::size_t vocab_size) : subs_(vocab_size) {}

  /// Drops the headword and repeated ids (keeping first occurrences).
  void set(TokenId head, std::span<const TokenId> substitutes);

  [[nodiscard]] std::span<const TokenId> substitutes(TokenId word) const noexcept;
  [[nodiscard]] std::size_t vocab_size() const noexcept { return subs_.size(); }
  /// Number of words with a nonempty substitute set.
  [[nodiscard]] std::size_t entries() const noexcept;

  friend bool operator==(const SubstitutionTable&, const SubstitutionTable&) = default;

 private:
  std::vector<std::vector<TokenId>> subs_;
};

struct LabeledExample {
  std::uint64_t id = 0;
  std::vector<TokenId> tokens;
  int label = 0;

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

using Dataset = std::vector<LabeledExample>;

// ---- file formats ---------------------------------------------------------

/// `word v1 ... vd` per line. Throws FormatError on ragged rows or duplicate words.
Embeddings load_embeddings(const std::filesystem::path& path);
Embeddings parse_embeddings(std::string_view text);
std::string format_embeddings(const Embeddings& e);
void save_embeddings(const Embeddings& e, const std::filesystem::path& path);

/// JSON object word -> [substitute words]. Unknown words raise FormatError
/// naming the word; a headword listed as its own substitute is dropped.
SubstitutionTable load_substitution_table(const std::filesystem::path& path, const Vocabulary& vocab);
SubstitutionTable parse_substitution_table(std::string_view json_text, const Vocabulary& vocab);
std::string format_substitution_table(const SubstitutionTable& table, const Vocabulary& vocab);
void save_substitution_table(const SubstitutionTable& table, const Vocabulary& vocab,
                             const std::filesystem::path& path);

/// TSV `example_id<TAB>label<TAB>space-joined tokens`.
Dataset load_dataset(const std::filesystem::path& path, const Vocabulary& vocab);
Dataset parse_dataset(std::string_view text, const Vocabulary& vocab);
std::string format_dataset(const Dataset& data, const Vocabulary& vocab);
void save_dataset(const Dataset& data, const Vocabulary& vocab, const std::filesystem::path& path);

/// Throws DataError unless every example is nonempty, in vocabulary, and
/// labelled in [0, classes).
void validate_dataset(const Dataset& data, std::size_t vocab_size, std::size_t classes);

// ---- neighbourhoods -------------------------------------------------------

inline constexpr std::uint64_t kSaturatedNeighborhood = 0x7fffffffffffffffULL;

/// prod_i (|S(token_i)| + 1), saturating at 2^63 - 1.
std::uint64_t neighborhood_size(std::span<const TokenId> tokens, const SubstitutionTable& table);

/// {token_i} followed by S(token_i): the options for position i.
std::vector<std::vector<TokenId>> position_options(std::span<const TokenId> tokens,
                                                   const SubstitutionTable& table);

/// Visits every member of the neighbourhood in lexicographic order of
/// option indices (last position varies fastest). Stops early when the
/// visitor returns false. Returns the number of members visited.
template <typename Visitor>
std::uint64_t enumerate_neighborhood(std::span<const TokenId> tokens, const SubstitutionTable& table,
                                     Visitor&& visit) {
  const auto options = position_options(tokens, table);
  std::vector<std::size_t> digit(tokens.size(), 0);
  std::vector<TokenId> current(tokens.begin(), tokens.end());
  std::uint64_t visited = 0;
  while (true) {
    ++visited;
    if (!visit(std::span<const TokenId>(current))) return visited;
    std::size_t pos = tokens.size();
    while (pos > 0) {
      --pos;
      if (++digit[pos] < options[pos].size()) {
        current[pos] = options[pos][digit[pos]];
        break;
      }
      digit[pos] = 0;
      current[pos] = options[pos][0];
      if (pos == 0) return visited;
    }
    if (tokens.empty()) return visited;
  }
}

// ---- synthetic confounded corpus ------------------------------------------

/// Generator settings.
///
/// Content clusters carry the label: each cluster is a headword plus
/// substitutes embedded within +-0.1 per coordinate, and belongs to one class.
/// Style tokens are the confounder: with probability `rho` a training example's
/// style token is set to its label, otherwise it is drawn uniformly. The
/// intervened split draws style independently of the label.
struct SyntheticSpec {
  std::size_t vocab_size = 200;
  std::size_t clusters = 16;
  std::size_t cluster_size = 3;
  /// Norm of the per-class prototype direction of content embeddings.
  double content_strength = 1.0;
  /// Probability that a content token is drawn from the intended class.
  double content_purity = 0.75;
  double rho = 0.9;
  std::size_t seq_len = 12;
  std::size_t content_tokens = 5;
  std::size_t classes = 2;
  std::size_t embed_dim = 8;
  std::size_t train_size = 2000;
  std::size_t test_size = 500;
  std::uint64_t seed = 0;
};

struct SyntheticCorpus {
  Embeddings embeddings;
  SubstitutionTable table;
  Dataset train;
  Dataset test;
  Dataset test_intervened;
  /// Cluster index per token id, -1 for style and filler tokens.
  std::vector<int> cluster_of;
  /// Class of each cluster.
  std::vector<int> cluster_class;
  /// Token id of the style token for each class.
  std::vector<TokenId> style_tokens;
};

/// Throws ConfigError for infeasible specs.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

/// Majority class among content clusters present in `tokens`; ties go to the
/// lowest class, and a sequence with no content tokens is class 0.
int synthetic_label(std::span<const TokenId> tokens, const std::vector<int>& cluster_of,
                    const std::vector<int>& cluster_class, std::size_t classes);

}  // namespace latcert
