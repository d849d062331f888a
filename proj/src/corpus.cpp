#include "latcert/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include <json.hpp>

#include "latcert/error.hpp"
#include "latcert/io.hpp"
#include "latcert/random.hpp"

namespace latcert {

namespace {

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename F>
void for_each_line(std::string_view text, F f) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    f(text.substr(start, end - start), line_no);
    start = end + 1;
  }
}

template <typename Int>
Int parse_int(std::string_view token, const std::string& context) {
  Int v{};
  const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
    throw FormatError(context + ": cannot parse integer '" + std::string(token) + "'");
  }
  return v;
}

}  // namespace

// ---- Vocabulary / table ---------------------------------------------------

TokenId Vocabulary::add(std::string word) {
  if (index_.contains(word)) throw FormatError("duplicate word '" + word + "'");
  const auto id = static_cast<TokenId>(words_.size());
  index_.emplace(word, id);
  words_.push_back(std::move(word));
  return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view word) const {
  if (auto v = find(word)) return *v;
  throw LookupError("unknown word '" + std::string(word) + "'");
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id >= words_.size()) throw LookupError("token id " + std::to_string(id) + " outside vocabulary");
  return words_[id];
}

void SubstitutionTable::set(TokenId head, std::span<const TokenId> substitutes) {
  if (head >= subs_.size()) throw LookupError("token id " + std::to_string(head) + " outside vocabulary");
  std::vector<TokenId> clean;
  for (TokenId s : substitutes) {
    if (s >= subs_.size()) throw LookupError("substitute id " + std::to_string(s) + " outside vocabulary");
    if (s == head || std::find(clean.begin(), clean.end(), s) != clean.end()) continue;
    clean.push_back(s);
  }
  subs_[head] = std::move(clean);
}

std::span<const TokenId> SubstitutionTable::substitutes(TokenId word) const noexcept {
  if (word >= subs_.size()) return {};
  return subs_[word];
}

std::size_t SubstitutionTable::entries() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(subs_.begin(), subs_.end(), [](const auto& s) { return !s.empty(); }));
}

// ---- embeddings -----------------------------------------------------------

Embeddings parse_embeddings(std::string_view text) {
  Embeddings e;
  std::vector<double> data;
  std::size_t dim = 0;
  for_each_line(text, [&](std::string_view line, std::size_t line_no) {
    const auto fields = split_whitespace(line);
    if (fields.empty()) return;
    const std::string where = "embeddings line " + std::to_string(line_no);
    if (fields.size() < 2) throw FormatError(where + ": word without vector");
    if (dim == 0) dim = fields.size() - 1;
    if (fields.size() - 1 != dim) {
      throw FormatError(where + ": expected " + std::to_string(dim) + " values, found " +
                        std::to_string(fields.size() - 1));
    }
    try {
      e.vocab.add(std::string(fields[0]));
    } catch (const FormatError& err) {
      throw FormatError(where + ": " + err.what());
    }
    for (std::size_t i = 1; i < fields.size(); ++i) data.push_back(parse_double(fields[i], where));
  });
  if (e.vocab.size() == 0) throw FormatError("embeddings: no rows");
  e.matrix = Tensor(Shape{e.vocab.size(), dim}, std::move(data));
  return e;
}

Embeddings load_embeddings(const std::filesystem::path& path) { return parse_embeddings(read_file(path)); }

std::string format_embeddings(const Embeddings& e) {
  std::string out;
  const std::size_t dim = e.dim();
  for (std::size_t r = 0; r < e.vocab.size(); ++r) {
    out += e.vocab.words()[r];
    for (std::size_t c = 0; c < dim; ++c) {
      out += ' ';
      out += format_double(e.matrix.at(r, c));
    }
    out += '\n';
  }
  return out;
}

void save_embeddings(const Embeddings& e, const std::filesystem::path& path) {
  write_file_atomic(path, format_embeddings(e));
}

// ---- substitution table ---------------------------------------------------

SubstitutionTable parse_substitution_table(std::string_view json_text, const Vocabulary& vocab) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("substitution table: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("substitution table: top level must be an object");
  SubstitutionTable table(vocab.size());
  for (const auto& [head, subs] : j.items()) {
    const auto head_id = vocab.find(head);
    if (!head_id) throw FormatError("substitution table: unknown headword '" + head + "'");
    if (!subs.is_array()) throw FormatError("substitution table: entry '" + head + "' must be an array");
    std::vector<TokenId> ids;
    for (const auto& s : subs) {
      if (!s.is_string()) throw FormatError("substitution table: entry '" + head + "' holds a non-string");
      const auto word = s.get<std::string>();
      const auto sid = vocab.find(word);
      if (!sid) {
        throw FormatError("substitution table: substitute '" + word + "' of '" + head +
                          "' is not in the vocabulary");
      }
      ids.push_back(*sid);
    }
    table.set(*head_id, ids);
  }
  return table;
}

SubstitutionTable load_substitution_table(const std::filesystem::path& path, const Vocabulary& vocab) {
  return parse_substitution_table(read_file(path), vocab);
}

std::string format_substitution_table(const SubstitutionTable& table, const Vocabulary& vocab) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (TokenId id = 0; id < table.vocab_size(); ++id) {
    const auto subs = table.substitutes(id);
    if (subs.empty()) continue;
    auto arr = nlohmann::ordered_json::array();
    for (TokenId s : subs) arr.push_back(vocab.word(s));
    j[vocab.word(id)] = std::move(arr);
  }
  return j.dump(1) + "\n";
}

void save_substitution_table(const SubstitutionTable& table, const Vocabulary& vocab,
                             const std::filesystem::path& path) {
  write_file_atomic(path, format_substitution_table(table, vocab));
}

// ---- datasets -------------------------------------------------------------

Dataset parse_dataset(std::string_view text, const Vocabulary& vocab) {
  Dataset out;
  for_each_line(text, [&](std::string_view line, std::size_t line_no) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) return;
    const std::string where = "dataset line " + std::to_string(line_no);
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) throw FormatError(where + ": expected three tab-separated fields");
    LabeledExample ex;
    ex.id = parse_int<std::uint64_t>(line.substr(0, t1), where);
    ex.label = parse_int<int>(line.substr(t1 + 1, t2 - t1 - 1), where);
    for (std::string_view w : split_whitespace(line.substr(t2 + 1))) {
      const auto id = vocab.find(w);
      if (!id) throw FormatError(where + ": unknown word '" + std::string(w) + "'");
      ex.tokens.push_back(*id);
    }
    if (ex.tokens.empty()) throw FormatError(where + ": empty token list");
    out.push_back(std::move(ex));
  });
  return out;
}

Dataset load_dataset(const std::filesystem::path& path, const Vocabulary& vocab) {
  return parse_dataset(read_file(path), vocab);
}

std::string format_dataset(const Dataset& data, const Vocabulary& vocab) {
  std::string out;
  for (const LabeledExample& ex : data) {
    out += std::to_string(ex.id);
    out += '\t';
    out += std::to_string(ex.label);
    out += '\t';
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      if (i > 0) out += ' ';
      out += vocab.word(ex.tokens[i]);
    }
    out += '\n';
  }
  return out;
}

void save_dataset(const Dataset& data, const Vocabulary& vocab, const std::filesystem::path& path) {
  write_file_atomic(path, format_dataset(data, vocab));
}

void validate_dataset(const Dataset& data, std::size_t vocab_size, std::size_t classes) {
  for (const LabeledExample& ex : data) {
    const std::string where = "example " + std::to_string(ex.id);
    if (ex.tokens.empty()) throw DataError(where + ": empty token list");
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= classes) {
      throw DataError(where + ": label " + std::to_string(ex.label) + " outside [0, " +
                      std::to_string(classes) + ")");
    }
    for (TokenId t : ex.tokens) {
      if (t >= vocab_size) throw DataError(where + ": token id " + std::to_string(t) + " outside vocabulary");
    }
  }
}

// ---- neighbourhoods -------------------------------------------------------

std::uint64_t neighborhood_size(std::span<const TokenId> tokens, const SubstitutionTable& table) {
  std::uint64_t size = 1;
  for (TokenId t : tokens) {
    const std::uint64_t factor = table.substitutes(t).size() + 1;
    if (size > kSaturatedNeighborhood / factor) return kSaturatedNeighborhood;
    size *= factor;
  }
  return size;
}

std::vector<std::vector<TokenId>> position_options(std::span<const TokenId> tokens,
                                                   const SubstitutionTable& table) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    std::vector<TokenId> opts{t};
    const auto subs = table.substitutes(t);
    opts.insert(opts.end(), subs.begin(), subs.end());
    out.push_back(std::move(opts));
  }
  return out;
}

// ---- synthetic corpus -----------------------------------------------------

int synthetic_label(std::span<const TokenId> tokens, const std::vector<int>& cluster_of,
                    const std::vector<int>& cluster_class, std::size_t classes) {
  std::vector<int> counts(classes, 0);
  for (TokenId t : tokens) {
    if (t < cluster_of.size() && cluster_of[t] >= 0) ++counts[cluster_class[cluster_of[t]]];
  }
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

namespace {

void check_spec(const SyntheticSpec& s) {
  auto fail = [](const std::string& msg) { throw ConfigError("synthetic spec: " + msg); };
  if (s.classes < 2) fail("need at least two classes");
  if (s.cluster_size < 1) fail("cluster_size must be positive");
  if (s.clusters < s.classes) fail("need at least one content cluster per class");
  if (s.clusters * s.cluster_size + s.classes + 1 > s.vocab_size) {
    fail("clusters * cluster_size + style tokens + one filler exceed vocab_size " +
         std::to_string(s.vocab_size));
  }
  if (s.embed_dim < 2 * s.classes) fail("embed_dim must be at least 2 * classes");
  if (s.content_tokens < 1 || s.content_tokens + 1 > s.seq_len) {
    fail("need 1 <= content_tokens <= seq_len - 1");
  }
  if (!(s.rho >= 0.0 && s.rho <= 1.0)) fail("rho must lie in [0, 1]");
  if (!(s.content_purity >= 0.0 && s.content_purity <= 1.0)) fail("content_purity must lie in [0, 1]");
  if (!(s.content_strength > 0.0)) fail("content_strength must be positive");
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  check_spec(spec);
  SyntheticCorpus c;
  const std::size_t dim = spec.embed_dim;
  const std::size_t k = spec.classes;
  const std::size_t content_words = spec.clusters * spec.cluster_size;
  const std::size_t fillers = spec.vocab_size - content_words - k;

  Rng emb_rng(derive_seed(spec.seed, "synthetic.embeddings"));
  std::vector<double> data;
  data.reserve(spec.vocab_size * dim);
  c.cluster_of.assign(spec.vocab_size, -1);
  c.cluster_class.resize(spec.clusters);

  auto width2 = [](std::size_t v) {
    std::string s = std::to_string(v);
    return s.size() < 2 ? "0" + s : s;
  };
  for (std::size_t cl = 0; cl < spec.clusters; ++cl) {
    const auto cls = static_cast<int>(cl % k);
    c.cluster_class[cl] = cls;
    std::vector<double> head(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      head[d] = 0.25 * emb_rng.normal() + (d == static_cast<std::size_t>(cls) ? spec.content_strength : 0.0);
    }
    for (std::size_t m = 0; m < spec.cluster_size; ++m) {
      const TokenId id = c.embeddings.vocab.add("c" + width2(cl) + "_" + std::to_string(m));
      c.cluster_of[id] = static_cast<int>(cl);
      for (std::size_t d = 0; d < dim; ++d) {
        data.push_back(m == 0 ? head[d] : head[d] + emb_rng.uniform(-0.1, 0.1));
      }
    }
  }
  for (std::size_t s = 0; s < k; ++s) {
    c.style_tokens.push_back(c.embeddings.vocab.add("style" + std::to_string(s)));
    for (std::size_t d = 0; d < dim; ++d) data.push_back(d == k + s ? spec.content_strength : 0.0);
  }
  std::vector<TokenId> filler_ids;
  for (std::size_t f = 0; f < fillers; ++f) {
    filler_ids.push_back(c.embeddings.vocab.add("w" + std::to_string(f)));
    for (std::size_t d = 0; d < dim; ++d) data.push_back(0.25 * emb_rng.normal());
  }
  c.embeddings.matrix = Tensor(Shape{spec.vocab_size, dim}, std::move(data));

  c.table = SubstitutionTable(spec.vocab_size);
  for (std::size_t cl = 0; cl < spec.clusters; ++cl) {
    std::vector<TokenId> members;
    for (std::size_t m = 0; m < spec.cluster_size; ++m) {
      members.push_back(static_cast<TokenId>(cl * spec.cluster_size + m));
    }
    for (TokenId m : members) c.table.set(m, members);
  }

  std::vector<std::vector<std::size_t>> clusters_by_class(k);
  for (std::size_t cl = 0; cl < spec.clusters; ++cl) clusters_by_class[cl % k].push_back(cl);

  auto make_split = [&](std::size_t count, std::uint64_t first_id, double rho, std::string_view tag) {
    Rng rng(derive_seed(spec.seed, tag));
    Dataset split;
    split.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
      LabeledExample ex;
      ex.id = first_id + n;
      const auto intended = rng.below(k);
      std::vector<TokenId> tokens;
      for (std::size_t t = 0; t < spec.content_tokens; ++t) {
        std::uint64_t cls = intended;
        if (!rng.bernoulli(spec.content_purity)) {
          cls = (intended + 1 + rng.below(k - 1)) % k;
        }
        const auto& pool = clusters_by_class[cls];
        const std::size_t cl = pool[rng.below(pool.size())];
        tokens.push_back(static_cast<TokenId>(cl * spec.cluster_size + rng.below(spec.cluster_size)));
      }
      ex.label = synthetic_label(tokens, c.cluster_of, c.cluster_class, k);
      const bool agree = rng.bernoulli(rho);
      const auto style = agree ? static_cast<std::size_t>(ex.label) : rng.below(k);
      tokens.push_back(c.style_tokens[style]);
      while (tokens.size() < spec.seq_len) tokens.push_back(filler_ids[rng.below(filler_ids.size())]);
      rng.shuffle(tokens);
      ex.tokens = std::move(tokens);
      split.push_back(std::move(ex));
    }
    return split;
  };
  c.train = make_split(spec.train_size, 0, spec.rho, "synthetic.train");
  c.test = make_split(spec.test_size, spec.train_size, spec.rho, "synthetic.test");
  c.test_intervened =
      make_split(spec.test_size, spec.train_size + spec.test_size, 0.0, "synthetic.intervened");
  return c;
}

}  // namespace latcert
