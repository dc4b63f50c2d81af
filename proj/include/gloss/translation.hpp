#pragma once

// Per-token encodings of the high-resource translation. Two providers share
// one return contract: a trainable character-level BiLSTM, and a frozen
// archive of precomputed embeddings standing in for pre-trained contextual
// encoders. Archives are JSON-lines keyed by the SHA-256 of the exact
// translation string.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gloss/error.hpp"
#include "gloss/igt.hpp"
#include "gloss/nn.hpp"
#include "gloss/sha256.hpp"
#include "gloss/utf8.hpp"

namespace gloss {

struct EmptyTranslation : Error {
  using Error::Error;
};
struct MissingEntry : Error {
  using Error::Error;
};
struct DimensionMismatch : Error {
  using Error::Error;
};

struct TranslationEncoding {
  std::vector<std::string> tokens;      // K tokens, boundary markers included
  std::vector<ad::Vec> vectors;         // K x d_t
  ad::Vec final_state;                  // d_t

  int token_count() const { return static_cast<int>(tokens.size()); }
  int content_tokens() const { return token_count() - 2; }
  int dim() const { return vectors.empty() ? 0 : static_cast<int>(vectors[0].size()); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Character vocabulary of the recurrent translation encoder.

class TranslationCharVocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kReserved = 3;

  void add(char32_t cp) {
    if (index_.count(cp)) return;
    index_[cp] = kReserved + static_cast<int>(chars_.size());
    chars_.push_back(cp);
  }

  void add_text(const std::string& text) {
    for (char32_t cp : utf8::decode(text)) add(cp);
  }

  int id(char32_t cp) const {
    auto it = index_.find(cp);
    return it == index_.end() ? kUnk : it->second;
  }

  int size() const { return kReserved + static_cast<int>(chars_.size()); }
  const std::vector<char32_t>& chars() const { return chars_; }

 private:
  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, int> index_;
};

// Trainable character-level BiLSTM over the translation string. Tokens are
// [BOS], one per character, [EOS]; all three kinds get encoded positions, so
// K = n + 2.
struct RecurrentTranslationEncoder {
  TranslationCharVocab vocab;
  ad::Param char_embedding;  // vocab.size() x embed_dim
  nn::BiLstmParams rnn;
  int embed_dim = 0;
  int hidden = 0;

  RecurrentTranslationEncoder() = default;
  RecurrentTranslationEncoder(TranslationCharVocab v, int embed, int h, int layers)
      : vocab(std::move(v)),
        char_embedding("trans.char_embedding", vocab.size(), embed),
        rnn("trans.rnn", layers, embed, h),
        embed_dim(embed),
        hidden(h) {}

  int dim() const { return 2 * hidden; }

  void init(Rng& rng) {
    char_embedding.init_xavier(rng);
    rnn.init(rng);
  }

  void collect(std::vector<ad::Param*>& out) {
    out.push_back(&char_embedding);
    rnn.collect(out);
  }

  struct TapeEncoding {
    std::vector<std::string> tokens;
    std::vector<ad::Var> vectors;  // K states of width 2h
    ad::Var final_state;           // concat(final forward, final backward)
  };

  TapeEncoding encode_vars(ad::Tape& t, const std::string& text) {
    std::string trimmed = detail::trim(text);
    if (trimmed.empty()) throw EmptyTranslation("translation is empty");
    std::vector<char32_t> cps = utf8::decode(trimmed);

    std::vector<std::string> tokens;
    std::vector<int> ids;
    tokens.reserve(cps.size() + 2);
    ids.reserve(cps.size() + 2);
    tokens.emplace_back("[BOS]");
    ids.push_back(TranslationCharVocab::kBos);
    for (char32_t cp : cps) {
      tokens.push_back(utf8::encode(cp));
      ids.push_back(vocab.id(cp));
    }
    tokens.emplace_back("[EOS]");
    ids.push_back(TranslationCharVocab::kEos);

    std::vector<ad::Var> xs(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
      xs[i] = t.embedding_row(char_embedding, ids[i]);
    nn::BiLstmOutput out = nn::bilstm(t, rnn, xs);
    return {std::move(tokens), std::move(out.states), out.final_state(t)};
  }

  TranslationEncoding encode(const std::string& text) {
    ad::Tape t;
    TapeEncoding enc = encode_vars(t, text);
    TranslationEncoding out;
    out.tokens = std::move(enc.tokens);
    out.vectors.reserve(enc.vectors.size());
    for (ad::Var v : enc.vectors) out.vectors.push_back(t.val(v));
    out.final_state = t.val(enc.final_state);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Frozen embedding archive.

class EmbeddingArchive {
 public:
  EmbeddingArchive() = default;
  EmbeddingArchive(std::string provider, int dim) : provider_(std::move(provider)), dim_(dim) {}

  const std::string& provider() const { return provider_; }
  int dim() const { return dim_; }
  std::size_t size() const { return by_key_.size(); }

  static std::string key_of(const std::string& text) { return sha256_hex(text); }

  void insert(const std::string& text, TranslationEncoding enc) {
    if (enc.dim() != dim_)
      throw DimensionMismatch("archive dim " + std::to_string(dim_) + " vs entry dim " +
                              std::to_string(enc.dim()));
    if (enc.token_count() < 2) throw Error("archive entry without boundary tokens");
    by_key_[key_of(text)] = std::move(enc);
  }

  bool contains(const std::string& text) const { return by_key_.count(key_of(text)) > 0; }

  const TranslationEncoding& lookup(const std::string& text) const {
    auto it = by_key_.find(key_of(text));
    if (it == by_key_.end())
      throw MissingEntry("no archive entry for translation: " + text);
    return it->second;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open archive for writing: " + path);
    out << header_json() << "\n";
    for (const auto& [key, enc] : by_key_) {
      nlohmann::json line;
      line["key"] = key;
      line["tokens"] = enc.tokens;
      line["vectors"] = enc.vectors;
      out << line.dump() << "\n";
    }
    if (!out) throw IoError("archive write failed: " + path);
  }

  static EmbeddingArchive load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open archive: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("archive has no header: " + path);
    nlohmann::json header = parse_line(line, path, 1);
    EmbeddingArchive archive(header.at("provider").get<std::string>(),
                             header.at("dim").get<int>());
    std::size_t expected = header.at("count").get<std::size_t>();
    int line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      nlohmann::json j = parse_line(line, path, line_no);
      TranslationEncoding enc;
      enc.tokens = j.at("tokens").get<std::vector<std::string>>();
      enc.vectors = j.at("vectors").get<std::vector<ad::Vec>>();
      if (enc.tokens.size() != enc.vectors.size())
        throw Error(path + ":" + std::to_string(line_no) + ": token/vector count mismatch");
      for (const ad::Vec& row : enc.vectors)
        if (static_cast<int>(row.size()) != archive.dim_)
          throw DimensionMismatch(path + ":" + std::to_string(line_no) + ": entry width " +
                                  std::to_string(row.size()) + " != header dim " +
                                  std::to_string(archive.dim_));
      if (enc.tokens.size() < 2)
        throw Error(path + ":" + std::to_string(line_no) + ": entry without boundary tokens");
      // Providers emit a summary vector at the leading boundary position.
      enc.final_state = enc.vectors.front();
      archive.by_key_[j.at("key").get<std::string>()] = std::move(enc);
    }
    if (archive.by_key_.size() != expected)
      throw Error(path + ": header count " + std::to_string(expected) + " != " +
                  std::to_string(archive.by_key_.size()) + " entries");
    return archive;
  }

  struct Info {
    std::string provider;
    int dim;
    std::size_t count;
  };

  static Info info(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open archive: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("archive has no header: " + path);
    nlohmann::json header = parse_line(line, path, 1);
    return {header.at("provider").get<std::string>(), header.at("dim").get<int>(),
            header.at("count").get<std::size_t>()};
  }

 private:
  std::string header_json() const {
    nlohmann::json header;
    header["provider"] = provider_;
    header["dim"] = dim_;
    header["count"] = by_key_.size();
    return header.dump();
  }

  static nlohmann::json parse_line(const std::string& line, const std::string& path, int no) {
    try {
      return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(no) + ": " + e.what());
    }
  }

  std::string provider_;
  int dim_ = 0;
  std::map<std::string, TranslationEncoding> by_key_;  // sorted for deterministic writes
};

// Writes entries (translation string -> encoding) as a deterministic archive.
inline void write_archive(const std::vector<std::pair<std::string, TranslationEncoding>>& entries,
                          const std::string& provider, int dim, const std::string& path) {
  EmbeddingArchive archive(provider, dim);
  for (const auto& [text, enc] : entries) archive.insert(text, enc);
  archive.save(path);
}

// ---------------------------------------------------------------------------
// Deterministic hashed-token provider. Each whitespace token maps to a fixed
// pseudo-random vector; [CLS]/[SEP] boundary markers follow the pre-trained
// convention. Useful for building desk-scale archives without a live model.

inline TranslationEncoding hashed_token_encoding(const std::string& text, int dim,
                                                 std::uint64_t seed) {
  TranslationEncoding enc;
  enc.tokens.emplace_back("[CLS]");
  for (const std::string& w : gloss::detail::whitespace_tokens(detail::trim(text)))
    enc.tokens.push_back(w);
  enc.tokens.emplace_back("[SEP]");

  auto token_vector = [&](const std::string& token) {
    std::string material = "hash-provider\x1f" + std::to_string(seed) + "\x1f" + token;
    std::string hex = sha256_hex(material);
    std::uint64_t s = 0;
    for (int i = 0; i < 16; ++i) {
      char c = hex[i];
      s = s * 16 + (c <= '9' ? c - '0' : c - 'a' + 10);
    }
    Rng rng(s);
    ad::Vec v(dim);
    double norm = std::sqrt(static_cast<double>(dim));
    for (double& x : v) x = rng.gaussian() / norm;
    return v;
  };

  for (const std::string& tok : enc.tokens) enc.vectors.push_back(token_vector(tok));
  enc.final_state = enc.vectors.front();
  return enc;
}

inline EmbeddingArchive build_hashed_archive(const std::vector<std::string>& texts, int dim,
                                             std::uint64_t seed,
                                             const std::string& provider = "hashed-tokens") {
  EmbeddingArchive archive(provider, dim);
  for (const std::string& text : texts) {
    if (!archive.contains(text)) archive.insert(text, hashed_token_encoding(text, dim, seed));
  }
  return archive;
}

}  // namespace gloss
