#pragma once

// Interlinear glossed text: parsing, validation, sampling and gloss
// vocabularies for corpora in the SIGMORPHON 2023 shared-task layout.
//
// A record is a block of marker lines separated by blank lines:
//
//   \t Ii hahla'lsdi'y goohl IBM
//   \m ii hahla'lst-'y goo-hl IBM
//   \g CCNJ work-1SG.II LOC-CN IBM
//   \l And I worked for IBM.
//
// \t transcription, \m segmentation (optional), \g gloss, \l translation.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gloss/error.hpp"
#include "gloss/rng.hpp"
#include "gloss/utf8.hpp"

namespace gloss {

struct MalformedRecord : Error {
  using Error::Error;
};
struct EmptyCorpus : Error {
  using Error::Error;
};
struct EmptyLabel : Error {
  using Error::Error;
};
struct SampleTooLarge : Error {
  using Error::Error;
};

enum class Split { Train, Dev, Test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "dev") return Split::Dev;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split: " + s);
}

struct IgtSentence {
  std::string id;        // unique within corpus, "<language>-<1-based index>"
  std::string language;  // ISO-639-3
  std::vector<std::string> orthography_tokens;
  std::optional<std::vector<std::string>> segmentation_tokens;
  std::vector<std::string> gloss_tokens;  // raw tokens, separators preserved
  std::string translation;
  std::string translation_language;
};

struct Corpus {
  std::string language;
  Split split = Split::Train;
  std::vector<IgtSentence> sentences;

  std::size_t size() const { return sentences.size(); }
};

// ---------------------------------------------------------------------------
// Gloss token helpers. Morpheme glosses inside one token are joined with
// '-' or '='; both separators are split on and remembered so tokens can be
// re-joined exactly. Dots stay inside labels ("1SG.II" is one label).

struct GlossParts {
  std::vector<std::string> parts;
  std::vector<char> separators;  // size = parts.size() - 1

  std::string join() const {
    std::string out = parts.empty() ? std::string() : parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) {
      out.push_back(i - 1 < separators.size() ? separators[i - 1] : '-');
      out += parts[i];
    }
    return out;
  }
};

inline GlossParts split_gloss_token(std::string_view token) {
  GlossParts out;
  std::string cur;
  for (char ch : token) {
    if (ch == '-' || ch == '=') {
      out.parts.push_back(cur);
      out.separators.push_back(ch);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.parts.push_back(cur);
  return out;
}

inline std::size_t morpheme_count(std::string_view token) {
  return split_gloss_token(token).parts.size();
}

// ---------------------------------------------------------------------------
// Validation. Violations are data, not faults.

enum class ViolationRule {
  TokenCountMismatch,
  MorphemeCountMismatch,
  WhitespaceInToken,
  EmptyToken,
  EmptyGlossPart,
  MissingGloss,
  MissingTranslation,
};

inline const char* to_string(ViolationRule r) {
  switch (r) {
    case ViolationRule::TokenCountMismatch: return "TokenCountMismatch";
    case ViolationRule::MorphemeCountMismatch: return "MorphemeCountMismatch";
    case ViolationRule::WhitespaceInToken: return "WhitespaceInToken";
    case ViolationRule::EmptyToken: return "EmptyToken";
    case ViolationRule::EmptyGlossPart: return "EmptyGlossPart";
    case ViolationRule::MissingGloss: return "MissingGloss";
    case ViolationRule::MissingTranslation: return "MissingTranslation";
  }
  return "?";
}

struct Violation {
  ViolationRule rule;
  std::string field;    // which line the rule concerns
  int token_index;      // -1 when sentence-level
  std::string detail;

  std::string format() const {
    std::string out = to_string(rule);
    out += " field=" + field;
    if (token_index >= 0) out += " token=" + std::to_string(token_index);
    if (!detail.empty()) out += " (" + detail + ")";
    return out;
  }
};

// Checks the IgtSentence invariants. Records without gloss lines are
// prediction-only; pass require_gloss=false for test-split material.
inline std::vector<Violation> validate_sentence(const IgtSentence& s,
                                                bool require_gloss = true) {
  std::vector<Violation> out;
  for (std::size_t i = 0; i < s.orthography_tokens.size(); ++i) {
    const std::string& tok = s.orthography_tokens[i];
    if (tok.empty())
      out.push_back({ViolationRule::EmptyToken, "orthography", int(i), ""});
    if (tok.find_first_of(" \t\r\n") != std::string::npos)
      out.push_back({ViolationRule::WhitespaceInToken, "orthography", int(i), tok});
  }
  const bool has_gloss = !s.gloss_tokens.empty();
  if (!has_gloss && require_gloss)
    out.push_back({ViolationRule::MissingGloss, "gloss", -1, ""});
  if (has_gloss && s.gloss_tokens.size() != s.orthography_tokens.size())
    out.push_back({ViolationRule::TokenCountMismatch, "gloss", -1,
                   std::to_string(s.gloss_tokens.size()) + " gloss vs " +
                       std::to_string(s.orthography_tokens.size()) + " orthography"});
  if (has_gloss) {
    for (std::size_t i = 0; i < s.gloss_tokens.size(); ++i) {
      for (const std::string& part : split_gloss_token(s.gloss_tokens[i]).parts)
        if (part.empty()) {
          out.push_back({ViolationRule::EmptyGlossPart, "gloss", int(i), s.gloss_tokens[i]});
          break;
        }
    }
  }
  if (s.segmentation_tokens) {
    const auto& seg = *s.segmentation_tokens;
    if (seg.size() != s.orthography_tokens.size())
      out.push_back({ViolationRule::TokenCountMismatch, "segmentation", -1,
                     std::to_string(seg.size()) + " segmentation vs " +
                         std::to_string(s.orthography_tokens.size()) + " orthography"});
    if (has_gloss && seg.size() == s.gloss_tokens.size()) {
      for (std::size_t i = 0; i < seg.size(); ++i) {
        std::size_t m_seg = morpheme_count(seg[i]);
        std::size_t m_gloss = morpheme_count(s.gloss_tokens[i]);
        if (m_seg != m_gloss)
          out.push_back({ViolationRule::MorphemeCountMismatch, "segmentation", int(i),
                         seg[i] + " has " + std::to_string(m_seg) + " morphemes, gloss " +
                             s.gloss_tokens[i] + " has " + std::to_string(m_gloss)});
      }
    }
  }
  if (s.translation.empty())
    out.push_back({ViolationRule::MissingTranslation, "translation", -1, ""});
  return out;
}

// ---------------------------------------------------------------------------
// Parsing and serialization.

namespace detail {

inline std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
    std::size_t start = i;
    while (i < text.size() && text[i] != ' ' && text[i] != '\t') ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

inline std::string_view rtrim(std::string_view s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

}  // namespace detail

// Parses a shared-task IGT stream. Records are separated by one or more
// blank lines; ids are assigned "<language>-<1-based index>".
inline Corpus parse_igt(std::string_view stream, const std::string& language,
                        Split split = Split::Train,
                        const std::string& translation_language = "eng") {
  if (!utf8::valid(stream)) throw EncodingError("input is not valid UTF-8");

  Corpus corpus;
  corpus.language = language;
  corpus.split = split;

  struct RawRecord {
    std::optional<std::string> t, m, g, l;
    int first_line = 0;
  };

  std::vector<RawRecord> records;
  RawRecord cur;
  bool in_record = false;
  int line_no = 0;

  std::size_t pos = 0;
  while (pos <= stream.size()) {
    std::size_t eol = stream.find('\n', pos);
    std::string_view line = (eol == std::string_view::npos)
                                ? stream.substr(pos)
                                : stream.substr(pos, eol - pos);
    bool at_end = eol == std::string_view::npos;
    ++line_no;
    line = detail::rtrim(line);
    if (line.empty()) {
      if (in_record) {
        records.push_back(std::move(cur));
        cur = RawRecord{};
        in_record = false;
      }
    } else {
      if (line.size() < 2 || line[0] != '\\')
        throw MalformedRecord("line " + std::to_string(line_no) +
                              ": expected a marker line starting with '\\'");
      char marker = line[1];
      if (line.size() >= 3 && line[2] != ' ')
        throw MalformedRecord("line " + std::to_string(line_no) +
                              ": marker must be followed by a space");
      std::string content(line.size() > 3 ? line.substr(3) : std::string_view{});
      std::optional<std::string>* slot = nullptr;
      switch (marker) {
        case 't': slot = &cur.t; break;
        case 'm': slot = &cur.m; break;
        case 'g': slot = &cur.g; break;
        case 'l': slot = &cur.l; break;
        default:
          throw MalformedRecord("line " + std::to_string(line_no) +
                                ": unknown marker '\\" + std::string(1, marker) + "'");
      }
      if (slot->has_value())
        throw MalformedRecord("line " + std::to_string(line_no) + ": duplicate marker '\\" +
                              std::string(1, marker) + "' in one record");
      if (!in_record) cur.first_line = line_no;
      *slot = std::move(content);
      in_record = true;
    }
    if (at_end) break;
    pos = eol + 1;
  }
  if (in_record) records.push_back(std::move(cur));

  int index = 0;
  for (RawRecord& r : records) {
    ++index;
    if (!r.t)
      throw MalformedRecord("record " + std::to_string(index) +
                            " (line " + std::to_string(r.first_line) +
                            "): missing transcription line '\\t'");
    IgtSentence s;
    s.id = language + "-" + std::to_string(index);
    s.language = language;
    s.translation_language = translation_language;
    s.orthography_tokens = detail::whitespace_tokens(*r.t);
    if (r.m) s.segmentation_tokens = detail::whitespace_tokens(*r.m);
    if (r.g) s.gloss_tokens = detail::whitespace_tokens(*r.g);
    if (r.l) s.translation = *r.l;
    corpus.sentences.push_back(std::move(s));
  }
  return corpus;
}

inline std::string serialize_sentence(const IgtSentence& s) {
  auto join = [](const std::vector<std::string>& toks) {
    std::string out;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (i) out.push_back(' ');
      out += toks[i];
    }
    return out;
  };
  std::string out = "\\t " + join(s.orthography_tokens) + "\n";
  if (s.segmentation_tokens) out += "\\m " + join(*s.segmentation_tokens) + "\n";
  if (!s.gloss_tokens.empty()) out += "\\g " + join(s.gloss_tokens) + "\n";
  if (!s.translation.empty()) out += "\\l " + s.translation + "\n";
  return out;
}

inline std::string serialize_igt(const Corpus& c) {
  std::string out;
  for (std::size_t i = 0; i < c.sentences.size(); ++i) {
    if (i) out.push_back('\n');
    out += serialize_sentence(c.sentences[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Morpheme types (Appendix-A convention: all-uppercase glosses mark
// grammatical morphemes).

enum class MorphemeType { Lexical, Grammatical };

inline MorphemeType morpheme_type(std::string_view label) {
  if (label.empty()) throw EmptyLabel("morpheme_type: empty label");
  for (char ch : label)
    if (ch >= 'a' && ch <= 'z') return MorphemeType::Lexical;
  return MorphemeType::Grammatical;
}

// ---------------------------------------------------------------------------
// Gloss vocabulary: label <-> index bijection plus the character inventory
// the open-vocabulary decoder draws from. Indices 0-3 are reserved.

class GlossVocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kReserved = 4;
  static constexpr const char* kReservedNames[kReserved] = {"<PAD>", "<UNK>", "<BOS>", "<EOS>"};

  GlossVocabulary() {
    for (int i = 0; i < kReserved; ++i) {
      labels_.emplace_back(kReservedNames[i]);
      label_index_[labels_.back()] = i;
    }
  }

  void add_label(const std::string& label) {
    if (label_index_.count(label)) return;
    label_index_[label] = static_cast<int>(labels_.size());
    labels_.push_back(label);
    for (char32_t cp : utf8::decode(label)) add_char(cp);
  }

  void add_char(char32_t cp) {
    if (char_index_.count(cp)) return;
    char_index_[cp] = kReserved + static_cast<int>(chars_.size());
    chars_.push_back(cp);
  }

  int label_count() const { return static_cast<int>(labels_.size()); }
  // Character ids share the reserved block: [0, kReserved) are specials.
  int char_count() const { return kReserved + static_cast<int>(chars_.size()); }

  const std::string& label(int index) const { return labels_.at(index); }
  int label_index(const std::string& label) const {
    auto it = label_index_.find(label);
    return it == label_index_.end() ? kUnk : it->second;
  }
  bool has_label(const std::string& label) const { return label_index_.count(label) > 0; }

  int char_id(char32_t cp) const {
    auto it = char_index_.find(cp);
    return it == char_index_.end() ? kUnk : it->second;
  }
  char32_t char_at(int id) const { return chars_.at(id - kReserved); }
  bool has_char(char32_t cp) const { return char_index_.count(cp) > 0; }

  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<char32_t>& chars() const { return chars_; }

  MorphemeType type_of(int index) const {
    return morpheme_type(labels_.at(index));
  }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> label_index_;
  std::vector<char32_t> chars_;  // decoder inventory, sorted at build time
  std::unordered_map<char32_t, int> char_index_;
};

// Builds the label space from gloss parts of a validated corpus. Labels are
// indexed deterministically: reserved symbols, then lexicographic order.
inline GlossVocabulary build_vocab(const Corpus& c) {
  if (c.sentences.empty()) throw EmptyCorpus("build_vocab: corpus has no sentences");
  std::vector<std::string> labels;
  std::unordered_set<std::string> seen;
  for (const IgtSentence& s : c.sentences)
    for (const std::string& tok : s.gloss_tokens)
      for (std::string& part : split_gloss_token(tok).parts)
        if (!part.empty() && seen.insert(part).second) labels.push_back(std::move(part));
  std::sort(labels.begin(), labels.end());

  GlossVocabulary vocab;
  for (const std::string& label : labels) vocab.add_label(label);
  return vocab;
}

// ---------------------------------------------------------------------------
// Registered shared-task languages (Appendix-B registry).

struct LanguageProfile {
  std::string code;
  std::string name;
  std::string translation_language;
  int train_sents;
  int dev_sents;
  int test_sents;
};

inline const std::vector<LanguageProfile>& language_registry() {
  // The §2 footnote counts 30 Gitksan training sentences; the dataset table
  // says 31. The registry stores the table value.
  static const std::vector<LanguageProfile> registry = {
      {"arp", "Arapaho", "eng", 39501, 4938, 4892},
      {"git", "Gitksan", "eng", 31, 42, 37},
      {"lez", "Lezgi", "eng", 701, 88, 87},
      {"ntu", "Natugu", "eng", 791, 99, 99},
      {"ddo", "Tsez", "eng", 3558, 445, 445},
      {"usp", "Uspanteko", "spa", 9774, 232, 633},
  };
  return registry;
}

inline const LanguageProfile* find_language(const std::string& code) {
  for (const LanguageProfile& p : language_registry())
    if (p.code == code) return &p;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Low-resource sampling: uniform without replacement, deterministic under
// (n, seed), original order preserved.

inline Corpus sample_low_resource(const Corpus& c, std::size_t n, std::uint64_t seed) {
  if (c.split != Split::Train)
    throw Error("sample_low_resource: expected a train split");
  if (n > c.sentences.size())
    throw SampleTooLarge("sample_low_resource: n=" + std::to_string(n) + " > corpus size " +
                         std::to_string(c.sentences.size()));
  std::vector<std::size_t> indices(c.sentences.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first n entries are a uniform sample.
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = i + rng.next_below(indices.size() - i);
    std::swap(indices[i], indices[j]);
  }
  indices.resize(n);
  std::sort(indices.begin(), indices.end());

  Corpus out;
  out.language = c.language;
  out.split = c.split;
  out.sentences.reserve(n);
  for (std::size_t i : indices) out.sentences.push_back(c.sentences[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Corpus summary: "language, split, sentences, tokens, labels" TSV row.

inline std::string corpus_summary_tsv(const Corpus& c, bool header = true) {
  std::size_t tokens = 0;
  std::unordered_set<std::string> labels;
  for (const IgtSentence& s : c.sentences) {
    tokens += s.orthography_tokens.size();
    for (const std::string& tok : s.gloss_tokens)
      for (const std::string& part : split_gloss_token(tok).parts)
        if (!part.empty()) labels.insert(part);
  }
  std::string out;
  if (header) out += "language\tsplit\tsentences\ttokens\tlabels\n";
  out += c.language + "\t" + to_string(c.split) + "\t" + std::to_string(c.sentences.size()) +
         "\t" + std::to_string(tokens) + "\t" + std::to_string(labels.size()) + "\n";
  return out;
}

}  // namespace gloss
