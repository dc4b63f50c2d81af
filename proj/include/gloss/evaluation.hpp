#pragma once

// Prediction over corpora, per-token majority voting across ensemble
// members, and the two reported metrics: token-level glossing accuracy and
// mean per-token character edit distance.

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "gloss/model.hpp"
#include "gloss/utf8.hpp"

namespace gloss {

struct AlignmentMismatch : Error {
  using Error::Error;
};
struct LengthMismatch : Error {
  using Error::Error;
};
struct EmptyEvalSet : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Character-level Levenshtein distance with unit costs, over code points.

inline int levenshtein(const std::string& a, const std::string& b) {
  std::vector<char32_t> ua = utf8::decode(a);
  std::vector<char32_t> ub = utf8::decode(b);
  const std::size_t n = ua.size(), m = ub.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (ua[i - 1] == ub[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

// ---------------------------------------------------------------------------
// Metrics over aligned token sequences (one entry per sentence).

inline double token_accuracy(const std::vector<std::vector<std::string>>& pred,
                             const std::vector<std::vector<std::string>>& gold) {
  if (pred.size() != gold.size())
    throw LengthMismatch("token_accuracy: sentence counts differ");
  long correct = 0, total = 0;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    if (pred[s].size() != gold[s].size())
      throw LengthMismatch("token_accuracy: token counts differ in sentence " +
                           std::to_string(s));
    for (std::size_t i = 0; i < gold[s].size(); ++i) {
      ++total;
      if (pred[s][i] == gold[s][i]) ++correct;
    }
  }
  if (total == 0) throw EmptyEvalSet("token_accuracy: no gold tokens");
  return 100.0 * correct / total;
}

inline double avg_edit_distance(const std::vector<std::vector<std::string>>& pred,
                                const std::vector<std::vector<std::string>>& gold) {
  if (pred.size() != gold.size())
    throw LengthMismatch("avg_edit_distance: sentence counts differ");
  long total = 0;
  double sum = 0.0;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    if (pred[s].size() != gold[s].size())
      throw LengthMismatch("avg_edit_distance: token counts differ in sentence " +
                           std::to_string(s));
    for (std::size_t i = 0; i < gold[s].size(); ++i) {
      ++total;
      sum += levenshtein(pred[s][i], gold[s][i]);
    }
  }
  if (total == 0) throw EmptyEvalSet("avg_edit_distance: no gold tokens");
  return sum / total;
}

// ---------------------------------------------------------------------------
// Majority voting. Per token position the most frequent gloss string wins;
// ties break toward the highest summed confidence, then the
// lexicographically smallest string.

inline std::vector<std::string> majority_vote(const std::vector<GlossPrediction>& members) {
  if (members.empty()) throw EmptyEvalSet("majority_vote: no members");
  const std::size_t tokens = members[0].words.size();
  for (const GlossPrediction& p : members) {
    if (p.sentence_id != members[0].sentence_id)
      throw AlignmentMismatch("majority_vote: predictions for different sentences (" +
                              p.sentence_id + " vs " + members[0].sentence_id + ")");
    if (p.words.size() != tokens)
      throw AlignmentMismatch("majority_vote: member token counts differ for sentence " +
                              p.sentence_id);
  }
  std::vector<std::string> out(tokens);
  for (std::size_t i = 0; i < tokens; ++i) {
    struct Tally {
      int count = 0;
      double confidence = 0.0;
    };
    std::map<std::string, Tally> tallies;
    for (const GlossPrediction& p : members) {
      Tally& t = tallies[p.words[i].gloss_token];
      ++t.count;
      t.confidence += p.words[i].confidence;
    }
    const std::pair<const std::string, Tally>* best = nullptr;
    for (const auto& entry : tallies) {
      if (best == nullptr || entry.second.count > best->second.count ||
          (entry.second.count == best->second.count &&
           entry.second.confidence > best->second.confidence))
        best = &entry;
      // Equal count and confidence: the map's ordering already visited the
      // lexicographically smaller string first, so keep `best`.
    }
    out[i] = best->first;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus-level evaluation.

enum class EvalMode { Vote, Average };

inline EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "vote") return EvalMode::Vote;
  if (s == "average") return EvalMode::Average;
  throw ConfigError("unknown eval mode: " + s);
}

struct SentenceEval {
  std::string id;
  double accuracy = 0.0;
  double edit_distance = 0.0;
  int tokens = 0;
};

struct EvalReport {
  double accuracy = 0.0;       // percent, micro-averaged
  double edit_distance = 0.0;  // mean per-token character distance
  long tokens = 0;
  std::vector<SentenceEval> per_sentence;
};

inline std::vector<GlossPrediction> predict_corpus(GlosserModel& model, const Corpus& corpus,
                                                   const EmbeddingArchive* archive = nullptr) {
  std::vector<GlossPrediction> out;
  out.reserve(corpus.sentences.size());
  for (const IgtSentence& s : corpus.sentences) out.push_back(model.predict(s, archive));
  return out;
}

namespace eval_detail {

inline std::vector<std::vector<std::string>> gold_tokens(const Corpus& corpus) {
  std::vector<std::vector<std::string>> out;
  out.reserve(corpus.sentences.size());
  for (const IgtSentence& s : corpus.sentences) {
    if (s.gloss_tokens.empty())
      throw EmptyEvalSet("sentence " + s.id + " has no gold gloss");
    out.push_back(s.gloss_tokens);
  }
  return out;
}

inline EvalReport score(const std::vector<std::vector<std::string>>& pred, const Corpus& corpus) {
  std::vector<std::vector<std::string>> gold = gold_tokens(corpus);
  EvalReport report;
  report.accuracy = token_accuracy(pred, gold);
  report.edit_distance = avg_edit_distance(pred, gold);
  for (std::size_t s = 0; s < gold.size(); ++s) {
    SentenceEval se;
    se.id = corpus.sentences[s].id;
    se.tokens = static_cast<int>(gold[s].size());
    long correct = 0;
    double dist = 0.0;
    for (std::size_t i = 0; i < gold[s].size(); ++i) {
      if (pred[s][i] == gold[s][i]) ++correct;
      dist += levenshtein(pred[s][i], gold[s][i]);
    }
    se.accuracy = se.tokens ? 100.0 * correct / se.tokens : 0.0;
    se.edit_distance = se.tokens ? dist / se.tokens : 0.0;
    report.per_sentence.push_back(std::move(se));
    report.tokens += se.tokens;
  }
  return report;
}

}  // namespace eval_detail

// mode == Vote: metrics of the voted predictions. mode == Average: mean of
// the per-member metrics.
inline EvalReport evaluate(std::vector<GlosserModel>& members, const Corpus& corpus,
                           EvalMode mode, const EmbeddingArchive* archive = nullptr) {
  if (members.empty()) throw EmptyEvalSet("evaluate: no ensemble members");
  if (corpus.sentences.empty()) throw EmptyEvalSet("evaluate: empty corpus");

  std::vector<std::vector<GlossPrediction>> per_member;
  per_member.reserve(members.size());
  for (GlosserModel& m : members) per_member.push_back(predict_corpus(m, corpus, archive));

  if (mode == EvalMode::Vote) {
    std::vector<std::vector<std::string>> voted(corpus.sentences.size());
    for (std::size_t s = 0; s < corpus.sentences.size(); ++s) {
      std::vector<GlossPrediction> at_s;
      at_s.reserve(members.size());
      for (const auto& preds : per_member) at_s.push_back(preds[s]);
      voted[s] = majority_vote(at_s);
    }
    return eval_detail::score(voted, corpus);
  }

  EvalReport report;
  for (const auto& preds : per_member) {
    std::vector<std::vector<std::string>> tokens(preds.size());
    for (std::size_t s = 0; s < preds.size(); ++s) tokens[s] = preds[s].gloss_tokens();
    EvalReport member_report = eval_detail::score(tokens, corpus);
    report.accuracy += member_report.accuracy;
    report.edit_distance += member_report.edit_distance;
    report.tokens = member_report.tokens;
  }
  report.accuracy /= members.size();
  report.edit_distance /= members.size();
  return report;
}

// ---------------------------------------------------------------------------
// Report and prediction files.

inline std::string metrics_tsv(const std::string& language, const std::string& model_tag,
                               const std::string& mode, const EvalReport& report,
                               bool header = true) {
  std::string out;
  if (header) out += "language\tmodel_tag\tmode\taccuracy\tedit_distance\ttokens\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s\t%s\t%s\t%.4f\t%.4f\t%ld\n", language.c_str(),
                model_tag.c_str(), mode.c_str(), report.accuracy, report.edit_distance,
                report.tokens);
  out += buf;
  return out;
}

// The input corpus re-emitted with `\g` filled from predictions.
inline Corpus with_predictions(const Corpus& corpus,
                               const std::vector<std::vector<std::string>>& pred_tokens) {
  if (pred_tokens.size() != corpus.sentences.size())
    throw LengthMismatch("with_predictions: sentence counts differ");
  Corpus out = corpus;
  for (std::size_t s = 0; s < out.sentences.size(); ++s)
    out.sentences[s].gloss_tokens = pred_tokens[s];
  return out;
}

}  // namespace gloss
