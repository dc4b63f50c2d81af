#pragma once

// The neural glosser. Words are encoded by a character-level BiLSTM; a
// latent segmentation DP splits each word into morpheme slots; a count head
// predicts the slot count at inference; translation information is fused
// either as the translation encoder's final state or through additive
// attention over all morpheme-translation pairs [e_j; t_k]; glosses come
// from a closed-vocabulary classifier or an open-vocabulary character
// decoder.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gloss/autodiff.hpp"
#include "gloss/igt.hpp"
#include "gloss/nn.hpp"
#include "gloss/segmentation.hpp"
#include "gloss/translation.hpp"

namespace gloss {

struct CountOutOfRange : Error {
  using Error::Error;
};
struct MissingTranslation : Error {
  using Error::Error;
};

enum class TranslationMode { None, FinalState, Attention };
enum class TranslationProvider { Recurrent, Archive };
enum class GlossHead { Classifier, CharDecoder };

inline std::string to_string(TranslationMode m) {
  switch (m) {
    case TranslationMode::None: return "none";
    case TranslationMode::FinalState: return "final_state";
    case TranslationMode::Attention: return "attention";
  }
  return "?";
}
inline std::string to_string(TranslationProvider p) {
  return p == TranslationProvider::Recurrent ? "recurrent" : "archive";
}
inline std::string to_string(GlossHead h) {
  return h == GlossHead::Classifier ? "classifier" : "char_decoder";
}

inline TranslationMode translation_mode_from_string(const std::string& s) {
  if (s == "none") return TranslationMode::None;
  if (s == "final_state") return TranslationMode::FinalState;
  if (s == "attention") return TranslationMode::Attention;
  throw ConfigError("unknown translation_mode: " + s);
}
inline TranslationProvider provider_from_string(const std::string& s) {
  if (s == "recurrent") return TranslationProvider::Recurrent;
  if (s == "archive") return TranslationProvider::Archive;
  throw ConfigError("unknown translation_provider: " + s);
}
inline GlossHead gloss_head_from_string(const std::string& s) {
  if (s == "classifier") return GlossHead::Classifier;
  if (s == "char_decoder") return GlossHead::CharDecoder;
  throw ConfigError("unknown gloss_head: " + s);
}

struct ModelConfig {
  int hidden_size = 128;  // per direction
  int layers = 1;
  double dropout = 0.0;
  int char_embedding_dim = 64;
  TranslationMode translation_mode = TranslationMode::None;
  TranslationProvider translation_provider = TranslationProvider::Recurrent;
  GlossHead gloss_head = GlossHead::Classifier;
  int max_morphemes = 8;    // M_max
  int decoder_max_len = 50;
  int attention_dim = 64;
  // Resolved at build time: 2 * translation hidden for the recurrent
  // provider, archive dimension otherwise. Zero while mode == None.
  int translation_dim = 0;
  int translation_hidden = 0;  // 0 -> hidden_size
  int decoder_hidden = 0;      // 0 -> hidden_size
  std::uint64_t seed = 1;

  int resolved_translation_hidden() const {
    return translation_hidden > 0 ? translation_hidden : hidden_size;
  }
  int resolved_decoder_hidden() const {
    return decoder_hidden > 0 ? decoder_hidden : hidden_size;
  }
  bool uses_translation() const { return translation_mode != TranslationMode::None; }

  void validate() const {
    if (hidden_size < 64 || hidden_size > 512)
      throw ConfigError("hidden_size must be in [64, 512]");
    if (layers < 1 || layers > 2) throw ConfigError("layers must be 1 or 2");
    if (dropout < 0.0 || dropout > 0.5) throw ConfigError("dropout must be in [0, 0.5]");
    if (char_embedding_dim < 1) throw ConfigError("char_embedding_dim must be positive");
    if (max_morphemes < 1) throw ConfigError("max_morphemes must be >= 1");
    if (decoder_max_len < 1) throw ConfigError("decoder_max_len must be >= 1");
    if (attention_dim < 1) throw ConfigError("attention_dim must be positive");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["hidden_size"] = hidden_size;
    j["layers"] = layers;
    j["dropout"] = dropout;
    j["char_embedding_dim"] = char_embedding_dim;
    j["translation_mode"] = to_string(translation_mode);
    j["translation_provider"] = to_string(translation_provider);
    j["gloss_head"] = to_string(gloss_head);
    j["max_morphemes"] = max_morphemes;
    j["decoder_max_len"] = decoder_max_len;
    j["attention_dim"] = attention_dim;
    j["translation_dim"] = translation_dim;
    j["translation_hidden"] = translation_hidden;
    j["decoder_hidden"] = decoder_hidden;
    j["seed"] = seed;
    return j;
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.hidden_size = j.at("hidden_size").get<int>();
    c.layers = j.at("layers").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.char_embedding_dim = j.at("char_embedding_dim").get<int>();
    c.translation_mode = translation_mode_from_string(j.at("translation_mode"));
    c.translation_provider = provider_from_string(j.at("translation_provider"));
    c.gloss_head = gloss_head_from_string(j.at("gloss_head"));
    c.max_morphemes = j.at("max_morphemes").get<int>();
    c.decoder_max_len = j.at("decoder_max_len").get<int>();
    c.attention_dim = j.at("attention_dim").get<int>();
    c.translation_dim = j.at("translation_dim").get<int>();
    c.translation_hidden = j.at("translation_hidden").get<int>();
    c.decoder_hidden = j.at("decoder_hidden").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }
};

// Orthography character inventory; unseen characters map to a learned UNK
// embedding.
class SourceCharVocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kReserved = 1;

  void add(char32_t cp) {
    if (index_.count(cp)) return;
    index_[cp] = kReserved + static_cast<int>(chars_.size());
    chars_.push_back(cp);
  }

  void add_word(const std::string& word) {
    for (char32_t cp : utf8::decode(word)) add(cp);
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

// Per-character states of one word plus the pooled word vector
// (concatenation of the two final BiLSTM states).
struct CharEncoding {
  std::vector<ad::Vec> states;  // L x 2h
  ad::Vec pooled;               // 2h

  int length() const { return static_cast<int>(states.size()); }
};

// Attention weights of one decode step over the J x K morpheme-translation
// product.
struct AttentionRecord {
  int step = 0;
  ad::Vec query;               // d_i
  int j_count = 0;
  int k_count = 0;
  std::vector<double> alpha;   // row-major J x K

  double at(int j, int k) const { return alpha[std::size_t(j) * k_count + k]; }
};

struct MorphemePrediction {
  std::string gloss;
  double probability = 1.0;            // classifier label prob or product of char probs
  std::pair<int, int> span{0, 0};      // character interval from the hard segmentation
  std::vector<AttentionRecord> attention;
};

struct WordPrediction {
  std::string gloss_token;  // morpheme glosses joined with '-'
  double confidence = 1.0;
  std::vector<MorphemePrediction> morphemes;
};

struct GlossPrediction {
  std::string sentence_id;
  std::vector<WordPrediction> words;

  std::vector<std::string> gloss_tokens() const {
    std::vector<std::string> out;
    out.reserve(words.size());
    for (const WordPrediction& w : words) out.push_back(w.gloss_token);
    return out;
  }
};

// e_j = (sum_c P[c][j] H[c]) / max(sum_c P[c][j], eps)
inline std::vector<ad::Vec> morpheme_representations(const std::vector<ad::Vec>& states,
                                                     const SegmentationPosterior& post,
                                                     double eps = 1e-8) {
  std::vector<ad::Vec> reps(post.slots, ad::Vec(states.empty() ? 0 : states[0].size(), 0.0));
  for (int j = 0; j < post.slots; ++j) {
    double mass = 0.0;
    for (int c = 0; c < post.length; ++c) {
      double w = post.at(c, j);
      mass += w;
      for (std::size_t k = 0; k < reps[j].size(); ++k) reps[j][k] += w * states[c][k];
    }
    double denom = std::max(mass, eps);
    for (double& v : reps[j]) v /= denom;
  }
  return reps;
}

// [e_j; t_final]; identity when no translation vector is given.
inline ad::Vec fuse_final_state(const ad::Vec& e, const ad::Vec* t_final) {
  if (t_final == nullptr) return e;
  ad::Vec out = e;
  out.insert(out.end(), t_final->begin(), t_final->end());
  return out;
}

class GlosserModel {
 public:
  GlosserModel(ModelConfig cfg, GlossVocabulary vocab, SourceCharVocab source_chars,
               TranslationCharVocab trans_chars = {})
      : cfg_(cfg), vocab_(std::move(vocab)), source_chars_(std::move(source_chars)) {
    int h2 = 2 * cfg_.hidden_size;
    src_embedding_ = ad::Param("src.char_embedding", source_chars_.size(), cfg_.char_embedding_dim);
    encoder_ = nn::BiLstmParams("src.rnn", cfg_.layers, cfg_.char_embedding_dim, cfg_.hidden_size);
    seg_scorer_ = nn::LinearParams("seg.scorer", cfg_.max_morphemes, h2);
    count_head_ = nn::LinearParams("count.head", cfg_.max_morphemes, h2);

    if (cfg_.uses_translation() && cfg_.translation_provider == TranslationProvider::Recurrent) {
      int th = cfg_.resolved_translation_hidden();
      trans_encoder_ = std::make_unique<RecurrentTranslationEncoder>(
          std::move(trans_chars), cfg_.char_embedding_dim, th, cfg_.layers);
      cfg_.translation_dim = trans_encoder_->dim();
    }
    if (cfg_.uses_translation() && cfg_.translation_dim <= 0)
      throw ConfigError("translation_dim unresolved for translation mode " +
                        to_string(cfg_.translation_mode));

    if (cfg_.translation_mode == TranslationMode::Attention) {
      int query_dim = cfg_.gloss_head == GlossHead::CharDecoder ? cfg_.resolved_decoder_hidden() : h2;
      attn_wd_ = ad::Param("attn.Wd", cfg_.attention_dim, query_dim);
      // W_v over [e_j; t_k], stored as the column blocks for each half.
      attn_we_ = ad::Param("attn.We", cfg_.attention_dim, h2);
      attn_wt_ = ad::Param("attn.Wt", cfg_.attention_dim, cfg_.translation_dim);
      attn_w_ = ad::Param("attn.w", cfg_.attention_dim);
    }

    if (vocab_.label_count() <= GlossVocabulary::kReserved)
      throw ConfigError("gloss vocabulary has no labels");
    if (cfg_.gloss_head == GlossHead::Classifier) {
      classifier_ = nn::LinearParams("cls.out", vocab_.label_count(), feature_dim());
    } else {
      dec_embedding_ = ad::Param("dec.char_embedding", vocab_.char_count(), cfg_.char_embedding_dim);
      dec_init_ = nn::LinearParams("dec.init", cfg_.resolved_decoder_hidden(), h2);
      decoder_cell_ = nn::LstmParams("dec.cell", cfg_.char_embedding_dim + extra_input_dim(),
                                     cfg_.resolved_decoder_hidden());
      dec_out_ = nn::LinearParams("dec.out", vocab_.char_count(), cfg_.resolved_decoder_hidden());
    }

    init_params();
  }

  // Builds vocabularies from the training corpus and resolves the
  // translation dimension.
  static GlosserModel build(const Corpus& train, ModelConfig cfg,
                            const EmbeddingArchive* archive = nullptr) {
    GlossVocabulary vocab = build_vocab(train);
    SourceCharVocab source_chars;
    TranslationCharVocab trans_chars;
    for (const IgtSentence& s : train.sentences) {
      for (const std::string& w : s.orthography_tokens) source_chars.add_word(w);
      if (!s.translation.empty()) trans_chars.add_text(s.translation);
    }
    if (cfg.uses_translation() && cfg.translation_provider == TranslationProvider::Archive) {
      if (archive == nullptr)
        throw ConfigError("archive provider selected but no archive given");
      cfg.translation_dim = archive->dim();
    }
    return GlosserModel(cfg, std::move(vocab), std::move(source_chars), std::move(trans_chars));
  }

  const ModelConfig& config() const { return cfg_; }
  const GlossVocabulary& vocab() const { return vocab_; }
  const SourceCharVocab& source_chars() const { return source_chars_; }
  RecurrentTranslationEncoder* translation_encoder() { return trans_encoder_.get(); }

  std::vector<ad::Param*> params() {
    std::vector<ad::Param*> out;
    out.push_back(&src_embedding_);
    encoder_.collect(out);
    seg_scorer_.collect(out);
    count_head_.collect(out);
    if (trans_encoder_) trans_encoder_->collect(out);
    if (cfg_.translation_mode == TranslationMode::Attention) {
      out.push_back(&attn_wd_);
      out.push_back(&attn_we_);
      out.push_back(&attn_wt_);
      out.push_back(&attn_w_);
    }
    if (cfg_.gloss_head == GlossHead::Classifier) {
      classifier_.collect(out);
    } else {
      out.push_back(&dec_embedding_);
      dec_init_.collect(out);
      decoder_cell_.collect(out);
      dec_out_.collect(out);
    }
    return out;
  }

  // ---- word encoding -----------------------------------------------------

  struct WordVars {
    std::vector<ad::Var> states;
    ad::Var pooled;
  };

  WordVars encode_word_vars(ad::Tape& t, const std::string& word, Rng* dropout_rng = nullptr) {
    std::vector<char32_t> cps = utf8::decode(word);
    if (cps.empty()) throw Error("encode_word: empty token");
    std::vector<ad::Var> xs(cps.size());
    for (std::size_t i = 0; i < cps.size(); ++i)
      xs[i] = t.embedding_row(src_embedding_, source_chars_.id(cps[i]));
    nn::BiLstmOutput out = nn::bilstm(t, encoder_, xs);
    WordVars wv;
    wv.pooled = out.final_state(t);
    wv.states.reserve(out.states.size());
    for (ad::Var v : out.states)
      wv.states.push_back(nn::dropout(t, v, cfg_.dropout, dropout_rng));
    return wv;
  }

  CharEncoding encode_chars(const std::string& word) {
    ad::Tape t;
    WordVars wv = encode_word_vars(t, word);
    CharEncoding enc;
    enc.states.reserve(wv.states.size());
    for (ad::Var v : wv.states) enc.states.push_back(t.val(v));
    enc.pooled = t.val(wv.pooled);
    return enc;
  }

  std::vector<CharEncoding> encode_sentence(const std::vector<std::string>& tokens) {
    std::vector<CharEncoding> out;
    out.reserve(tokens.size());
    for (const std::string& w : tokens) out.push_back(encode_chars(w));
    return out;
  }

  // ---- morpheme count ------------------------------------------------------

  // Distribution over {1..M_max}; entry i is the probability of i+1 slots.
  ad::Vec count_distribution(const ad::Vec& pooled) {
    ad::Tape t;
    ad::Var logits = nn::linear(t, count_head_, t.input(pooled));
    return t.val(t.softmax(logits));
  }

  // Feasible argmax: restricted to counts the word length admits; ties go to
  // the smaller count.
  int choose_morpheme_count(const ad::Vec& probs, int word_length) const {
    int limit = std::min<int>(static_cast<int>(probs.size()), word_length);
    int best = 0;
    for (int i = 1; i < limit; ++i)
      if (probs[i] > probs[best]) best = i;
    return best + 1;
  }

  // ---- segmentation --------------------------------------------------------

  // Plain per-character slot scores (L x M_max).
  std::vector<ad::Vec> slot_scores(const CharEncoding& enc) {
    ad::Tape t;
    std::vector<ad::Vec> out;
    out.reserve(enc.states.size());
    for (const ad::Vec& h : enc.states)
      out.push_back(t.val(nn::linear(t, seg_scorer_, t.input(h))));
    return out;
  }

  SegmentationPosterior segment_posteriors(const CharEncoding& enc, int slots) {
    std::vector<ad::Vec> s = slot_scores(enc);
    return segment_marginals([&](int c, int j) { return s[c][j]; },
                             static_cast<int>(s.size()), slots);
  }

  MorphemeSpans viterbi_segments(const CharEncoding& enc, int slots) {
    std::vector<ad::Vec> s = slot_scores(enc);
    return gloss::viterbi_segments([&](int c, int j) { return s[c][j]; },
                                   static_cast<int>(s.size()), slots);
  }

  // ---- attention -------------------------------------------------------------

  struct AttendVars {
    ad::Var context;  // dim 2h + d_t
    ad::Var alpha;    // J*K, row-major over (j, k)
  };

  // score(d, v_jk) = w . tanh(Wd d + We e_j + Wt t_k); alpha = softmax over
  // all J*K scores; context = sum alpha_jk [e_j; t_k], assembled from the
  // row/column marginals of alpha.
  AttendVars attend_vars(ad::Tape& t, ad::Var d, const std::vector<ad::Var>& reps,
                         const std::vector<ad::Var>& trans,
                         const std::vector<ad::Var>* proj_reps = nullptr,
                         const std::vector<ad::Var>* proj_trans = nullptr) {
    const int j_count = static_cast<int>(reps.size());
    const int k_count = static_cast<int>(trans.size());
    ad::Var u = t.matvec(attn_wd_, d);
    ad::Var w = t.param_vector(attn_w_);
    std::vector<ad::Var> pe(j_count), pt(k_count);
    for (int j = 0; j < j_count; ++j)
      pe[j] = proj_reps ? (*proj_reps)[j] : t.matvec(attn_we_, reps[j]);
    for (int k = 0; k < k_count; ++k)
      pt[k] = proj_trans ? (*proj_trans)[k] : t.matvec(attn_wt_, trans[k]);
    std::vector<ad::Var> scores;
    scores.reserve(std::size_t(j_count) * k_count);
    for (int j = 0; j < j_count; ++j)
      for (int k = 0; k < k_count; ++k)
        scores.push_back(t.dot(w, t.tanh_(t.add3(u, pe[j], pt[k]))));
    ad::Var alpha = t.softmax(t.gather(scores));
    ad::Var rep_weights = t.row_sums(alpha, j_count, k_count);
    ad::Var trans_weights = t.col_sums(alpha, j_count, k_count);
    ad::Var context = t.concat(t.weighted_sum(rep_weights, reps),
                               t.weighted_sum(trans_weights, trans));
    return {context, alpha};
  }

  struct AttendResult {
    ad::Vec context;
    AttentionRecord record;
  };

  AttendResult attend(const ad::Vec& d, const std::vector<ad::Vec>& reps,
                      const std::vector<ad::Vec>& trans) {
    ad::Tape t;
    std::vector<ad::Var> er(reps.size()), tr(trans.size());
    for (std::size_t j = 0; j < reps.size(); ++j) er[j] = t.input(reps[j]);
    for (std::size_t k = 0; k < trans.size(); ++k) tr[k] = t.input(trans[k]);
    AttendVars av = attend_vars(t, t.input(d), er, tr);
    AttendResult out;
    out.context = t.val(av.context);
    out.record.query = d;
    out.record.j_count = static_cast<int>(reps.size());
    out.record.k_count = static_cast<int>(trans.size());
    out.record.alpha = t.val(av.alpha);
    return out;
  }

  // ---- classifier head ---------------------------------------------------

  // Label distribution with reserved symbols masked out.
  ad::Vec classify_gloss(const ad::Vec& feature) {
    require_head(GlossHead::Classifier, "classify_gloss");
    ad::Tape t;
    ad::Var logits = masked_label_logits(t, t.input(feature));
    return t.val(t.softmax(logits));
  }

  // ---- decoder head --------------------------------------------------------

  struct DecodeResult {
    std::string gloss;                       // empty if EOS came first
    double probability = 1.0;                // product of chosen char probs
    std::vector<AttentionRecord> attention;  // one record per step in attention mode
  };

  // Greedy character decoding for one morpheme slot. `reps` spans all
  // morphemes of the sentence (J), `trans` the translation tokens (K).
  DecodeResult decode_gloss(const ad::Vec& e_j, const std::vector<ad::Vec>& reps,
                            const TranslationEncoding* trans) {
    require_head(GlossHead::CharDecoder, "decode_gloss");
    ad::Tape t;
    std::vector<ad::Var> rep_vars(reps.size());
    for (std::size_t j = 0; j < reps.size(); ++j) rep_vars[j] = t.input(reps[j]);
    std::vector<ad::Var> trans_vars;
    ad::Var trans_final;
    if (cfg_.uses_translation()) {
      if (trans == nullptr) throw MissingTranslation("decode_gloss: translation required");
      trans_vars.resize(trans->vectors.size());
      for (std::size_t k = 0; k < trans->vectors.size(); ++k)
        trans_vars[k] = t.input(trans->vectors[k]);
      trans_final = t.input(trans->final_state);
    }

    std::vector<ad::Var> proj_reps, proj_trans;
    if (cfg_.translation_mode == TranslationMode::Attention) {
      proj_reps.resize(rep_vars.size());
      for (std::size_t j = 0; j < rep_vars.size(); ++j)
        proj_reps[j] = t.matvec(attn_we_, rep_vars[j]);
      proj_trans.resize(trans_vars.size());
      for (std::size_t k = 0; k < trans_vars.size(); ++k)
        proj_trans[k] = t.matvec(attn_wt_, trans_vars[k]);
    }

    nn::LstmState state{t.tanh_(nn::linear(t, dec_init_, t.input(e_j))),
                        t.zeros(cfg_.resolved_decoder_hidden())};
    DecodeResult out;
    std::vector<char32_t> chars;
    int prev_id = GlossVocabulary::kBos;
    for (int step = 0; step < cfg_.decoder_max_len; ++step) {
      ad::Var x = t.embedding_row(dec_embedding_, prev_id);
      if (cfg_.translation_mode == TranslationMode::Attention) {
        AttendVars av = attend_vars(t, state.h, rep_vars, trans_vars, &proj_reps, &proj_trans);
        AttentionRecord rec;
        rec.step = step;
        rec.query = t.val(state.h);
        rec.j_count = static_cast<int>(rep_vars.size());
        rec.k_count = static_cast<int>(trans_vars.size());
        rec.alpha = t.val(av.alpha);
        out.attention.push_back(std::move(rec));
        x = t.concat(x, av.context);
      } else if (cfg_.translation_mode == TranslationMode::FinalState) {
        x = t.concat(x, trans_final);
      }
      state = nn::lstm_step(t, decoder_cell_, x, state);
      ad::Vec probs = t.val(t.softmax(masked_char_logits(t, nn::linear(t, dec_out_, state.h))));
      int best = GlossVocabulary::kEos;
      for (int i = 0; i < static_cast<int>(probs.size()); ++i)
        if (probs[i] > probs[best]) best = i;
      out.probability *= probs[best];
      if (best == GlossVocabulary::kEos) break;
      chars.push_back(vocab_.char_at(best));
      prev_id = best;
    }
    out.gloss = utf8::encode(chars);
    return out;
  }

  // ---- training loss -------------------------------------------------------

  struct SentenceLoss {
    ad::Var total;    // summed gloss + count negative log-likelihoods
    int token_count = 0;
  };

  // Builds the differentiable loss of one sentence: per token, the count
  // head cross-entropy plus the gloss loss (label cross-entropy or summed
  // per-character cross-entropy). Expected morpheme representations come
  // from the segmentation DP marginals.
  SentenceLoss sentence_loss(ad::Tape& t, const IgtSentence& s,
                             const EmbeddingArchive* archive = nullptr,
                             Rng* dropout_rng = nullptr) {
    if (s.gloss_tokens.size() != s.orthography_tokens.size())
      throw Error("sentence_loss: gloss/orthography token counts differ in " + s.id);
    if (cfg_.uses_translation() && detail::trim(s.translation).empty())
      throw MissingTranslation("sentence " + s.id + " lacks a translation");

    // Translation vectors, shared by the whole sentence.
    std::vector<ad::Var> trans_vars;
    ad::Var trans_final;
    if (cfg_.uses_translation()) {
      if (cfg_.translation_provider == TranslationProvider::Recurrent) {
        auto enc = trans_encoder_->encode_vars(t, s.translation);
        trans_vars = std::move(enc.vectors);
        trans_final = enc.final_state;
      } else {
        if (archive == nullptr) throw ConfigError("archive provider needs an archive");
        const TranslationEncoding& enc = archive->lookup(s.translation);
        trans_vars.resize(enc.vectors.size());
        for (std::size_t k = 0; k < enc.vectors.size(); ++k)
          trans_vars[k] = t.input(enc.vectors[k]);
        trans_final = t.input(enc.final_state);
      }
    }

    struct Slot {
      ad::Var rep;
      std::string gold;
    };
    std::vector<Slot> slots;
    std::vector<ad::Var> losses;

    for (std::size_t w = 0; w < s.orthography_tokens.size(); ++w) {
      GlossParts parts = split_gloss_token(s.gloss_tokens[w]);
      int gold_count = static_cast<int>(parts.parts.size());
      if (gold_count > cfg_.max_morphemes)
        throw CountOutOfRange("token '" + s.orthography_tokens[w] + "' in " + s.id + " has " +
                              std::to_string(gold_count) + " morphemes, M_max is " +
                              std::to_string(cfg_.max_morphemes));
      WordVars wv = encode_word_vars(t, s.orthography_tokens[w], dropout_rng);
      int length = static_cast<int>(wv.states.size());
      losses.push_back(t.nll(nn::linear(t, count_head_, wv.pooled), gold_count - 1));

      // Words with fewer characters than gold morphemes cannot realize the
      // full segmentation; the surplus gold parts fold into the last slot.
      int m_eff = std::min(gold_count, length);
      std::vector<ad::Var> char_scores(length);
      for (int c = 0; c < length; ++c)
        char_scores[c] = nn::linear(t, seg_scorer_, wv.states[c]);
      auto post = segment_marginal_vars(t, char_scores, m_eff);

      for (int j = 0; j < m_eff; ++j) {
        std::vector<ad::Var> coeffs(length);
        for (int c = 0; c < length; ++c) coeffs[c] = post[c][j];
        ad::Var mass = t.sum_scalars(coeffs);
        ad::Var rep = t.mul_scalar(t.lincomb(coeffs, wv.states), t.recip_clamped(mass, 1e-8));
        slots.push_back({rep, parts.parts[j]});
      }
      if (m_eff < gold_count) {
        // Fold the surplus gold parts into the final slot's target.
        for (int j = m_eff; j < gold_count; ++j) slots.back().gold += "-" + parts.parts[j];
      }
    }

    // Gloss losses per morpheme slot.
    std::vector<ad::Var> reps(slots.size());
    for (std::size_t j = 0; j < slots.size(); ++j) reps[j] = slots[j].rep;

    std::vector<ad::Var> proj_reps, proj_trans;
    if (cfg_.translation_mode == TranslationMode::Attention) {
      proj_reps.resize(reps.size());
      for (std::size_t j = 0; j < reps.size(); ++j) proj_reps[j] = t.matvec(attn_we_, reps[j]);
      proj_trans.resize(trans_vars.size());
      for (std::size_t k = 0; k < trans_vars.size(); ++k)
        proj_trans[k] = t.matvec(attn_wt_, trans_vars[k]);
    }

    for (const Slot& slot : slots) {
      if (cfg_.gloss_head == GlossHead::Classifier) {
        ad::Var feature = slot.rep;
        if (cfg_.translation_mode == TranslationMode::FinalState)
          feature = t.concat(feature, trans_final);
        else if (cfg_.translation_mode == TranslationMode::Attention)
          feature = t.concat(feature,
                             attend_vars(t, slot.rep, reps, trans_vars, &proj_reps, &proj_trans)
                                 .context);
        losses.push_back(t.nll(masked_label_logits(t, feature), vocab_.label_index(slot.gold)));
      } else {
        losses.push_back(decoder_teacher_loss(t, slot.rep, slot.gold, reps, trans_vars,
                                              trans_final, &proj_reps, &proj_trans, dropout_rng));
      }
    }

    return {t.sum_scalars(losses), static_cast<int>(s.orthography_tokens.size())};
  }

  // ---- full-sentence prediction ---------------------------------------------

  GlossPrediction predict(const IgtSentence& s, const EmbeddingArchive* archive = nullptr) {
    if (cfg_.uses_translation() && detail::trim(s.translation).empty())
      throw MissingTranslation("sentence " + s.id + " lacks a translation");

    std::optional<TranslationEncoding> trans;
    if (cfg_.uses_translation()) {
      if (cfg_.translation_provider == TranslationProvider::Recurrent)
        trans = trans_encoder_->encode(s.translation);
      else {
        if (archive == nullptr) throw ConfigError("archive provider needs an archive");
        trans = archive->lookup(s.translation);
      }
    }

    // Encode all words, choose slot counts, take hard spans, build reps.
    struct WordState {
      CharEncoding enc;
      MorphemeSpans spans;
      ad::Vec count_probs;
    };
    std::vector<WordState> words(s.orthography_tokens.size());
    std::vector<ad::Vec> reps;  // all J morphemes in sentence order
    for (std::size_t w = 0; w < s.orthography_tokens.size(); ++w) {
      WordState& ws = words[w];
      ws.enc = encode_chars(s.orthography_tokens[w]);
      ws.count_probs = count_distribution(ws.enc.pooled);
      int m = choose_morpheme_count(ws.count_probs, ws.enc.length());
      ws.spans = viterbi_segments(ws.enc, m);
      SegmentationPosterior hard = indicator_posterior(ws.spans, ws.enc.length());
      for (ad::Vec& rep : morpheme_representations(ws.enc.states, hard))
        reps.push_back(std::move(rep));
    }

    GlossPrediction out;
    out.sentence_id = s.id;
    out.words.resize(words.size());

    std::size_t rep_index = 0;
    for (std::size_t w = 0; w < words.size(); ++w) {
      WordPrediction& wp = out.words[w];
      for (std::size_t j = 0; j < words[w].spans.spans.size(); ++j, ++rep_index) {
        MorphemePrediction mp;
        mp.span = words[w].spans.spans[j];
        const ad::Vec& e = reps[rep_index];
        if (cfg_.gloss_head == GlossHead::Classifier) {
          ad::Vec feature = e;
          if (cfg_.translation_mode == TranslationMode::FinalState) {
            feature = fuse_final_state(e, &trans->final_state);
          } else if (cfg_.translation_mode == TranslationMode::Attention) {
            AttendResult ar = attend(e, reps, trans->vectors);
            feature.insert(feature.end(), ar.context.begin(), ar.context.end());
            mp.attention.push_back(std::move(ar.record));
          }
          ad::Vec probs = classify_gloss(feature);
          int best = GlossVocabulary::kReserved;
          for (int i = best; i < static_cast<int>(probs.size()); ++i)
            if (probs[i] > probs[best]) best = i;
          mp.gloss = vocab_.label(best);
          mp.probability = probs[best];
        } else {
          DecodeResult dr =
              decode_gloss(e, reps, trans.has_value() ? &trans.value() : nullptr);
          mp.gloss = dr.gloss.empty() ? "???" : dr.gloss;
          mp.probability = dr.probability;
          mp.attention = std::move(dr.attention);
        }
        wp.morphemes.push_back(std::move(mp));
      }
      std::string token;
      double conf = 1.0;
      for (std::size_t j = 0; j < wp.morphemes.size(); ++j) {
        if (j) token.push_back('-');
        token += wp.morphemes[j].gloss;
        conf *= wp.morphemes[j].probability;
      }
      wp.gloss_token = std::move(token);
      wp.confidence = conf;
    }
    return out;
  }

 private:
  int feature_dim() const {
    int h2 = 2 * cfg_.hidden_size;
    switch (cfg_.translation_mode) {
      case TranslationMode::None: return h2;
      case TranslationMode::FinalState: return h2 + cfg_.translation_dim;
      case TranslationMode::Attention: return h2 + (h2 + cfg_.translation_dim);
    }
    return h2;
  }

  // Width of the translation signal appended to each decoder input.
  int extra_input_dim() const {
    switch (cfg_.translation_mode) {
      case TranslationMode::None: return 0;
      case TranslationMode::FinalState: return cfg_.translation_dim;
      case TranslationMode::Attention: return 2 * cfg_.hidden_size + cfg_.translation_dim;
    }
    return 0;
  }

  void require_head(GlossHead head, const char* what) const {
    if (cfg_.gloss_head != head)
      throw ConfigError(std::string(what) + ": wrong gloss head configured");
  }

  ad::Var masked_label_logits(ad::Tape& t, ad::Var feature) {
    ad::Var logits = nn::linear(t, classifier_, feature);
    ad::Vec mask(vocab_.label_count(), 0.0);
    for (int i = 0; i < GlossVocabulary::kReserved; ++i) mask[i] = -1e30;
    return t.offset(logits, std::move(mask));
  }

  // PAD/UNK/BOS are never emitted; EOS stays available as the stop symbol.
  ad::Var masked_char_logits(ad::Tape& t, ad::Var logits) {
    ad::Vec mask(vocab_.char_count(), 0.0);
    mask[GlossVocabulary::kPad] = -1e30;
    mask[GlossVocabulary::kUnk] = -1e30;
    mask[GlossVocabulary::kBos] = -1e30;
    return t.offset(logits, std::move(mask));
  }

  ad::Var decoder_teacher_loss(ad::Tape& t, ad::Var rep, const std::string& gold,
                               const std::vector<ad::Var>& reps,
                               const std::vector<ad::Var>& trans_vars, ad::Var trans_final,
                               const std::vector<ad::Var>* proj_reps,
                               const std::vector<ad::Var>* proj_trans, Rng* dropout_rng) {
    std::vector<int> targets;
    for (char32_t cp : utf8::decode(gold)) targets.push_back(vocab_.char_id(cp));
    targets.push_back(GlossVocabulary::kEos);

    nn::LstmState state{t.tanh_(nn::linear(t, dec_init_, rep)),
                        t.zeros(cfg_.resolved_decoder_hidden())};
    std::vector<ad::Var> losses;
    int prev_id = GlossVocabulary::kBos;
    for (int target : targets) {
      ad::Var x = t.embedding_row(dec_embedding_, prev_id);
      if (cfg_.translation_mode == TranslationMode::Attention)
        x = t.concat(x, attend_vars(t, state.h, reps, trans_vars, proj_reps, proj_trans).context);
      else if (cfg_.translation_mode == TranslationMode::FinalState)
        x = t.concat(x, trans_final);
      x = nn::dropout(t, x, cfg_.dropout, dropout_rng);
      state = nn::lstm_step(t, decoder_cell_, x, state);
      losses.push_back(t.nll(masked_char_logits(t, nn::linear(t, dec_out_, state.h)), target));
      prev_id = target;
    }
    return t.sum_scalars(losses);
  }

  void init_params() {
    Rng rng(cfg_.seed);
    src_embedding_.init_xavier(rng);
    encoder_.init(rng);
    seg_scorer_.init(rng);
    count_head_.init(rng);
    if (trans_encoder_) trans_encoder_->init(rng);
    if (cfg_.translation_mode == TranslationMode::Attention) {
      attn_wd_.init_xavier(rng);
      attn_we_.init_xavier(rng);
      attn_wt_.init_xavier(rng);
      attn_w_.init_uniform(rng, std::sqrt(3.0 / cfg_.attention_dim));
    }
    if (cfg_.gloss_head == GlossHead::Classifier) {
      classifier_.init(rng);
    } else {
      dec_embedding_.init_xavier(rng);
      dec_init_.init(rng);
      decoder_cell_.init(rng);
      dec_out_.init(rng);
    }
  }

  ModelConfig cfg_;
  GlossVocabulary vocab_;
  SourceCharVocab source_chars_;

  ad::Param src_embedding_;
  nn::BiLstmParams encoder_;
  nn::LinearParams seg_scorer_;
  nn::LinearParams count_head_;
  std::unique_ptr<RecurrentTranslationEncoder> trans_encoder_;

  ad::Param attn_wd_, attn_we_, attn_wt_, attn_w_;

  nn::LinearParams classifier_;

  ad::Param dec_embedding_;
  nn::LinearParams dec_init_;
  nn::LstmParams decoder_cell_;
  nn::LinearParams dec_out_;

  friend class CheckpointCodec;
};

}  // namespace gloss
