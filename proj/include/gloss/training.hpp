#pragma once

// Optimization: AdamW without weight decay at learning rate 0.001, per-epoch
// exponential decay, gradient clipping, length-bucketed batches, best-dev
// checkpoint selection, and ten-member ensembles trained from consecutive
// seeds.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gloss/checkpoint.hpp"
#include "gloss/model.hpp"
#include "gloss/sha256.hpp"

namespace gloss {

struct TrainingConfig {
  double learning_rate = 0.001;
  double weight_decay = 0.0;  // decoupled; the paper's setting is zero
  double gamma = 1.0;         // per-epoch exponential LR decay
  int batch_size = 8;
  int epochs = 25;            // archive-provider runs default to 300
  double grad_clip = 1.0;
  int ensemble_size = 10;
  std::uint64_t base_seed = 1;

  void validate() const {
    if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
    if (gamma < 0.9 || gamma > 1.0) throw ConfigError("gamma must be in [0.9, 1.0]");
    if (batch_size < 2 || batch_size > 64) throw ConfigError("batch_size must be in [2, 64]");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (grad_clip <= 0) throw ConfigError("grad_clip must be positive");
    if (ensemble_size < 1) throw ConfigError("ensemble_size must be >= 1");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["learning_rate"] = learning_rate;
    j["weight_decay"] = weight_decay;
    j["gamma"] = gamma;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["grad_clip"] = grad_clip;
    j["ensemble_size"] = ensemble_size;
    j["base_seed"] = base_seed;
    return j;
  }

  static TrainingConfig from_json(const nlohmann::json& j) {
    TrainingConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.gamma = j.at("gamma").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.ensemble_size = j.at("ensemble_size").get<int>();
    c.base_seed = j.at("base_seed").get<std::uint64_t>();
    return c;
  }
};

// The paper trains 25 epochs, extended to 300 with pre-trained encoders.
inline int default_epochs(TranslationProvider provider) {
  return provider == TranslationProvider::Archive ? 300 : 25;
}

// lr(epoch) = lr0 * gamma^epoch, epoch 0-based.
inline double learning_rate_at(const TrainingConfig& tc, int epoch) {
  return tc.learning_rate * std::pow(tc.gamma, epoch);
}

// Digest of the (model, training) configuration shared by ensemble members;
// the member seed is excluded so all members agree.
inline std::string config_digest(const ModelConfig& mc, const TrainingConfig& tc) {
  ModelConfig shared = mc;
  shared.seed = 0;
  nlohmann::json j;
  j["model"] = shared.to_json();
  j["training"] = tc.to_json();
  return sha256_hex(j.dump());
}

// ---------------------------------------------------------------------------
// AdamW (decoupled weight decay).

class AdamW {
 public:
  AdamW(const std::vector<ad::Param*>& params, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i]->value.size(), 0.0);
      v_[i].assign(params[i]->value.size(), 0.0);
    }
  }

  void step(const std::vector<ad::Param*>& params, double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      ad::Param& p = *params[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        double g = p.grad[k];
        m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g;
        v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g * g;
        double mhat = m_[i][k] / bc1;
        double vhat = v_[i][k] / bc2;
        p.value[k] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p.value[k]);
      }
    }
  }

 private:
  double weight_decay_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<ad::Vec> m_, v_;
};

inline void zero_grads(const std::vector<ad::Param*>& params) {
  for (ad::Param* p : params) p->zero_grad();
}

inline void scale_grads(const std::vector<ad::Param*>& params, double factor) {
  for (ad::Param* p : params)
    for (double& g : p->grad) g *= factor;
}

// Global L2-norm clipping.
inline double clip_gradients(const std::vector<ad::Param*>& params, double max_norm) {
  double sq = 0.0;
  for (ad::Param* p : params)
    for (double g : p->grad) sq += g * g;
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) scale_grads(params, max_norm / norm);
  return norm;
}

// ---------------------------------------------------------------------------
// Single-model training.

struct EpochLog {
  int epoch = 0;          // 1-based in logs
  double loss = 0.0;      // mean per-token loss
  double dev_accuracy = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  GlosserModel model;
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_dev_accuracy = 0.0;
};

inline std::string training_log_tsv(const std::vector<EpochLog>& log) {
  std::string out = "epoch\tloss\tdev_accuracy\tlr\n";
  char buf[160];
  for (const EpochLog& e : log) {
    std::snprintf(buf, sizeof buf, "%d\t%.6f\t%.4f\t%.8f\n", e.epoch, e.loss, e.dev_accuracy,
                  e.lr);
    out += buf;
  }
  return out;
}

namespace train_detail {

inline void require_trainable(const Corpus& corpus, const ModelConfig& mc,
                              const EmbeddingArchive* archive) {
  if (corpus.sentences.empty()) throw EmptyCorpus("training corpus is empty");
  for (const IgtSentence& s : corpus.sentences) {
    for (const Violation& v : validate_sentence(s)) {
      if (v.rule == ViolationRule::MissingTranslation && !mc.uses_translation()) continue;
      throw Error("invalid training sentence " + s.id + ": " + v.format());
    }
    for (const std::string& tok : s.gloss_tokens) {
      int count = static_cast<int>(morpheme_count(tok));
      if (count > mc.max_morphemes)
        throw CountOutOfRange("gloss token '" + tok + "' in " + s.id + " has " +
                              std::to_string(count) + " morphemes, M_max is " +
                              std::to_string(mc.max_morphemes));
    }
    if (mc.uses_translation() && mc.translation_provider == TranslationProvider::Archive &&
        archive != nullptr && !archive->contains(s.translation))
      throw MissingEntry("training translation of " + s.id + " missing from archive");
  }
}

// Length-bucketed batches, shuffled per epoch: indices are shuffled, then
// stably sorted by character length (ties keep the shuffled order), cut
// into batches, and the batch order is shuffled again.
inline std::vector<std::vector<int>> make_batches(const Corpus& corpus, int batch_size,
                                                  Rng& rng) {
  std::vector<int> idx(corpus.sentences.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  rng.shuffle(idx);
  std::vector<std::size_t> lengths(corpus.sentences.size());
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    std::size_t chars = 0;
    for (const std::string& w : corpus.sentences[i].orthography_tokens) chars += w.size();
    lengths[i] = chars;
  }
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return lengths[a] < lengths[b]; });
  std::vector<std::vector<int>> batches;
  for (std::size_t start = 0; start < idx.size(); start += batch_size)
    batches.emplace_back(idx.begin() + start,
                         idx.begin() + std::min(idx.size(), start + batch_size));
  rng.shuffle(batches);
  return batches;
}

struct ParamSnapshot {
  std::vector<ad::Vec> values;

  static ParamSnapshot take(const std::vector<ad::Param*>& params) {
    ParamSnapshot s;
    s.values.reserve(params.size());
    for (ad::Param* p : params) s.values.push_back(p->value);
    return s;
  }

  void restore(const std::vector<ad::Param*>& params) const {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
  }
};

}  // namespace train_detail

// Runs the full epoch schedule and returns the best-dev-accuracy snapshot
// (the final epoch when dev is empty). Deterministic given (corpus,
// configs, seed).
inline TrainResult train_model(const Corpus& train, const Corpus& dev, ModelConfig mc,
                               const TrainingConfig& tc, std::uint64_t seed,
                               const EmbeddingArchive* archive = nullptr) {
  mc.validate();
  tc.validate();
  train_detail::require_trainable(train, mc, archive);
  mc.seed = seed;

  GlosserModel model = GlosserModel::build(train, mc, archive);
  std::vector<ad::Param*> params = model.params();
  AdamW optimizer(params, tc.weight_decay);
  Rng shuffle_rng(seed ^ 0x5DEECE66Dull);
  Rng dropout_rng(seed ^ 0xB5026F5AA96619E9ull);

  TrainResult result{std::move(model), {}, -1, 0.0};
  GlosserModel& m = result.model;
  params = m.params();

  train_detail::ParamSnapshot best;
  ad::Tape tape;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    double lr = learning_rate_at(tc, epoch);
    double epoch_loss = 0.0;
    long epoch_tokens = 0;

    for (const std::vector<int>& batch : train_detail::make_batches(train, tc.batch_size,
                                                                    shuffle_rng)) {
      zero_grads(params);
      long batch_tokens = 0;
      for (int i : batch) {
        tape.clear();
        GlosserModel::SentenceLoss loss =
            m.sentence_loss(tape, train.sentences[i], archive, &dropout_rng);
        tape.backward(loss.total);
        epoch_loss += tape.scalar(loss.total);
        batch_tokens += loss.token_count;
      }
      epoch_tokens += batch_tokens;
      if (batch_tokens > 0) scale_grads(params, 1.0 / batch_tokens);
      clip_gradients(params, tc.grad_clip);
      optimizer.step(params, lr);
    }

    double dev_acc = 0.0;
    if (!dev.sentences.empty()) {
      long correct = 0, total = 0;
      for (const IgtSentence& s : dev.sentences) {
        GlossPrediction pred = m.predict(s, archive);
        for (std::size_t w = 0; w < s.gloss_tokens.size(); ++w) {
          ++total;
          if (w < pred.words.size() && pred.words[w].gloss_token == s.gloss_tokens[w])
            ++correct;
        }
      }
      dev_acc = total > 0 ? 100.0 * correct / total : 0.0;
    }

    result.log.push_back({epoch + 1, epoch_tokens ? epoch_loss / epoch_tokens : 0.0, dev_acc, lr});
    bool is_best = dev.sentences.empty() || result.best_epoch < 0 ||
                   dev_acc > result.best_dev_accuracy;
    if (is_best) {
      result.best_epoch = epoch + 1;
      result.best_dev_accuracy = dev_acc;
      best = train_detail::ParamSnapshot::take(params);
    }
  }

  best.restore(params);
  return result;
}

// ---------------------------------------------------------------------------
// Ensembles.

struct EnsembleManifest {
  std::string config_digest;
  std::vector<std::string> checkpoint_paths;  // relative to the manifest file
  std::vector<std::uint64_t> seeds;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["version"] = 1;
    j["config_digest"] = config_digest;
    nlohmann::json members = nlohmann::json::array();
    for (std::size_t i = 0; i < checkpoint_paths.size(); ++i) {
      nlohmann::json m;
      m["path"] = checkpoint_paths[i];
      m["seed"] = seeds[i];
      members.push_back(std::move(m));
    }
    j["members"] = std::move(members);
    return j;
  }

  static EnsembleManifest from_json(const nlohmann::json& j) {
    EnsembleManifest m;
    m.config_digest = j.at("config_digest").get<std::string>();
    for (const auto& member : j.at("members")) {
      m.checkpoint_paths.push_back(member.at("path").get<std::string>());
      m.seeds.push_back(member.at("seed").get<std::uint64_t>());
    }
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << to_json().dump(2) << "\n";
  }

  static EnsembleManifest load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("manifest parse failure in " + path + ": " + e.what());
    }
    return from_json(j);
  }
};

struct EnsembleTrainOutput {
  EnsembleManifest manifest;
  std::vector<TrainResult> members;
};

inline std::string provider_identity(GlosserModel& model, const EmbeddingArchive* archive) {
  if (!model.config().uses_translation()) return "none";
  if (model.config().translation_provider == TranslationProvider::Recurrent) return "recurrent";
  return archive != nullptr ? archive->provider() : "archive";
}

// Trains ensemble_size members with seeds base_seed + 0..N-1. Members are
// independent; jobs > 1 trains them on worker threads without affecting the
// per-member determinism contract. When out_dir is non-empty, member
// checkpoints, per-member training logs and manifest.json land there.
inline EnsembleTrainOutput train_ensemble(const Corpus& train, const Corpus& dev,
                                          const ModelConfig& mc, const TrainingConfig& tc,
                                          const EmbeddingArchive* archive = nullptr,
                                          const std::string& out_dir = "", int jobs = 1) {
  tc.validate();
  EnsembleTrainOutput out;
  out.manifest.config_digest = config_digest(mc, tc);

  std::vector<std::uint64_t> seeds(tc.ensemble_size);
  for (int i = 0; i < tc.ensemble_size; ++i) seeds[i] = tc.base_seed + i;

  std::vector<std::optional<TrainResult>> results(tc.ensemble_size);
  std::vector<std::string> failures(tc.ensemble_size);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= tc.ensemble_size) return;
      try {
        results[i] = train_model(train, dev, mc, tc, seeds[i], archive);
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < std::min(jobs, tc.ensemble_size); ++j) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }
  for (int i = 0; i < tc.ensemble_size; ++i)
    if (!failures[i].empty())
      throw Error("ensemble member " + std::to_string(i) + " failed: " + failures[i]);

  for (int i = 0; i < tc.ensemble_size; ++i) out.members.push_back(std::move(*results[i]));

  for (int i = 0; i < tc.ensemble_size; ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "member-%02d.json", i);
    out.manifest.checkpoint_paths.emplace_back(name);
    out.manifest.seeds.push_back(seeds[i]);
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    for (int i = 0; i < tc.ensemble_size; ++i) {
      CheckpointMeta meta;
      meta.provider_identity = provider_identity(out.members[i].model, archive);
      meta.config_digest = out.manifest.config_digest;
      meta.seed = seeds[i];
      meta.best_epoch = out.members[i].best_epoch;
      meta.dev_accuracy = out.members[i].best_dev_accuracy;
      save_checkpoint((std::filesystem::path(out_dir) / out.manifest.checkpoint_paths[i]).string(),
                      out.members[i].model, meta);
      char log_name[64];
      std::snprintf(log_name, sizeof log_name, "member-%02d.log.tsv", i);
      std::ofstream log(std::filesystem::path(out_dir) / log_name);
      log << training_log_tsv(out.members[i].log);
    }
    out.manifest.save((std::filesystem::path(out_dir) / "manifest.json").string());
  }
  return out;
}

// Loads every member of a manifest; paths resolve relative to the manifest
// location. Verifies the shared-digest and distinct-seed invariants.
inline std::vector<GlosserModel> load_ensemble(const std::string& manifest_path,
                                               EnsembleManifest* manifest_out = nullptr) {
  EnsembleManifest manifest = EnsembleManifest::load(manifest_path);
  std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  std::vector<GlosserModel> models;
  for (std::size_t i = 0; i < manifest.checkpoint_paths.size(); ++i) {
    CheckpointMeta meta;
    models.push_back(load_checkpoint((base / manifest.checkpoint_paths[i]).string(), &meta));
    if (meta.config_digest != manifest.config_digest)
      throw Error("ensemble member " + manifest.checkpoint_paths[i] +
                  " has a different config digest");
  }
  for (std::size_t i = 0; i < manifest.seeds.size(); ++i)
    for (std::size_t k = i + 1; k < manifest.seeds.size(); ++k)
      if (manifest.seeds[i] == manifest.seeds[k])
        throw Error("ensemble manifest repeats seed " + std::to_string(manifest.seeds[i]));
  if (manifest_out != nullptr) *manifest_out = manifest;
  return models;
}

}  // namespace gloss

