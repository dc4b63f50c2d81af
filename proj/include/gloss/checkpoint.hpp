#pragma once

// Versioned checkpoint container: model config, vocabularies, every
// parameter tensor and the translation-provider identity. JSON keeps the
// format diffable; doubles round-trip exactly, so a loaded model reproduces
// predictions bit for bit.

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gloss/model.hpp"

namespace gloss {

struct CheckpointMeta {
  std::string provider_identity;  // "none", "recurrent" or the archive provider
  std::string config_digest;      // shared across ensemble members
  std::uint64_t seed = 0;
  int best_epoch = -1;
  double dev_accuracy = 0.0;
};

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, GlosserModel& model,
                            const CheckpointMeta& meta) {
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  j["provider_identity"] = meta.provider_identity;
  j["config_digest"] = meta.config_digest;
  j["seed"] = meta.seed;
  j["best_epoch"] = meta.best_epoch;
  j["dev_accuracy"] = meta.dev_accuracy;
  j["model_config"] = model.config().to_json();

  const GlossVocabulary& vocab = model.vocab();
  nlohmann::json vj;
  std::vector<std::string> labels(vocab.labels().begin() + GlossVocabulary::kReserved,
                                  vocab.labels().end());
  vj["labels"] = labels;
  vj["chars"] = std::vector<std::uint32_t>(vocab.chars().begin(), vocab.chars().end());
  j["vocab"] = vj;

  j["source_chars"] =
      std::vector<std::uint32_t>(model.source_chars().chars().begin(),
                                 model.source_chars().chars().end());
  if (model.translation_encoder() != nullptr) {
    const auto& tc = model.translation_encoder()->vocab.chars();
    j["translation_chars"] = std::vector<std::uint32_t>(tc.begin(), tc.end());
  }

  nlohmann::json params = nlohmann::json::object();
  for (ad::Param* p : model.params()) {
    nlohmann::json pj;
    pj["rows"] = p->rows;
    pj["cols"] = p->cols;
    pj["data"] = p->value;
    params[p->name] = std::move(pj);
  }
  j["params"] = std::move(params);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out << j.dump() << "\n";
  if (!out) throw IoError("checkpoint write failed: " + path);
}

inline GlosserModel load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint parse failure in " + path + ": " + e.what());
  }
  int version = j.at("version").get<int>();
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));

  ModelConfig cfg = ModelConfig::from_json(j.at("model_config"));

  GlossVocabulary vocab;
  for (const auto& label : j.at("vocab").at("labels").get<std::vector<std::string>>())
    vocab.add_label(label);
  for (std::uint32_t cp : j.at("vocab").at("chars").get<std::vector<std::uint32_t>>())
    vocab.add_char(static_cast<char32_t>(cp));

  SourceCharVocab source_chars;
  for (std::uint32_t cp : j.at("source_chars").get<std::vector<std::uint32_t>>())
    source_chars.add(static_cast<char32_t>(cp));

  TranslationCharVocab trans_chars;
  if (j.contains("translation_chars"))
    for (std::uint32_t cp : j.at("translation_chars").get<std::vector<std::uint32_t>>())
      trans_chars.add(static_cast<char32_t>(cp));

  GlosserModel model(cfg, std::move(vocab), std::move(source_chars), std::move(trans_chars));

  const nlohmann::json& params = j.at("params");
  for (ad::Param* p : model.params()) {
    if (!params.contains(p->name))
      throw IoError("checkpoint " + path + " lacks parameter " + p->name);
    const nlohmann::json& pj = params.at(p->name);
    if (pj.at("rows").get<int>() != p->rows || pj.at("cols").get<int>() != p->cols)
      throw IoError("checkpoint parameter " + p->name + " has unexpected shape");
    p->value = pj.at("data").get<ad::Vec>();
    if (static_cast<int>(p->value.size()) != p->size())
      throw IoError("checkpoint parameter " + p->name + " has unexpected size");
  }

  if (meta != nullptr) {
    meta->provider_identity = j.at("provider_identity").get<std::string>();
    meta->config_digest = j.at("config_digest").get<std::string>();
    meta->seed = j.at("seed").get<std::uint64_t>();
    meta->best_epoch = j.at("best_epoch").get<int>();
    meta->dev_accuracy = j.at("dev_accuracy").get<double>();
  }
  return model;
}

}  // namespace gloss
