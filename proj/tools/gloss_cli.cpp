// Command-line front end for the glossing pipeline: corpus handling,
// training, prediction, evaluation and attention heatmaps. Exit codes:
// 0 success, 1 data errors, 2 usage errors.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "gloss/gloss.hpp"

namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw gloss::IoError("cannot open file: " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw gloss::IoError("cannot open file for writing: " + path);
  out << content;
  if (!out) throw gloss::IoError("write failed: " + path);
}

gloss::Corpus load_corpus(const std::string& path, const std::string& language,
                          const std::string& split) {
  const gloss::LanguageProfile* profile = gloss::find_language(language);
  std::string trans_lang = profile != nullptr ? profile->translation_language : "eng";
  return gloss::parse_igt(read_file(path), language, gloss::split_from_string(split), trans_lang);
}

// Flat key=value lines or a JSON object (optionally nested under "model" /
// "training"). Command-line flags win over file values.
struct ConfigFile {
  nlohmann::json values = nlohmann::json::object();

  static ConfigFile load(const std::string& path) {
    ConfigFile cfg;
    std::string text = read_file(path);
    std::size_t first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
      nlohmann::json j = nlohmann::json::parse(text);
      for (const char* group : {"model", "training"})
        if (j.contains(group) && j[group].is_object()) {
          for (auto& [k, v] : j[group].items()) cfg.values[k] = v;
          j.erase(group);
        }
      for (auto& [k, v] : j.items()) cfg.values[k] = v;
      return cfg;
    }
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      std::size_t eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        std::size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        std::size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
      };
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty()) continue;
      // Numbers stay numbers so they merge into the typed configs.
      try {
        std::size_t used = 0;
        double d = std::stod(value, &used);
        if (used == value.size()) {
          if (d == static_cast<long long>(d) && value.find('.') == std::string::npos &&
              value.find('e') == std::string::npos)
            cfg.values[key] = static_cast<long long>(d);
          else
            cfg.values[key] = d;
          continue;
        }
      } catch (...) {
      }
      cfg.values[key] = value;
    }
    return cfg;
  }

  template <typename T>
  void apply(const char* key, T& target) const {
    if (values.contains(key)) target = values.at(key).get<T>();
  }
};

struct TrainOptions {
  std::string train_path, dev_path, language = "git";
  std::string config_path, archive_path, out_dir = "runs/latest";
  int ensemble = 0;  // 0: single model
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 1;
  // flag overrides; negative/empty means "not set"
  int epochs = -1, hidden = -1, layers = -1, batch = -1, max_morphemes = -1;
  double lr = -1, gamma = -1, dropout = -1;
  std::string mode, provider, head;
};

void resolve_configs(const TrainOptions& opt, gloss::ModelConfig& mc, gloss::TrainingConfig& tc) {
  if (!opt.config_path.empty()) {
    ConfigFile cfg = ConfigFile::load(opt.config_path);
    cfg.apply("hidden_size", mc.hidden_size);
    cfg.apply("layers", mc.layers);
    cfg.apply("dropout", mc.dropout);
    cfg.apply("char_embedding_dim", mc.char_embedding_dim);
    cfg.apply("max_morphemes", mc.max_morphemes);
    cfg.apply("decoder_max_len", mc.decoder_max_len);
    cfg.apply("attention_dim", mc.attention_dim);
    cfg.apply("translation_hidden", mc.translation_hidden);
    cfg.apply("decoder_hidden", mc.decoder_hidden);
    std::string s;
    if (cfg.values.contains("translation_mode"))
      mc.translation_mode = gloss::translation_mode_from_string(cfg.values["translation_mode"]);
    if (cfg.values.contains("translation_provider"))
      mc.translation_provider = gloss::provider_from_string(cfg.values["translation_provider"]);
    if (cfg.values.contains("gloss_head"))
      mc.gloss_head = gloss::gloss_head_from_string(cfg.values["gloss_head"]);
    cfg.apply("learning_rate", tc.learning_rate);
    cfg.apply("weight_decay", tc.weight_decay);
    cfg.apply("gamma", tc.gamma);
    cfg.apply("batch_size", tc.batch_size);
    cfg.apply("epochs", tc.epochs);
    cfg.apply("grad_clip", tc.grad_clip);
    cfg.apply("ensemble_size", tc.ensemble_size);
    cfg.apply("base_seed", tc.base_seed);
  }
  if (!opt.mode.empty()) mc.translation_mode = gloss::translation_mode_from_string(opt.mode);
  if (!opt.provider.empty())
    mc.translation_provider = gloss::provider_from_string(opt.provider);
  if (!opt.head.empty()) mc.gloss_head = gloss::gloss_head_from_string(opt.head);
  if (opt.hidden > 0) mc.hidden_size = opt.hidden;
  if (opt.layers > 0) mc.layers = opt.layers;
  if (opt.dropout >= 0) mc.dropout = opt.dropout;
  if (opt.max_morphemes > 0) mc.max_morphemes = opt.max_morphemes;
  if (opt.lr > 0) tc.learning_rate = opt.lr;
  if (opt.gamma > 0) tc.gamma = opt.gamma;
  if (opt.batch > 0) tc.batch_size = opt.batch;
  if (opt.epochs > 0) tc.epochs = opt.epochs;
  if (opt.ensemble > 0) tc.ensemble_size = opt.ensemble;
  if (opt.seed_set) tc.base_seed = opt.seed;
}

void print_digest(const gloss::ModelConfig& mc, const gloss::TrainingConfig& tc) {
  std::cout << "config-digest\t" << gloss::config_digest(mc, tc) << "\n";
}

int run_train(const TrainOptions& opt) {
  gloss::ModelConfig mc;
  gloss::TrainingConfig tc;
  bool epochs_from_user = opt.epochs > 0;
  resolve_configs(opt, mc, tc);
  if (!epochs_from_user && (opt.config_path.empty() ||
                            !ConfigFile::load(opt.config_path).values.contains("epochs")))
    tc.epochs = gloss::default_epochs(mc.translation_provider);
  print_digest(mc, tc);

  gloss::Corpus train = load_corpus(opt.train_path, opt.language, "train");
  gloss::Corpus dev;
  if (!opt.dev_path.empty()) dev = load_corpus(opt.dev_path, opt.language, "dev");

  std::unique_ptr<gloss::EmbeddingArchive> archive;
  if (!opt.archive_path.empty())
    archive = std::make_unique<gloss::EmbeddingArchive>(
        gloss::EmbeddingArchive::load(opt.archive_path));

  fs::create_directories(opt.out_dir);
  if (opt.ensemble > 0 || tc.ensemble_size > 1) {
    gloss::EnsembleTrainOutput out = gloss::train_ensemble(
        train, dev, mc, tc, archive.get(), opt.out_dir, opt.jobs);
    for (std::size_t i = 0; i < out.members.size(); ++i)
      std::cout << "member\t" << i << "\tseed\t" << out.manifest.seeds[i] << "\tbest_epoch\t"
                << out.members[i].best_epoch << "\tdev_accuracy\t"
                << out.members[i].best_dev_accuracy << "\n";
    std::cout << "manifest\t" << (fs::path(opt.out_dir) / "manifest.json").string() << "\n";
  } else {
    std::uint64_t seed = opt.seed_set ? opt.seed : tc.base_seed;
    gloss::TrainResult result = gloss::train_model(train, dev, mc, tc, seed, archive.get());
    gloss::CheckpointMeta meta;
    meta.provider_identity = gloss::provider_identity(result.model, archive.get());
    meta.config_digest = gloss::config_digest(mc, tc);
    meta.seed = seed;
    meta.best_epoch = result.best_epoch;
    meta.dev_accuracy = result.best_dev_accuracy;
    std::string ckpt = (fs::path(opt.out_dir) / "model.json").string();
    gloss::save_checkpoint(ckpt, result.model, meta);
    write_file((fs::path(opt.out_dir) / "train.log.tsv").string(),
               gloss::training_log_tsv(result.log));
    std::cout << "checkpoint\t" << ckpt << "\tbest_epoch\t" << result.best_epoch
              << "\tdev_accuracy\t" << result.best_dev_accuracy << "\n";
  }
  return 0;
}

std::vector<gloss::GlosserModel> load_models(const std::string& model_path,
                                             const std::string& manifest_path) {
  std::vector<gloss::GlosserModel> models;
  if (!model_path.empty()) {
    models.push_back(gloss::load_checkpoint(model_path));
  } else {
    models = gloss::load_ensemble(manifest_path);
  }
  return models;
}

void print_model_digest(gloss::GlosserModel& model) {
  std::cout << "config-digest\t" << gloss::sha256_hex(model.config().to_json().dump()) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"translation-aware interlinear glossing"};
  app.require_subcommand(1);

  // parse / validate ---------------------------------------------------------
  std::string in_path, language = "git", split = "train", out_path;
  CLI::App* cmd_parse = app.add_subcommand("parse", "parse an IGT file and print a summary");
  cmd_parse->add_option("--input", in_path)->required();
  cmd_parse->add_option("--language", language);
  cmd_parse->add_option("--split", split);
  cmd_parse->add_option("--out", out_path);

  CLI::App* cmd_validate =
      app.add_subcommand("validate", "report invariant violations per sentence");
  cmd_validate->add_option("--input", in_path)->required();
  cmd_validate->add_option("--language", language);
  cmd_validate->add_option("--split", split);

  // sample -------------------------------------------------------------------
  std::string sample_out;
  int sample_n = 100;
  std::uint64_t sample_seed = 0;
  CLI::App* cmd_sample = app.add_subcommand("sample", "low-resource subsample of a train split");
  cmd_sample->add_option("--input", in_path)->required();
  cmd_sample->add_option("--language", language);
  cmd_sample->add_option("--n", sample_n)->required();
  cmd_sample->add_option("--seed", sample_seed)->required();
  cmd_sample->add_option("--output", sample_out)->required();

  // archive ------------------------------------------------------------------
  std::string archive_path;
  CLI::App* cmd_archive_info = app.add_subcommand("archive-info", "print archive header");
  cmd_archive_info->add_option("path", archive_path)->required();

  std::string ab_out, ab_provider = "hashed-tokens";
  int ab_dim = 64;
  std::uint64_t ab_seed = 1;
  CLI::App* cmd_archive_build = app.add_subcommand(
      "archive-build", "build a hashed-token embedding archive for a corpus");
  cmd_archive_build->add_option("--input", in_path)->required();
  cmd_archive_build->add_option("--language", language);
  cmd_archive_build->add_option("--split", split);
  cmd_archive_build->add_option("--dim", ab_dim);
  cmd_archive_build->add_option("--seed", ab_seed);
  cmd_archive_build->add_option("--provider", ab_provider);
  cmd_archive_build->add_option("--output", ab_out)->required();

  // train ----------------------------------------------------------------
  TrainOptions train_opt;
  CLI::App* cmd_train = app.add_subcommand("train", "train a model or ensemble");
  cmd_train->add_option("--train", train_opt.train_path)->required();
  cmd_train->add_option("--dev", train_opt.dev_path);
  cmd_train->add_option("--language", train_opt.language);
  cmd_train->add_option("--config", train_opt.config_path);
  cmd_train->add_option("--archive", train_opt.archive_path);
  cmd_train->add_option("--out", train_opt.out_dir);
  cmd_train->add_option("--ensemble", train_opt.ensemble);
  cmd_train->add_option("--jobs", train_opt.jobs);
  auto* seed_opt = cmd_train->add_option("--seed", train_opt.seed);
  cmd_train->add_option("--epochs", train_opt.epochs);
  cmd_train->add_option("--hidden", train_opt.hidden);
  cmd_train->add_option("--layers", train_opt.layers);
  cmd_train->add_option("--batch", train_opt.batch);
  cmd_train->add_option("--max-morphemes", train_opt.max_morphemes);
  cmd_train->add_option("--lr", train_opt.lr);
  cmd_train->add_option("--gamma", train_opt.gamma);
  cmd_train->add_option("--dropout", train_opt.dropout);
  cmd_train->add_option("--mode", train_opt.mode);
  cmd_train->add_option("--provider", train_opt.provider);
  cmd_train->add_option("--head", train_opt.head);

  // predict ----------------------------------------------------------------
  std::string model_path, manifest_path, predict_out;
  CLI::App* cmd_predict = app.add_subcommand("predict", "gloss an IGT file");
  cmd_predict->add_option("--model", model_path);
  cmd_predict->add_option("--manifest", manifest_path);
  cmd_predict->add_option("--input", in_path)->required();
  cmd_predict->add_option("--language", language);
  cmd_predict->add_option("--split", split);
  cmd_predict->add_option("--archive", archive_path);
  cmd_predict->add_option("--output", predict_out)->required();

  // evaluate ----------------------------------------------------------------
  std::string gold_path, mode_str = "vote", report_path, model_tag = "model";
  CLI::App* cmd_evaluate = app.add_subcommand("evaluate", "score predictions against gold");
  cmd_evaluate->add_option("--model", model_path);
  cmd_evaluate->add_option("--manifest", manifest_path);
  cmd_evaluate->add_option("--gold", gold_path)->required();
  cmd_evaluate->add_option("--language", language);
  cmd_evaluate->add_option("--split", split);
  cmd_evaluate->add_option("--mode", mode_str);
  cmd_evaluate->add_option("--archive", archive_path);
  cmd_evaluate->add_option("--report", report_path);
  cmd_evaluate->add_option("--tag", model_tag);

  // heatmap ----------------------------------------------------------------
  std::string sentence_id, format_str = "tsv";
  bool per_morpheme = false;
  CLI::App* cmd_heatmap = app.add_subcommand("heatmap", "attention heatmap for one sentence");
  cmd_heatmap->add_option("--model", model_path)->required();
  cmd_heatmap->add_option("--input", in_path)->required();
  cmd_heatmap->add_option("--language", language);
  cmd_heatmap->add_option("--split", split);
  cmd_heatmap->add_option("--sentence-id", sentence_id)->required();
  cmd_heatmap->add_option("--format", format_str);
  cmd_heatmap->add_option("--archive", archive_path);
  cmd_heatmap->add_option("--output", out_path)->required();
  cmd_heatmap->add_flag("--per-morpheme", per_morpheme);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }
  train_opt.seed_set = seed_opt->count() > 0;

  try {
    if (cmd_parse->parsed()) {
      gloss::Corpus c = load_corpus(in_path, language, split);
      std::string summary = gloss::corpus_summary_tsv(c);
      int violations = 0;
      for (const gloss::IgtSentence& s : c.sentences)
        violations +=
            static_cast<int>(validate_sentence(s, c.split != gloss::Split::Test).size());
      std::cout << summary << "violations\t" << violations << "\n";
      if (!out_path.empty()) write_file(out_path, summary);
      return 0;
    }
    if (cmd_validate->parsed()) {
      gloss::Corpus c = load_corpus(in_path, language, split);
      long count = 0;
      for (const gloss::IgtSentence& s : c.sentences)
        for (const gloss::Violation& v :
             validate_sentence(s, c.split != gloss::Split::Test)) {
          std::cout << s.id << "\t" << v.format() << "\n";
          ++count;
        }
      std::cout << "violations\t" << count << "\n";
      return 0;
    }
    if (cmd_sample->parsed()) {
      gloss::Corpus c = load_corpus(in_path, language, "train");
      gloss::Corpus s = gloss::sample_low_resource(c, sample_n, sample_seed);
      write_file(sample_out, gloss::serialize_igt(s));
      std::cout << "sampled\t" << s.sentences.size() << "\t" << sample_out << "\n";
      return 0;
    }
    if (cmd_archive_info->parsed()) {
      gloss::EmbeddingArchive::Info info = gloss::EmbeddingArchive::info(archive_path);
      std::cout << "provider\t" << info.provider << "\ndim\t" << info.dim << "\nentries\t"
                << info.count << "\n";
      return 0;
    }
    if (cmd_archive_build->parsed()) {
      gloss::Corpus c = load_corpus(in_path, language, split);
      std::vector<std::string> texts;
      for (const gloss::IgtSentence& s : c.sentences)
        if (!s.translation.empty()) texts.push_back(s.translation);
      gloss::EmbeddingArchive archive =
          gloss::build_hashed_archive(texts, ab_dim, ab_seed, ab_provider);
      archive.save(ab_out);
      std::cout << "archive\t" << ab_out << "\tentries\t" << archive.size() << "\n";
      return 0;
    }
    if (cmd_train->parsed()) return run_train(train_opt);

    if (cmd_predict->parsed() || cmd_evaluate->parsed() || cmd_heatmap->parsed()) {
      if (model_path.empty() && manifest_path.empty())
        throw gloss::ConfigError("either --model or --manifest is required");
      std::vector<gloss::GlosserModel> models = load_models(model_path, manifest_path);
      print_model_digest(models.front());
      std::unique_ptr<gloss::EmbeddingArchive> archive;
      if (!archive_path.empty())
        archive = std::make_unique<gloss::EmbeddingArchive>(
            gloss::EmbeddingArchive::load(archive_path));

      if (cmd_predict->parsed()) {
        gloss::Corpus c = load_corpus(in_path, language, split);
        std::vector<std::vector<std::string>> tokens(c.sentences.size());
        if (models.size() == 1) {
          for (std::size_t s = 0; s < c.sentences.size(); ++s)
            tokens[s] = models[0].predict(c.sentences[s], archive.get()).gloss_tokens();
        } else {
          for (std::size_t s = 0; s < c.sentences.size(); ++s) {
            std::vector<gloss::GlossPrediction> preds;
            for (gloss::GlosserModel& m : models)
              preds.push_back(m.predict(c.sentences[s], archive.get()));
            tokens[s] = gloss::majority_vote(preds);
          }
        }
        write_file(predict_out, gloss::serialize_igt(gloss::with_predictions(c, tokens)));
        std::cout << "predicted\t" << c.sentences.size() << "\t" << predict_out << "\n";
        return 0;
      }

      if (cmd_evaluate->parsed()) {
        gloss::Corpus gold = load_corpus(gold_path, language, split);
        gloss::EvalMode mode = gloss::eval_mode_from_string(mode_str);
        gloss::EvalReport report = gloss::evaluate(models, gold, mode, archive.get());
        std::string tsv = gloss::metrics_tsv(language, model_tag, mode_str, report);
        std::cout << tsv;
        if (!report_path.empty()) write_file(report_path, tsv);
        return 0;
      }

      // heatmap
      gloss::Corpus c = load_corpus(in_path, language, split);
      const gloss::IgtSentence* target = nullptr;
      for (const gloss::IgtSentence& s : c.sentences)
        if (s.id == sentence_id) target = &s;
      if (target == nullptr)
        throw gloss::Error("sentence id not found in input: " + sentence_id);
      if (models.front().config().translation_mode != gloss::TranslationMode::Attention)
        throw gloss::ConfigError("heatmaps need an attention-mode model");
      gloss::GlossPrediction pred = models.front().predict(*target, archive.get());
      std::vector<std::string> columns;
      if (models.front().config().translation_provider == gloss::TranslationProvider::Archive)
        columns = archive->lookup(target->translation).tokens;
      else
        columns = models.front().translation_encoder()->encode(target->translation).tokens;
      gloss::HeatmapMatrix m = gloss::attention_heatmap(pred, columns, per_morpheme);
      gloss::export_heatmap(m, gloss::heatmap_format_from_string(format_str), out_path);
      std::cout << "heatmap\t" << out_path << "\t" << m.rows() << "x" << m.cols() << "\n";
      return 0;
    }
  } catch (const gloss::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const gloss::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
