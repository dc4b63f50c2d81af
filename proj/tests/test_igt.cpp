#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "gloss/igt.hpp"
#include "support/fixtures.hpp"

using namespace gloss;

TEST_CASE("parse_igt maps marker lines to fields") {
  Corpus c = parse_igt(test::kGitksanRecord, "git");
  REQUIRE(c.sentences.size() == 1);
  const IgtSentence& s = c.sentences[0];
  CHECK(s.id == "git-1");
  CHECK(s.orthography_tokens ==
        std::vector<std::string>{"Ii", "hahla'lsdi'y", "goohl", "IBM"});
  REQUIRE(s.segmentation_tokens.has_value());
  CHECK(s.segmentation_tokens->size() == 4);
  CHECK(s.gloss_tokens ==
        std::vector<std::string>{"CCNJ", "work-1SG.II", "LOC-CN", "IBM"});
  CHECK(s.translation == "And I worked for IBM.");
}

TEST_CASE("parse_igt empty stream yields empty corpus") {
  Corpus c = parse_igt("", "git");
  CHECK(c.sentences.empty());
  CHECK(parse_igt("\n\n\n", "git").sentences.empty());
}

TEST_CASE("parse_igt assigns positional ids across blank-line blocks") {
  std::string text = std::string(test::kGitksanRecord) + "\n" + test::kGitksanRecord;
  Corpus c = parse_igt(text, "git");
  REQUIRE(c.sentences.size() == 2);
  CHECK(c.sentences[0].id == "git-1");
  CHECK(c.sentences[1].id == "git-2");

  // Extra blank lines between records make no difference.
  std::string spaced = std::string(test::kGitksanRecord) + "\n\n\n" + test::kGitksanRecord;
  CHECK(parse_igt(spaced, "git").sentences.size() == 2);
}

TEST_CASE("parse_igt rejects malformed records") {
  CHECK_THROWS_AS(parse_igt("\\x foo\n", "git"), MalformedRecord);
  CHECK_THROWS_AS(parse_igt("\\t a\n\\t b\n", "git"), MalformedRecord);
  CHECK_THROWS_AS(parse_igt("\\g GL\n", "git"), MalformedRecord);  // no transcription
  CHECK_THROWS_AS(parse_igt("plain text\n", "git"), MalformedRecord);
  CHECK_THROWS_AS(parse_igt("\\t a\n\\l x\xFF\xFE\n", "git"), EncodingError);
}

TEST_CASE("parse_igt tolerates missing translation and gloss lines") {
  Corpus c = parse_igt("\\t abc def\n", "git", Split::Test);
  REQUIRE(c.sentences.size() == 1);
  CHECK(c.sentences[0].gloss_tokens.empty());
  CHECK(c.sentences[0].translation.empty());
  auto violations = validate_sentence(c.sentences[0], /*require_gloss=*/false);
  bool missing_translation = false;
  for (const Violation& v : violations)
    if (v.rule == ViolationRule::MissingTranslation) missing_translation = true;
  CHECK(missing_translation);
}

TEST_CASE("validate_sentence accepts the shared-task example") {
  Corpus c = parse_igt(test::kGitksanRecord, "git");
  CHECK(validate_sentence(c.sentences[0]).empty());
}

TEST_CASE("validate_sentence flags token count mismatches") {
  IgtSentence s;
  s.orthography_tokens = {"a", "b", "c", "d"};
  s.gloss_tokens = {"A", "B", "C"};
  s.translation = "x";
  auto violations = validate_sentence(s);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].rule == ViolationRule::TokenCountMismatch);
}

TEST_CASE("validate_sentence flags morpheme count mismatches with the token index") {
  IgtSentence s;
  s.orthography_tokens = {"ii", "hahla'lsdi'y", "goohl"};
  s.segmentation_tokens = std::vector<std::string>{"ii", "hahla'lst-'y", "goo-hl"};
  s.gloss_tokens = {"CCNJ", "work-1SG.II", "LOC"};
  s.translation = "x";
  auto violations = validate_sentence(s);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].rule == ViolationRule::MorphemeCountMismatch);
  CHECK(violations[0].token_index == 2);
}

TEST_CASE("gloss tokens split on '-' and '=' and re-join exactly") {
  GlossParts p = split_gloss_token("work-1SG.II");
  CHECK(p.parts == std::vector<std::string>{"work", "1SG.II"});
  CHECK(p.join() == "work-1SG.II");

  GlossParts q = split_gloss_token("a=b-c");
  CHECK(q.parts == std::vector<std::string>{"a", "b", "c"});
  CHECK(q.separators == std::vector<char>{'=', '-'});
  CHECK(q.join() == "a=b-c");
}

TEST_CASE("build_vocab collects labels with dots intact") {
  Corpus c = parse_igt(test::kGitksanRecord, "git");
  GlossVocabulary v = build_vocab(c);
  CHECK(v.label_count() - GlossVocabulary::kReserved == 6);
  for (const char* label : {"CCNJ", "work", "1SG.II", "LOC", "CN", "IBM"})
    CHECK(v.has_label(label));
  CHECK_FALSE(v.has_label("1SG"));
  CHECK_FALSE(v.has_label("II"));

  // Reserved symbols sit at fixed indices.
  CHECK(v.label(GlossVocabulary::kPad) == "<PAD>");
  CHECK(v.label(GlossVocabulary::kUnk) == "<UNK>");
  CHECK(v.label(GlossVocabulary::kBos) == "<BOS>");
  CHECK(v.label(GlossVocabulary::kEos) == "<EOS>");

  // Deterministic order: labels sorted lexicographically after reserved.
  std::vector<std::string> tail(v.labels().begin() + GlossVocabulary::kReserved,
                                v.labels().end());
  CHECK(std::is_sorted(tail.begin(), tail.end()));
}

TEST_CASE("build_vocab indexes repeated labels once and rejects empty corpora") {
  std::string text =
      "\\t aa bb\n\\g LOC dog\n\\l x\n\n"
      "\\t cc\n\\g LOC\n\\l y\n";
  GlossVocabulary v = build_vocab(parse_igt(text, "git"));
  CHECK(v.label_count() - GlossVocabulary::kReserved == 2);
  int loc = v.label_index("LOC");
  CHECK(v.label(loc) == "LOC");
  CHECK_THROWS_AS(build_vocab(Corpus{}), EmptyCorpus);
}

TEST_CASE("morpheme_type follows the uppercase convention") {
  CHECK(morpheme_type("1SG.II") == MorphemeType::Grammatical);
  CHECK(morpheme_type("work") == MorphemeType::Lexical);
  CHECK(morpheme_type("IC.it.is") == MorphemeType::Lexical);
  CHECK(morpheme_type("LOC") == MorphemeType::Grammatical);
  CHECK(morpheme_type("3MINIS") == MorphemeType::Grammatical);
  CHECK_THROWS_AS(morpheme_type(""), EmptyLabel);
}

TEST_CASE("morpheme_type partitions every vocabulary label") {
  Corpus c = test::tiny_overfit_corpus();
  GlossVocabulary v = build_vocab(c);
  for (int i = GlossVocabulary::kReserved; i < v.label_count(); ++i) {
    MorphemeType t = morpheme_type(v.label(i));
    CHECK((t == MorphemeType::Lexical || t == MorphemeType::Grammatical));
  }
}

static Corpus numbered_corpus(int n) {
  std::string text;
  for (int i = 0; i < n; ++i)
    text += "\\t tok" + std::to_string(i) + "\n\\g T" + std::to_string(i) + "\n\\l t.\n\n";
  return parse_igt(text, "lez");
}

TEST_CASE("sample_low_resource draws deterministic ordered subsets") {
  Corpus c = numbered_corpus(120);
  Corpus s = sample_low_resource(c, 100, 7);
  REQUIRE(s.sentences.size() == 100);

  // Original relative order is preserved and the sample is a subset.
  std::set<std::string> all_ids;
  for (const IgtSentence& x : c.sentences) all_ids.insert(x.id);
  int prev_index = -1;
  for (const IgtSentence& x : s.sentences) {
    CHECK(all_ids.count(x.id) == 1);
    int index = std::stoi(x.id.substr(4));
    CHECK(index > prev_index);
    prev_index = index;
  }

  // Determinism under (n, seed).
  Corpus s2 = sample_low_resource(c, 100, 7);
  REQUIRE(s2.sentences.size() == s.sentences.size());
  for (std::size_t i = 0; i < s.sentences.size(); ++i)
    CHECK(s.sentences[i].id == s2.sentences[i].id);

  // A different seed gives a different sample (overwhelmingly likely).
  Corpus s3 = sample_low_resource(c, 100, 8);
  bool same = true;
  for (std::size_t i = 0; i < s.sentences.size(); ++i)
    if (s.sentences[i].id != s3.sentences[i].id) same = false;
  CHECK_FALSE(same);

  // The sample is invariant under corpus re-parsing.
  Corpus reparsed = parse_igt(serialize_igt(c), "lez");
  Corpus s4 = sample_low_resource(reparsed, 100, 7);
  for (std::size_t i = 0; i < s.sentences.size(); ++i)
    CHECK(s.sentences[i].id == s4.sentences[i].id);
}

TEST_CASE("sample_low_resource edge cases") {
  Corpus c = numbered_corpus(30);
  Corpus s = sample_low_resource(c, 30, 3);
  REQUIRE(s.sentences.size() == 30);
  for (std::size_t i = 0; i < 30; ++i) CHECK(s.sentences[i].id == c.sentences[i].id);
  CHECK_THROWS_AS(sample_low_resource(c, 31, 3), SampleTooLarge);
  Corpus dev = c;
  dev.split = Split::Dev;
  CHECK_THROWS_AS(sample_low_resource(dev, 5, 3), Error);
}

TEST_CASE("serialize then parse is the identity on well-formed corpora") {
  Corpus c = parse_igt(std::string(test::kGitksanRecord) + "\n" + test::tiny_overfit_corpus_text(),
                       "git");
  std::string text = serialize_igt(c);
  Corpus c2 = parse_igt(text, "git");
  REQUIRE(c2.sentences.size() == c.sentences.size());
  for (std::size_t i = 0; i < c.sentences.size(); ++i) {
    CHECK(c2.sentences[i].orthography_tokens == c.sentences[i].orthography_tokens);
    CHECK(c2.sentences[i].gloss_tokens == c.sentences[i].gloss_tokens);
    CHECK(c2.sentences[i].translation == c.sentences[i].translation);
    CHECK((c2.sentences[i].segmentation_tokens == c.sentences[i].segmentation_tokens));
  }
  // Canonical text is a fixed point.
  CHECK(serialize_igt(c2) == text);
}

TEST_CASE("language registry matches the dataset table") {
  REQUIRE(language_registry().size() == 6);
  struct Row {
    const char* code;
    int train, dev, test;
    const char* trans;
  };
  for (const Row& row : {Row{"arp", 39501, 4938, 4892, "eng"}, Row{"git", 31, 42, 37, "eng"},
                         Row{"lez", 701, 88, 87, "eng"}, Row{"ntu", 791, 99, 99, "eng"},
                         Row{"ddo", 3558, 445, 445, "eng"}, Row{"usp", 9774, 232, 633, "spa"}}) {
    const LanguageProfile* p = find_language(row.code);
    REQUIRE(p != nullptr);
    CHECK(p->train_sents == row.train);
    CHECK(p->dev_sents == row.dev);
    CHECK(p->test_sents == row.test);
    CHECK(p->translation_language == row.trans);
  }
  CHECK(find_language("xyz") == nullptr);
}

TEST_CASE("corpus summary reports language, split, sentences, tokens, labels") {
  Corpus c = parse_igt(test::kGitksanRecord, "git");
  std::string tsv = corpus_summary_tsv(c);
  CHECK(tsv ==
        "language\tsplit\tsentences\ttokens\tlabels\n"
        "git\ttrain\t1\t4\t6\n");
}
