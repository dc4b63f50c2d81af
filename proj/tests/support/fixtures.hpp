#pragma once

// Shared test fixtures: small IGT snippets and synthetic corpora.

#include <string>

#include "gloss/igt.hpp"

namespace gloss::test {

// The Gitksan record from the shared-task data.
inline const char* kGitksanRecord =
    "\\t Ii hahla'lsdi'y goohl IBM\n"
    "\\m ii hahla'lst-'y goo-hl IBM\n"
    "\\g CCNJ work-1SG.II LOC-CN IBM\n"
    "\\l And I worked for IBM.\n";

// A tiny Gitksan-format training set: regular morphology, every gloss
// reachable from the training vocabulary, translations echo the stems.
inline std::string tiny_overfit_corpus_text() {
  return
      "\\t Ii hahla'lsdi'y goohl IBM\n"
      "\\g CCNJ work-1SG.II LOC-CN IBM\n"
      "\\l And I worked for IBM.\n"
      "\n"
      "\\t nee'y limxs\n"
      "\\g 1SG.I sing\n"
      "\\l I sing.\n"
      "\n"
      "\\t limxs-t goohl wilp\n"
      "\\g sing-3.II LOC-CN house\n"
      "\\l He sings at the house.\n"
      "\n"
      "\\t gupgupxw nee'y\n"
      "\\g eat 1SG.I\n"
      "\\l I eat.\n"
      "\n"
      "\\t wilp neks-t\n"
      "\\g house big-3.II\n"
      "\\l The house is big.\n"
      "\n"
      "\\t Ii gupgupxw-t\n"
      "\\g CCNJ eat-3.II\n"
      "\\l And he eats.\n"
      "\n"
      "\\t neks wilp goohl IBM\n"
      "\\g big house LOC-CN IBM\n"
      "\\l A big house at IBM.\n"
      "\n"
      "\\t nee'y limxs goohl wilp\n"
      "\\g 1SG.I sing LOC-CN house\n"
      "\\l I sing at the house.\n";
}

inline Corpus tiny_overfit_corpus() {
  return parse_igt(tiny_overfit_corpus_text(), "git", Split::Train);
}

}  // namespace gloss::test
