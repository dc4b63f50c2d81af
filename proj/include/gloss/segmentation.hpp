#pragma once

// Latent morpheme segmentation: a word of L characters is split into m
// non-empty contiguous spans. A segmentation's log score is the sum over
// characters of s[c][slot(c)], with s a learned per-character, per-slot
// score table. Exact marginals and the Viterbi split come from dynamic
// programming over the (character, slot) trellis; slot indices are monotone
// non-decreasing along the word, moving from slot 0 to slot m-1.

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gloss/autodiff.hpp"
#include "gloss/error.hpp"

namespace gloss {

struct InfeasibleSegmentation : Error {
  using Error::Error;
};

// Posterior marginals P[c][j] = P(character c belongs to slot j).
struct SegmentationPosterior {
  int word_index = -1;
  int length = 0;  // L
  int slots = 0;   // m
  std::vector<double> p;  // row-major L x m

  double at(int c, int j) const { return p[std::size_t(c) * slots + j]; }
  double& at(int c, int j) { return p[std::size_t(c) * slots + j]; }
};

// Half-open character intervals, one per slot; they tile [0, L).
struct MorphemeSpans {
  std::vector<std::pair<int, int>> spans;

  int slot_of(int c) const {
    for (std::size_t j = 0; j < spans.size(); ++j)
      if (c >= spans[j].first && c < spans[j].second) return static_cast<int>(j);
    return -1;
  }
};

namespace seg_detail {

inline void require_feasible(int length, int slots) {
  if (slots < 1 || slots > length)
    throw InfeasibleSegmentation("cannot split " + std::to_string(length) +
                                 " characters into " + std::to_string(slots) + " slots");
}

// Slot j is reachable at character c iff enough characters remain on both
// sides to keep every span non-empty.
inline bool feasible(int c, int j, int length, int slots) {
  return j >= 0 && j < slots && j <= c && (slots - 1 - j) <= (length - 1 - c);
}

inline double logaddexp(double a, double b) {
  double hi = std::max(a, b);
  if (hi == -std::numeric_limits<double>::infinity()) return hi;
  return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

}  // namespace seg_detail

// Exact DP marginals. `score(c, j)` supplies s[c][j].
template <typename ScoreFn>
SegmentationPosterior segment_marginals(ScoreFn&& score, int length, int slots) {
  using seg_detail::feasible;
  seg_detail::require_feasible(length, slots);
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  std::vector<double> fwd(std::size_t(length) * slots, kNegInf);
  std::vector<double> bwd(std::size_t(length) * slots, kNegInf);
  auto f = [&](int c, int j) -> double& { return fwd[std::size_t(c) * slots + j]; };
  auto b = [&](int c, int j) -> double& { return bwd[std::size_t(c) * slots + j]; };

  f(0, 0) = score(0, 0);
  for (int c = 1; c < length; ++c)
    for (int j = 0; j < slots; ++j) {
      if (!feasible(c, j, length, slots)) continue;
      double acc = kNegInf;
      if (feasible(c - 1, j, length, slots)) acc = f(c - 1, j);
      if (feasible(c - 1, j - 1, length, slots))
        acc = seg_detail::logaddexp(acc, f(c - 1, j - 1));
      f(c, j) = score(c, j) + acc;
    }

  b(length - 1, slots - 1) = 0.0;
  for (int c = length - 2; c >= 0; --c)
    for (int j = 0; j < slots; ++j) {
      if (!feasible(c, j, length, slots)) continue;
      double acc = kNegInf;
      if (feasible(c + 1, j, length, slots)) acc = score(c + 1, j) + b(c + 1, j);
      if (feasible(c + 1, j + 1, length, slots))
        acc = seg_detail::logaddexp(acc, score(c + 1, j + 1) + b(c + 1, j + 1));
      b(c, j) = acc;
    }

  double log_z = f(length - 1, slots - 1);
  SegmentationPosterior post;
  post.length = length;
  post.slots = slots;
  post.p.assign(std::size_t(length) * slots, 0.0);
  for (int c = 0; c < length; ++c)
    for (int j = 0; j < slots; ++j)
      if (feasible(c, j, length, slots))
        post.at(c, j) = std::exp(f(c, j) + b(c, j) - log_z);
  return post;
}

// Highest-scoring segmentation; score ties resolved toward the
// lexicographically smallest boundary vector (earlier boundaries win).
template <typename ScoreFn>
MorphemeSpans viterbi_segments(ScoreFn&& score, int length, int slots) {
  using seg_detail::feasible;
  seg_detail::require_feasible(length, slots);
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  struct Cell {
    double score = -std::numeric_limits<double>::infinity();
    std::vector<int> boundaries;  // slot-start positions for slots 1..j
  };
  std::vector<Cell> cells(std::size_t(length) * slots);
  auto cell = [&](int c, int j) -> Cell& { return cells[std::size_t(c) * slots + j]; };

  cell(0, 0) = {score(0, 0), {}};
  for (int c = 1; c < length; ++c)
    for (int j = 0; j < slots; ++j) {
      if (!feasible(c, j, length, slots)) continue;
      Cell best;
      if (feasible(c - 1, j, length, slots) && cell(c - 1, j).score > kNegInf)
        best = cell(c - 1, j);
      if (j >= 1 && feasible(c - 1, j - 1, length, slots) &&
          cell(c - 1, j - 1).score > kNegInf) {
        Cell cand = cell(c - 1, j - 1);
        cand.boundaries.push_back(c);
        if (cand.score > best.score ||
            (cand.score == best.score && cand.boundaries < best.boundaries))
          best = std::move(cand);
      }
      best.score += score(c, j);
      cell(c, j) = std::move(best);
    }

  const Cell& final_cell = cell(length - 1, slots - 1);
  MorphemeSpans spans;
  int start = 0;
  for (int boundary : final_cell.boundaries) {
    spans.spans.emplace_back(start, boundary);
    start = boundary;
  }
  spans.spans.emplace_back(start, length);
  return spans;
}

// Indicator posterior for a hard segmentation.
inline SegmentationPosterior indicator_posterior(const MorphemeSpans& spans, int length) {
  SegmentationPosterior post;
  post.length = length;
  post.slots = static_cast<int>(spans.spans.size());
  post.p.assign(std::size_t(length) * post.slots, 0.0);
  for (int j = 0; j < post.slots; ++j)
    for (int c = spans.spans[j].first; c < spans.spans[j].second; ++c) post.at(c, j) = 1.0;
  return post;
}

// ---------------------------------------------------------------------------
// Differentiable marginals: the same trellis built from tape ops, so
// gradients flow from the expected morpheme representations back into the
// per-character slot scores.
//
// `char_scores[c]` is a vector node of at least `slots` entries.
inline std::vector<std::vector<ad::Var>> segment_marginal_vars(
    ad::Tape& t, const std::vector<ad::Var>& char_scores, int slots) {
  using seg_detail::feasible;
  const int length = static_cast<int>(char_scores.size());
  seg_detail::require_feasible(length, slots);

  std::vector<std::vector<ad::Var>> s(length, std::vector<ad::Var>(slots));
  for (int c = 0; c < length; ++c)
    for (int j = 0; j < slots; ++j)
      if (feasible(c, j, length, slots)) s[c][j] = t.pick(char_scores[c], j);

  std::vector<std::vector<ad::Var>> fwd(length, std::vector<ad::Var>(slots));
  fwd[0][0] = s[0][0];
  for (int c = 1; c < length; ++c)
    for (int j = 0; j < slots; ++j) {
      if (!feasible(c, j, length, slots)) continue;
      bool has_same = feasible(c - 1, j, length, slots);
      bool has_prev = j >= 1 && feasible(c - 1, j - 1, length, slots);
      ad::Var acc;
      if (has_same && has_prev)
        acc = t.logaddexp(fwd[c - 1][j], fwd[c - 1][j - 1]);
      else if (has_same)
        acc = fwd[c - 1][j];
      else
        acc = fwd[c - 1][j - 1];
      fwd[c][j] = t.add(s[c][j], acc);
    }

  std::vector<std::vector<ad::Var>> bwd(length, std::vector<ad::Var>(slots));
  bwd[length - 1][slots - 1] = t.constant(0.0);
  for (int c = length - 2; c >= 0; --c)
    for (int j = 0; j < slots; ++j) {
      if (!feasible(c, j, length, slots)) continue;
      bool has_same = feasible(c + 1, j, length, slots);
      bool has_next = feasible(c + 1, j + 1, length, slots);
      ad::Var stay, move;
      if (has_same) stay = t.add(s[c + 1][j], bwd[c + 1][j]);
      if (has_next) move = t.add(s[c + 1][j + 1], bwd[c + 1][j + 1]);
      if (has_same && has_next)
        bwd[c][j] = t.logaddexp(stay, move);
      else
        bwd[c][j] = has_same ? stay : move;
    }

  ad::Var log_z = fwd[length - 1][slots - 1];
  std::vector<std::vector<ad::Var>> post(length, std::vector<ad::Var>(slots));
  for (int c = 0; c < length; ++c)
    for (int j = 0; j < slots; ++j) {
      if (feasible(c, j, length, slots))
        post[c][j] = t.exp_(t.sub(t.add(fwd[c][j], bwd[c][j]), log_z));
      else
        post[c][j] = t.constant(0.0);
    }
  return post;
}

}  // namespace gloss
