#pragma once

// Difference-from-mean attention heatmaps: rows are output gloss tokens,
// columns the K translation tokens (boundaries included), and each cell is
// the marginal attention weight minus the uniform weight 1/(n+2) = 1/K.
// Exported as TSV (fixed six fractional digits) or SVG on a diverging
// red/blue scale centered at zero.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gloss/error.hpp"
#include "gloss/model.hpp"

namespace gloss {

struct EmptyRecordList : Error {
  using Error::Error;
};
struct NotADistribution : Error {
  using Error::Error;
};

// Marginal attention over translation tokens for one output gloss token:
// per record the columns of alpha are summed over morphemes, then the
// per-step distributions are averaged.
inline ad::Vec marginal_translation_attention(const std::vector<AttentionRecord>& records) {
  if (records.empty()) throw EmptyRecordList("no attention records");
  const int k_count = records[0].k_count;
  ad::Vec beta(k_count, 0.0);
  for (const AttentionRecord& rec : records) {
    if (rec.k_count != k_count)
      throw Error("attention records disagree on translation length");
    for (int j = 0; j < rec.j_count; ++j)
      for (int k = 0; k < k_count; ++k) beta[k] += rec.at(j, k);
  }
  for (double& v : beta) v /= records.size();
  return beta;
}

// row[k] = beta[k] - 1/K. K = n + 2, so the subtrahend is the uniform
// weight over the translation plus its boundary tokens.
inline ad::Vec diff_from_mean(const ad::Vec& beta) {
  double sum = 0.0;
  for (double v : beta) sum += v;
  if (std::abs(sum - 1.0) > 1e-6)
    throw NotADistribution("marginal attention sums to " + std::to_string(sum));
  ad::Vec row(beta.size());
  for (std::size_t k = 0; k < beta.size(); ++k) row[k] = beta[k] - 1.0 / beta.size();
  return row;
}

struct HeatmapMatrix {
  std::vector<std::string> row_labels;     // output gloss tokens
  std::vector<std::string> column_labels;  // translation tokens, K
  std::vector<ad::Vec> values;             // rows x K, difference from mean

  int rows() const { return static_cast<int>(values.size()); }
  int cols() const { return static_cast<int>(column_labels.size()); }
};

// Builds the heatmap for one predicted sentence. Rows are per output gloss
// token; a word's row averages the marginals of its morphemes. With
// per_morpheme set, each morpheme gets its own row instead.
inline HeatmapMatrix attention_heatmap(const GlossPrediction& pred,
                                       const std::vector<std::string>& translation_tokens,
                                       bool per_morpheme = false) {
  HeatmapMatrix m;
  m.column_labels = translation_tokens;
  for (const WordPrediction& word : pred.words) {
    if (per_morpheme) {
      for (const MorphemePrediction& mp : word.morphemes) {
        if (mp.attention.empty()) continue;
        m.row_labels.push_back(mp.gloss);
        m.values.push_back(diff_from_mean(marginal_translation_attention(mp.attention)));
      }
      continue;
    }
    std::vector<ad::Vec> betas;
    for (const MorphemePrediction& mp : word.morphemes)
      if (!mp.attention.empty())
        betas.push_back(marginal_translation_attention(mp.attention));
    if (betas.empty()) continue;
    ad::Vec mean(betas[0].size(), 0.0);
    for (const ad::Vec& b : betas)
      for (std::size_t k = 0; k < b.size(); ++k) mean[k] += b[k];
    for (double& v : mean) v /= betas.size();
    m.row_labels.push_back(word.gloss_token);
    m.values.push_back(diff_from_mean(mean));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Export.

namespace heatmap_detail {

inline std::string fixed6(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Diverging blue-white-red scale anchored at +-limit.
inline std::string cell_color(double v, double limit) {
  double x = limit > 0 ? std::clamp(v / limit, -1.0, 1.0) : 0.0;
  int r, g, b;
  if (x >= 0) {
    r = 255;
    g = b = static_cast<int>(std::lround(255 * (1.0 - x)));
  } else {
    b = 255;
    r = g = static_cast<int>(std::lround(255 * (1.0 + x)));
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace heatmap_detail

inline std::string heatmap_to_tsv(const HeatmapMatrix& m) {
  std::string out = "gloss";
  for (const std::string& c : m.column_labels) out += "\t" + c;
  out += "\n";
  for (int r = 0; r < m.rows(); ++r) {
    out += m.row_labels[r];
    for (double v : m.values[r]) out += "\t" + heatmap_detail::fixed6(v);
    out += "\n";
  }
  return out;
}

inline HeatmapMatrix heatmap_from_tsv(const std::string& tsv) {
  HeatmapMatrix m;
  std::istringstream in(tsv);
  std::string line;
  if (!std::getline(in, line)) throw IoError("heatmap TSV is empty");
  std::istringstream header(line);
  std::string field;
  bool first = true;
  while (std::getline(header, field, '\t')) {
    if (first)
      first = false;
    else
      m.column_labels.push_back(field);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::getline(row, field, '\t');
    m.row_labels.push_back(field);
    ad::Vec values;
    while (std::getline(row, field, '\t')) values.push_back(std::stod(field));
    if (values.size() != m.column_labels.size())
      throw IoError("heatmap TSV row width mismatch");
    m.values.push_back(std::move(values));
  }
  return m;
}

inline std::string heatmap_to_svg(const HeatmapMatrix& m) {
  const int cell = 28, label_w = 140, label_h = 70, font = 11;
  const int width = label_w + cell * m.cols();
  const int height = label_h + cell * m.rows();
  double limit = 0.0;
  for (const ad::Vec& row : m.values)
    for (double v : row) limit = std::max(limit, std::abs(v));

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int c = 0; c < m.cols(); ++c) {
    int x = label_w + c * cell + cell / 2;
    svg += "<text x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(label_h - 6) +
           "\" font-size=\"" + std::to_string(font) +
           "\" text-anchor=\"start\" transform=\"rotate(-60 " + std::to_string(x) + " " +
           std::to_string(label_h - 6) + ")\">" +
           heatmap_detail::xml_escape(m.column_labels[c]) + "</text>\n";
  }
  for (int r = 0; r < m.rows(); ++r) {
    svg += "<text x=\"" + std::to_string(label_w - 6) + "\" y=\"" +
           std::to_string(label_h + r * cell + cell / 2 + font / 2) + "\" font-size=\"" +
           std::to_string(font) + "\" text-anchor=\"end\">" +
           heatmap_detail::xml_escape(m.row_labels[r]) + "</text>\n";
    for (int c = 0; c < m.cols(); ++c) {
      svg += "<rect x=\"" + std::to_string(label_w + c * cell) + "\" y=\"" +
             std::to_string(label_h + r * cell) + "\" width=\"" + std::to_string(cell) +
             "\" height=\"" + std::to_string(cell) + "\" fill=\"" +
             heatmap_detail::cell_color(m.values[r][c], limit) +
             "\" stroke=\"#dddddd\"/>\n";
    }
  }
  svg += "</svg>\n";
  return svg;
}

enum class HeatmapFormat { Tsv, Svg };

inline HeatmapFormat heatmap_format_from_string(const std::string& s) {
  if (s == "tsv") return HeatmapFormat::Tsv;
  if (s == "svg") return HeatmapFormat::Svg;
  throw ConfigError("unknown heatmap format: " + s);
}

inline void export_heatmap(const HeatmapMatrix& m, HeatmapFormat format,
                           const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open heatmap output: " + path);
  out << (format == HeatmapFormat::Tsv ? heatmap_to_tsv(m) : heatmap_to_svg(m));
  if (!out) throw IoError("heatmap write failed: " + path);
}

}  // namespace gloss
