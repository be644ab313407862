// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/metrics/segmentation.hpp"

#include <cstdio>
#include <sstream>

#include "diffseg/core/errors.hpp"

namespace diffseg::metrics {

namespace {

void finalize(SegScore& s) {
  double dsc = 0.0, ja = 0.0;
  s.evaluated = 0;
  for (auto& c : s.classes) {
    if (c.truth == 0 && c.predicted == 0) {
      c.evaluated = false;
      continue;
    }
    c.evaluated = true;
    c.dsc = 2.0 * static_cast<double>(c.intersection) / static_cast<double>(c.truth + c.predicted);
    c.jaccard = static_cast<double>(c.intersection) /
                static_cast<double>(c.truth + c.predicted - c.intersection);
    dsc += c.dsc;
    ja += c.jaccard;
    ++s.evaluated;
  }
  s.mean_dsc = s.evaluated ? dsc / s.evaluated : 0.0;
  s.mean_jaccard = s.evaluated ? ja / s.evaluated : 0.0;
}

}  // namespace

SegScore seg_scores(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                    int classes) {
  if (pred.size() != truth.size()) {
    throw ConfigError("seg_scores: prediction has " + std::to_string(pred.size()) +
                      " voxels, ground truth " + std::to_string(truth.size()));
  }
  if (classes < 2) {
    throw ConfigError("seg_scores needs at least two classes");
  }
  SegScore s;
  for (int c = 1; c < classes; ++c) {
    s.classes.push_back(ClassScore{c});
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i];
    const int g = truth[i];
    if (p >= classes || g >= classes) {
      throw DataError("seg_scores: label " + std::to_string(std::max(p, g)) + " outside [0, " +
                      std::to_string(classes - 1) + "]");
    }
    if (p > 0) ++s.classes[static_cast<std::size_t>(p - 1)].predicted;
    if (g > 0) ++s.classes[static_cast<std::size_t>(g - 1)].truth;
    if (p > 0 && p == g) ++s.classes[static_cast<std::size_t>(p - 1)].intersection;
  }
  finalize(s);
  return s;
}

SegScore seg_scores_per_case(const std::vector<std::vector<std::uint8_t>>& pred,
                             const std::vector<std::vector<std::uint8_t>>& truth, int classes) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw ConfigError("seg_scores_per_case: need equal, non-zero case counts");
  }
  SegScore out;
  for (int c = 1; c < classes; ++c) {
    out.classes.push_back(ClassScore{c});
  }
  std::vector<int> counts(out.classes.size(), 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto s = seg_scores(pred[i], truth[i], classes);
    for (std::size_t c = 0; c < s.classes.size(); ++c) {
      auto& o = out.classes[c];
      o.intersection += s.classes[c].intersection;
      o.predicted += s.classes[c].predicted;
      o.truth += s.classes[c].truth;
      if (s.classes[c].evaluated) {
        o.dsc += s.classes[c].dsc;
        o.jaccard += s.classes[c].jaccard;
        ++counts[c];
      }
    }
  }
  double dsc = 0.0, ja = 0.0;
  for (std::size_t c = 0; c < out.classes.size(); ++c) {
    auto& o = out.classes[c];
    o.evaluated = counts[c] > 0;
    if (!o.evaluated) continue;
    o.dsc /= counts[c];
    o.jaccard /= counts[c];
    dsc += o.dsc;
    ja += o.jaccard;
    ++out.evaluated;
  }
  out.mean_dsc = out.evaluated ? dsc / out.evaluated : 0.0;
  out.mean_jaccard = out.evaluated ? ja / out.evaluated : 0.0;
  return out;
}

std::string format_score(double fraction) {
  if (fraction < 0.01) {
    return "NA";
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

std::string score_rows(const SegScore& score) {
  std::ostringstream out;
  for (const auto& c : score.classes) {
    if (!c.evaluated) continue;
    out << "dsc\t" << c.label << '\t' << format_score(c.dsc) << '\n';
    out << "jaccard\t" << c.label << '\t' << format_score(c.jaccard) << '\n';
  }
  out << "dsc\tmean\t" << format_score(score.mean_dsc) << '\n';
  out << "jaccard\tmean\t" << format_score(score.mean_jaccard) << '\n';
  return out.str();
}

}  // namespace diffseg::metrics
