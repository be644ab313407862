// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace diffseg::metrics {

struct ClassScore {
  int label = 0;
  bool evaluated = false;  // false when the class is absent from both maps
  double dsc = 0.0;
  double jaccard = 0.0;
  std::int64_t intersection = 0;
  std::int64_t predicted = 0;
  std::int64_t truth = 0;
};

struct SegScore {
  std::vector<ClassScore> classes;  // labels 1..C-1
  double mean_dsc = 0.0;            // over evaluated classes
  double mean_jaccard = 0.0;
  int evaluated = 0;
};

// Confusion counts accumulated over the whole set, then one score per class.
SegScore seg_scores(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                    int classes);

// Mean of per-case scores; each case is scored on its own counts.
SegScore seg_scores_per_case(const std::vector<std::vector<std::uint8_t>>& pred,
                             const std::vector<std::vector<std::uint8_t>>& truth, int classes);

// Percentage with two decimals, or "NA" below 1%.
std::string format_score(double fraction);

// "metric<TAB>class<TAB>value" rows; class "mean" for aggregates.
std::string score_rows(const SegScore& score);

}  // namespace diffseg::metrics
