// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>

#include <Eigen/Dense>

#include "diffseg/metrics/features.hpp"

namespace diffseg::metrics {

// ||mu_a - mu_b||^2 + Tr(cov_a + cov_b - 2 (cov_a cov_b)^(1/2)).
double frechet_from_stats(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a,
                          const Eigen::VectorXd& mu_b, const Eigen::MatrixXd& cov_b);

// Gaussian fit of each row set (unbiased covariance), then frechet_from_stats.
// Needs at least d + 1 rows per side.
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// k-NN manifold estimate: a point is covered when it lies inside the ball
// around some point of the other set whose radius is that point's distance
// to its k-th nearest neighbour within its own set.
PrecisionRecall precision_recall_f1(const Eigen::MatrixXd& real, const Eigen::MatrixXd& gen,
                                    int k = 3);

struct GenScore {
  std::optional<double> fid;
  std::optional<double> sfid;  // empty when too few rows for the spatial covariance
  PrecisionRecall pr;
  Eigen::Index real_count = 0;
  Eigen::Index gen_count = 0;
  int k = 3;

  std::string rows() const;  // "metric<TAB>class<TAB>value"
};

GenScore generative_scores(const FeatureSet& real, const FeatureSet& gen, int k = 3);

}  // namespace diffseg::metrics
