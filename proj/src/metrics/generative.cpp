// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/metrics/generative.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "diffseg/core/errors.hpp"

namespace diffseg::metrics {

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) {
    throw NumericError("eigendecomposition failed");
  }
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

void fit_gaussian(const Eigen::MatrixXd& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  mu = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
  cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

Eigen::VectorXd kth_radius(const Eigen::MatrixXd& sq, int k) {
  Eigen::VectorXd r(sq.rows());
  std::vector<double> row(static_cast<std::size_t>(sq.cols()));
  for (Eigen::Index i = 0; i < sq.rows(); ++i) {
    for (Eigen::Index j = 0; j < sq.cols(); ++j) row[static_cast<std::size_t>(j)] = sq(i, j);
    // Index 0 is the point itself (distance 0).
    std::nth_element(row.begin(), row.begin() + k, row.end());
    r(i) = row[static_cast<std::size_t>(k)];
  }
  return r;
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::VectorXd na = a.rowwise().squaredNorm();
  const Eigen::VectorXd nb = b.rowwise().squaredNorm();
  Eigen::MatrixXd d = (-2.0 * a * b.transpose()).colwise() + na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

double covered_fraction(const Eigen::MatrixXd& cross, const Eigen::VectorXd& radii) {
  // cross(i, j): query i against reference j with radius radii(j).
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < cross.rows(); ++i) {
    for (Eigen::Index j = 0; j < cross.cols(); ++j) {
      if (cross(i, j) <= radii(j)) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(cross.rows());
}

}  // namespace

double frechet_from_stats(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a,
                          const Eigen::VectorXd& mu_b, const Eigen::MatrixXd& cov_b) {
  if (mu_a.size() != mu_b.size() || cov_a.rows() != mu_a.size() || cov_b.rows() != mu_b.size()) {
    throw ConfigError("frechet distance: dimension mismatch");
  }
  if (!cov_a.allFinite() || !cov_b.allFinite() || !mu_a.allFinite() || !mu_b.allFinite()) {
    throw NumericError("frechet distance: non-finite mean or covariance");
  }
  const Eigen::MatrixXd root_a = psd_sqrt(cov_a);
  const Eigen::MatrixXd prod = root_a * cov_b * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (prod + prod.transpose()),
                                                    Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) {
    throw NumericError("eigendecomposition failed");
  }
  const Eigen::VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  double trace_root = 0.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -1e-6 * scale) {
      throw NumericError("covariance product has a clearly negative eigenvalue (" +
                         std::to_string(ev(i)) + "); its square root would be complex");
    }
    trace_root += std::sqrt(std::max(ev(i), 0.0));
  }
  const double d = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * trace_root;
  return std::max(d, 0.0);
}

double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) {
    throw ConfigError("frechet distance: feature widths differ (" + std::to_string(a.cols()) +
                      " vs " + std::to_string(b.cols()) + ")");
  }
  if (a.rows() < a.cols() + 1 || b.rows() < b.cols() + 1) {
    throw ConfigError("frechet distance needs at least d+1 = " + std::to_string(a.cols() + 1) +
                      " rows per set");
  }
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  fit_gaussian(a, mu_a, cov_a);
  fit_gaussian(b, mu_b, cov_b);
  return frechet_from_stats(mu_a, cov_a, mu_b, cov_b);
}

PrecisionRecall precision_recall_f1(const Eigen::MatrixXd& real, const Eigen::MatrixXd& gen,
                                    int k) {
  if (k < 1 || real.rows() < k + 1 || gen.rows() < k + 1) {
    throw ConfigError("precision/recall needs at least k+1 = " + std::to_string(k + 1) +
                      " rows per set");
  }
  if (real.cols() != gen.cols()) {
    throw ConfigError("precision/recall: feature widths differ");
  }
  const Eigen::VectorXd r_real = kth_radius(squared_distances(real, real), k);
  const Eigen::VectorXd r_gen = kth_radius(squared_distances(gen, gen), k);
  const Eigen::MatrixXd gen_to_real = squared_distances(gen, real);
  PrecisionRecall pr;
  pr.precision = covered_fraction(gen_to_real, r_real);
  pr.recall = covered_fraction(gen_to_real.transpose(), r_gen);
  pr.f1 = pr.precision + pr.recall > 0.0
              ? 2.0 * pr.precision * pr.recall / (pr.precision + pr.recall)
              : 0.0;
  return pr;
}

GenScore generative_scores(const FeatureSet& real, const FeatureSet& gen, int k) {
  if (real.extractor_id != gen.extractor_id || real.seed != gen.seed) {
    throw ConfigError("feature sets come from different extractors (" + real.extractor_id + " vs " +
                      gen.extractor_id + ")");
  }
  GenScore s;
  s.real_count = real.rows();
  s.gen_count = gen.rows();
  s.k = k;
  auto enough = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return a.rows() > a.cols() && b.rows() > b.cols();
  };
  if (enough(real.global, gen.global)) s.fid = frechet_distance(real.global, gen.global);
  if (enough(real.spatial, gen.spatial)) s.sfid = frechet_distance(real.spatial, gen.spatial);
  s.pr = precision_recall_f1(real.global, gen.global, k);
  return s;
}

std::string GenScore::rows() const {
  std::ostringstream out;
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  out << "fid\tall\t" << (fid ? num(*fid) : "NA") << '\n';
  out << "sfid\tall\t" << (sfid ? num(*sfid) : "NA") << '\n';
  out << "precision\tall\t" << num(pr.precision) << '\n';
  out << "recall\tall\t" << num(pr.recall) << '\n';
  out << "f1\tall\t" << num(pr.f1) << '\n';
  out << "real_count\tall\t" << real_count << '\n';
  out << "gen_count\tall\t" << gen_count << '\n';
  out << "k\tall\t" << k << '\n';
  return out.str();
}

}  // namespace diffseg::metrics
