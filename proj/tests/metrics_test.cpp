// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <doctest.h>

#include "diffseg/core/errors.hpp"
#include "diffseg/core/rng.hpp"
#include "diffseg/metrics/features.hpp"
#include "diffseg/metrics/generative.hpp"
#include "diffseg/metrics/segmentation.hpp"

using namespace diffseg;
using namespace diffseg::metrics;

namespace {

Eigen::MatrixXd gaussian_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed, double shift = 0.0) {
  RngStream rng(seed, 0);
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rng.normal() + shift;
  return m;
}

std::vector<GrayImage> blob_images(int n, std::uint64_t seed) {
  RngStream rng(seed, 0);
  std::vector<GrayImage> out;
  for (int i = 0; i < n; ++i) {
    GrayImage g{32, 32, {}};
    const double cy = 8 + 16 * rng.uniform(), cx = 8 + 16 * rng.uniform();
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        g.pixels.push_back(std::hypot(y - cy, x - cx) < 6 ? 0.8f : -0.8f);
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace

TEST_CASE("DSC and Jaccard from confusion counts") {
  // 100 true voxels of class 1, 100 predicted, 50 overlapping.
  std::vector<std::uint8_t> truth(400, 0), pred(400, 0);
  for (int i = 0; i < 100; ++i) truth[i] = 1;
  for (int i = 50; i < 150; ++i) pred[i] = 1;
  const SegScore s = seg_scores(pred, truth, 2);
  REQUIRE(s.classes.size() == 1);
  CHECK(s.classes[0].intersection == 50);
  CHECK(s.classes[0].dsc == doctest::Approx(0.5));
  CHECK(s.classes[0].jaccard == doctest::Approx(1.0 / 3.0));
  CHECK(s.mean_dsc == doctest::Approx(0.5));

  const SegScore same = seg_scores(truth, truth, 2);
  CHECK(same.mean_dsc == 1.0);
  CHECK(same.mean_jaccard == 1.0);
  std::vector<std::uint8_t> disjoint(400, 0);
  for (int i = 200; i < 300; ++i) disjoint[i] = 1;
  CHECK(seg_scores(disjoint, truth, 2).mean_dsc == 0.0);
}

TEST_CASE("Jaccard is a monotone function of DSC") {
  RngStream rng(3, 0);
  std::vector<std::uint8_t> truth(2000), pred(2000);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = static_cast<std::uint8_t>(rng.next_u64() % 4);
    pred[i] = rng.uniform() < 0.6 ? truth[i] : static_cast<std::uint8_t>(rng.next_u64() % 4);
  }
  const SegScore s = seg_scores(pred, truth, 4);
  CHECK(s.evaluated == 3);
  for (const auto& c : s.classes) CHECK(c.jaccard == doctest::Approx(c.dsc / (2.0 - c.dsc)));
}

TEST_CASE("absent classes are skipped, not scored") {
  const std::vector<std::uint8_t> truth{0, 1, 1, 0}, pred{0, 1, 0, 0};
  const SegScore s = seg_scores(pred, truth, 4);
  CHECK(s.evaluated == 1);
  CHECK_FALSE(s.classes[1].evaluated);
  CHECK(s.mean_dsc == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS(seg_scores(pred, std::vector<std::uint8_t>{0, 1}, 4));
}

TEST_CASE("per-case scores average case means") {
  const std::vector<std::vector<std::uint8_t>> truth{{1, 1, 0, 0}, {1, 0, 0, 0}};
  const std::vector<std::vector<std::uint8_t>> pred{{1, 1, 0, 0}, {0, 1, 0, 0}};
  const SegScore s = seg_scores_per_case(pred, truth, 2);
  CHECK(s.mean_dsc == doctest::Approx(0.5));
}

TEST_CASE("format_score") {
  CHECK(format_score(0.83456) == "83.46");
  CHECK(format_score(0.005) == "NA");
  CHECK(format_score(1.0) == "100.00");
}

TEST_CASE("Frechet distance oracles") {
  const Eigen::MatrixXd x = gaussian_rows(200, 4, 1);
  CHECK(std::abs(frechet_distance(x, x)) < 1e-8);

  Eigen::VectorXd mu_a = Eigen::VectorXd::Zero(2), mu_b(2);
  mu_b << 1.0, 0.0;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
  CHECK(frechet_from_stats(mu_a, eye, mu_b, eye) == doctest::Approx(1.0).epsilon(1e-10));

  mu_b << 3.0, 4.0;
  Eigen::MatrixXd ca = Eigen::MatrixXd::Zero(2, 2), cb = Eigen::MatrixXd::Zero(2, 2);
  ca.diagonal() << 1.0, 4.0;
  cb.diagonal() << 4.0, 1.0;
  CHECK(frechet_from_stats(mu_a, ca, mu_b, cb) == doctest::Approx(27.0).epsilon(1e-10));

  CHECK_THROWS_AS(frechet_distance(gaussian_rows(3, 4, 1), gaussian_rows(30, 4, 2)), ConfigError);
}

TEST_CASE("precision and recall") {
  const Eigen::MatrixXd real = gaussian_rows(120, 3, 1);
  const auto same = precision_recall_f1(real, real, 3);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f1 == 1.0);

  const auto far = precision_recall_f1(real, gaussian_rows(120, 3, 2, 100.0), 3);
  CHECK(far.precision == 0.0);
  CHECK(far.recall == 0.0);
  CHECK(far.f1 == 0.0);

  // Generated samples cover only one of two real clusters.
  Eigen::MatrixXd two(240, 3);
  two << gaussian_rows(120, 3, 3), gaussian_rows(120, 3, 4, 50.0);
  const auto half = precision_recall_f1(two, gaussian_rows(120, 3, 5), 3);
  CHECK(half.precision > 0.9);
  CHECK(half.recall == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("random feature extractor properties") {
  const auto images = blob_images(70, 1);
  const RandomCnnExtractor ex(0);
  const FeatureSet a = ex.extract(images);
  CHECK(a.extractor_id == RandomCnnExtractor::kId);
  CHECK(a.global.rows() == 70);
  CHECK(a.global.cols() == 64);
  CHECK(a.spatial.cols() == 16 * 8 * 8);

  const FeatureSet b = RandomCnnExtractor(0).extract(images, 7);
  CHECK((a.global - b.global).cwiseAbs().maxCoeff() < 1e-5);
  const FeatureSet c = RandomCnnExtractor(1).extract(images);
  CHECK((a.global - c.global).cwiseAbs().maxCoeff() > 1e-6);

  const FeatureSet back = FeatureSet::from_archive(a.to_archive());
  CHECK(back.global == a.global);
  CHECK(back.seed == a.seed);

  const GenScore self = generative_scores(a, a);
  REQUIRE(self.fid.has_value());
  CHECK(std::abs(*self.fid) < 1e-6);
  CHECK_FALSE(self.sfid.has_value());
  CHECK(self.pr.f1 == 1.0);
  CHECK(self.rows().find("fid\t") != std::string::npos);
}
