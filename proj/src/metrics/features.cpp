// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/metrics/features.hpp"

#include <algorithm>

#include "diffseg/core/errors.hpp"
#include "diffseg/core/ops.hpp"

namespace diffseg::metrics {

namespace {

constexpr int kSpatialGrid = 8;

// Average-pools [N,C,H,W] onto a fixed grid x grid raster (H, W multiples of grid).
Eigen::MatrixXd pool_to_grid(const Tensor& t, int grid) {
  const auto n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  if (h % grid != 0 || w % grid != 0) {
    throw ConfigError("spatial features need the middle map to be a multiple of " +
                      std::to_string(grid) + " pixels");
  }
  const auto bh = h / grid, bw = w / grid;
  const auto v = t.data<float>();
  Eigen::MatrixXd out(n, c * grid * grid);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx) {
          double s = 0.0;
          for (std::int64_t y = gy * bh; y < (gy + 1) * bh; ++y) {
            for (std::int64_t x = gx * bw; x < (gx + 1) * bw; ++x) {
              s += v[static_cast<std::size_t>(((i * c + ch) * h + y) * w + x)];
            }
          }
          out(i, (ch * grid + gy) * grid + gx) = s / static_cast<double>(bh * bw);
        }
      }
    }
  }
  return out;
}

Tensor matrix_tensor(const Eigen::MatrixXd& m) {
  std::vector<double> v(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      v[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    }
  }
  return Tensor::from_vector({m.rows(), m.cols()}, std::move(v));
}

Eigen::MatrixXd tensor_matrix(const Tensor& t) {
  if (t.ndim() != 2) {
    throw DataError("feature tensor must be 2-D, got " + shape_str(t.shape()));
  }
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  const auto v = t.to_doubles();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = v[static_cast<std::size_t>(r * m.cols() + c)];
    }
  }
  return m;
}

}  // namespace

TensorArchive FeatureSet::to_archive() const {
  TensorArchive a;
  a.meta["extractor.id"] = extractor_id;
  a.meta["extractor.seed"] = std::to_string(seed);
  a.tensors.push_back({"global", matrix_tensor(global)});
  a.tensors.push_back({"spatial", matrix_tensor(spatial)});
  return a;
}

FeatureSet FeatureSet::from_archive(const TensorArchive& archive) {
  FeatureSet f;
  f.extractor_id = archive.meta_at("extractor.id");
  f.seed = std::stoull(archive.meta_at("extractor.seed"));
  const Tensor* g = archive.find("global");
  const Tensor* s = archive.find("spatial");
  if (!g || !s) {
    throw DataError("feature archive needs 'global' and 'spatial' tensors");
  }
  f.global = tensor_matrix(*g);
  f.spatial = tensor_matrix(*s);
  if (f.global.rows() != f.spatial.rows()) {
    throw DataError("feature archive row counts disagree");
  }
  return f;
}

RandomCnnExtractor::RandomCnnExtractor(std::uint64_t seed) : seed_(seed) {
  RngStream rng = RngStream(seed, 0).split(0x66656174);  // "feat"
  conv1_ = nn::Conv2d::create(params_, "conv1", 1, 16, 3, 1, 1, rng, DType::f32);
  conv2_ = nn::Conv2d::create(params_, "conv2", 16, 16, 3, 1, 1, rng, DType::f32);
  conv3_ = nn::Conv2d::create(params_, "conv3", 16, 64, 3, 1, 1, rng, DType::f32);
  for (auto* b : {&conv1_.bias, &conv2_.bias, &conv3_.bias}) {
    rng.fill_normal(*b, 0.0, 0.1);
  }
  params_.set_all_trainable(false);
}

FeatureSet RandomCnnExtractor::extract(const std::vector<GrayImage>& images, int batch) const {
  FeatureSet f;
  f.extractor_id = kId;
  f.seed = seed_;
  if (images.empty()) {
    f.global.resize(0, 64);
    f.spatial.resize(0, 16 * kSpatialGrid * kSpatialGrid);
    return f;
  }
  const auto h = images.front().height, w = images.front().width;
  for (const auto& im : images) {
    if (im.height != h || im.width != w || static_cast<std::int64_t>(im.pixels.size()) != h * w) {
      throw ConfigError("feature extraction needs one resolution; got " + std::to_string(h) + "x" +
                        std::to_string(w) + " and " + std::to_string(im.height) + "x" +
                        std::to_string(im.width));
    }
  }
  if (h % (4 * kSpatialGrid) != 0 || w % (4 * kSpatialGrid) != 0) {
    throw ConfigError("feature extraction needs H and W divisible by 32");
  }
  const auto n = static_cast<Eigen::Index>(images.size());
  f.global.resize(n, 64);
  f.spatial.resize(n, 16 * kSpatialGrid * kSpatialGrid);
  NoGradGuard no_grad;
  for (Eigen::Index start = 0; start < n; start += batch) {
    const auto count = std::min<Eigen::Index>(batch, n - start);
    std::vector<float> buf;
    buf.reserve(static_cast<std::size_t>(count * h * w));
    for (Eigen::Index i = 0; i < count; ++i) {
      const auto& px = images[static_cast<std::size_t>(start + i)].pixels;
      buf.insert(buf.end(), px.begin(), px.end());
    }
    Tensor x = Tensor::from_vector({count, 1, h, w}, std::move(buf));
    Tensor m1 = ops::avg_pool2x2(ops::relu(conv1_(x)));
    Tensor m2 = ops::avg_pool2x2(ops::relu(conv2_(m1)));
    Tensor m3 = ops::avg_pool2x2(ops::relu(conv3_(m2)));
    f.spatial.middleRows(start, count) = pool_to_grid(m2, kSpatialGrid);
    f.global.middleRows(start, count) = pool_to_grid(m3, 1);
  }
  return f;
}

FeatureSet extract_features(const std::vector<GrayImage>& images,
                            const RandomCnnExtractor& extractor) {
  return extractor.extract(images);
}

}  // namespace diffseg::metrics
