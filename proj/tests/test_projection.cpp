#include "support/synthetic.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace dvm;
using dvm::testing::random_cloud;

namespace {

PointCloud cloud(std::initializer_list<Vec3> pts) { return PointCloud(std::vector<Vec3>(pts)); }

FeatureImage uv_image(std::size_t h, std::size_t w) {
  FeatureImage f{h, w, 2, std::vector<float>(h * w * 2)};
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      f.data[(u * w + v) * 2] = static_cast<float>(u);
      f.data[(u * w + v) * 2 + 1] = static_cast<float>(v);
    }
  return f;
}

}  // namespace

TEST(ProjectDepth, HandExample) {
  const auto [img, rec] = project_depth(cloud({Vec3(0, 0, 0), Vec3(1, 1, 0.5)}), Axis::Z, 4, 4);
  EXPECT_EQ(rec.pixels[0], (PixelIndex{0, 0}));
  EXPECT_EQ(rec.pixels[1], (PixelIndex{3, 3}));
  EXPECT_DOUBLE_EQ(img.at(0, 0), 0.5);
  EXPECT_NEAR(img.at(3, 3), 0.6224593312, 1e-10);
  EXPECT_DOUBLE_EQ(rec.pixel_scale, 1.0);
  EXPECT_FALSE(rec.degenerate);
}

TEST(ProjectDepth, BackgroundIsZero) {
  const auto [img, rec] = project_depth(cloud({Vec3(0, 0, 0), Vec3(1, 1, 0.5)}), Axis::Z, 4, 4);
  int lit = 0;
  for (std::size_t u = 0; u < 4; ++u)
    for (std::size_t v = 0; v < 4; ++v) {
      const bool hit = (u == 0 && v == 0) || (u == 3 && v == 3);
      if (hit) {
        EXPECT_GT(img.at(u, v), 0.0);
        EXPECT_LT(img.at(u, v), 1.0);
        ++lit;
      } else {
        EXPECT_EQ(img.at(u, v), 0.0);
      }
    }
  EXPECT_EQ(lit, 2);
}

TEST(ProjectDepth, CollisionKeepsMaximum) {
  const auto [img, rec] =
      project_depth(cloud({Vec3(0, 0, -1), Vec3(0, 0, 2), Vec3(1, 1, 0)}), Axis::Z, 8, 8);
  EXPECT_EQ(rec.pixels[0], rec.pixels[1]);
  EXPECT_DOUBLE_EQ(img.at(rec.pixels[0].u, rec.pixels[0].v), logistic(2.0));
}

TEST(ProjectDepth, AxisPermutations) {
  // Viewing along x uses (y, z) in-plane and x as depth; along y uses (x, z).
  const auto c = cloud({Vec3(0.3, 0, 0), Vec3(-0.2, 1, 2)});
  const auto [ix, rx] = project_depth(c, Axis::X, 8, 8);
  EXPECT_EQ(rx.pixels[0], (PixelIndex{0, 0}));
  EXPECT_EQ(rx.pixels[1], (PixelIndex{4, 7}));
  EXPECT_DOUBLE_EQ(ix.at(0, 0), logistic(0.3));
  const auto [iy, ry] = project_depth(c, Axis::Y, 8, 8);
  EXPECT_EQ(ry.pixels[1], (PixelIndex{0, 7}));
  EXPECT_EQ(ry.pixels[0], (PixelIndex{2, 0}));
  EXPECT_DOUBLE_EQ(iy.at(0, 7), logistic(1.0));
}

TEST(ProjectDepth, DegenerateExtent) {
  const auto [img, rec] = project_depth(cloud({Vec3(1, 1, 0), Vec3(1, 1, 3)}), Axis::Z, 5, 5);
  EXPECT_TRUE(rec.degenerate);
  EXPECT_EQ(rec.pixel_scale, 1.0);
  EXPECT_EQ(rec.pixels[0], (PixelIndex{0, 0}));
}

TEST(ProjectDepth, Errors) {
  EXPECT_THROW(project_depth(PointCloud{}, Axis::Z, 4, 4), InvalidArgument);
  EXPECT_THROW(project_depth(cloud({Vec3(0, 0, 0)}), Axis::Z, 0, 4), InvalidArgument);
}

TEST(ProjectDepth, RecordTotalAndInRange) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  for (int t = 0; t < 100; ++t) {
    const auto c = random_cloud(1 + t * 3, rng, 0.01 + 0.1 * t);
    const std::size_t h = dim(rng), w = dim(rng);
    for (Axis a : kViewOrder) {
      const auto [img, rec] = project_depth(c, a, h, w);
      ASSERT_EQ(rec.pixels.size(), c.size());
      for (const auto& px : rec.pixels) {
        EXPECT_LT(px.u, h);
        EXPECT_LT(px.v, w);
      }
      for (double v : img.intensity) EXPECT_TRUE(v == 0.0 || (v > 0.0 && v < 1.0));
    }
  }
}

TEST(ProjectDepth, TranslationShiftsPixels) {
  // Shifting interior points by exactly Delta/H * s moves them s rows, as long
  // as the extremes (which fix x_min and Delta) are kept in place.
  const double delta = 1.0;
  const std::size_t h = 16;
  std::vector<Vec3> base{Vec3(0, 0, 0), Vec3(delta, delta, 0)};
  std::vector<Vec3> moved = base;
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> cell(2, 9);
  const int s = 3;
  for (int i = 0; i < 20; ++i) {
    const double x = (cell(rng) + 0.5) * delta / h, y = (cell(rng) + 0.5) * delta / h;
    base.emplace_back(x, y, 0.1);
    moved.emplace_back(x + s * delta / h, y, 0.1);
  }
  const auto [i0, r0] = project_depth(PointCloud(base), Axis::Z, h, h);
  const auto [i1, r1] = project_depth(PointCloud(moved), Axis::Z, h, h);
  for (std::size_t i = 2; i < base.size(); ++i) {
    EXPECT_EQ(r1.pixels[i].u, r0.pixels[i].u + s);
    EXPECT_EQ(r1.pixels[i].v, r0.pixels[i].v);
  }
}

TEST(MeanFilter, SingleLitPixel) {
  DepthImage img{5, 5, Axis::Z, std::vector<double>(25, 0.0)};
  img.at(2, 2) = 0.9;
  const auto f = mean_filter3(img.intensity, 5, 5);
  for (std::size_t u = 0; u < 5; ++u)
    for (std::size_t v = 0; v < 5; ++v) {
      const bool near = u >= 1 && u <= 3 && v >= 1 && v <= 3;
      EXPECT_NEAR(f[u * 5 + v], near ? 0.1 : 0.0, 1e-15);
    }
}

TEST(MeanFilter, ZeroPaddedBorders) {
  const std::vector<double> ones(16, 1.0);
  const auto f = mean_filter3(ones, 4, 4);
  EXPECT_DOUBLE_EQ(f[0], 4.0 / 9.0);
  EXPECT_DOUBLE_EQ(f[1], 6.0 / 9.0);
  EXPECT_DOUBLE_EQ(f[5], 1.0);
}

TEST(Colorize, ConstantAndZeroImages) {
  DepthImage img{6, 7, Axis::Z, std::vector<double>(42, 0.4)};
  auto col = smooth_and_colorize(img);
  const auto c = colormap(0.4);
  for (std::size_t u = 1; u + 1 < 6; ++u)
    for (std::size_t v = 1; v + 1 < 7; ++v)
      for (int k = 0; k < 3; ++k) EXPECT_NEAR(col.rgb[(u * 7 + v) * 3 + k], c[k], 1e-12);
  img.intensity.assign(42, 0.0);
  col = smooth_and_colorize(img);
  const auto z = colormap(0.0);
  for (std::size_t i = 0; i < 42; ++i)
    for (int k = 0; k < 3; ++k) EXPECT_EQ(col.rgb[i * 3 + k], z[k]);
}

TEST(Colorize, TableIsDivergingPinkToGreen) {
  const auto lo = colormap(0.0), mid = colormap(0.5), hi = colormap(1.0);
  EXPECT_GT(lo[0], lo[1]);  // pink end: red dominates green
  EXPECT_GT(hi[1], hi[0]);  // green end
  EXPECT_GT(mid[0] + mid[1] + mid[2], 2.7);  // near-white centre
  for (double t = 0.0; t <= 1.0; t += 0.01)
    for (double v : colormap(t)) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  // Linear interpolation between neighbouring entries.
  const auto a = colormap(10.0 / 255.0), b = colormap(11.0 / 255.0), m = colormap(10.5 / 255.0);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(m[k], 0.5 * (a[k] + b[k]), 1e-12);
}

TEST(PullBack, UvImageGathersPixelCoordinates) {
  std::mt19937_64 rng(3);
  const auto c = random_cloud(200, rng);
  for (Axis a : kViewOrder) {
    const auto [img, rec] = project_depth(c, a, 31, 17);
    const auto f = pull_back_features(uv_image(31, 17), rec);
    ASSERT_EQ(f.cols(), 2);
    for (std::size_t i = 0; i < c.size(); ++i) {
      EXPECT_EQ(f(static_cast<Eigen::Index>(i), 0), rec.pixels[i].u);
      EXPECT_EQ(f(static_cast<Eigen::Index>(i), 1), rec.pixels[i].v);
    }
  }
}

TEST(PullBack, ConstantImageAndSharedPixels) {
  const auto c = cloud({Vec3(0, 0, 0), Vec3(0, 0, 1), Vec3(1, 1, 0)});
  const auto [img, rec] = project_depth(c, Axis::Z, 8, 8);
  FeatureImage f{8, 8, 3, std::vector<float>(8 * 8 * 3, 2.5f)};
  const auto m = pull_back_features(f, rec);
  EXPECT_TRUE((m.array() == 2.5).all());
  const auto uv = pull_back_features(uv_image(8, 8), rec);
  EXPECT_EQ(uv.row(0), uv.row(1));
}

TEST(PullBack, DimensionMismatch) {
  const auto [img, rec] = project_depth(cloud({Vec3(0, 0, 0), Vec3(1, 1, 1)}), Axis::Z, 8, 8);
  EXPECT_THROW(pull_back_features(uv_image(8, 9), rec), InvalidArgument);
  FeatureImage bad{8, 8, 2, std::vector<float>(10)};
  EXPECT_THROW(pull_back_features(bad, rec), InvalidArgument);
}

TEST(AssembleVisual, OrderAndWidth) {
  FeatureMatrix a(2, 1), b(2, 1), c(2, 1);
  a << 1, 4;
  b << 2, 5;
  c << 3, 6;
  const auto out = assemble_visual_features(a, b, c);
  ASSERT_EQ(out.cols(), 3);
  EXPECT_EQ(out.row(0), Eigen::RowVector3d(1, 2, 3));
  EXPECT_EQ(out.row(1), Eigen::RowVector3d(4, 5, 6));
  FeatureMatrix wide = FeatureMatrix::Random(4, 5);
  EXPECT_EQ(assemble_visual_features(wide, wide, wide).cols(), 15);
  EXPECT_THROW(assemble_visual_features(a, b, FeatureMatrix(3, 1)), InvalidArgument);
  EXPECT_THROW(assemble_visual_features(a, b, FeatureMatrix(2, 2)), InvalidArgument);
  // Permuting points permutes rows.
  FeatureMatrix pa(2, 1), pb(2, 1), pc(2, 1);
  pa << 4, 1;
  pb << 5, 2;
  pc << 6, 3;
  const auto perm = assemble_visual_features(pa, pb, pc);
  EXPECT_EQ(perm.row(0), out.row(1));
  EXPECT_EQ(perm.row(1), out.row(0));
}

TEST(PositionalEncoding, OriginAndLayout) {
  const auto pe = positional_encoding(cloud({Vec3(0, 0, 0), Vec3(0.25, -0.5, 0.125)}));
  ASSERT_EQ(pe.cols(), 384);
  for (Eigen::Index c = 0; c < 384; c += 2) {
    EXPECT_EQ(pe(0, c), 0.0);
    EXPECT_EQ(pe(0, c + 1), 1.0);
  }
  // Column (coord, band, fn) = coord * 128 + band * 2 + fn.
  const double y = -0.5;
  for (int k = 0; k < 5; ++k) {
    EXPECT_NEAR(pe(1, 128 + 2 * k), std::sin(std::pow(2.0, k) * M_PI * y), 1e-12);
    EXPECT_NEAR(pe(1, 128 + 2 * k + 1), std::cos(std::pow(2.0, k) * M_PI * y), 1e-12);
  }
  EXPECT_NEAR(pe(1, 0), std::sin(M_PI * 0.25), 1e-15);
  EXPECT_NEAR(pe(1, 256 + 2), std::sin(2 * M_PI * 0.125), 1e-15);
}

TEST(PositionalEncoding, BoundedAndDeterministic) {
  std::mt19937_64 rng(4);
  std::vector<Vec3> pts(100);
  for (auto& p : pts) p = dvm::testing::random_unit(rng) * 0.7;
  pts.push_back(pts.front());
  const auto pe = positional_encoding(PointCloud(pts));
  EXPECT_EQ(pe.cols(), 384);
  EXPECT_LE(pe.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_EQ(pe.row(0), pe.row(100));
}

TEST(ComposeFeatures, StandardizedBlocks) {
  std::mt19937_64 rng(5);
  const auto c = random_cloud(300, rng);
  const auto pe = positional_encoding(c, 4);
  const auto only = compose_input_features(std::nullopt, pe);
  EXPECT_EQ(only, standardize_columns(pe));

  FeatureMatrix visual = FeatureMatrix::Random(300, 5);
  visual.col(2).setConstant(7.0);
  const auto out = compose_input_features(visual, pe, {1.0, 1.0});
  ASSERT_EQ(out.cols(), 5 + pe.cols());
  EXPECT_TRUE(out.col(2).isZero());
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    if (j == 2) continue;
    const double mean = out.col(j).mean();
    const double var = (out.col(j).array() - mean).square().mean();
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
  EXPECT_THROW(compose_input_features(FeatureMatrix::Random(10, 2), pe), InvalidArgument);
}

TEST(ComposeFeatures, WidthAndWeights) {
  FeatureMatrix v(3, 2), p(3, 2);
  v << 1, 0, 2, 1, 3, 5;
  p << 0, 1, 1, 1, 2, 0;
  const auto out = compose_input_features(v, p, {1.0, 1.0});
  EXPECT_EQ(out.cols(), 4);
  const auto scaled = compose_input_features(v, p, {2.0, 0.5});
  EXPECT_TRUE(scaled.leftCols(2).isApprox(2.0 * out.leftCols(2)));
  EXPECT_TRUE(scaled.rightCols(2).isApprox(0.5 * out.rightCols(2)));
}
