#pragma once

#include "dvm/common.hpp"
#include "dvm/geometry.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dvm {

/// Viewing direction. Z projects onto the xy-plane, X onto yz, Y onto xz.
enum class Axis { Z, X, Y };

inline constexpr std::array<Axis, 3> kViewOrder = {Axis::Z, Axis::X, Axis::Y};

inline const char* axis_name(Axis a) {
  switch (a) {
    case Axis::Z: return "z";
    case Axis::X: return "x";
    case Axis::Y: return "y";
  }
  return "?";
}

/// Returns (row coordinate, column coordinate, depth) for a point viewed along `axis`.
inline std::array<double, 3> view_coordinates(const Vec3& p, Axis axis) {
  switch (axis) {
    case Axis::Z: return {p.x(), p.y(), p.z()};
    case Axis::X: return {p.y(), p.z(), p.x()};
    case Axis::Y: return {p.x(), p.z(), p.y()};
  }
  return {0, 0, 0};
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct DepthImage {
  std::size_t height = 0;
  std::size_t width = 0;
  Axis axis = Axis::Z;
  std::vector<double> intensity;  // row-major, u * width + v

  double at(std::size_t u, std::size_t v) const { return intensity[u * width + v]; }
  double& at(std::size_t u, std::size_t v) { return intensity[u * width + v]; }
};

struct PixelIndex {
  std::uint32_t u = 0;
  std::uint32_t v = 0;
  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

struct ProjectionRecord {
  std::size_t height = 0;
  std::size_t width = 0;
  Axis axis = Axis::Z;
  double pixel_scale = 1.0;  // Delta
  double row_min = 0.0;
  double col_min = 0.0;
  bool degenerate = false;
  std::vector<PixelIndex> pixels;  // one per point
};

struct ColorImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> rgb;  // (u * width + v) * 3 + channel
};

/// H x W x C per-pixel features, indexed (u * W + v) * C + c.
struct FeatureImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> data;

  float at(std::size_t u, std::size_t v, std::size_t c) const {
    return data[(u * width + v) * channels + c];
  }
};

/// Projects every point to a pixel of an H x W image viewed along `axis`.
/// Intensity is logistic(depth); colliding points keep the largest intensity and
/// pixels without points stay 0.
inline std::pair<DepthImage, ProjectionRecord> project_depth(const PointCloud& cloud, Axis axis,
                                                             std::size_t height = 224,
                                                             std::size_t width = 224) {
  require(!cloud.empty(), "project_depth: empty cloud");
  require(height >= 1 && width >= 1, "project_depth: image dimensions must be positive");

  double rmin = std::numeric_limits<double>::infinity(), rmax = -rmin;
  double cmin = rmin, cmax = -rmin;
  for (const auto& p : cloud) {
    auto [r, c, d] = view_coordinates(p, axis);
    rmin = std::min(rmin, r);
    rmax = std::max(rmax, r);
    cmin = std::min(cmin, c);
    cmax = std::max(cmax, c);
  }

  ProjectionRecord rec;
  rec.height = height;
  rec.width = width;
  rec.axis = axis;
  rec.row_min = rmin;
  rec.col_min = cmin;
  rec.pixel_scale = std::max(rmax - rmin, cmax - cmin);
  if (!(rec.pixel_scale > 0.0)) {
    rec.pixel_scale = 1.0;
    rec.degenerate = true;
  }

  DepthImage img{height, width, axis, std::vector<double>(height * width, 0.0)};
  rec.pixels.reserve(cloud.size());
  auto to_index = [](double t, std::size_t extent) {
    const double f = std::floor(t * static_cast<double>(extent));
    if (f <= 0.0) return std::uint32_t{0};
    if (f >= static_cast<double>(extent - 1)) return static_cast<std::uint32_t>(extent - 1);
    return static_cast<std::uint32_t>(f);
  };
  for (const auto& p : cloud) {
    auto [r, c, d] = view_coordinates(p, axis);
    PixelIndex px{to_index((r - rmin) / rec.pixel_scale, height),
                  to_index((c - cmin) / rec.pixel_scale, width)};
    rec.pixels.push_back(px);
    double& cell = img.at(px.u, px.v);
    cell = std::max(cell, logistic(d));
  }
  return {std::move(img), std::move(rec)};
}

/// 3x3 box filter with zero padding.
inline std::vector<double> mean_filter3(const std::vector<double>& src, std::size_t height,
                                        std::size_t width) {
  std::vector<double> out(src.size(), 0.0);
  for (std::size_t u = 0; u < height; ++u) {
    for (std::size_t v = 0; v < width; ++v) {
      double s = 0.0;
      for (int du = -1; du <= 1; ++du) {
        for (int dv = -1; dv <= 1; ++dv) {
          const auto uu = static_cast<std::ptrdiff_t>(u) + du;
          const auto vv = static_cast<std::ptrdiff_t>(v) + dv;
          if (uu < 0 || vv < 0 || uu >= static_cast<std::ptrdiff_t>(height) ||
              vv >= static_cast<std::ptrdiff_t>(width))
            continue;
          s += src[static_cast<std::size_t>(uu) * width + static_cast<std::size_t>(vv)];
        }
      }
      out[u * width + v] = s / 9.0;
    }
  }
  return out;
}

namespace detail {
inline constexpr double kPiYG[256][3] = {
#include "dvm/detail/piyg_256.inc"
};
}  // namespace detail

/// Diverging pink-green colormap, linear interpolation over a 256-entry table.
inline std::array<double, 3> colormap(double value) {
  const double t = std::clamp(value, 0.0, 1.0) * 255.0;
  const auto i0 = static_cast<std::size_t>(std::floor(t));
  const std::size_t i1 = std::min<std::size_t>(i0 + 1, 255);
  const double f = t - static_cast<double>(i0);
  std::array<double, 3> out{};
  for (int c = 0; c < 3; ++c)
    out[c] = (1.0 - f) * detail::kPiYG[i0][c] + f * detail::kPiYG[i1][c];
  return out;
}

inline ColorImage smooth_and_colorize(const DepthImage& img) {
  const auto filtered = mean_filter3(img.intensity, img.height, img.width);
  ColorImage out{img.height, img.width, std::vector<double>(filtered.size() * 3)};
  for (std::size_t i = 0; i < filtered.size(); ++i) {
    const auto rgb = colormap(filtered[i]);
    for (int c = 0; c < 3; ++c) out.rgb[i * 3 + c] = rgb[c];
  }
  return out;
}

/// Gathers F(u_i, v_i, :) for every recorded point. No interpolation.
inline FeatureMatrix pull_back_features(const FeatureImage& features,
                                        const ProjectionRecord& rec) {
  require(features.height == rec.height && features.width == rec.width,
          "pull_back_features: feature image is " + std::to_string(features.height) + "x" +
              std::to_string(features.width) + " but the projection record is " +
              std::to_string(rec.height) + "x" + std::to_string(rec.width));
  require(features.data.size() == features.height * features.width * features.channels,
          "pull_back_features: feature payload size does not match its header");
  FeatureMatrix out(static_cast<Eigen::Index>(rec.pixels.size()),
                    static_cast<Eigen::Index>(features.channels));
  for (std::size_t i = 0; i < rec.pixels.size(); ++i) {
    const auto [u, v] = rec.pixels[i];
    require(u < rec.height && v < rec.width, "pull_back_features: pixel out of range");
    for (std::size_t c = 0; c < features.channels; ++c)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = features.at(u, v, c);
  }
  return out;
}

/// Concatenates per-view features in the fixed order [z-view, x-view, y-view].
inline FeatureMatrix assemble_visual_features(const FeatureMatrix& fz, const FeatureMatrix& fx,
                                              const FeatureMatrix& fy) {
  require(fz.rows() == fx.rows() && fz.rows() == fy.rows(),
          "assemble_visual_features: point counts differ");
  require(fz.cols() == fx.cols() && fz.cols() == fy.cols(),
          "assemble_visual_features: channel counts differ");
  const Eigen::Index c = fz.cols();
  FeatureMatrix out(fz.rows(), 3 * c);
  out.leftCols(c) = fz;
  out.middleCols(c, c) = fx;
  out.rightCols(c) = fy;
  return out;
}

/// sin/cos(2^k * pi * c) for every coordinate c and band k, laid out
/// coordinate-major, then band, then (sin, cos). 64 bands give 384 columns.
inline FeatureMatrix positional_encoding(std::span<const Vec3> points, std::size_t bands = 64) {
  require(bands >= 1, "positional_encoding: need at least one band");
  FeatureMatrix out(static_cast<Eigen::Index>(points.size()),
                    static_cast<Eigen::Index>(6 * bands));
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      for (std::size_t k = 0; k < bands; ++k) {
        const double arg = std::ldexp(M_PI * points[i][c], static_cast<int>(k));
        const auto col = static_cast<Eigen::Index>(c * 2 * bands + 2 * k);
        out(static_cast<Eigen::Index>(i), col) = std::sin(arg);
        out(static_cast<Eigen::Index>(i), col + 1) = std::cos(arg);
      }
    }
  }
  return out;
}

inline FeatureMatrix positional_encoding(const PointCloud& cloud, std::size_t bands = 64) {
  return positional_encoding(cloud.points(), bands);
}

struct BlendWeights {
  double visual = 1.0;
  double positional = 1.0;
};

/// Columns standardized to zero mean and unit (population) variance.
/// Constant columns become all zeros.
inline FeatureMatrix standardize_columns(const FeatureMatrix& m) {
  FeatureMatrix out(m.rows(), m.cols());
  const double n = static_cast<double>(m.rows());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double mean = m.col(c).sum() / n;
    const double var = (m.col(c).array() - mean).square().sum() / n;
    const double sd = std::sqrt(var);
    if (sd > 1e-12 * std::max(1.0, std::abs(mean)))
      out.col(c) = (m.col(c).array() - mean) / sd;
    else
      out.col(c).setZero();
  }
  return out;
}

/// Fixed blend of the visual block (when present) and the positional block:
/// each block standardized per column, scaled by its weight, then concatenated.
inline FeatureMatrix compose_input_features(const std::optional<FeatureMatrix>& visual,
                                            const FeatureMatrix& positional,
                                            const BlendWeights& weights = {}) {
  if (!visual || visual->cols() == 0) return weights.positional * standardize_columns(positional);
  require(visual->rows() == positional.rows(),
          "compose_input_features: visual has " + std::to_string(visual->rows()) +
              " rows, positional has " + std::to_string(positional.rows()));
  FeatureMatrix out(positional.rows(), visual->cols() + positional.cols());
  out.leftCols(visual->cols()) = weights.visual * standardize_columns(*visual);
  out.rightCols(positional.cols()) = weights.positional * standardize_columns(positional);
  return out;
}

}  // namespace dvm
