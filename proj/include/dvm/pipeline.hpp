#pragma once

#include "dvm/config.hpp"
#include "dvm/geodesics.hpp"
#include "dvm/io.hpp"
#include "dvm/projection.hpp"
#include "dvm/solver.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dvm {

/// Inputs of match_pair beyond the two clouds.
struct MatchInputs {
  std::optional<std::filesystem::path> source_features;  // directory with {z,x,y}.dvfm
  std::optional<std::filesystem::path> target_features;
  std::optional<std::filesystem::path> source_geodesics;  // DVGM over the raw source
  std::optional<std::filesystem::path> target_geodesics;
};

struct MatchResult {
  DenseMap map;
  SolveReport report;
  NormalizationRecord source_normalization;
  NormalizationRecord target_normalization;
  std::vector<std::string> notices;
};

/// Per-point visual features from the three view feature maps in `dir`.
/// Pixel records come from {axis}.dvpr when present, otherwise the cloud is
/// projected at the feature map resolution. Returns nullopt with a notice when
/// any map is missing.
inline std::optional<FeatureMatrix> load_visual_features(const std::filesystem::path& dir,
                                                         const PointCloud& cloud,
                                                         std::vector<std::string>& notices) {
  std::array<FeatureMatrix, 3> views;
  for (std::size_t a = 0; a < 3; ++a) {
    const Axis axis = kViewOrder[a];
    const auto fm_path = dir / (std::string(axis_name(axis)) + ".dvfm");
    if (!std::filesystem::exists(fm_path)) {
      notices.push_back("feature map " + fm_path.string() +
                        " not found; using positional encoding only");
      return std::nullopt;
    }
    const FeatureImage fm = io::load_dvfm(fm_path);
    ProjectionRecord rec;
    const auto pr_path = dir / (std::string(axis_name(axis)) + ".dvpr");
    if (std::filesystem::exists(pr_path)) {
      rec.height = fm.height;
      rec.width = fm.width;
      rec.axis = axis;
      rec.pixels = io::load_dvpr(pr_path);
    } else {
      rec = project_depth(cloud, axis, fm.height, fm.width).second;
    }
    require(rec.pixels.size() == cloud.size(),
            "features: " + pr_path.string() + " has " + std::to_string(rec.pixels.size()) +
                " pixels for a cloud of " + std::to_string(cloud.size()) + " points");
    views[a] = pull_back_features(fm, rec);
  }
  return assemble_visual_features(views[0], views[1], views[2]);
}

inline GeodesicMatrix cloud_geodesics(const PointCloud& cloud, const RunConfig& cfg) {
  const auto lap = build_laplacian(cloud, cfg.laplacian_k);
  return heat_geodesics(lap, cloud, {}, cfg.heat);
}

/// End-to-end registration of two raw clouds. The map is indexed by raw
/// source order and holds raw target indices.
inline MatchResult match_pair(const PointCloud& source_raw, const PointCloud& target_raw,
                              const MatchInputs& inputs, const RunConfig& cfg) {
  MatchResult out;
  Normalization norm = cfg.normalization;
  if (norm == Normalization::Automatic)
    norm = cfg.solver.mode == MatchMode::Full ? Normalization::Independent : Normalization::Shared;

  auto [target, trec] = normalize_cloud(target_raw);
  PointCloud source;
  NormalizationRecord srec;
  if (norm == Normalization::Shared) {
    srec = trec;
    source = trec.apply(source_raw);
  } else {
    std::tie(source, srec) = normalize_cloud(source_raw);
  }
  out.source_normalization = srec;
  out.target_normalization = trec;

  std::optional<FeatureMatrix> fs, ft;
  if (inputs.source_features) fs = load_visual_features(*inputs.source_features, source_raw, out.notices);
  if (inputs.target_features) ft = load_visual_features(*inputs.target_features, target_raw, out.notices);
  if (fs.has_value() != ft.has_value()) {
    if (fs || ft)
      out.notices.push_back("visual features available on one side only; using positional encoding only");
    fs.reset();
    ft.reset();
  }

  std::optional<GeodesicMatrix> ms, mt;
  if (cfg.solver.weights.geo > 0.0) {
    auto obtain = [&](const std::optional<std::filesystem::path>& file, const PointCloud& cloud,
                      double scale, const char* which) {
      if (file) {
        auto m = io::load_dvgm(*file);
        require(static_cast<std::size_t>(m.size()) == cloud.size(),
                std::string("match: ") + which + " geodesic matrix size does not match the cloud");
        // Stored over the raw cloud; rescale into the normalized frame.
        m.distances /= scale;
        return m;
      }
      if (!cfg.compute_geodesics)
        throw InvalidArgument(std::string("match: lambda_geo > 0 but no ") + which +
                              " geodesic matrix was supplied and geodesic computation is disabled");
      return cloud_geodesics(cloud, cfg);
    };
    ms = obtain(inputs.source_geodesics, source, srec.scale, "source");
    if (cfg.solver.mode == MatchMode::Full) mt = obtain(inputs.target_geodesics, target, trec.scale, "target");
  }

  out.report = register_clouds(source, target, fs ? &*fs : nullptr, ft ? &*ft : nullptr,
                               GeodesicInputs{ms ? &*ms : nullptr, mt ? &*mt : nullptr}, cfg.solver);
  out.map = out.report.map;
  return out;
}

}  // namespace dvm
