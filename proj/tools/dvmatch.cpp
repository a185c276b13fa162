// dvmatch: projection, geodesics, registration and evaluation of point cloud pairs.

#include "dvm/config.hpp"
#include "dvm/eval.hpp"
#include "dvm/io.hpp"
#include "dvm/pipeline.hpp"
#include "dvm/png.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace dvm;

namespace {

struct Options {
  std::string config;
  std::optional<std::string> mode;
  std::optional<std::size_t> seed;
  std::optional<std::size_t> height, width, k;

  std::string cloud, source, target;
  std::string out;
  std::optional<std::string> features_source, features_target;
  std::optional<std::string> geodesics_source, geodesics_target;

  std::string map, gt;
  std::optional<std::string> eval_geodesics;
  std::optional<double> area_scale;
  std::vector<double> eps{0.01};
  std::string format = "text";
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.mode) set_config_value(cfg, "mode", *o.mode);
  if (o.seed) cfg.solver.seed = *o.seed;
  if (o.height) cfg.height = *o.height;
  if (o.width) cfg.width = *o.width;
  if (o.k) cfg.laplacian_k = *o.k;
  cfg.solver.validate();
  require(cfg.height >= 1 && cfg.width >= 1, "image dimensions must be positive");
  return cfg;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

int cmd_project(const Options& o) {
  const auto cfg = resolve_config(o);
  const auto cloud = io::load_cloud(o.cloud);
  const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
  fs::create_directories(dir);
  for (Axis axis : kViewOrder) {
    const auto [img, rec] = project_depth(cloud, axis, cfg.height, cfg.width);
    const std::string stem = axis_name(axis);
    io::write_png(dir / (stem + ".png"), smooth_and_colorize(img));
    io::save_dvpr(dir / (stem + ".dvpr"), rec);
  }
  std::cout << "projected " << cloud.size() << " points to " << dir.string() << " ("
            << cfg.height << "x" << cfg.width << ")\n";
  return 0;
}

int cmd_geodesics(const Options& o) {
  const auto cfg = resolve_config(o);
  const auto cloud = io::load_cloud(o.cloud);
  require(!o.out.empty(), "geodesics: --out is required");
  ensure_parent(o.out);
  io::save_dvgm(o.out, cloud_geodesics(cloud, cfg));
  std::cout << "wrote " << cloud.size() << "x" << cloud.size() << " geodesic matrix to " << o.out
            << "\n";
  return 0;
}

MatchResult run_register(const Options& o, const RunConfig& cfg, const PointCloud& s,
                         const PointCloud& t) {
  MatchInputs in;
  if (o.features_source) in.source_features = *o.features_source;
  if (o.features_target) in.target_features = *o.features_target;
  if (o.geodesics_source) in.source_geodesics = *o.geodesics_source;
  if (o.geodesics_target) in.target_geodesics = *o.geodesics_target;
  auto r = match_pair(s, t, in, cfg);
  for (const auto& n : r.notices) std::cerr << "notice: " << n << "\n";

  const std::string prefix = o.out.empty() ? "dvmatch" : o.out;
  ensure_parent(prefix);
  io::save_index_map(prefix + ".map", r.map);
  io::save_dvtx(prefix + ".dvtx", r.report.transforms);
  std::ofstream log(prefix + ".log");
  if (!log) throw FormatError("cannot write " + prefix + ".log");
  log << "mode " << mode_name(r.report.mode) << "\n";
  for (const auto& n : r.notices) log << "notice: " << n << "\n";
  log << r.report.log();
  log << "converged " << (r.report.converged ? "yes" : "no") << "\n";
  return r;
}

struct MetricRow {
  std::string metric;
  std::string epsilon;
  double value;
};

std::vector<MetricRow> metrics(const Options& o, const DenseMap& map, const GroundTruth& gt,
                               const PointCloud& target) {
  std::vector<MetricRow> rows;
  rows.push_back({"euclidean_error", "-", euclidean_error(map, gt, target)});
  const double d = target.diameter();
  for (double e : o.eps) {
    std::ostringstream es;
    es << e;
    rows.push_back({"accuracy", es.str(), accuracy(map, gt, target, e, d)});
  }
  if (o.eval_geodesics) {
    const auto m = io::load_dvgm(*o.eval_geodesics);
    const double scale = o.area_scale ? *o.area_scale : bbox_diagonal(target);
    rows.push_back({"geodesic_error", "-", geodesic_error(map, gt, m, scale)});
  }
  return rows;
}

void print_metrics(const std::vector<MetricRow>& rows, const std::string& format) {
  std::cout << std::setprecision(9);
  if (format == "tsv") {
    std::cout << "metric\tepsilon\tvalue\n";
    for (const auto& r : rows) std::cout << r.metric << "\t" << r.epsilon << "\t" << r.value << "\n";
    return;
  }
  for (const auto& r : rows) {
    std::string name = r.metric;
    if (r.epsilon != "-") name += "(" + r.epsilon + ")";
    std::cout << std::left << std::setw(20) << name << " " << r.value << "\n";
  }
}

int cmd_register(const Options& o) {
  const auto cfg = resolve_config(o);
  const auto s = io::load_cloud(o.source);
  const auto t = io::load_cloud(o.target);
  const auto r = run_register(o, cfg, s, t);
  std::cout << "registered " << s.size() << " -> " << t.size() << " points in "
            << r.report.history.size() << " rounds, " << std::setprecision(3) << r.report.seconds
            << " s" << (r.report.converged ? " (converged)" : "") << "\n";
  return 0;
}

int cmd_match(const Options& o) {
  const auto cfg = resolve_config(o);
  const auto s = io::load_cloud(o.source);
  const auto t = io::load_cloud(o.target);
  const auto gt = io::load_index_map(o.gt);
  const auto r = run_register(o, cfg, s, t);
  print_metrics(metrics(o, r.map, gt, t), o.format);
  return 0;
}

int cmd_eval(const Options& o) {
  const auto map = io::load_index_map(o.map);
  const auto gt = io::load_index_map(o.gt);
  const auto t = io::load_cloud(o.target);
  print_metrics(metrics(o, map, gt, t), o.format);
  return 0;
}

void add_common(CLI::App* c, Options& o) {
  c->add_option("--config", o.config, "key = value configuration file")->check(CLI::ExistingFile);
  c->add_option("--seed", o.seed, "first farthest-point sample");
}

void add_register_flags(CLI::App* c, Options& o) {
  add_common(c, o);
  c->add_option("source", o.source, "source cloud (.xyz, .ply, .dvpc)")->required();
  c->add_option("target", o.target, "target cloud")->required();
  c->add_option("--mode", o.mode, "full or partial")->check(CLI::IsMember({"full", "partial"}));
  c->add_option("--features-source", o.features_source, "directory with source {z,x,y}.dvfm");
  c->add_option("--features-target", o.features_target, "directory with target {z,x,y}.dvfm");
  c->add_option("--geodesics-source", o.geodesics_source, "DVGM of the source cloud");
  c->add_option("--geodesics-target", o.geodesics_target, "DVGM of the target cloud");
  c->add_option("-k", o.k, "Laplacian neighbors when geodesics are computed");
  c->add_option("--out", o.out, "output prefix for .map, .dvtx and .log");
}

void add_metric_flags(CLI::App* c, Options& o) {
  c->add_option("--geodesics", o.eval_geodesics, "DVGM of the target; adds geodesic_error");
  c->add_option("--area-scale", o.area_scale, "geodesic error normalizer (default bbox diagonal)")
      ->check(CLI::PositiveNumber);
  c->add_option("--eps", o.eps, "accuracy tolerances")->check(CLI::Range(0.0, 1.0));
  c->add_option("--format", o.format, "text or tsv")->check(CLI::IsMember({"text", "tsv"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense correspondence between deformable point clouds"};
  app.require_subcommand(1);
  Options o;

  auto* project = app.add_subcommand("project", "render the three depth views and pixel records");
  add_common(project, o);
  project->add_option("cloud", o.cloud, "input cloud")->required();
  project->add_option("--out", o.out, "output directory");
  project->add_option("--height", o.height, "image rows (default 224)");
  project->add_option("--width", o.width, "image columns (default 224)");

  auto* geodesics = app.add_subcommand("geodesics", "all-pairs heat geodesics as DVGM");
  add_common(geodesics, o);
  geodesics->add_option("cloud", o.cloud, "input cloud")->required();
  geodesics->add_option("--out", o.out, "output .dvgm")->required();
  geodesics->add_option("-k", o.k, "Laplacian neighbors (default 8)");

  auto* reg = app.add_subcommand("register", "register source onto target");
  add_register_flags(reg, o);

  auto* match = app.add_subcommand("match", "register and evaluate against ground truth");
  add_register_flags(match, o);
  match->add_option("--gt", o.gt, "ground truth index file")->required();
  add_metric_flags(match, o);

  auto* eval = app.add_subcommand("eval", "score a map against ground truth");
  eval->add_option("map", o.map, "map index file")->required();
  eval->add_option("gt", o.gt, "ground truth index file")->required();
  eval->add_option("target", o.target, "target cloud")->required();
  add_metric_flags(eval, o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*project) return cmd_project(o);
    if (*geodesics) return cmd_geodesics(o);
    if (*reg) return cmd_register(o);
    if (*match) return cmd_match(o);
    if (*eval) return cmd_eval(o);
  } catch (const std::exception& e) {
    std::cerr << "dvmatch: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
