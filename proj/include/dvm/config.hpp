#pragma once

#include "dvm/common.hpp"
#include "dvm/geodesics.hpp"
#include "dvm/solver.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace dvm {

/// How match_pair brings the two raw clouds into a common frame.
///   independent: each cloud centered and scaled by its own bounding box
///   shared:      both use the target's record (keeps a crop at the target's scale)
///   automatic:   independent in full mode, shared in partial mode
enum class Normalization { Automatic, Independent, Shared };

struct RunConfig {
  SolverConfig solver{};
  std::size_t height = 224;
  std::size_t width = 224;
  std::size_t laplacian_k = 8;
  HeatOptions heat{};
  bool compute_geodesics = true;
  Normalization normalization = Normalization::Automatic;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw InvalidArgument("config: " + key + " expects a nonnegative integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(out))
    throw InvalidArgument("config: " + key + " expects a finite number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InvalidArgument("config: " + key + " expects true or false, got '" + v + "'");
}

inline MatchMode parse_mode(const std::string& v) {
  if (v == "full") return MatchMode::Full;
  if (v == "partial") return MatchMode::Partial;
  throw InvalidArgument("config: mode must be full or partial, got '" + v + "'");
}

inline Normalization parse_normalization(const std::string& v) {
  if (v == "auto") return Normalization::Automatic;
  if (v == "independent") return Normalization::Independent;
  if (v == "shared") return Normalization::Shared;
  throw InvalidArgument("config: normalization must be auto, independent or shared, got '" + v +
                        "'");
}

inline const char* normalization_name(Normalization n) {
  switch (n) {
    case Normalization::Independent: return "independent";
    case Normalization::Shared: return "shared";
    default: return "auto";
  }
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace config_detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// Every accepted key with its setter and current-value printer.
inline const std::vector<ConfigKey>& config_schema() {
  using namespace config_detail;
  auto count = [](std::string n, std::string help, auto member) {
    return ConfigKey{n, std::move(help),
                     [n, member](RunConfig& c, const std::string& v) { member(c) = parse_count(n, v); },
                     [member](const RunConfig& c) {
                       return std::to_string(member(const_cast<RunConfig&>(c)));
                     }};
  };
  auto real = [](std::string n, std::string help, auto member) {
    return ConfigKey{n, std::move(help),
                     [n, member](RunConfig& c, const std::string& v) { member(c) = parse_real(n, v); },
                     [member](const RunConfig& c) { return fmt(member(const_cast<RunConfig&>(c))); }};
  };
  auto flag = [](std::string n, std::string help, auto member) {
    return ConfigKey{n, std::move(help),
                     [n, member](RunConfig& c, const std::string& v) { member(c) = parse_bool(n, v); },
                     [member](const RunConfig& c) {
                       return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false");
                     }};
  };
  static const std::vector<ConfigKey> schema = {
      count("outer_iters", "correspondence refresh rounds", [](RunConfig& c) -> auto& { return c.solver.outer_iters; }),
      count("inner_iters", "optimizer steps per round", [](RunConfig& c) -> auto& { return c.solver.inner_iters; }),
      real("step_size", "initial step multiplier", [](RunConfig& c) -> auto& { return c.solver.step_size; }),
      real("step_decay", "per-round step decay", [](RunConfig& c) -> auto& { return c.solver.step_decay; }),
      real("lambda_deform", "chamfer weight", [](RunConfig& c) -> auto& { return c.solver.weights.deform; }),
      real("lambda_arap", "rigidity weight", [](RunConfig& c) -> auto& { return c.solver.weights.arap; }),
      real("lambda_smooth", "correspondence smoothness weight", [](RunConfig& c) -> auto& { return c.solver.weights.smooth; }),
      real("lambda_geo", "geodesic similarity weight", [](RunConfig& c) -> auto& { return c.solver.weights.geo; }),
      count("top_n", "soft correspondence entries per row", [](RunConfig& c) -> auto& { return c.solver.top_n; }),
      real("temperature", "softmax temperature", [](RunConfig& c) -> auto& { return c.solver.temperature; }),
      ConfigKey{"mode", "full or partial",
                [](RunConfig& c, const std::string& v) { c.solver.mode = parse_mode(v); },
                [](const RunConfig& c) { return std::string(mode_name(c.solver.mode)); }},
      flag("fd_check", "finite-difference gradient check per round", [](RunConfig& c) -> auto& { return c.solver.fd_check; }),
      count("seed", "first farthest-point sample", [](RunConfig& c) -> auto& { return c.solver.seed; }),
      count("node_count", "deformation nodes (0 = half the points)", [](RunConfig& c) -> auto& { return c.solver.graph.node_count; }),
      count("k_node", "node neighbors", [](RunConfig& c) -> auto& { return c.solver.graph.k_node; }),
      count("k_skin", "nodes blended per point", [](RunConfig& c) -> auto& { return c.solver.graph.k_skin; }),
      count("pe_bands", "positional encoding frequencies", [](RunConfig& c) -> auto& { return c.solver.pe_bands; }),
      real("blend_visual", "visual feature block weight", [](RunConfig& c) -> auto& { return c.solver.blend.visual; }),
      real("blend_positional", "positional block weight", [](RunConfig& c) -> auto& { return c.solver.blend.positional; }),
      count("geo_k", "neighbors in the geodesic similarity term", [](RunConfig& c) -> auto& { return c.solver.geo_k; }),
      real("convergence_tol", "relative decrease that stops the solver", [](RunConfig& c) -> auto& { return c.solver.convergence_tol; }),
      real("damping", "Levenberg-Marquardt damping", [](RunConfig& c) -> auto& { return c.solver.damping; }),
      real("inner_tol", "relative gain that ends a round early", [](RunConfig& c) -> auto& { return c.solver.inner_tol; }),
      real("arap_anneal_start", "initial rigidity multiplier", [](RunConfig& c) -> auto& { return c.solver.arap_anneal_start; }),
      real("arap_anneal_rate", "rigidity multiplier decay", [](RunConfig& c) -> auto& { return c.solver.arap_anneal_rate; }),
      real("arap_anneal_tol", "round gain below which rigidity relaxes", [](RunConfig& c) -> auto& { return c.solver.arap_anneal_tol; }),
      count("height", "projection image rows", [](RunConfig& c) -> auto& { return c.height; }),
      count("width", "projection image columns", [](RunConfig& c) -> auto& { return c.width; }),
      count("laplacian_k", "neighbors of the geodesic Laplacian", [](RunConfig& c) -> auto& { return c.laplacian_k; }),
      real("heat_time", "heat time multiplier", [](RunConfig& c) -> auto& { return c.heat.time_multiplier; }),
      real("gradient_cutoff", "relative cutoff of the gradient fit", [](RunConfig& c) -> auto& { return c.heat.gradient_cutoff; }),
      flag("compute_geodesics", "compute geodesics when lambda_geo > 0", [](RunConfig& c) -> auto& { return c.compute_geodesics; }),
      ConfigKey{"normalization", "auto, independent or shared",
                [](RunConfig& c, const std::string& v) { c.normalization = parse_normalization(v); },
                [](const RunConfig& c) { return std::string(normalization_name(c.normalization)); }},
  };
  return schema;
}

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::string nearest_key(std::string_view key) {
  std::string best;
  std::size_t best_d = std::numeric_limits<std::size_t>::max();
  for (const auto& k : config_schema()) {
    const auto d = edit_distance(key, k.name);
    if (d < best_d) {
      best_d = d;
      best = k.name;
    }
  }
  return best;
}

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : config_schema()) {
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  }
  throw InvalidArgument("config: unknown key '" + key + "' (did you mean '" + nearest_key(key) +
                        "'?)");
}

/// key = value per line; '#' starts a comment. Later keys override earlier ones.
inline RunConfig parse_config(std::istream& in, RunConfig cfg = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto body = config_detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = config_detail::trim(std::string_view(body).substr(0, eq));
    const auto value = config_detail::trim(std::string_view(body).substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.solver.validate();
  require(cfg.height >= 1 && cfg.width >= 1, "config: image dimensions must be positive");
  require(cfg.heat.time_multiplier > 0.0, "config: heat_time must be positive");
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  return parse_config(in, std::move(cfg));
}

inline std::string dump_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& k : config_schema()) os << k.name << " = " << k.get(cfg) << "\n";
  return os.str();
}

}  // namespace dvm
