#pragma once

#include "dvm/common.hpp"
#include "dvm/deformation.hpp"
#include "dvm/geodesics.hpp"
#include "dvm/geometry.hpp"
#include "dvm/matching.hpp"
#include "dvm/projection.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace dvm {

/// Nearest-neighbour assignments held fixed while X is optimized.
/// `target_to_source` is empty in partial mode.
struct FrozenAssignments {
  std::vector<std::size_t> source_to_target;
  std::vector<std::size_t> target_to_source;
};

inline FrozenAssignments freeze_assignments(std::span<const Vec3> deformed,
                                            std::span<const Vec3> target, MatchMode mode) {
  FrozenAssignments a;
  a.source_to_target = nearest_indices(deformed, target);
  if (mode == MatchMode::Full) a.target_to_source = nearest_indices(target, deformed);
  return a;
}

/// lambda_deform * L_deform + lambda_arap * L_arap as a function of X, with the
/// chamfer nearest-neighbour assignments frozen. L_smooth and L_geo do not
/// depend on X and are left out.
class FrozenObjective {
 public:
  FrozenObjective(const DeformationGraph& graph, const PointCloud& source,
                  const PointCloud& target, FrozenAssignments assignments,
                  const LossWeights& weights, MatchMode mode)
      : graph_(&graph),
        source_(&source),
        target_(&target),
        assign_(std::move(assignments)),
        weights_(weights),
        mode_(mode) {
    require(source.size() == graph.point_count(), "objective: source does not match the graph");
    require(assign_.source_to_target.size() == source.size(),
            "objective: source assignments have the wrong size");
    for (auto j : assign_.source_to_target)
      require(j < target.size(), "objective: assignment out of range");
    if (mode == MatchMode::Full) {
      require(assign_.target_to_source.size() == target.size(),
              "objective: target assignments have the wrong size");
      for (auto i : assign_.target_to_source)
        require(i < source.size(), "objective: assignment out of range");
    }
  }

  const DeformationGraph& graph() const { return *graph_; }
  const LossWeights& weights() const { return weights_; }
  MatchMode mode() const { return mode_; }

  struct Terms {
    double deform = 0.0;  // frozen chamfer
    double arap = 0.0;
    double value = 0.0;   // weighted sum
  };

  Terms terms(const TransformSet& x) const {
    check_shapes(*graph_, x);
    const auto rot = node_rotations(x);
    const auto moved = deform_points(*graph_, x, source_->points(), rot);
    Terms t;
    const auto& tgt = *target_;
    double s = 0.0;
    for (std::size_t i = 0; i < moved.size(); ++i)
      s += (moved[i] - tgt[assign_.source_to_target[i]]).squaredNorm();
    t.deform = s / static_cast<double>(moved.size());
    if (mode_ == MatchMode::Full) {
      double r = 0.0;
      for (std::size_t j = 0; j < tgt.size(); ++j)
        r += (tgt[j] - moved[assign_.target_to_source[j]]).squaredNorm();
      t.deform += r / static_cast<double>(tgt.size());
    }
    t.arap = arap_from(x, rot);
    t.value = weights_.deform * t.deform + weights_.arap * t.arap;
    return t;
  }

  double value(const TransformSet& x) const { return terms(x).value; }

  /// Analytic gradient, packed as [theta_h (6), delta_h (3)] per node.
  Eigen::VectorXd gradient(const TransformSet& x) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(9 * x.size()));
    accumulate(x, g);
    return 2.0 * g;
  }

  /// 6x6 blocks of J^T J over the fixed node-pair pattern (skin cliques and
  /// graph edges) in the tangent parametrization [omega_h (3), delta_h (3)].
  /// Block (hi, lo) holds rows of node hi, columns of node lo.
  struct Blocks {
    using Block = Eigen::Matrix<double, 6, 6>;
    std::unordered_map<std::uint64_t, std::size_t> id;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (hi, lo), hi >= lo
    std::vector<Block> value;

    static std::uint64_t key(std::size_t hi, std::size_t lo) {
      return (static_cast<std::uint64_t>(hi) << 32) | static_cast<std::uint64_t>(lo);
    }
    std::size_t insert(std::size_t a, std::size_t b) {
      const auto hi = std::max(a, b), lo = std::min(a, b);
      auto [it, fresh] = id.emplace(key(hi, lo), pairs.size());
      if (fresh) pairs.emplace_back(hi, lo);
      return it->second;
    }
    std::size_t at(std::size_t a, std::size_t b) const {
      return id.at(key(std::max(a, b), std::min(a, b)));
    }
    void clear() { value.assign(pairs.size(), Block::Zero()); }
    /// Adds c * Ja^T Jb at the pair (a, b), transposing into canonical orientation.
    template <typename JA, typename JB>
    void add(std::size_t a, std::size_t b, const JA& ja, const JB& jb, double c) {
      auto& blk = value[at(a, b)];
      if (a >= b)
        blk.noalias() += c * ja.transpose() * jb;
      else
        blk.noalias() += c * jb.transpose() * ja;
    }
  };

  /// Gauss-Newton system for the left-multiplied update R_h <- exp([omega_h]x) R_h,
  /// delta_h <- delta_h + d_h. Fills `blocks` with J^T J and returns J^T r.
  Eigen::VectorXd tangent_normal_equations(const TransformSet& x, Blocks& blocks) const {
    check_shapes(*graph_, x);
    const auto& g = *graph_;
    const auto& src = *source_;
    const auto rot = node_rotations(x);
    const auto moved = deform_points(g, x, src.points(), rot);
    std::vector<double> coef;
    std::vector<Vec3> resid;
    data_residuals(moved, coef, resid);

    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(6 * x.size()));
    std::vector<TJac> jac;
    for (std::size_t i = 0; i < src.size(); ++i) {
      const auto& sk = g.skin[i];
      jac.resize(sk.size());
      for (std::size_t a = 0; a < sk.size(); ++a) {
        const auto [h, w] = sk[a];
        jac[a].leftCols<3>() = -w * skew(rot[h] * (src[i] - g.nodes[h]));
        jac[a].rightCols<3>() = w * Mat3::Identity();
        rhs.segment<6>(static_cast<Eigen::Index>(6 * h)) += jac[a].transpose() * resid[i];
      }
      for (std::size_t a = 0; a < sk.size(); ++a)
        for (std::size_t b = 0; b <= a; ++b)
          blocks.add(sk[a].node, sk[b].node, jac[a], jac[b], coef[i]);
    }

    const std::size_t edges = g.directed_edge_count();
    if (edges == 0) return rhs;
    const double c = weights_.arap / static_cast<double>(edges);
    TJac jh, jl;
    jl.setZero();
    jl.rightCols<3>() = -Mat3::Identity();
    for (std::size_t h = 0; h < g.node_count(); ++h) {
      for (auto l : g.node_neighbors[h]) {
        const Vec3 e = g.nodes[l] - g.nodes[h];
        const Vec3 re = rot[h] * e;
        const Vec3 d = re - e + x.delta(h) - x.delta(l);
        jh.leftCols<3>() = -skew(re);
        jh.rightCols<3>() = Mat3::Identity();
        rhs.segment<6>(static_cast<Eigen::Index>(6 * h)) += c * jh.transpose() * d;
        rhs.segment<6>(static_cast<Eigen::Index>(6 * l)) += c * jl.transpose() * d;
        blocks.add(h, h, jh, jh, c);
        blocks.add(l, l, jl, jl, c);
        blocks.add(h, l, jh, jl, c);
      }
    }
    return rhs;
  }

  Blocks make_blocks() const {
    Blocks b;
    for (std::size_t h = 0; h < graph_->node_count(); ++h) b.insert(h, h);
    for (const auto& sk : graph_->skin)
      for (const auto& p : sk)
        for (const auto& q : sk) b.insert(p.node, q.node);
    for (std::size_t h = 0; h < graph_->node_count(); ++h)
      for (auto l : graph_->node_neighbors[h]) b.insert(h, l);
    b.clear();
    return b;
  }

 private:
  using Jac = Eigen::Matrix<double, 3, 9>;

  double arap_from(const TransformSet& x, const std::vector<Mat3>& rot) const {
    const auto& g = *graph_;
    const std::size_t edges = g.directed_edge_count();
    if (edges == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t h = 0; h < g.node_count(); ++h)
      for (auto l : g.node_neighbors[h]) {
        const Vec3 e = g.nodes[l] - g.nodes[h];
        sum += (rot[h] * e - e + x.delta(h) - x.delta(l)).squaredNorm();
      }
    return sum / static_cast<double>(edges);
  }

  using TJac = Eigen::Matrix<double, 3, 6>;

  static Mat3 skew(const Vec3& v) {
    Mat3 k;
    k << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return k;
  }

  /// Per source point: combined weight and residual of every data term touching it.
  void data_residuals(const std::vector<Vec3>& moved, std::vector<double>& coef,
                      std::vector<Vec3>& resid) const {
    const auto& tgt = *target_;
    const double n = static_cast<double>(moved.size());
    const double m = static_cast<double>(tgt.size());
    coef.assign(moved.size(), weights_.deform / n);
    resid.resize(moved.size());
    for (std::size_t i = 0; i < moved.size(); ++i)
      resid[i] = (weights_.deform / n) * (moved[i] - tgt[assign_.source_to_target[i]]);
    if (mode_ == MatchMode::Full) {
      for (std::size_t j = 0; j < tgt.size(); ++j) {
        const auto i = assign_.target_to_source[j];
        coef[i] += weights_.deform / m;
        resid[i] += (weights_.deform / m) * (moved[i] - tgt[j]);
      }
    }
  }

  /// Half the gradient over [theta_h (6), delta_h (3)].
  void accumulate(const TransformSet& x, Eigen::VectorXd& grad) const {
    check_shapes(*graph_, x);
    const auto& g = *graph_;
    const auto& src = *source_;
    const auto rot = node_rotations(x);
    std::vector<std::array<Mat3, 6>> drot(x.size());
    for (std::size_t h = 0; h < x.size(); ++h) drot[h] = rotation_6d_jacobian(x.theta(h));
    const auto moved = deform_points(g, x, src.points(), rot);
    std::vector<double> coef;
    std::vector<Vec3> resid;
    data_residuals(moved, coef, resid);

    Jac jac;
    for (std::size_t i = 0; i < src.size(); ++i) {
      for (const auto& [h, w] : g.skin[i]) {
        const Vec3 local = src[i] - g.nodes[h];
        for (int k = 0; k < 6; ++k) jac.col(k) = w * (drot[h][k] * local);
        jac.rightCols<3>() = w * Mat3::Identity();
        grad.segment<9>(static_cast<Eigen::Index>(9 * h)) += jac.transpose() * resid[i];
      }
    }

    const std::size_t edges = g.directed_edge_count();
    if (edges == 0) return;
    const double c = weights_.arap / static_cast<double>(edges);
    Jac jh;
    for (std::size_t h = 0; h < g.node_count(); ++h) {
      for (auto l : g.node_neighbors[h]) {
        const Vec3 e = g.nodes[l] - g.nodes[h];
        const Vec3 d = rot[h] * e - e + x.delta(h) - x.delta(l);
        for (int k = 0; k < 6; ++k) jh.col(k) = drot[h][k] * e;
        jh.rightCols<3>() = Mat3::Identity();
        grad.segment<9>(static_cast<Eigen::Index>(9 * h)) += c * jh.transpose() * d;
        grad.segment<3>(static_cast<Eigen::Index>(9 * l + 6)) -= c * d;
      }
    }
  }

  const DeformationGraph* graph_;
  const PointCloud* source_;
  const PointCloud* target_;
  FrozenAssignments assign_;
  LossWeights weights_;
  MatchMode mode_;
};

/// Gradient of lambda_deform * L_deform + lambda_arap * L_arap with respect to
/// every theta and delta entry (packed per node), under frozen assignments.
inline Eigen::VectorXd loss_gradient(const DeformationGraph& graph, const TransformSet& x,
                                     const PointCloud& source, const PointCloud& target,
                                     const FrozenAssignments& assignments,
                                     const LossWeights& weights, MatchMode mode) {
  return FrozenObjective(graph, source, target, assignments, weights, mode).gradient(x);
}

/// Central differences of the frozen objective over the packed parameters.
inline Eigen::VectorXd finite_difference_gradient(const FrozenObjective& f, const TransformSet& x,
                                                  double step = 1e-5) {
  Eigen::VectorXd p = x.pack();
  Eigen::VectorXd out(p.size());
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const double keep = p[k];
    p[k] = keep + step;
    const double fp = f.value(TransformSet::unpack(p));
    p[k] = keep - step;
    const double fm = f.value(TransformSet::unpack(p));
    p[k] = keep;
    out[k] = (fp - fm) / (2.0 * step);
  }
  return out;
}

/// Largest componentwise violation of |a - b| <= rel * max(|a|, |b|) + abs,
/// expressed as |a - b| / (rel * max(|a|, |b|) + abs); <= 1 means agreement.
inline double gradient_mismatch(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric,
                                double rel = 1e-4, double abs = 1e-8) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < analytic.size(); ++k) {
    const double tol = rel * std::max(std::abs(analytic[k]), std::abs(numeric[k])) + abs;
    worst = std::max(worst, std::abs(analytic[k] - numeric[k]) / tol);
  }
  return worst;
}

struct SolverConfig {
  std::size_t outer_iters = 30;
  std::size_t inner_iters = 25;
  double step_size = 1.0;
  double step_decay = 0.97;
  LossWeights weights{};
  std::size_t top_n = kDefaultTopN;
  double temperature = 0.07;
  MatchMode mode = MatchMode::Full;
  bool fd_check = false;
  std::size_t seed = 0;

  GraphOptions graph{};
  BlendWeights blend{};
  std::size_t pe_bands = 64;
  std::size_t geo_k = kDefaultTopN;
  double convergence_tol = 1e-6;
  double damping = 1e-4;
  double inner_tol = 1e-4;          // relative gain that ends a round early
  // Stiffness schedule: lambda_arap starts multiplied by arap_anneal_start and
  // the multiplier shrinks by arap_anneal_rate (floored at 1) whenever a round
  // lowers the stiffened objective by less than arap_anneal_tol (relative).
  double arap_anneal_start = 1000;
  double arap_anneal_rate = 0.1;
  double arap_anneal_tol = 5e-2;

  void validate() const {
    require(outer_iters >= 1 && inner_iters >= 1, "solver: iteration counts must be >= 1");
    require(step_size > 0.0, "solver: step_size must be positive");
    require(step_decay > 0.0 && step_decay <= 1.0, "solver: step_decay must lie in (0, 1]");
    require(temperature > 0.0, "solver: temperature must be positive");
    require(top_n >= 1, "solver: top_n must be at least 1");
    require(weights.deform >= 0 && weights.arap >= 0 && weights.smooth >= 0 && weights.geo >= 0,
            "solver: loss weights must be nonnegative");
    require(damping >= 0.0, "solver: damping must be nonnegative");
    require(inner_tol >= 0.0, "solver: inner_tol must be nonnegative");
    require(arap_anneal_start >= 1.0, "solver: arap_anneal_start must be at least 1");
    require(arap_anneal_rate > 0.0 && arap_anneal_rate <= 1.0,
            "solver: arap_anneal_rate must lie in (0, 1]");
    require(arap_anneal_tol >= 0.0, "solver: arap_anneal_tol must be nonnegative");
  }
};

struct IterationLog {
  std::size_t iteration = 0;
  LossBreakdown loss;   // summed over the optimized directions
  double objective = 0.0;  // lambda_deform * L_deform + lambda_arap * L_arap
  double step = 0.0;
  double stiffness = 1.0;  // lambda_arap multiplier of this round
  std::size_t accepted_steps = 0;
  // Per direction: frozen objective at the start of the round, then after
  // every accepted step.
  std::vector<std::vector<double>> frozen_values;
};

struct SolveReport {
  TransformSet transforms;                  // S -> T
  std::optional<TransformSet> reverse;      // T -> S (full mode)
  DeformationGraph graph;
  DenseMap map;
  std::vector<IterationLog> history;
  std::vector<double> gradient_checks;  // mismatch ratio per outer iteration (fd_check)
  bool converged = false;
  double seconds = 0.0;
  MatchMode mode = MatchMode::Full;
  double initial_deform = 0.0;  // L_deform at the identity, S -> T direction

  bool gradient_checks_pass() const {
    for (double v : gradient_checks)
      if (!(v <= 1.0)) return false;
    return true;
  }

  /// One line per outer iteration.
  std::string log() const {
    std::ostringstream os;
    os.precision(9);
    const char* deform_name = mode == MatchMode::Full ? "L_deform" : "L_deform_unilateral";
    for (const auto& it : history) {
      os << "iter " << it.iteration << ": " << deform_name << "=" << it.loss.deform
         << " L_arap=" << it.loss.arap << " L_smooth=" << it.loss.smooth
         << " L_geo=" << it.loss.geo << " total=" << it.loss.total << "\n";
    }
    return os.str();
  }
};

/// Geodesic matrices available to the geometric-similarity term.
struct GeodesicInputs {
  const GeodesicMatrix* source = nullptr;
  const GeodesicMatrix* target = nullptr;
};

namespace detail {

/// Sparse Gauss-Newton system on the fixed block pattern of one objective.
class NormalSystem {
 public:
  explicit NormalSystem(const FrozenObjective& f) : blocks_(f.make_blocks()) {
    const std::size_t m = f.graph().node_count();
    dim_ = static_cast<Eigen::Index>(6 * m);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(blocks_.pairs.size() * 36);
    for (const auto& [hi, lo] : blocks_.pairs)
      for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 6; ++c) {
          const auto row = static_cast<int>(6 * hi + r), col = static_cast<int>(6 * lo + c);
          if (row >= col) trip.emplace_back(row, col, 1.0);
        }
    matrix_.resize(dim_, dim_);
    matrix_.setFromTriplets(trip.begin(), trip.end());
    matrix_.makeCompressed();
    offsets_.resize(blocks_.pairs.size());
    for (std::size_t b = 0; b < blocks_.pairs.size(); ++b) {
      const auto [hi, lo] = blocks_.pairs[b];
      for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 6; ++c) {
          const auto row = static_cast<Eigen::Index>(6 * hi + r);
          const auto col = static_cast<Eigen::Index>(6 * lo + c);
          offsets_[b][r * 6 + c] = row >= col ? find(row, col) : -1;
        }
    }
    diag_.resize(static_cast<std::size_t>(dim_));
    for (Eigen::Index d = 0; d < dim_; ++d) diag_[static_cast<std::size_t>(d)] = find(d, d);
    solver_.analyzePattern(matrix_);
  }

  /// Solves (J^T J + damping * diag + eps) step = -J^T r in the tangent
  /// parametrization [omega_h, d_h] per node.
  Eigen::VectorXd step(const FrozenObjective& f, const TransformSet& x, double damping) {
    blocks_.clear();
    const Eigen::VectorXd rhs = f.tangent_normal_equations(x, blocks_);
    double* val = matrix_.valuePtr();
    std::fill(val, val + matrix_.nonZeros(), 0.0);
    for (std::size_t b = 0; b < blocks_.pairs.size(); ++b) {
      const auto& blk = blocks_.value[b];
      for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 6; ++c) {
          const auto off = offsets_[b][r * 6 + c];
          if (off >= 0) val[off] += blk(r, c);
        }
    }
    double mean_diag = 0.0;
    for (auto off : diag_) mean_diag += val[off];
    mean_diag /= static_cast<double>(diag_.size());
    const double eps = 1e-9 * std::max(mean_diag, 1e-300);
    for (auto off : diag_) val[off] += damping * val[off] + eps;
    solver_.factorize(matrix_);
    if (solver_.info() != Eigen::Success)
      throw NumericalError("solver: Gauss-Newton system factorization failed");
    return solver_.solve(-rhs);
  }

 private:
  std::ptrdiff_t find(Eigen::Index row, Eigen::Index col) const {
    const auto* outer = matrix_.outerIndexPtr();
    const auto* inner = matrix_.innerIndexPtr();
    const auto* lo = inner + outer[col];
    const auto* hi = inner + outer[col + 1];
    const auto* it = std::lower_bound(lo, hi, static_cast<int>(row));
    return it - inner;
  }

  FrozenObjective::Blocks blocks_;
  Eigen::Index dim_ = 0;
  Eigen::SparseMatrix<double> matrix_;  // lower triangle, column-major
  std::vector<std::array<std::ptrdiff_t, 36>> offsets_;
  std::vector<std::ptrdiff_t> diag_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower> solver_;

};

/// Applies a scaled tangent step: R_h <- exp([alpha omega_h]x) R_h, delta_h += alpha d_h.
/// Rotations come back in canonical 6D form.
inline TransformSet retract(const TransformSet& x, const Eigen::VectorXd& step, double alpha) {
  TransformSet out = x;
  for (std::size_t h = 0; h < x.size(); ++h) {
    const auto k = static_cast<Eigen::Index>(6 * h);
    const Vec3 omega = alpha * step.segment<3>(k);
    const double angle = omega.norm();
    Mat3 r = rotation_from_6d(x.theta(h));
    if (angle > 0.0) r = Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix() * r;
    out.rotation.row(static_cast<Eigen::Index>(h)) = rotation_to_6d(r).transpose();
    out.translation.row(static_cast<Eigen::Index>(h)) += alpha * step.segment<3>(k + 3).transpose();
  }
  return out;
}

/// One registration direction (source deformed toward target).
struct Direction {
  const PointCloud* source = nullptr;
  const PointCloud* target = nullptr;
  const FeatureMatrix* source_visual = nullptr;
  const FeatureMatrix* target_visual = nullptr;
  const GeodesicMatrix* source_geodesics = nullptr;
  DeformationGraph graph;
  TransformSet x;
  std::unique_ptr<NormalSystem> system;
};

inline FeatureMatrix blended(const FeatureMatrix* visual, std::span<const Vec3> positions,
                             const SolverConfig& cfg) {
  std::optional<FeatureMatrix> vis;
  if (visual && visual->cols() > 0) vis = *visual;
  return compose_input_features(vis, positional_encoding(positions, cfg.pe_bands), cfg.blend);
}

}  // namespace detail

/// Alternating registration: per outer iteration, refresh soft correspondences
/// (positional block evaluated at the current deformed positions) and the
/// frozen chamfer assignments, then take damped Gauss-Newton steps on X with
/// step halving until the frozen objective does not increase.
inline SolveReport register_clouds(const PointCloud& source, const PointCloud& target,
                                   const FeatureMatrix* source_visual,
                                   const FeatureMatrix* target_visual,
                                   GeodesicInputs geodesics, const SolverConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  if (source_visual && source_visual->cols() > 0)
    require(static_cast<std::size_t>(source_visual->rows()) == source.size(),
            "register: source features do not match the source cloud");
  if (target_visual && target_visual->cols() > 0)
    require(static_cast<std::size_t>(target_visual->rows()) == target.size(),
            "register: target features do not match the target cloud");
  if (source_visual && target_visual && source_visual->cols() > 0 && target_visual->cols() > 0)
    require(source_visual->cols() == target_visual->cols(),
            "register: source and target feature widths differ");
  if (geodesics.source)
    require(static_cast<std::size_t>(geodesics.source->size()) == source.size() &&
                geodesics.source->distances.rows() == geodesics.source->distances.cols(),
            "register: source geodesic matrix does not match the source cloud");
  if (geodesics.target)
    require(static_cast<std::size_t>(geodesics.target->size()) == target.size() &&
                geodesics.target->distances.rows() == geodesics.target->distances.cols(),
            "register: target geodesic matrix does not match the target cloud");

  GraphOptions gopts = cfg.graph;
  gopts.seed = cfg.seed;

  std::vector<detail::Direction> dirs;
  {
    detail::Direction d;
    d.source = &source;
    d.target = &target;
    d.source_visual = source_visual;
    d.target_visual = target_visual;
    d.source_geodesics = cfg.weights.geo > 0 ? geodesics.source : nullptr;
    require(gopts.seed < source.size(), "register: seed index out of range");
    d.graph = build_deformation_graph(source, gopts);
    d.x = TransformSet::identity(d.graph.node_count());
    dirs.push_back(std::move(d));
  }
  if (cfg.mode == MatchMode::Full) {
    detail::Direction d;
    d.source = &target;
    d.target = &source;
    d.source_visual = target_visual;
    d.target_visual = source_visual;
    d.source_geodesics = cfg.weights.geo > 0 ? geodesics.target : nullptr;
    GraphOptions g2 = gopts;
    g2.seed = std::min(gopts.seed, target.size() - 1);
    d.graph = build_deformation_graph(target, g2);
    d.x = TransformSet::identity(d.graph.node_count());
    dirs.push_back(std::move(d));
  }

  SolveReport report;
  report.mode = cfg.mode;
  report.initial_deform =
      cfg.mode == MatchMode::Full ? chamfer(source, target) : one_sided_chamfer(source, target);

  double step = cfg.step_size;
  double previous = std::numeric_limits<double>::infinity();
  double stiffness = cfg.arap_anneal_start;
  double previous_stiff = std::numeric_limits<double>::infinity();
  for (std::size_t outer = 0; outer < cfg.outer_iters; ++outer) {
    IterationLog log;
    log.iteration = outer;
    log.step = step;
    bool checked = false;
    double gradient_check = 0.0;
    LossWeights active = cfg.weights;
    active.arap *= stiffness;
    log.stiffness = stiffness;
    double stiff_objective = 0.0;

    for (auto& d : dirs) {
      const auto rot = node_rotations(d.x);
      const auto moved = deform_points(d.graph, d.x, d.source->points(), rot);

      const FeatureMatrix fs = detail::blended(d.source_visual, moved, cfg);
      const FeatureMatrix ft = detail::blended(d.target_visual, d.target->points(), cfg);
      const SoftCorrespondence pi = soft_correspondence(fs, ft, cfg.top_n, cfg.temperature);

      FrozenObjective f(d.graph, *d.source, *d.target,
                        freeze_assignments(moved, d.target->points(), cfg.mode), active,
                        cfg.mode);
      if (!d.system) d.system = std::make_unique<detail::NormalSystem>(f);

      double current = f.value(d.x);
      auto& trace = log.frozen_values.emplace_back(1, current);
      for (std::size_t inner = 0; inner < cfg.inner_iters; ++inner) {
        if (cfg.fd_check && inner == 0) {
          const double mismatch =
              gradient_mismatch(f.gradient(d.x), finite_difference_gradient(f, d.x));
          gradient_check = std::max(gradient_check, mismatch);
          checked = true;
        }
        const Eigen::VectorXd delta = d.system->step(f, d.x, cfg.damping);
        double alpha = step;
        bool accepted = false;
        for (int tries = 0; tries < 30 && !accepted; ++tries, alpha *= 0.5) {
          double value = std::numeric_limits<double>::infinity();
          TransformSet trial;
          try {
            trial = detail::retract(d.x, delta, alpha);
            value = f.value(trial);
          } catch (const NumericalError&) {
            continue;
          }
          if (value <= current) {
            const double gain = current - value;
            d.x = std::move(trial);
            current = value;
            trace.push_back(value);
            accepted = true;
            ++log.accepted_steps;
            if (gain <= cfg.inner_tol * std::max(value, 1e-300)) inner = cfg.inner_iters;
          }
        }
        if (!accepted) break;
      }
      if (!std::isfinite(current) || !d.x.all_finite())
        throw NumericalError("register: non-finite objective at outer iteration " +
                             std::to_string(outer));

      const auto moved_after = deform_points(d.graph, d.x, d.source->points(), node_rotations(d.x));
      LossBreakdown b;
      b.deform = cfg.mode == MatchMode::Full
                     ? chamfer(std::span<const Vec3>(moved_after), d.target->points())
                     : one_sided_chamfer(std::span<const Vec3>(moved_after), d.target->points());
      b.arap = arap_energy(d.graph, d.x);
      b.smooth = smoothness_loss(pi, *d.target);
      if (d.source_geodesics) b.geo = geodesic_similarity_loss(fs, *d.source_geodesics, cfg.geo_k);
      b.total = weighted_total(b, cfg.weights);
      log.loss += b;
      log.objective += cfg.weights.deform * b.deform + cfg.weights.arap * b.arap;
      stiff_objective += active.deform * b.deform + active.arap * b.arap;
    }
    if (checked) report.gradient_checks.push_back(gradient_check);
    report.history.push_back(log);

    if (stiffness > 1.0) {
      const double gain = (previous_stiff - stiff_objective) / std::max(previous_stiff, 1e-300);
      previous_stiff = stiff_objective;
      if (gain < cfg.arap_anneal_tol) {
        stiffness = std::max(1.0, stiffness * cfg.arap_anneal_rate);
        previous_stiff = std::numeric_limits<double>::infinity();
      }
      previous = std::numeric_limits<double>::infinity();
    } else {
      const double rel = (previous - log.objective) / std::max(std::abs(previous), 1e-300);
      previous = log.objective;
      if (rel < cfg.convergence_tol) {
        report.converged = true;
        break;
      }
    }
    step *= cfg.step_decay;
  }

  report.transforms = dirs[0].x;
  report.graph = dirs[0].graph;
  if (dirs.size() > 1) report.reverse = dirs[1].x;
  const auto moved = deform_points(dirs[0].graph, dirs[0].x, source.points(),
                                   node_rotations(dirs[0].x));
  report.map.index = nearest_indices(moved, target.points());
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace dvm
