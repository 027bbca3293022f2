#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "dlo/error.hpp"
#include "dlo/heightgrid.hpp"
#include "dlo/lie.hpp"
#include "dlo/pointcloud.hpp"

namespace dlo {

using Matrix6d = Eigen::Matrix<double, 6, 6>;
using JacobianRow = Eigen::Matrix<double, 1, 6>;

/// planar-3dof estimates (x, y, yaw) and keeps roll = pitch = z = 0;
/// full-6dof estimates the whole twist.
enum class DofMode { kPlanar3, kFull6 };

inline std::string to_string(DofMode mode) { return mode == DofMode::kPlanar3 ? "planar" : "full"; }

inline DofMode parse_dof_mode(const std::string& name) {
  if (name == "planar" || name == "planar-3dof") return DofMode::kPlanar3;
  if (name == "full" || name == "full-6dof") return DofMode::kFull6;
  throw Error(ErrorCode::kParseError, "unknown mode '" + name + "' (expected planar or full)");
}

struct SolverConfig {
  int max_iterations = 50;
  double update_norm_tolerance = 1e-6;
  double cost_decrease_tolerance = 1e-9;  // relative
  double gradient_threshold = 0.05;       // meters per cell
  std::size_t min_residuals = 100;
  DofMode mode = DofMode::kPlanar3;
  double huber_delta = 0.1;  // meters
  int pyramid_levels = 3;
  int max_step_halvings = 8;
  double max_condition = 1e12;
  // When halving cannot lower the cost and the full step is already this
  // small (twist norm), the estimate sits at a minimum the grid cannot
  // resolve further and the solve ends as converged.
  double stall_tolerance = 1e-2;
  // A converged solve whose final residuals have fewer inliers (|e| <= huber_delta)
  // than this fraction is reported as not converged.
  double min_inlier_fraction = 0.5;
  int threads = 1;

  void validate() const {
    if (max_iterations <= 0 || !(update_norm_tolerance > 0) || !(cost_decrease_tolerance > 0) ||
        !(gradient_threshold > 0) || min_residuals == 0 || !(huber_delta > 0) || pyramid_levels < 1 ||
        max_step_halvings < 0 || !(max_condition > 0) || !(stall_tolerance >= 0) || threads < 1 ||
        !(min_inlier_fraction >= 0.0 && min_inlier_fraction <= 1.0))
      throw Error(ErrorCode::kDegenerateInput, "invalid solver configuration");
  }
};

/// One height difference term. The Jacobian always has six columns in
/// (rho, omega) order; planar mode reads columns 0, 1 and 5.
struct ResidualTerm {
  Point3 source_point;
  double residual = 0.0;
  JacobianRow jacobian = JacobianRow::Zero();
  double weight = 1.0;
};

enum class RegistrationStatus { kConverged, kNotConverged };

struct RegistrationResult {
  // Maps grid-1 (reference) coordinates into grid-2 coordinates: a point p
  // seen in the reference frame appears at relative_pose * p in the second.
  Pose relative_pose;
  double final_cost = 0.0;  // sum of Huber-weighted squared residuals, m^2
  double mean_cost = 0.0;
  int iterations = 0;                  // Gauss-Newton iterations at the finest level
  std::vector<int> level_iterations;   // coarse to fine, 0 for skipped levels
  std::size_t residual_count = 0;
  std::size_t inlier_count = 0;
  bool converged = false;
  RegistrationStatus status = RegistrationStatus::kNotConverged;
  double condition_estimate = 0.0;
  std::vector<double> cost_history;  // mean cost after each accepted finest-level step
};

inline constexpr int kPlanarColumns[3] = {0, 1, 5};

/// Huber loss scaled so it equals e^2 inside the quadratic zone.
inline double huber_cost(double e, double delta) {
  const double a = std::abs(e);
  return a <= delta ? e * e : 2.0 * delta * a - delta * delta;
}

inline double huber_weight(double e, double delta) {
  const double a = std::abs(e);
  return a <= delta ? 1.0 : delta / a;
}

/// Height difference error: the reference height minus grid 2's interpolated
/// height below the transformed point. Throws NoSupport when the point falls
/// off grid 2 or lands next to an invalid cell.
inline double hde_residual(double reference_height, const HeightGrid& grid2, const Point3& transformed) {
  const Eigen::Vector2d g = to_grid_coords(grid2.config(), transformed.x(), transformed.y());
  if (auto s = try_bilinear(grid2, g.x(), g.y())) return reference_height - s->value;
  throw Error(ErrorCode::kNoSupport, "transformed point has no bilinear support in grid 2");
}

/// Chain rule -dmu/dg * dg/dq * dq/dxi for the left perturbation
/// q = exp(xi) T p, with dg/dq = diag(1/f_x, 1/f_y) (orthographic gridding)
/// and dq/dxi = [I | -q^].
///
/// In full-6dof mode the reference height is the transformed point's own
/// height q_z, which adds dq_z/dxi = (0, 0, 1, q_y, -q_x, 0); without it the
/// z, roll and pitch columns carry no information.
inline JacobianRow residual_jacobian(const Eigen::Vector2d& grid_gradient_cells, const GridConfig& cfg,
                                     const Point3& q, DofMode mode) {
  const double a = grid_gradient_cells.x() / cfg.f_x;  // dmu/dq_x
  const double b = grid_gradient_cells.y() / cfg.f_y;  // dmu/dq_y
  JacobianRow J;
  J << -a, -b, 0.0, b * q.z(), -a * q.z(), a * q.y() - b * q.x();
  if (mode == DofMode::kFull6) {
    J(2) += 1.0;
    J(3) += q.y();
    J(4) -= q.x();
  }
  return J;
}

inline JacobianRow residual_jacobian(const HeightGrid& grid2, const Point3& q, DofMode mode) {
  const Eigen::Vector2d g = to_grid_coords(grid2.config(), q.x(), q.y());
  auto s = try_bilinear(grid2, g.x(), g.y());
  if (!s) throw Error(ErrorCode::kNoSupport, "transformed point has no bilinear support in grid 2");
  return residual_jacobian(s->gradient, grid2.config(), q, mode);
}

struct NormalEquations {
  Matrix6d H = Matrix6d::Zero();        // IRLS curvature, sum w J^T J
  Matrix6d H_newton = Matrix6d::Zero(); // Huber curvature, quadratic zone only
  Vector6d b = Vector6d::Zero();
  double cost = 0.0;
  std::size_t count = 0;
  std::size_t inliers = 0;

  void add(const JacobianRow& J, double e, double delta) {
    const double w = huber_weight(e, delta);
    const Matrix6d JtJ = J.transpose() * J;
    H.noalias() += w * JtJ;
    if (w == 1.0) H_newton += JtJ;
    b.noalias() += w * e * J.transpose();
    cost += huber_cost(e, delta);
    ++count;
    if (std::abs(e) <= delta) ++inliers;
  }

  NormalEquations& operator+=(const NormalEquations& o) {
    H += o.H;
    H_newton += o.H_newton;
    b += o.b;
    cost += o.cost;
    count += o.count;
    inliers += o.inliers;
    return *this;
  }

  double mean_cost() const { return count > 0 ? cost / static_cast<double>(count) : 0.0; }
};

struct GaussNewtonStep {
  Twist increment;
  double condition_estimate = 0.0;
};

/// Solves H dxi = -b on the active columns. Throws SingularNormalMatrix when
/// the eigenvalue ratio of the reduced H exceeds max_condition.
inline GaussNewtonStep solve_normal_equations(const Matrix6d& H6, const Vector6d& b6, DofMode mode,
                                              double max_condition) {
  GaussNewtonStep step;
  Vector6d delta = Vector6d::Zero();
  auto solve = [&](const auto& H, const auto& b) {
    Eigen::SelfAdjointEigenSolver<std::decay_t<decltype(H)>> eig(H, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    step.condition_estimate = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(step.condition_estimate <= max_condition))
      throw Error(ErrorCode::kSingularNormalMatrix,
                  "normal matrix condition estimate " + std::to_string(step.condition_estimate));
    return H.ldlt().solve(-b).eval();
  };
  if (mode == DofMode::kFull6) {
    delta = solve(H6, b6);
  } else {
    Eigen::Matrix3d H;
    Eigen::Vector3d b;
    for (int i = 0; i < 3; ++i) {
      b(i) = b6(kPlanarColumns[i]);
      for (int j = 0; j < 3; ++j) H(i, j) = H6(kPlanarColumns[i], kPlanarColumns[j]);
    }
    const Eigen::Vector3d d = solve(H, b);
    for (int i = 0; i < 3; ++i) delta(kPlanarColumns[i]) = d(i);
  }
  step.increment = Twist(delta);
  return step;
}

inline GaussNewtonStep solve_normal_equations(const NormalEquations& ne, DofMode mode, double max_condition) {
  return solve_normal_equations(ne.H, ne.b, mode, max_condition);
}

/// Weighted Gauss-Newton increment (sum w J^T J) dxi = -sum w J^T e.
inline GaussNewtonStep gauss_newton_step(std::span<const ResidualTerm> terms, DofMode mode,
                                         std::size_t min_residuals = 1, double max_condition = 1e12) {
  if (terms.size() < min_residuals)
    throw Error(ErrorCode::kInsufficientResiduals,
                std::to_string(terms.size()) + " residuals, need " + std::to_string(min_residuals));
  NormalEquations ne;
  for (const auto& t : terms) {
    const JacobianRow J = t.jacobian;
    ne.H.noalias() += t.weight * J.transpose() * J;
    ne.b.noalias() += t.weight * t.residual * J.transpose();
    ++ne.count;
  }
  return solve_normal_equations(ne, mode, max_condition);
}

/// Cells that source residuals: every selected cell together with the two
/// forward neighbors its gradient is differenced against. Using only the
/// selected cells would keep one side of each height edge and bias the
/// estimate toward -x/-y by a sizeable fraction of a cell.
inline std::vector<CellIndex> residual_cells(const HeightGrid& grid1, const SelectedCells& selection) {
  std::vector<char> mark(grid1.means().size(), 0);
  for (const auto& s : selection) {
    mark[grid1.index(s.cell.u, s.cell.v)] = 1;
    mark[grid1.index(s.cell.u + 1, s.cell.v)] = 1;
    mark[grid1.index(s.cell.u, s.cell.v + 1)] = 1;
  }
  std::vector<CellIndex> cells;
  for (int v = 0; v < grid1.rows(); ++v)
    for (int u = 0; u < grid1.cols(); ++u)
      if (mark[grid1.index(u, v)]) cells.push_back({u, v});
  return cells;
}

namespace detail {

/// Residual cells lifted to 3D points (cell center, cell mean).
struct ReferenceSet {
  std::vector<Point3> points;
};

inline ReferenceSet make_reference_set(const HeightGrid& grid1, const std::vector<CellIndex>& cells) {
  ReferenceSet ref;
  ref.points.reserve(cells.size());
  for (const auto& c : cells) {
    const Eigen::Vector2d xy = cell_center(grid1.config(), c.u, c.v);
    ref.points.emplace_back(xy.x(), xy.y(), grid1.mean(c.u, c.v));
  }
  return ref;
}

inline constexpr std::size_t kChunkSize = 512;

/// Evaluates residuals (and optionally the normal equations) at `pose`.
/// Work is split into fixed-size chunks reduced in chunk order, so the sums
/// do not depend on the worker count.
inline NormalEquations evaluate(const ReferenceSet& ref, const HeightGrid& grid2, const Pose& pose,
                                DofMode mode, double huber_delta, int threads,
                                std::vector<ResidualTerm>* terms = nullptr, std::vector<double>* costs = nullptr) {
  const std::size_t n = ref.points.size();
  if (costs) costs->assign(n, std::numeric_limits<double>::quiet_NaN());
  const std::size_t n_chunks = (n + kChunkSize - 1) / kChunkSize;
  std::vector<NormalEquations> partial(n_chunks);
  std::vector<std::vector<ResidualTerm>> chunk_terms(terms ? n_chunks : 0);
  const GridConfig& cfg = grid2.config();

  auto run_chunk = [&](std::size_t c) {
    NormalEquations& ne = partial[c];
    const std::size_t end = std::min(n, (c + 1) * kChunkSize);
    for (std::size_t i = c * kChunkSize; i < end; ++i) {
      const Point3& p = ref.points[i];
      const Point3 q = pose * p;
      const Eigen::Vector2d g = to_grid_coords(cfg, q.x(), q.y());
      const auto s = try_bilinear(grid2, g.x(), g.y());
      if (!s) continue;
      const double reference_height = mode == DofMode::kPlanar3 ? p.z() : q.z();
      const double e = reference_height - s->value;
      const JacobianRow J = residual_jacobian(s->gradient, cfg, q, mode);
      ne.add(J, e, huber_delta);
      if (costs) (*costs)[i] = huber_cost(e, huber_delta);
      if (terms) chunk_terms[c].push_back({p, e, J, huber_weight(e, huber_delta)});
    }
  };

  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n_chunks < 2) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, n_chunks); ++w)
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < n_chunks; c += workers) run_chunk(c);
      });
  }

  NormalEquations total;
  for (const auto& ne : partial) total += ne;
  if (terms) {
    terms->clear();
    for (auto& ct : chunk_terms) terms->insert(terms->end(), ct.begin(), ct.end());
  }
  return total;
}

struct LevelOutcome {
  Pose pose;
  NormalEquations final_eval;
  int iterations = 0;
  bool converged = false;
  double condition_estimate = 0.0;
  std::vector<double> cost_history;
};

// Huber cost summed over the terms supported at both poses, so that points
// entering or leaving grid-2 support do not masquerade as cost changes.
inline std::pair<double, double> common_support_costs(const std::vector<double>& a, const std::vector<double>& b) {
  double sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isnan(a[i]) && !std::isnan(b[i])) {
      sa += a[i];
      sb += b[i];
    }
  return {sa, sb};
}

inline LevelOutcome solve_level(const ReferenceSet& ref, const HeightGrid& grid2, const Pose& init,
                                const SolverConfig& cfg) {
  LevelOutcome out;
  out.pose = init;
  std::vector<double> current_costs, trial_costs;
  NormalEquations current =
      evaluate(ref, grid2, out.pose, cfg.mode, cfg.huber_delta, cfg.threads, nullptr, &current_costs);
  auto require_residuals = [&](const NormalEquations& ne) {
    if (ne.count < cfg.min_residuals)
      throw Error(ErrorCode::kInsufficientResiduals,
                  std::to_string(ne.count) + " residuals with support, need " +
                      std::to_string(cfg.min_residuals));
  };
  require_residuals(current);
  out.cost_history.push_back(current.mean_cost());

  double last_step = std::numeric_limits<double>::infinity();
  Pose candidate;
  double before = 0.0, after = 0.0;
  // Evaluates pose exp(scale * delta) * current pose; keeps it if the common-support cost does not increase.
  auto try_step = [&](const Vector6d& delta, double scale) -> std::optional<NormalEquations> {
    candidate = compose(exp_map(Twist(Vector6d(scale * delta))), out.pose);
    NormalEquations trial =
        evaluate(ref, grid2, candidate, cfg.mode, cfg.huber_delta, cfg.threads, nullptr, &trial_costs);
    if (trial.count < cfg.min_residuals) return std::nullopt;
    std::tie(before, after) = common_support_costs(current_costs, trial_costs);
    if (after <= before) return trial;
    return std::nullopt;
  };

  while (out.iterations < cfg.max_iterations) {
    const GaussNewtonStep step = solve_normal_equations(current, cfg.mode, cfg.max_condition);
    out.condition_estimate = step.condition_estimate;
    ++out.iterations;
    Vector6d delta = step.increment.xi;

    // The Newton step uses the true Huber curvature and converges quickly near
    // the optimum; the IRLS step with backtracking is the robust fallback.
    std::optional<Vector6d> newton;
    try {
      newton = solve_normal_equations(current.H_newton, current.b, cfg.mode, cfg.max_condition).increment.xi;
    } catch (const Error&) {
    }
    if (newton && newton->norm() <= cfg.update_norm_tolerance) delta = *newton;
    last_step = delta.norm();

    if (delta.norm() <= cfg.update_norm_tolerance) {
      out.pose = compose(exp_map(Twist(delta)), out.pose);
      current = evaluate(ref, grid2, out.pose, cfg.mode, cfg.huber_delta, cfg.threads);
      out.converged = true;
      break;
    }

    double scale = 1.0;
    std::optional<NormalEquations> accepted;
    if (newton) {
      // Sufficient decrease against the model prediction -b^T dxi (the cost is sum e^2).
      const double predicted = -current.b.dot(*newton);
      accepted = try_step(*newton, 1.0);
      if (accepted && before - after >= 0.25 * predicted)
        delta = *newton;
      else
        accepted.reset();
    }
    // Backtrack by halving until the cost over the common support does not increase.
    for (int h = 0; !accepted && h <= cfg.max_step_halvings; ++h, scale *= 0.5) {
      accepted = try_step(delta, scale);
      if (accepted) break;
    }
    last_step = delta.norm();
    if (!accepted) {
      out.converged = delta.norm() <= cfg.stall_tolerance;
      break;
    }

    out.pose = candidate;
    current = *accepted;
    current_costs.swap(trial_costs);
    out.cost_history.push_back(current.mean_cost());
    if (scale * delta.norm() <= cfg.update_norm_tolerance || before - after <= cfg.cost_decrease_tolerance * before) {
      out.converged = true;
      break;
    }
  }
  // Iterations exhausted while cycling among sub-resolution steps.
  if (!out.converged && out.iterations == cfg.max_iterations && last_step <= cfg.stall_tolerance)
    out.converged = true;
  out.final_eval = current;
  return out;
}

}  // namespace detail

/// Residual terms of the grid-1 semi-dense selection evaluated against grid 2
/// at `pose`; terms without bilinear support are dropped.
inline std::vector<ResidualTerm> residual_terms(const HeightGrid& grid1, const HeightGrid& grid2, const Pose& pose,
                                                const SolverConfig& cfg) {
  const auto ref = detail::make_reference_set(
      grid1, residual_cells(grid1, select_semi_dense_cells(grid1, cfg.gradient_threshold)));
  std::vector<ResidualTerm> terms;
  detail::evaluate(ref, grid2, pose, cfg.mode, cfg.huber_delta, 1, &terms);
  return terms;
}

/// Estimates the transform taking grid-1 coordinates to grid-2 coordinates
/// by minimizing the Huber-weighted height difference over the semi-dense
/// cells of grid 1, coarse to fine.
///
/// Throws InsufficientResiduals or SingularNormalMatrix when the finest level
/// cannot be solved. A solve that stalls, hits max_iterations, or ends with
/// too few inliers comes back with converged == false.
inline RegistrationResult register_grids(const HeightGrid& grid1, const HeightGrid& grid2, const Pose& init,
                                         const SolverConfig& cfg) {
  cfg.validate();
  if (!grid1.config().same_geometry(grid2.config()))
    throw Error(ErrorCode::kDegenerateInput, "grids must share a GridConfig");

  std::vector<HeightGrid> pyr1{grid1};
  std::vector<HeightGrid> pyr2{grid2};
  for (int l = 1; l < cfg.pyramid_levels && pyr1.back().rows() >= 8 && pyr1.back().cols() >= 8; ++l) {
    pyr1.push_back(downsample(pyr1.back()));
    pyr2.push_back(downsample(pyr2.back()));
  }

  RegistrationResult result;
  result.level_iterations.assign(pyr1.size(), 0);
  Pose pose = init;
  for (int l = static_cast<int>(pyr1.size()) - 1; l >= 0; --l) {
    const auto ref = detail::make_reference_set(
        pyr1[l], residual_cells(pyr1[l], select_semi_dense_cells(pyr1[l], cfg.gradient_threshold)));
    const bool finest = l == 0;
    if (!finest) {
      // Coarse levels only refine the initial guess; failures leave it untouched.
      if (ref.points.size() < cfg.min_residuals) continue;
      try {
        const auto level = detail::solve_level(ref, pyr2[l], pose, cfg);
        result.level_iterations[pyr1.size() - 1 - l] = level.iterations;
        pose = level.pose;
      } catch (const Error&) {
      }
      continue;
    }
    if (ref.points.size() < cfg.min_residuals)
      throw Error(ErrorCode::kInsufficientResiduals,
                  std::to_string(ref.points.size()) + " semi-dense cells selected, need " +
                      std::to_string(cfg.min_residuals));
    const auto level = detail::solve_level(ref, pyr2[0], pose, cfg);
    result.level_iterations.back() = level.iterations;
    result.iterations = level.iterations;
    result.relative_pose = level.pose;
    result.final_cost = level.final_eval.cost;
    result.mean_cost = level.final_eval.mean_cost();
    result.residual_count = level.final_eval.count;
    result.inlier_count = level.final_eval.inliers;
    result.condition_estimate = level.condition_estimate;
    result.cost_history = level.cost_history;
    const double inlier_fraction =
        result.residual_count > 0 ? static_cast<double>(result.inlier_count) / result.residual_count : 0.0;
    result.converged = level.converged && inlier_fraction >= cfg.min_inlier_fraction;
  }
  result.status = result.converged ? RegistrationStatus::kConverged : RegistrationStatus::kNotConverged;
  return result;
}

}  // namespace dlo
