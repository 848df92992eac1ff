#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace pdzd {

/// Membership tolerance for tangent-cone preconditions.
inline constexpr double kMembershipTol = 1e-9;
/// Threshold below which a face counts as active (scaled by row norm).
inline constexpr double kActiveFaceTol = 1e-9;
inline constexpr int kDykstraMaxSweeps = 10000;
inline constexpr double kDykstraTol = 1e-10;

class ProjectableSet;

namespace detail {

struct BoxSet {
  Eigen::VectorXd lower, upper;
};

struct BallSet {
  Eigen::VectorXd center;
  double radius = 0.0;
};

struct HalfspaceSet {
  Eigen::MatrixXd rows;     // one constraint a_k^T x <= b_k per row
  Eigen::VectorXd offsets;  // b
  int dim = 0;
};

struct OrthantSet {
  int dim = 0;
};

struct CappedOrthantSet {
  int dim = 0;
  double cap = 0.0;
};

struct ProductSet {
  std::vector<ProjectableSet> factors;
};

// Projection of p onto {x : A x <= b} by KKT enumeration over active-row
// subsets. Exact for a handful of rows; also used for tangent cones (b = 0).
// Returns false when no KKT candidate exists (empty intersection).
inline bool project_polyhedron_enumerate(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                         const Eigen::VectorXd& p, Eigen::VectorXd& out) {
  const int m = static_cast<int>(A.rows());
  if (m > 20)
    throw std::invalid_argument("polyhedron enumeration limited to 20 rows");
  double best = std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
    std::vector<int> act;
    for (int k = 0; k < m; ++k)
      if (mask & (1u << k)) act.push_back(k);
    Eigen::VectorXd y;
    Eigen::VectorXd mu;
    if (act.empty()) {
      y = p;
      mu.resize(0);
    } else {
      Eigen::MatrixXd As(act.size(), A.cols());
      Eigen::VectorXd bs(act.size());
      for (std::size_t i = 0; i < act.size(); ++i) {
        As.row(i) = A.row(act[i]);
        bs(i) = b(act[i]);
      }
      // y = p - As^T mu with As y = bs
      Eigen::MatrixXd G = As * As.transpose();
      mu = G.completeOrthogonalDecomposition().solve(As * p - bs);
      y = p - As.transpose() * mu;
      if ((As * y - bs).lpNorm<Eigen::Infinity>() > 1e-9 * (1.0 + bs.lpNorm<Eigen::Infinity>()))
        continue;  // singular pattern, equality not actually met
      if (mu.size() > 0 && mu.minCoeff() < -1e-10) continue;  // dual infeasible
    }
    // tight primal tolerance: the true pattern is feasible to rounding
    // error, and a loose band here would corrupt finite-difference probes
    const double feas_tol =
        1e-12 * (1.0 + b.lpNorm<Eigen::Infinity>() + p.norm());
    bool feasible = true;
    for (int k = 0; k < m; ++k) {
      if (A.row(k).dot(y) - b(k) > feas_tol * A.row(k).norm()) {
        feasible = false;
        break;
      }
    }
    if (!feasible) continue;
    const double d = (y - p).squaredNorm();
    if (d < best) {
      best = d;
      out = y;
      found = true;
    }
  }
  return found;
}

template <class RowExpr>
inline Eigen::VectorXd project_halfspace(const RowExpr& a, double b, const Eigen::VectorXd& p) {
  const double viol = a.dot(p) - b;
  if (viol <= 0) return p;
  return p - (viol / a.squaredNorm()) * a.transpose();
}

// Dykstra's alternating projections onto an intersection of halfspaces.
inline Eigen::VectorXd project_halfspaces_dykstra(const HalfspaceSet& hs,
                                                  const Eigen::VectorXd& p) {
  const int m = static_cast<int>(hs.rows.rows());
  Eigen::VectorXd x = p;
  std::vector<Eigen::VectorXd> inc(m, Eigen::VectorXd::Zero(hs.dim));
  for (int sweep = 0; sweep < kDykstraMaxSweeps; ++sweep) {
    // convergence needs x AND the increments to settle; x alone can
    // revisit the same point mid-run while the offsets still evolve
    double change = 0.0;
    const Eigen::VectorXd prev = x;
    for (int k = 0; k < m; ++k) {
      const Eigen::VectorXd y = x + inc[k];
      x = project_halfspace(hs.rows.row(k), hs.offsets(k), y);
      change += (y - x - inc[k]).squaredNorm();
      inc[k] = y - x;
    }
    change += (x - prev).squaredNorm();
    double resid = 0.0;
    for (int k = 0; k < m; ++k) {
      const double v = hs.rows.row(k).dot(x) - hs.offsets(k);
      resid = std::max(resid, v / hs.rows.row(k).norm());
    }
    if (resid <= kDykstraTol && std::sqrt(change) <= kDykstraTol) return x;
  }
  double resid = 0.0;
  for (int k = 0; k < m; ++k)
    resid = std::max(resid, (hs.rows.row(k).dot(x) - hs.offsets(k)) / hs.rows.row(k).norm());
  throw std::runtime_error("halfspace projection: Dykstra did not converge, residual " +
                           std::to_string(resid) + " (set may be empty)");
}

}  // namespace detail

/// Convex feasible region supporting point projection, tangent-cone
/// projection, and eps-shrinking. Covers boxes, balls, halfspace
/// intersections, (capped) nonnegative orthants, and products thereof.
class ProjectableSet {
 public:
  static ProjectableSet box(Eigen::VectorXd lower, Eigen::VectorXd upper) {
    if (lower.size() != upper.size())
      throw std::invalid_argument("box: bound dimension mismatch");
    if (lower.size() > 0 && (upper - lower).minCoeff() < 0)
      throw std::invalid_argument("box: lower > upper");
    return ProjectableSet(detail::BoxSet{std::move(lower), std::move(upper)});
  }

  static ProjectableSet box1d(double lower, double upper) {
    Eigen::VectorXd l(1), u(1);
    l << lower;
    u << upper;
    return box(l, u);
  }

  static ProjectableSet ball(Eigen::VectorXd center, double radius) {
    if (radius < 0) throw std::invalid_argument("ball: negative radius");
    return ProjectableSet(detail::BallSet{std::move(center), radius});
  }

  static ProjectableSet halfspaces(Eigen::MatrixXd rows, Eigen::VectorXd offsets) {
    if (rows.rows() != offsets.size())
      throw std::invalid_argument("halfspaces: row/offset count mismatch");
    if (rows.rows() == 0) throw std::invalid_argument("halfspaces: no rows");
    for (int k = 0; k < rows.rows(); ++k)
      if (rows.row(k).norm() == 0) throw std::invalid_argument("halfspaces: zero row");
    const int d = static_cast<int>(rows.cols());
    detail::HalfspaceSet hs{std::move(rows), std::move(offsets), d};
    ProjectableSet s{hs};
    // feasibility probe: projecting the origin throws or fails on an empty set
    Eigen::VectorXd probe;
    if (hs.rows.rows() <= 3) {
      if (!detail::project_polyhedron_enumerate(hs.rows, hs.offsets,
                                                Eigen::VectorXd::Zero(hs.dim), probe))
        throw std::invalid_argument("halfspaces: empty intersection");
    } else {
      s.project_point(Eigen::VectorXd::Zero(hs.dim));
    }
    return s;
  }

  static ProjectableSet nonnegative_orthant(int dim) {
    if (dim < 0) throw std::invalid_argument("orthant: negative dimension");
    return ProjectableSet(detail::OrthantSet{dim});
  }

  static ProjectableSet capped_orthant(int dim, double cap) {
    if (dim < 0) throw std::invalid_argument("capped orthant: negative dimension");
    if (cap <= 0) throw std::invalid_argument("capped orthant: cap must be positive");
    return ProjectableSet(detail::CappedOrthantSet{dim, cap});
  }

  static ProjectableSet product(std::vector<ProjectableSet> factors) {
    return ProjectableSet(detail::ProductSet{std::move(factors)});
  }

  int dim() const {
    return std::visit(
        [](const auto& s) -> int {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, detail::BoxSet>)
            return static_cast<int>(s.lower.size());
          else if constexpr (std::is_same_v<T, detail::BallSet>)
            return static_cast<int>(s.center.size());
          else if constexpr (std::is_same_v<T, detail::HalfspaceSet>)
            return s.dim;
          else if constexpr (std::is_same_v<T, detail::OrthantSet>)
            return s.dim;
          else if constexpr (std::is_same_v<T, detail::CappedOrthantSet>)
            return s.dim;
          else {
            int n = 0;
            for (const auto& f : s.factors) n += f.dim();
            return n;
          }
        },
        v_);
  }

  /// Euclidean nearest point in the set.
  Eigen::VectorXd project_point(const Eigen::VectorXd& p) const {
    check_dim(p, "project_point");
    return std::visit(
        [&](const auto& s) -> Eigen::VectorXd {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, detail::BoxSet>) {
            return p.cwiseMax(s.lower).cwiseMin(s.upper);
          } else if constexpr (std::is_same_v<T, detail::BallSet>) {
            const Eigen::VectorXd d = p - s.center;
            const double nd = d.norm();
            if (nd <= s.radius) return p;
            if (nd == 0) return s.center;
            return s.center + (s.radius / nd) * d;
          } else if constexpr (std::is_same_v<T, detail::HalfspaceSet>) {
            if (s.rows.rows() <= 3) {
              Eigen::VectorXd out;
              if (!detail::project_polyhedron_enumerate(s.rows, s.offsets, p, out))
                throw std::runtime_error("halfspace projection: no KKT candidate (empty set?)");
              return out;
            }
            return detail::project_halfspaces_dykstra(s, p);
          } else if constexpr (std::is_same_v<T, detail::OrthantSet>) {
            return p.cwiseMax(0.0);
          } else if constexpr (std::is_same_v<T, detail::CappedOrthantSet>) {
            return p.cwiseMax(0.0).cwiseMin(s.cap);
          } else {
            Eigen::VectorXd out(p.size());
            int at = 0;
            for (const auto& f : s.factors) {
              const int nf = f.dim();
              out.segment(at, nf) = f.project_point(p.segment(at, nf));
              at += nf;
            }
            return out;
          }
        },
        v_);
  }

  /// Vector projection of direction v onto the tangent cone at x:
  /// lim_{d->0+} (project_point(x + d v) - x) / d, computed analytically.
  Eigen::VectorXd project_tangent_cone(const Eigen::VectorXd& x, const Eigen::VectorXd& v) const {
    check_dim(x, "project_tangent_cone");
    if (v.size() != x.size())
      throw std::invalid_argument("project_tangent_cone: direction dimension mismatch");
    if (distance(x) > kMembershipTol)
      throw std::invalid_argument("project_tangent_cone: point outside set beyond tolerance");
    return std::visit(
        [&](const auto& s) -> Eigen::VectorXd {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, detail::BoxSet>) {
            Eigen::VectorXd out = v;
            for (int i = 0; i < x.size(); ++i) {
              if (x(i) <= s.lower(i) + kActiveFaceTol && out(i) < 0) out(i) = 0;
              if (x(i) >= s.upper(i) - kActiveFaceTol && out(i) > 0) out(i) = 0;
            }
            return out;
          } else if constexpr (std::is_same_v<T, detail::BallSet>) {
            if (s.radius <= kActiveFaceTol) return Eigen::VectorXd::Zero(v.size());
            const Eigen::VectorXd n = x - s.center;
            if (n.norm() < s.radius - kActiveFaceTol) return v;  // interior
            const double outward = n.dot(v);
            if (outward <= 0) return v;
            return v - (outward / n.squaredNorm()) * n;
          } else if constexpr (std::is_same_v<T, detail::HalfspaceSet>) {
            std::vector<int> act;
            for (int k = 0; k < s.rows.rows(); ++k) {
              const double slack = s.offsets(k) - s.rows.row(k).dot(x);
              if (slack <= kActiveFaceTol * s.rows.row(k).norm()) act.push_back(k);
            }
            if (act.empty()) return v;
            Eigen::MatrixXd A(act.size(), x.size());
            for (std::size_t i = 0; i < act.size(); ++i) A.row(i) = s.rows.row(act[i]);
            Eigen::VectorXd out;
            if (!detail::project_polyhedron_enumerate(A, Eigen::VectorXd::Zero(act.size()), v,
                                                      out))
              throw std::runtime_error("tangent cone projection failed");
            return out;
          } else if constexpr (std::is_same_v<T, detail::OrthantSet>) {
            Eigen::VectorXd out = v;
            for (int i = 0; i < x.size(); ++i)
              if (x(i) <= kActiveFaceTol && out(i) < 0) out(i) = 0;
            return out;
          } else if constexpr (std::is_same_v<T, detail::CappedOrthantSet>) {
            Eigen::VectorXd out = v;
            for (int i = 0; i < x.size(); ++i) {
              if (x(i) <= kActiveFaceTol && out(i) < 0) out(i) = 0;
              if (x(i) >= s.cap - kActiveFaceTol && out(i) > 0) out(i) = 0;
            }
            return out;
          } else {
            Eigen::VectorXd out(v.size());
            int at = 0;
            for (const auto& f : s.factors) {
              const int nf = f.dim();
              out.segment(at, nf) = f.project_tangent_cone(x.segment(at, nf), v.segment(at, nf));
              at += nf;
            }
            return out;
          }
        },
        v_);
  }

  /// Inner approximation: every y in the result satisfies
  /// y + eps_a * (unit ball) inside the original set. Dual-variable
  /// orthants are never probed and stay unchanged.
  ProjectableSet shrink(double eps_a) const {
    if (eps_a < 0) throw std::invalid_argument("shrink: negative amount");
    if (eps_a == 0) return *this;
    return std::visit(
        [&](const auto& s) -> ProjectableSet {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, detail::BoxSet>) {
            const Eigen::VectorXd lo = s.lower.array() + eps_a;
            const Eigen::VectorXd hi = s.upper.array() - eps_a;
            if (lo.size() > 0 && (hi - lo).minCoeff() < 0)
              throw std::invalid_argument("shrink: box bounds cross, result empty");
            return ProjectableSet::box(lo, hi);
          } else if constexpr (std::is_same_v<T, detail::BallSet>) {
            if (s.radius - eps_a < 0)
              throw std::invalid_argument("shrink: ball radius exhausted, result empty");
            return ProjectableSet::ball(s.center, s.radius - eps_a);
          } else if constexpr (std::is_same_v<T, detail::HalfspaceSet>) {
            Eigen::VectorXd off = s.offsets;
            for (int k = 0; k < s.rows.rows(); ++k) off(k) -= eps_a * s.rows.row(k).norm();
            return ProjectableSet::halfspaces(s.rows, off);  // ctor probes feasibility
          } else if constexpr (std::is_same_v<T, detail::OrthantSet> ||
                               std::is_same_v<T, detail::CappedOrthantSet>) {
            return *this;
          } else {
            std::vector<ProjectableSet> factors;
            factors.reserve(s.factors.size());
            for (const auto& f : s.factors) factors.push_back(f.shrink(eps_a));
            return ProjectableSet::product(std::move(factors));
          }
        },
        v_);
  }

  double distance(const Eigen::VectorXd& p) const { return (p - project_point(p)).norm(); }

  bool contains(const Eigen::VectorXd& p, double tol) const {
    check_dim(p, "contains");
    return distance(p) <= tol;
  }

  bool is_dual_domain() const {
    return std::holds_alternative<detail::OrthantSet>(v_) ||
           std::holds_alternative<detail::CappedOrthantSet>(v_);
  }

  /// Bounds when the set is a box or a product of boxes; used by the
  /// white-box QP optimum enumeration.
  bool box_bounds(Eigen::VectorXd& lower, Eigen::VectorXd& upper) const {
    if (const auto* b = std::get_if<detail::BoxSet>(&v_)) {
      lower = b->lower;
      upper = b->upper;
      return true;
    }
    if (const auto* pr = std::get_if<detail::ProductSet>(&v_)) {
      lower.resize(dim());
      upper.resize(dim());
      int at = 0;
      for (const auto& f : pr->factors) {
        Eigen::VectorXd lo, hi;
        if (!f.box_bounds(lo, hi)) return false;
        lower.segment(at, lo.size()) = lo;
        upper.segment(at, hi.size()) = hi;
        at += static_cast<int>(lo.size());
      }
      return true;
    }
    if (const auto* o = std::get_if<detail::CappedOrthantSet>(&v_)) {
      lower = Eigen::VectorXd::Zero(o->dim);
      upper = Eigen::VectorXd::Constant(o->dim, o->cap);
      return true;
    }
    return false;
  }

 private:
  template <class V>
  explicit ProjectableSet(V v) : v_(std::move(v)) {}

  void check_dim(const Eigen::VectorXd& p, const char* op) const {
    if (p.size() != dim())
      throw std::invalid_argument(std::string(op) + ": dimension mismatch (point " +
                                  std::to_string(p.size()) + ", set " + std::to_string(dim()) +
                                  ")");
  }

  std::variant<detail::BoxSet, detail::BallSet, detail::HalfspaceSet, detail::OrthantSet,
               detail::CappedOrthantSet, detail::ProductSet>
      v_;
};

}  // namespace pdzd
