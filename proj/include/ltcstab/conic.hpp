#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include "ltcstab/errors.hpp"
#include "ltcstab/network.hpp"

namespace ltcstab {

// Constraint x_u * x_v >= k^2 with x_u, x_v >= 0 (a rotated second-order
// cone slice).
struct HyperbolicConstraint {
  int u = 0;
  int v = 0;
  double k = 0.0;
};

// minimize ||A x - b||^2 + q^T x
// s.t.     x_u x_v >= k^2          (hyperbolics)
//          G x <= g
//          x >= lower              (entries may be -inf)
struct ConicProblem {
  int n = 0;
  Matrix A;
  Vector b;
  Vector q;  // size 0 means no linear term
  std::vector<HyperbolicConstraint> hyperbolics;
  Matrix G;
  Vector g;
  Vector lower;  // size 0 means unbounded below

  static ConicProblem least_squares(Matrix A_, Vector b_) {
    ConicProblem p;
    p.n = static_cast<int>(A_.cols());
    p.A = std::move(A_);
    p.b = std::move(b_);
    p.G = Matrix::Zero(0, p.n);
    p.g = Vector::Zero(0);
    return p;
  }
};

enum class SolveStatus { Optimal, Infeasible, MaxIter };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::MaxIter: return "max_iter";
  }
  return "max_iter";
}

struct ConicSolution {
  Vector x;
  double objective = 0.0;
  double kkt_residual = 0.0;
  double gap = 0.0;
  int newton_steps = 0;
  SolveStatus status = SolveStatus::MaxIter;
  // Debug dump rows (newton_step, 1/t, objective, kkt_residual).
  std::vector<std::array<double, 4>> trace;
};

struct SolveOptions {
  double tol = 1e-8;  // duality-gap target
  int max_newton = 200;
  double t0 = 1.0;
  double mu = 10.0;  // barrier parameter multiplier per outer step
  std::optional<Vector> start;
  bool collect_trace = false;
};

// Debug dump of the barrier path collected under SolveOptions::collect_trace.
inline void trace_csv(std::ostream& os, const ConicSolution& sol) {
  os << "iter,mu,objective,kkt_residual\n";
  for (const auto& row : sol.trace) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%g,%.12g,%.12g,%.12g\n", row[0], row[1], row[2], row[3]);
    os << buf;
  }
}

// Euclidean projection of (u, v) onto {(u, v) : u v >= k^2, u >= 0, v >= 0}.
// Off-cone points project onto the hyperbola branch u = k e^s, v = k e^{-s};
// the 1-D objective is minimized by a grid bracket plus Newton refinement.
inline std::pair<double, double> project_hyperbolic(double u, double v, double k) {
  if (k < 0.0) throw Error(ErrorCode::PreconditionViolation, "k < 0");
  if (k == 0.0) return {std::max(u, 0.0), std::max(v, 0.0)};
  if (u > 0.0 && v > 0.0 && u * v >= k * k) return {u, v};

  const auto phi = [&](double s) {
    const double du = k * std::exp(s) - u;
    const double dv = k * std::exp(-s) - v;
    return du * du + dv * dv;
  };
  const auto dphi = [&](double s) {
    const double es = std::exp(s), ems = std::exp(-s);
    return 2.0 * k * es * (k * es - u) - 2.0 * k * ems * (k * ems - v);
  };
  const auto ddphi = [&](double s) {
    const double es = std::exp(s), ems = std::exp(-s);
    return 4.0 * k * k * es * es - 2.0 * u * k * es + 4.0 * k * k * ems * ems -
           2.0 * v * k * ems;
  };

  const double L = std::log(2.0 + (std::abs(u) + std::abs(v) + k) / k) + 2.0;
  const int grid = 200;
  int best_i = 0;
  double best_val = phi(-L);
  for (int i = 1; i <= grid; ++i) {
    const double val = phi(-L + 2.0 * L * i / grid);
    if (val < best_val) {
      best_val = val;
      best_i = i;
    }
  }
  const double step = 2.0 * L / grid;
  double lo = -L + step * std::max(0, best_i - 1);
  double hi = -L + step * std::min(grid, best_i + 1);
  for (int widen = 0; (dphi(lo) > 0.0 || dphi(hi) < 0.0) && widen < 12; ++widen) {
    lo = std::max(lo - step, -L);
    hi = std::min(hi + step, L);
  }
  // Bisection on phi' (the derivative carries a strong signal even where
  // phi itself is numerically flat), with Newton acceleration.
  double s = 0.5 * (lo + hi);
  for (int it = 0; it < 80; ++it) {
    const double d1 = dphi(s);
    if (d1 > 0.0)
      hi = s;
    else
      lo = s;
    const double d2 = ddphi(s);
    double s_next = d2 > 0.0 ? s - d1 / d2 : 0.5 * (lo + hi);
    if (!(s_next > lo) || !(s_next < hi)) s_next = 0.5 * (lo + hi);
    if (std::abs(s_next - s) < 1e-16 * std::max(1.0, std::abs(s))) {
      s = s_next;
      break;
    }
    s = s_next;
  }
  return {k * std::exp(s), k * std::exp(-s)};
}

namespace detail {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Barrier {
  const ConicProblem& p;
  std::vector<std::pair<int, double>> bounds;  // (index, lower)
  double nu = 0.0;

  explicit Barrier(const ConicProblem& prob) : p(prob) {
    if (p.lower.size() == p.n)
      for (int i = 0; i < p.n; ++i)
        if (p.lower[i] > -kInf) bounds.emplace_back(i, p.lower[i]);
    nu = 2.0 * p.hyperbolics.size() + p.G.rows() + bounds.size();
  }

  int n_constraints() const {
    return static_cast<int>(p.hyperbolics.size() + p.G.rows() + bounds.size());
  }

  // Smallest constraint margin; positive means strictly feasible.
  double min_margin(const Vector& x) const {
    double m = kInf;
    for (const auto& h : p.hyperbolics) {
      m = std::min(m, x[h.u] * x[h.v] - h.k * h.k);
      if (h.k == 0.0) m = std::min({m, x[h.u], x[h.v]});
    }
    if (p.G.rows() > 0) m = std::min(m, (p.g - p.G * x).minCoeff());
    for (const auto& [i, lo] : bounds) m = std::min(m, x[i] - lo);
    return m;
  }

  double value(const Vector& x) const {
    double v = 0.0;
    for (const auto& h : p.hyperbolics) {
      const double c = x[h.u] * x[h.v] - h.k * h.k;
      if (h.k == 0.0) {
        v -= std::log(x[h.u]) + std::log(x[h.v]);
      } else {
        v -= std::log(c);
      }
    }
    if (p.G.rows() > 0) v -= (p.g - p.G * x).array().log().sum();
    for (const auto& [i, lo] : bounds) v -= std::log(x[i] - lo);
    return v;
  }

  void add_grad_hess(const Vector& x, Vector& grad, Matrix& hess) const {
    for (const auto& h : p.hyperbolics) {
      if (h.k == 0.0) {
        grad[h.u] -= 1.0 / x[h.u];
        grad[h.v] -= 1.0 / x[h.v];
        hess(h.u, h.u) += 1.0 / (x[h.u] * x[h.u]);
        hess(h.v, h.v) += 1.0 / (x[h.v] * x[h.v]);
        continue;
      }
      const double c = x[h.u] * x[h.v] - h.k * h.k;
      grad[h.u] -= x[h.v] / c;
      grad[h.v] -= x[h.u] / c;
      hess(h.u, h.u) += x[h.v] * x[h.v] / (c * c);
      hess(h.v, h.v) += x[h.u] * x[h.u] / (c * c);
      hess(h.u, h.v) += h.k * h.k / (c * c);
      hess(h.v, h.u) += h.k * h.k / (c * c);
    }
    if (p.G.rows() > 0) {
      const Vector slack = p.g - p.G * x;
      for (Eigen::Index j = 0; j < p.G.rows(); ++j) {
        grad.noalias() += p.G.row(j).transpose() / slack[j];
        hess.noalias() += p.G.row(j).transpose() * p.G.row(j) / (slack[j] * slack[j]);
      }
    }
    for (const auto& [i, lo] : bounds) {
      const double c = x[i] - lo;
      grad[i] -= 1.0 / c;
      hess(i, i) += 1.0 / (c * c);
    }
  }

  // Stationarity residual with the best nonnegative multipliers on the
  // near-active set (least squares, negatives clipped). The raw barrier
  // estimates 1/(t c_j) saturate at the centering noise floor for large t.
  double kkt_residual(const Vector& x, double /*t*/, const Vector& f0_grad) const {
    const double act_tol = 1e-4 * (1.0 + x.lpNorm<Eigen::Infinity>());
    std::vector<Vector> normals;
    for (const auto& h : p.hyperbolics) {
      const double c = x[h.u] * x[h.v] - h.k * h.k;
      if (c <= act_tol) {
        Vector n = Vector::Zero(p.n);
        n[h.u] = x[h.v];
        n[h.v] = x[h.u];
        normals.push_back(std::move(n));
      }
      if (h.k == 0.0) {
        for (int idx : {h.u, h.v}) {
          if (x[idx] <= act_tol) {
            Vector n = Vector::Zero(p.n);
            n[idx] = 1.0;
            normals.push_back(std::move(n));
          }
        }
      }
    }
    if (p.G.rows() > 0) {
      const Vector slack = p.g - p.G * x;
      for (Eigen::Index j = 0; j < p.G.rows(); ++j)
        if (slack[j] <= act_tol) normals.push_back(-p.G.row(j).transpose());
    }
    for (const auto& [i, lo] : bounds) {
      if (x[i] - lo <= act_tol) {
        Vector n = Vector::Zero(p.n);
        n[i] = 1.0;
        normals.push_back(std::move(n));
      }
    }
    if (normals.empty()) return f0_grad.lpNorm<Eigen::Infinity>();

    Matrix N(p.n, normals.size());
    for (size_t j = 0; j < normals.size(); ++j) N.col(j) = normals[j];
    Vector lambda = N.colPivHouseholderQr().solve(f0_grad);
    lambda = lambda.cwiseMax(0.0);
    return (f0_grad - N * lambda).lpNorm<Eigen::Infinity>();
  }
};

inline ConicSolution solve_barrier(const ConicProblem& p, const SolveOptions& opts,
                                   const Vector& x0);

// Phase 1: minimize s over a boxed domain with the linear constraints
// relaxed by s; the hyperbolics stay hard since a strictly feasible point
// for them alone is constructible. Without the box the problem has no
// analytic centers (growing every slack drives the barrier to -inf).
// Interiors thinner than ~1e-5 are reported as infeasible.
inline std::optional<Vector> phase1(const ConicProblem& p, int max_newton) {
  const int N = p.n;
  constexpr double box = 1e8;
  ConicProblem q;
  q.n = N + 1;
  q.A = Matrix::Zero(0, N + 1);
  q.b = Vector::Zero(0);
  q.q = Vector::Zero(N + 1);
  q.q[N] = 1.0;
  q.hyperbolics = p.hyperbolics;

  const int n_lin = static_cast<int>(p.G.rows());
  int n_bnd = 0;
  if (p.lower.size() == N)
    for (int i = 0; i < N; ++i)
      if (p.lower[i] > -kInf) ++n_bnd;

  q.G = Matrix::Zero(n_lin + n_bnd + 2 * N, N + 1);
  q.g = Vector::Zero(n_lin + n_bnd + 2 * N);
  if (n_lin > 0) {
    q.G.topLeftCorner(n_lin, N) = p.G;
    q.G.col(N).head(n_lin).setConstant(-1.0);
    q.g.head(n_lin) = p.g;
  }
  int row = n_lin;
  if (p.lower.size() == N) {
    for (int i = 0; i < N; ++i) {
      if (p.lower[i] > -kInf) {
        q.G(row, i) = -1.0;
        q.G(row, N) = -1.0;
        q.g[row] = -p.lower[i];
        ++row;
      }
    }
  }
  for (int i = 0; i < N; ++i) {  // |x_i| <= box keeps the centers finite
    q.G(row, i) = 1.0;
    q.g[row++] = box;
    q.G(row, i) = -1.0;
    q.g[row++] = box;
  }
  q.lower = Vector::Constant(N + 1, -kInf);
  q.lower[N] = -1.0;

  Vector x0 = Vector::Zero(N + 1);
  for (const auto& h : p.hyperbolics) {
    const double val = std::max(1.0, 2.0 * h.k);
    x0[h.u] = std::max(x0[h.u], val);
    x0[h.v] = std::max(x0[h.v], val);
  }
  double viol = -0.5;
  if (n_lin > 0)
    viol = std::max(viol, (p.G * x0.head(N) - p.g).maxCoeff());
  if (p.lower.size() == N)
    for (int i = 0; i < N; ++i)
      if (p.lower[i] > -kInf) viol = std::max(viol, p.lower[i] - x0[i]);
  x0[N] = viol + 1.0;

  SolveOptions sopts;
  sopts.tol = 1e-7;
  sopts.max_newton = max_newton;
  ConicSolution sol = solve_barrier(q, sopts, x0);
  if (sol.x.size() == N + 1 && sol.x.allFinite() && sol.x[N] < -1e-5)
    return Vector(sol.x.head(N));
  return std::nullopt;
}

inline ConicSolution solve_barrier(const ConicProblem& p, const SolveOptions& opts,
                                   const Vector& x0) {
  const Barrier bar(p);
  const bool has_ls = p.A.rows() > 0;
  const Matrix AtA = has_ls ? Matrix(2.0 * p.A.transpose() * p.A) : Matrix::Zero(p.n, p.n);
  const Vector Atb = has_ls ? Vector(2.0 * p.A.transpose() * p.b) : Vector::Zero(p.n);
  const bool has_q = p.q.size() == p.n;

  const auto f0 = [&](const Vector& x) {
    double v = 0.0;
    if (has_ls) v += (p.A * x - p.b).squaredNorm();
    if (has_q) v += p.q.dot(x);
    return v;
  };
  const auto f0_grad = [&](const Vector& x) {
    Vector gr = Vector::Zero(p.n);
    if (has_ls) gr = AtA * x - Atb;
    if (has_q) gr += p.q;
    return gr;
  };

  ConicSolution sol;
  sol.x = x0;
  Vector x = x0;
  double t = opts.t0;
  int used = 0;

  // No constraints: plain least squares via the normal equations.
  if (bar.n_constraints() == 0) {
    Matrix H = AtA;
    if (!has_ls) H = Matrix::Identity(p.n, p.n) * 1e-12;
    x = H.ldlt().solve(Atb - (has_q ? p.q : Vector::Zero(p.n)));
    sol.x = x;
    sol.objective = f0(x);
    sol.kkt_residual = f0_grad(x).lpNorm<Eigen::Infinity>();
    sol.gap = 0.0;
    sol.status = SolveStatus::Optimal;
    return sol;
  }

  const auto center = [&](double tval, double decrement_tol, int budget) {
    for (int local = 0; local < budget && used < opts.max_newton;) {
      Vector grad = tval * f0_grad(x);
      Matrix hess = tval * AtA;
      bar.add_grad_hess(x, grad, hess);

      Vector dx;
      double ridge = 0.0;
      for (int attempt = 0; attempt < 8; ++attempt) {
        Matrix H = hess;
        if (ridge > 0.0) H.diagonal().array() += ridge;
        dx = H.ldlt().solve(-grad);
        if (dx.allFinite() && grad.dot(dx) < 0.0) break;
        ridge = ridge == 0.0 ? 1e-10 * (1.0 + hess.diagonal().maxCoeff()) : ridge * 100.0;
      }
      ++used;
      ++local;
      const double decrement = -grad.dot(dx);
      if (!(decrement > 0.0) || !x.allFinite()) return;

      const double psi0 = tval * f0(x) + bar.value(x);
      double step = 1.0;
      bool moved = false;
      while (step > 1e-14) {
        const Vector xn = x + step * dx;
        if (bar.min_margin(xn) > 0.0 &&
            tval * f0(xn) + bar.value(xn) <= psi0 - 0.25 * step * decrement) {
          x = xn;
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (opts.collect_trace)
        sol.trace.push_back({static_cast<double>(used), 1.0 / tval, f0(x),
                             bar.kkt_residual(x, tval, f0_grad(x))});
      if (!moved || decrement * 0.5 <= decrement_tol) return;
    }
  };

  // Walk the central path to the t implied by the gap target, then polish
  // the final center hard so the KKT residual certificate is met.
  const double t_final = std::max(opts.t0, bar.nu / opts.tol);
  while (true) {
    const bool last = t >= t_final * (1.0 - 1e-12);
    center(t, last ? 1e-15 : 1e-7, last ? 60 : 40);
    if (last) {
      sol.status = used < opts.max_newton ? SolveStatus::Optimal : SolveStatus::MaxIter;
      break;
    }
    if (used >= opts.max_newton) {
      sol.status = SolveStatus::MaxIter;
      break;
    }
    t = std::min(t * opts.mu, t_final);
  }

  sol.x = x;
  sol.objective = f0(x);
  sol.gap = bar.nu / t;
  sol.newton_steps = used;
  sol.kkt_residual = bar.kkt_residual(x, t, f0_grad(x));
  return sol;
}

}  // namespace detail

// Log-barrier path-following solver for the structured problems of this
// library. Small and dense on purpose: the monitoring instances have a few
// hundred variables at most.
inline ConicSolution solve(const ConicProblem& p, SolveOptions opts = {}) {
  if (p.n <= 0) throw Error(ErrorCode::PreconditionViolation, "empty problem");
  if (p.A.cols() != p.n && p.A.rows() > 0)
    throw Error(ErrorCode::PreconditionViolation, "A column count mismatch");
  for (const auto& h : p.hyperbolics)
    if (h.u == h.v || h.u < 0 || h.v < 0 || h.u >= p.n || h.v >= p.n || h.k < 0.0)
      throw Error(ErrorCode::PreconditionViolation, "malformed hyperbolic constraint");

  const detail::Barrier bar(p);
  Vector x0;
  if (opts.start && opts.start->size() == p.n && bar.min_margin(*opts.start) > 0.0) {
    x0 = *opts.start;
  } else if (bar.n_constraints() == 0) {
    x0 = Vector::Zero(p.n);
  } else {
    auto found = detail::phase1(p, opts.max_newton);
    if (!found) {
      ConicSolution sol;
      sol.status = SolveStatus::Infeasible;
      sol.x = Vector::Zero(p.n);
      return sol;
    }
    x0 = *found;
  }
  return detail::solve_barrier(p, opts, x0);
}

}  // namespace ltcstab
