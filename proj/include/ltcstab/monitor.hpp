#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "ltcstab/conic.hpp"
#include "ltcstab/equilibria.hpp"
#include "ltcstab/network.hpp"

namespace ltcstab {

// Convex stability surrogate in the variables x = (V, u), u standing in for
// V/r^2:
//   minimize ||B_LL_open V + [b_s] u - h||^2
//   s.t.     u_i V_i >= V_{0,i}^2
//            r_{0,i}^2 u_i >= V_i
//            V >= 0
//            B_LL_open V <= h       (when with_open_circuit_rows)
// Zero optimal cost certifies r_0 inside the ROA; otherwise the optimum
// encodes the minimum susceptance reduction.
inline ConicProblem build_surrogate(const Network& net, const TapState& r0,
                                    bool with_open_circuit_rows = true) {
  detail::check_taps(net, r0);
  const int n = net.n_load;
  const detail::OpenStructure s = detail::open_structure(net);

  ConicProblem p;
  p.n = 2 * n;
  p.A = Matrix::Zero(n, 2 * n);
  p.A.leftCols(n) = s.B_LL_open;
  p.A.rightCols(n) = Matrix(net.load_susceptances.asDiagonal());
  p.b = s.h;

  p.hyperbolics.reserve(n);
  for (int i = 0; i < n; ++i) p.hyperbolics.push_back({n + i, i, net.setpoints[i]});

  const int n_rows = with_open_circuit_rows ? 2 * n : n;
  p.G = Matrix::Zero(n_rows, 2 * n);
  p.g = Vector::Zero(n_rows);
  for (int i = 0; i < n; ++i) {
    p.G(i, i) = 1.0;                        // V_i - r0_i^2 u_i <= 0
    p.G(i, n + i) = -r0[i] * r0[i];
  }
  if (with_open_circuit_rows) {
    p.G.bottomLeftCorner(n, n) = s.B_LL_open;  // open-circuit ceiling rows
    p.g.tail(n) = s.h;
  }
  p.lower = Vector::Constant(2 * n, -std::numeric_limits<double>::infinity());
  p.lower.head(n).setZero();  // V >= 0; u is guarded by the hyperbolics
  return p;
}

namespace detail {

// Strictly interior point of the surrogate: V = gamma E - delta Z 1 keeps
// the open-circuit rows strictly slack even where h vanishes, and u is set
// with a factor-2 margin on the remaining constraints.
inline Vector surrogate_interior_point(const Network& net, const TapState& r0) {
  const int n = net.n_load;
  const OpenStructure s = open_structure(net);
  Eigen::PartialPivLU<Matrix> lu(s.B_LL_open);
  const Vector E = lu.solve(s.h);
  const Vector z1 = lu.solve(Vector::Ones(n));
  const double gamma = 0.5;
  const double delta = 0.25 * gamma * E.minCoeff() / z1.maxCoeff();
  Vector x(2 * n);
  x.head(n) = gamma * E - delta * z1;
  for (int i = 0; i < n; ++i) {
    const double V = x[i];
    const double k = net.setpoints[i];
    x[n + i] = 2.0 * std::max(k * k / V, V / (r0[i] * r0[i]));
  }
  return x;
}

}  // namespace detail

struct StabilityCertificate {
  bool stable = false;
  double optimal_cost = 0.0;
  Vector V;            // witness voltages
  Vector u;            // witness scaled voltages
  TapState underline_r;  // sqrt(V / u); in P and <= r0 when stable
  ConicSolution solution;
};

inline StabilityCertificate certify_stability(const Network& net, const TapState& r0,
                                              double zero_tol = 1e-10) {
  const ConicProblem p = build_surrogate(net, r0, true);
  SolveOptions opts;
  opts.tol = std::min(1e-11, zero_tol / 10.0);
  opts.max_newton = 600;
  opts.start = detail::surrogate_interior_point(net, r0);
  ConicSolution sol = solve(p, opts);
  if (sol.status != SolveStatus::Optimal)
    throw Error(ErrorCode::SolverFailed,
                std::string("surrogate solve: ") + to_string(sol.status));

  const int n = net.n_load;
  StabilityCertificate cert;
  cert.optimal_cost = sol.objective;
  cert.V = sol.x.head(n);
  cert.u = sol.x.tail(n);
  cert.stable = sol.objective <= zero_tol;
  if (cert.stable)
    cert.underline_r = cert.V.cwiseQuotient(cert.u).cwiseSqrt();
  cert.solution = std::move(sol);
  return cert;
}

// Cone-witness ROA membership: certified means a point r in P with r <= r0
// exists, so the cone {r >= witness} is an ROA containing r0. Not certified
// is inconclusive, never a proof of instability.
struct RoaMembership {
  bool certified = false;
  TapState witness;
  Vector slack;  // V_s(witness) - V_0
};

inline RoaMembership roa_membership(const Network& net, const TapState& r0,
                                    double zero_tol = 1e-10) {
  StabilityCertificate cert = certify_stability(net, r0, zero_tol);
  RoaMembership m;
  if (!cert.stable) return m;
  m.certified = true;
  m.witness = cert.underline_r;
  m.slack = in_region_P(net, m.witness).slack;
  return m;
}

struct SupportPlan {
  Vector d;  // susceptance reduction per load bus
  Vector post_support_alpha;
  bool post_support_certified = false;
  double optimal_cost = 0.0;
  double residual_norm = 0.0;
  double total_support = 0.0;
  double percent_susceptance = 0.0;  // 100 * sum d / sum b_s
  double percent_power = 0.0;        // 100 * sum V0^2 d / sum V0^2 b_s
};

// Minimum demand-side susceptance reduction recovered from the surrogate
// optimum: d = [u]^{-1} (B_LL_open V + [b_s] u - h). The result is nudged up
// by a relative 1e-8 so the reduced network lands strictly inside the
// certified region instead of exactly on its boundary.
inline SupportPlan compute_support(const Network& net, const TapState& r0,
                                   double zero_tol = 1e-10) {
  StabilityCertificate cert = certify_stability(net, r0, zero_tol);
  if (cert.stable)
    throw Error(ErrorCode::PreconditionViolation,
                "tap position already certified stable; no support needed");

  const int n = net.n_load;
  const detail::OpenStructure s = detail::open_structure(net);
  const Vector resid =
      s.B_LL_open * cert.V + net.load_susceptances.cwiseProduct(cert.u) - s.h;
  Vector d = resid.cwiseQuotient(cert.u);

  for (int i = 0; i < n; ++i) {
    const double bs = net.load_susceptances[i];
    if (d[i] < -1e-8 || d[i] > bs + 1e-8)
      throw Error(ErrorCode::SupportInfeasible,
                  "d[" + std::to_string(i) + "] = " + std::to_string(d[i]) +
                      " outside [0, b_s]");
    if (d[i] < 1e-10) d[i] = 0.0;
    if (d[i] > 0.0) d[i] = std::min(bs, d[i] * (1.0 + 1e-8) + 1e-12);
  }

  Network reduced = net;
  reduced.load_susceptances -= d;

  SupportPlan plan;
  plan.d = d;
  plan.optimal_cost = cert.optimal_cost;
  plan.residual_norm = std::sqrt(cert.optimal_cost);
  plan.total_support = d.sum();
  plan.percent_susceptance = 100.0 * d.sum() / net.load_susceptances.sum();
  const Vector V0sq = net.setpoints.cwiseAbs2();
  plan.percent_power =
      100.0 * V0sq.dot(d) / V0sq.dot(net.load_susceptances);

  FindAlphaResult alpha = find_alpha(reduced);
  if (!alpha.equilibrium)
    throw Error(ErrorCode::SupportInfeasible, "reduced network has no equilibrium");
  plan.post_support_alpha = alpha.equilibrium->r_star;
  plan.post_support_certified = certify_stability(reduced, r0, zero_tol).stable;
  return plan;
}

namespace detail {

// Objective of the ROA direction problem in (V, u) space: c^T sqrt(V / u).
struct DirectionObjective {
  Vector c;

  double value(const Vector& V, const Vector& u) const {
    double s = 0.0;
    for (int i = 0; i < c.size(); ++i) s += c[i] * std::sqrt(V[i] / u[i]);
    return s;
  }
  void add_grad(const Vector& V, const Vector& u, Vector& gV, Vector& gu) const {
    for (int i = 0; i < c.size(); ++i) {
      const double r = std::sqrt(V[i] / u[i]);
      gV[i] += c[i] / (2.0 * std::sqrt(V[i] * u[i]));
      gu[i] -= c[i] * r / (2.0 * u[i]);
    }
  }
};

}  // namespace detail

// Local solution of min c^T r over r in P, solved as a projected augmented
// Lagrangian in (V, u): equality B_LL_open V + [b_s] u = h handled by the
// multiplier loop, the per-bus cones u_i V_i >= V_{0,i}^2 by projection.
// Initialized at the stable equilibrium, which lies in the target basin.
inline TapState roa_direction_opt(const Network& net, Vector c) {
  const int n = net.n_load;
  if (c.size() != n || c.minCoeff() < 0.0 || c.maxCoeff() <= 0.0)
    throw Error(ErrorCode::PreconditionViolation, "direction must be >= 0 and nonzero");
  c /= c.lpNorm<1>();

  FindAlphaResult ar = find_alpha(net);
  if (!ar.equilibrium)
    throw Error(ErrorCode::NoFeasiblePoint, "P is empty; no equilibrium exists");
  const Vector alpha = ar.equilibrium->r_star;

  const detail::OpenStructure s = detail::open_structure(net);
  const Matrix& Bt = s.B_LL_open;
  const Vector& bs = net.load_susceptances;
  const detail::DirectionObjective obj{c};

  Vector V = load_voltages(net, alpha).first;
  Vector u = V.cwiseQuotient(alpha.cwiseAbs2());

  const auto project = [&](Vector& Vx, Vector& ux) {
    for (int i = 0; i < n; ++i) {
      auto [pu, pv] = project_hyperbolic(ux[i], Vx[i], net.setpoints[i]);
      ux[i] = pu;
      Vx[i] = pv;
    }
  };
  const auto residual = [&](const Vector& Vx, const Vector& ux) {
    return Vector(Bt * Vx + bs.cwiseProduct(ux) - s.h);
  };

  Vector y = Vector::Zero(n);
  double rho = 10.0;
  double prev_gnorm = std::numeric_limits<double>::infinity();

  for (int outer = 0; outer < 60; ++outer) {
    const auto al_value = [&](const Vector& Vx, const Vector& ux) {
      const Vector g = residual(Vx, ux);
      return obj.value(Vx, ux) + y.dot(g) + 0.5 * rho * g.squaredNorm();
    };
    const auto al_grad = [&](const Vector& Vx, const Vector& ux, Vector& gV, Vector& gu) {
      gV.setZero();
      gu.setZero();
      obj.add_grad(Vx, ux, gV, gu);
      const Vector w = y + rho * residual(Vx, ux);
      gV.noalias() += Bt.transpose() * w;
      gu.noalias() += bs.cwiseProduct(w);
    };

    double tau = 1.0 / std::max(1.0, rho);
    Vector gV(n), gu(n);
    al_grad(V, u, gV, gu);
    double fcur = al_value(V, u);
    Vector V_old = V, u_old = u, gV_old = gV, gu_old = gu;

    for (int inner = 0; inner < 400; ++inner) {
      Vector Vn = V - tau * gV;
      Vector un = u - tau * gu;
      project(Vn, un);
      double fn = al_value(Vn, un);
      int backtracks = 0;
      while (fn > fcur - 1e-4 * ((Vn - V).squaredNorm() + (un - u).squaredNorm()) / tau &&
             backtracks < 40) {
        tau *= 0.5;
        Vn = V - tau * gV;
        un = u - tau * gu;
        project(Vn, un);
        fn = al_value(Vn, un);
        ++backtracks;
      }
      const double move = std::sqrt((Vn - V).squaredNorm() + (un - u).squaredNorm());
      V_old = V;
      u_old = u;
      gV_old = gV;
      gu_old = gu;
      V = Vn;
      u = un;
      fcur = fn;
      al_grad(V, u, gV, gu);

      // Barzilai–Borwein step for the next iterate
      const double sy = (V - V_old).dot(gV - gV_old) + (u - u_old).dot(gu - gu_old);
      const double ss = (V - V_old).squaredNorm() + (u - u_old).squaredNorm();
      if (sy > 1e-16) tau = std::clamp(ss / sy, 1e-10, 1e4);
      if (move < 1e-12 * (1.0 + V.norm() + u.norm())) break;
    }

    const Vector g = residual(V, u);
    const double gnorm = g.lpNorm<Eigen::Infinity>();
    if (gnorm <= 1e-11) break;
    y += rho * g;
    if (gnorm > 0.25 * prev_gnorm) rho = std::min(rho * 5.0, 1e9);
    prev_gnorm = gnorm;
  }

  const Vector g = residual(V, u);
  if (g.lpNorm<Eigen::Infinity>() > 1e-3)
    throw Error(ErrorCode::LocalSolveFailed,
                "augmented Lagrangian did not close the power-flow residual");

  // Feasibility restoration: walk the recovered point toward alpha until it
  // enters P. The move is zero for clean solves and collapses to alpha when
  // P degenerates to a single point.
  TapState r = V.cwiseQuotient(u).cwiseSqrt();
  if (!in_region_P(net, r, 1e-12).in_P) {
    double lo = 0.0, hi = 1.0;
    if (!in_region_P(net, alpha, 1e-9).in_P)
      throw Error(ErrorCode::LocalSolveFailed, "alpha itself fails the P check");
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (in_region_P(net, r + mid * (alpha - r), 1e-12).in_P ? hi : lo) = mid;
    }
    r += hi * (alpha - r);
  }
  RegionPResult chk = in_region_P(net, r, 1e-8);
  if (!chk.in_P)
    throw Error(ErrorCode::LocalSolveFailed, "recovered point left the set P");
  return r;
}

struct RoaWitness {
  Vector direction;
  TapState r;
};

// One witness per direction; the union of the cones {r >= witness} is the
// reported inner ROA approximation.
inline std::vector<RoaWitness> union_roa(const Network& net,
                                         const std::vector<Vector>& directions) {
  if (directions.empty())
    throw Error(ErrorCode::PreconditionViolation, "need at least one direction");
  std::vector<RoaWitness> out;
  out.reserve(directions.size());
  for (const Vector& c : directions) {
    Vector cn = c / c.lpNorm<1>();
    out.push_back({cn, roa_direction_opt(net, cn)});
  }
  return out;
}

// Staircase outline of the union projected on the tap pair (i, j), suitable
// for plotting: corner list from upper-left to lower-right, capped at `cap`.
inline std::vector<std::pair<double, double>> roa_projection_corners(
    const std::vector<RoaWitness>& witnesses, int i, int j, double cap = 5.0) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& w : witnesses) pts.emplace_back(w.r[i], w.r[j]);
  std::sort(pts.begin(), pts.end());
  std::vector<std::pair<double, double>> pareto;  // strictly decreasing in second
  for (const auto& p : pts)
    if (pareto.empty() || p.second < pareto.back().second) pareto.push_back(p);
  std::vector<std::pair<double, double>> corners;
  if (pareto.empty()) return corners;
  corners.emplace_back(pareto.front().first, cap);
  for (size_t k = 0; k < pareto.size(); ++k) {
    corners.emplace_back(pareto[k]);
    if (k + 1 < pareto.size()) corners.emplace_back(pareto[k + 1].first, pareto[k].second);
  }
  corners.emplace_back(cap, pareto.back().second);
  return corners;
}

}  // namespace ltcstab
