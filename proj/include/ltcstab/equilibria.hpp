#pragma once

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <future>
#include <optional>
#include <thread>
#include <vector>

#include "ltcstab/dynamics.hpp"
#include "ltcstab/network.hpp"

namespace ltcstab {

enum class StabilityKind { Stable, Unstable, Marginal };

inline const char* to_string(StabilityKind s) {
  switch (s) {
    case StabilityKind::Stable: return "stable";
    case StabilityKind::Unstable: return "unstable";
    case StabilityKind::Marginal: return "marginal";
  }
  return "marginal";
}

struct Equilibrium {
  TapState r_star;
  double residual = 0.0;  // max |f(r*) - r*|
  Eigen::VectorXcd jacobian_eigenvalues;
  StabilityKind stability = StabilityKind::Marginal;

  bool stable() const { return stability == StabilityKind::Stable; }
};

namespace detail {

// Cached pieces of the fixed-point map
//   f_i(r) = (E_i - sum_k Z_ik V_{0,k} b_{s,k} / r_k) / V_{0,i}.
// Z and E here are the open-circuit (shunt-free) quantities, independent of r.
struct FixedPointMap {
  Vector E_over_V0;
  Matrix M;  // Z_open with column k scaled by V_{0,k} b_{s,k}
  Vector inv_V0;
  Vector E_open;
  Vector V0;

  explicit FixedPointMap(const Network& net) {
    const SusceptanceBlocks blk =
        assemble_blocks(net, Vector::Ones(net.n_load));
    inv_V0 = net.setpoints.cwiseInverse();
    E_open = blk.E_open;
    V0 = net.setpoints;
    E_over_V0 = blk.E_open.cwiseProduct(inv_V0);
    M = blk.Z_open;
    for (int k = 0; k < net.n_load; ++k)
      M.col(k) *= net.setpoints[k] * net.load_susceptances[k];
  }

  Vector apply(const Vector& r) const {
    return E_over_V0 - inv_V0.cwiseProduct(M * r.cwiseInverse());
  }

  // f(r) - r in extended precision. The plain double evaluation cancels to
  // noise within ~1e-8 of a double root, which is not enough to polish
  // degenerate equilibria.
  Vector residual(const Vector& r) const {
    const int n = static_cast<int>(r.size());
    Vector g(n);
    for (int i = 0; i < n; ++i) {
      long double acc = static_cast<long double>(E_open[i]);
      for (int k = 0; k < n; ++k)
        acc -= static_cast<long double>(M(i, k)) / static_cast<long double>(r[k]);
      acc -= static_cast<long double>(V0[i]) * static_cast<long double>(r[i]);
      g[i] = static_cast<double>(acc / static_cast<long double>(V0[i]));
    }
    return g;
  }

  // df_i/dr_k = (1/V_{0,i}) M_ik / r_k^2
  Matrix jacobian(const Vector& r) const {
    Matrix J = inv_V0.asDiagonal() * M;
    const Vector inv_r2 = r.cwiseAbs2().cwiseInverse();
    for (int k = 0; k < J.cols(); ++k) J.col(k) *= inv_r2[k];
    return J;
  }
};

}  // namespace detail

// Fixed-point map whose fixed points are the equilibria of the LTC
// dynamics. May return non-positive components; callers interpret.
inline Vector fixed_point_map(const Network& net, const TapState& r) {
  detail::check_taps(net, r);
  return detail::FixedPointMap(net).apply(r);
}

// d(r_dot)/dr computed analytically through implicit differentiation of
// B_LL(r) V = h, cross-checked against finite differences in the tests.
inline Matrix jacobian(const Network& net, const TapState& r) {
  detail::check_taps(net, r);
  const int n = net.n_load;
  detail::OpenStructure s = detail::open_structure(net);
  Matrix B = detail::close_loads(net, s.B_LL_open, r);
  Eigen::PartialPivLU<Matrix> lu(B);
  if (lu.rcond() < 1e-12)
    throw Error(ErrorCode::SingularSystem, "B_LL near singular in jacobian");
  const Vector V = lu.solve(s.h);

  Matrix C = Matrix::Zero(n, n);
  for (int k = 0; k < n; ++k)
    C(k, k) = 2.0 * net.load_susceptances[k] * V[k] / (r[k] * r[k] * r[k]);
  const Matrix dV = lu.solve(C);

  Matrix J(n, n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      double dVs = dV(i, k) / r[i];
      if (i == k) dVs -= V[i] / (r[i] * r[i]);
      J(i, k) = dVs / net.time_constants[i];
    }
  }
  return J;
}

namespace detail {

inline StabilityKind classify(const Eigen::VectorXcd& eig) {
  double max_re = -std::numeric_limits<double>::infinity();
  double radius = 0.0;
  for (Eigen::Index i = 0; i < eig.size(); ++i) {
    max_re = std::max(max_re, eig[i].real());
    radius = std::max(radius, std::abs(eig[i]));
  }
  const double margin = 1e-6 * std::max(1.0, radius);
  if (max_re < -margin) return StabilityKind::Stable;
  if (max_re > margin) return StabilityKind::Unstable;
  return StabilityKind::Marginal;
}

inline Equilibrium make_equilibrium(const Network& net, const detail::FixedPointMap& map,
                                    const Vector& r) {
  Equilibrium eq;
  eq.r_star = r;
  eq.residual = map.residual(r).lpNorm<Eigen::Infinity>();
  Eigen::EigenSolver<Matrix> es(jacobian(net, r));
  eq.jacobian_eigenvalues = es.eigenvalues();
  eq.stability = classify(eq.jacobian_eigenvalues);
  return eq;
}

// Damped Newton on g(r) = f(r) - r with steps capped at half the current
// component magnitude (f has poles on the coordinate planes).
inline bool newton_refine(const detail::FixedPointMap& map, Vector& r, double tol,
                          int max_iter) {
  Vector best = r;
  double best_norm = map.residual(r).lpNorm<Eigen::Infinity>();
  for (int it = 0; it < max_iter; ++it) {
    const Vector g = map.residual(r);
    const double gn = g.lpNorm<Eigen::Infinity>();
    if (gn < best_norm) {
      best_norm = gn;
      best = r;
    }
    if (gn <= tol) break;
    Matrix Jg = map.jacobian(r);
    Jg.diagonal().array() -= 1.0;
    Vector delta = Jg.partialPivLu().solve(-g);
    if (!delta.allFinite()) break;
    double scale = 1.0;
    for (int i = 0; i < r.size(); ++i)
      if (std::abs(delta[i]) > 0.5 * r[i]) scale = std::min(scale, 0.5 * r[i] / std::abs(delta[i]));
    r += scale * delta;
    if (r.minCoeff() <= 0.0) {
      r = best;
      break;
    }
    // Residuals plateau at roundoff near multiple roots; the step keeps
    // shrinking, so it is the sharper stop there.
    if ((scale * delta).lpNorm<Eigen::Infinity>() <= 1e-13 * (1.0 + r.lpNorm<Eigen::Infinity>()))
      break;
  }
  const double final_norm = map.residual(r).lpNorm<Eigen::Infinity>();
  if (final_norm > best_norm) r = best;
  return std::min(final_norm, best_norm) <= tol;
}

}  // namespace detail

struct FindAlphaOptions {
  double tol = 1e-10;
  int max_iter = 100000;
  double r_floor = 1e-6;
  std::vector<Vector>* trace = nullptr;  // records the iterates when set
};

struct FindAlphaResult {
  std::optional<Equilibrium> equilibrium;  // empty means P is empty (infeasible)
  int iterations = 0;
  bool monotone = true;  // iterates componentwise non-increasing
};

// Largest equilibrium alpha via the monotone fixed-point iteration started
// at the upper bound [V_0]^{-1} E, followed by a Newton polish. The plain
// iteration is provably decreasing toward alpha when P is non-empty; the
// polish recovers full precision near degenerate (double-root) equilibria.
inline FindAlphaResult find_alpha(const Network& net, FindAlphaOptions opts = {}) {
  const detail::FixedPointMap map(net);
  FindAlphaResult res;
  Vector r = map.E_over_V0;
  if (opts.trace) opts.trace->push_back(r);

  for (res.iterations = 0; res.iterations < opts.max_iter; ++res.iterations) {
    const Vector next = map.apply(r);
    if (next.minCoeff() <= opts.r_floor) return res;  // no equilibrium
    if ((next - r).maxCoeff() > 1e-12) res.monotone = false;
    const double diff = (next - r).lpNorm<Eigen::Infinity>();
    r = next;
    if (opts.trace) opts.trace->push_back(r);
    if (diff <= opts.tol) {
      detail::newton_refine(map, r, 0.0, 60);  // runs to the step-size stop
      if (r.minCoeff() <= opts.r_floor) return res;
      res.equilibrium = detail::make_equilibrium(net, map, r);
      return res;
    }
  }
  return res;  // max_iter exhausted: treated as infeasible
}

struct RegionPResult {
  bool in_P = false;
  TapState r;
  Vector slack;                 // V_s(r) - V_0
  std::vector<int> violations;  // indices with slack < -tol
};

// Membership test for P = { r > 0 : V_s(r) >= V_0 }.
inline RegionPResult in_region_P(const Network& net, const TapState& r, double tol = 1e-9) {
  auto [V, Vs] = load_voltages(net, r);
  RegionPResult res;
  res.r = r;
  res.slack = Vs - net.setpoints;
  for (int i = 0; i < net.n_load; ++i)
    if (res.slack[i] < -tol) res.violations.push_back(i);
  res.in_P = res.violations.empty();
  return res;
}

struct BruteForceOptions {
  int grid_density = 30;
  double refine_tol = 1e-11;
  long max_grid_points = 2'000'000;
};

// Exhaustive desk-scale oracle: damped Newton started from every grid point
// of the box, converged roots deduplicated and labelled by their Jacobian
// spectrum. Cost is grid_density^n, so n is capped at 3.
inline std::vector<Equilibrium> brute_force_equilibria(const Network& net, const Vector& lo,
                                                       const Vector& hi,
                                                       BruteForceOptions opts = {}) {
  const int n = net.n_load;
  if (n > 3) throw Error(ErrorCode::BoxTooLarge, "brute force limited to n_load <= 3");
  if (lo.size() != n || hi.size() != n || lo.minCoeff() <= 0.0 || ((hi - lo).array() <= 0).any())
    throw Error(ErrorCode::PreconditionViolation, "box must lie in the positive orthant");
  long total = 1;
  for (int i = 0; i < n; ++i) {
    total *= opts.grid_density;
    if (total > opts.max_grid_points)
      throw Error(ErrorCode::BoxTooLarge, "grid budget exceeded");
  }

  const detail::FixedPointMap map(net);

  const auto scan = [&](long begin, long end) {
    std::vector<Vector> roots;
    Vector r(n);
    for (long idx = begin; idx < end; ++idx) {
      long rem = idx;
      for (int d = 0; d < n; ++d) {
        const int g = static_cast<int>(rem % opts.grid_density);
        rem /= opts.grid_density;
        r[d] = lo[d] + (hi[d] - lo[d]) * g / (opts.grid_density - 1);
      }
      Vector x = r;
      if (!detail::newton_refine(map, x, opts.refine_tol, 80)) continue;
      if ((x.array() < lo.array() - 1e-9).any() || (x.array() > hi.array() + 1e-9).any())
        continue;
      roots.push_back(x);
    }
    return roots;
  };

  std::vector<Vector> all;
  const unsigned hw = std::thread::hardware_concurrency();
  if (hw > 1 && total > 4096) {
    const long chunk = (total + hw - 1) / hw;
    std::vector<std::future<std::vector<Vector>>> futs;
    for (long b = 0; b < total; b += chunk)
      futs.push_back(std::async(std::launch::async, scan, b, std::min(b + chunk, total)));
    for (auto& f : futs) {
      auto part = f.get();
      all.insert(all.end(), part.begin(), part.end());
    }
  } else {
    all = scan(0, total);
  }

  std::sort(all.begin(), all.end(), [](const Vector& a, const Vector& b) {
    for (int i = 0; i < a.size(); ++i)
      if (a[i] != b[i]) return a[i] < b[i];
    return false;
  });
  std::vector<Equilibrium> out;
  for (const Vector& x : all) {
    const bool dup = std::any_of(out.begin(), out.end(), [&](const Equilibrium& e) {
      return (e.r_star - x).lpNorm<Eigen::Infinity>() < 1e-6;
    });
    if (!dup) out.push_back(detail::make_equilibrium(net, map, x));
  }
  return out;
}

}  // namespace ltcstab
