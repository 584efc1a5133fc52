#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <vector>

#include "ltcstab/errors.hpp"
#include "ltcstab/network.hpp"

namespace ltcstab {

// Closed-form analysis of a single generator feeding a constant-admittance
// load through an LTC. Unlike the networked model this one admits line
// resistance and a complex load admittance G_L + jB_L (B_L > 0 capacitive,
// B_L < 0 inductive; the networked convention -j b_s corresponds to
// B_L = -b_s).
struct TwoBusParams {
  double E = 1.0;    // source voltage magnitude
  double R = 0.0;    // line resistance
  double X = 1.0;    // line reactance
  double G_L = 0.0;  // load conductance
  double B_L = 0.0;  // load susceptance
  double V_0 = 1.0;  // secondary reference voltage
  double T = 1.0;    // LTC time constant, seconds
};

inline void check_params(const TwoBusParams& p) {
  if (!(p.E > 0.0)) throw Error(ErrorCode::NonPositiveParameter, "E");
  if (!(p.V_0 > 0.0)) throw Error(ErrorCode::NonPositiveParameter, "V_0");
  if (!(p.T > 0.0)) throw Error(ErrorCode::NonPositiveParameter, "T");
  if (p.R == 0.0 && p.X == 0.0)
    throw Error(ErrorCode::NonPositiveParameter, "(R, X) = (0, 0)");
}

// Coefficients of the quadratic in r^2 whose roots are the tap equilibria,
// plus its discriminant.
struct QuarticCoeffs {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double discriminant = 0.0;
};

inline QuarticCoeffs quartic_coefficients(const TwoBusParams& p) {
  check_params(p);
  QuarticCoeffs q;
  const double V0sq = p.V_0 * p.V_0;
  const double YLsq = p.G_L * p.G_L + p.B_L * p.B_L;
  const double Zsq = p.R * p.R + p.X * p.X;
  q.a = V0sq;
  q.b = 2.0 * V0sq * (p.R * p.G_L - p.X * p.B_L) - p.E * p.E;
  q.c = V0sq * YLsq * Zsq;
  q.discriminant = q.b * q.b - 4.0 * q.a * q.c;
  return q;
}

struct TapPair {
  double r_minus = 0.0;  // unstable equilibrium; the ROA is {r >= r_minus}
  double r_plus = 0.0;   // stable equilibrium
};

// Both nonnegative roots of the quadratic, or nullopt when no equilibrium
// exists for the given load.
inline std::optional<TapPair> tap_equilibria(const TwoBusParams& p) {
  const QuarticCoeffs q = quartic_coefficients(p);
  if (q.discriminant < 0.0 || q.b > 0.0) return std::nullopt;
  const double root = std::sqrt(q.discriminant);
  const double lo = std::max(0.0, (-q.b - root) / (2.0 * q.a));
  const double hi = (-q.b + root) / (2.0 * q.a);
  return TapPair{std::sqrt(lo), std::sqrt(hi)};
}

// Primary/secondary voltage magnitudes at tap ratio r.
inline double primary_voltage(const TwoBusParams& p, double r) {
  const std::complex<double> denom =
      std::complex<double>(p.R, p.X) * std::complex<double>(p.G_L, p.B_L) + r * r;
  return std::abs(r * r * p.E / denom);
}

inline double secondary_voltage(const TwoBusParams& p, double r) {
  const std::complex<double> denom =
      std::complex<double>(p.R, p.X) * std::complex<double>(p.G_L, p.B_L) + r * r;
  return std::abs(r * p.E / denom);
}

// One-parameter load family along the ray
//   G_L = G_base + kappa * |B_L|,  B_L = direction * t,  t >= 0.
struct TwoBusFamily {
  double E = 1.0;
  double R = 0.0;
  double X = 1.0;
  double V_0 = 1.0;
  double T = 1.0;
  double kappa = 0.0;      // constant power factor slope
  double G_base = 0.0;     // fixed conductance offset
  double direction = 1.0;  // +1 sweeps capacitive, -1 inductive

  TwoBusParams at(double t) const {
    TwoBusParams p;
    p.E = E;
    p.R = R;
    p.X = X;
    p.V_0 = V_0;
    p.T = T;
    p.B_L = direction * t;
    p.G_L = G_base + kappa * t;
    return p;
  }
};

inline bool family_feasible(const TwoBusFamily& fam, double t) {
  const QuarticCoeffs q = quartic_coefficients(fam.at(t));
  return q.discriminant >= 0.0 && q.b <= 0.0;
}

// Largest |B_L| along the family ray for which equilibria exist, found by
// bisection on the feasibility predicate. Returns the signed B_L value.
inline double critical_susceptance(const TwoBusFamily& fam, double tol = 1e-10) {
  if (!family_feasible(fam, 0.0))
    throw Error(ErrorCode::NoFeasiblePoint, "family infeasible already at B_L = 0");
  double lo = 0.0, hi = 1.0;
  int grow = 0;
  while (family_feasible(fam, hi)) {
    lo = hi;
    hi *= 2.0;
    if (++grow > 60)
      throw Error(ErrorCode::SolverFailed,
                  "family stays feasible along the whole ray; no critical susceptance");
  }
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (family_feasible(fam, mid) ? lo : hi) = mid;
  }
  return fam.direction * lo;
}

struct CurvePoint {
  double B_L = 0.0;
  double r_minus = 0.0;
  double r_plus = 0.0;
};

// Equilibrium branches sampled from B_L = 0 out to the critical value.
inline std::vector<CurvePoint> bl_r_curve(const TwoBusFamily& fam, int n_samples) {
  if (n_samples < 2) throw Error(ErrorCode::PreconditionViolation, "n_samples < 2");
  const double b_crit = std::abs(critical_susceptance(fam));
  std::vector<CurvePoint> pts;
  pts.reserve(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    const double t = b_crit * i / (n_samples - 1);
    auto eq = tap_equilibria(fam.at(t));
    if (!eq) {
      // Discriminant can dip just below zero at the critical sample; the
      // double root is -b/(2a).
      const QuarticCoeffs q = quartic_coefficients(fam.at(t));
      const double r = std::sqrt(std::max(0.0, -q.b / (2.0 * q.a)));
      eq = TapPair{r, r};
    }
    pts.push_back({fam.direction * t, eq->r_minus, eq->r_plus});
  }
  return pts;
}

enum class Verdict { Converged, Collapsed, Undecided };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Converged: return "converged";
    case Verdict::Collapsed: return "collapsed";
    case Verdict::Undecided: return "undecided";
  }
  return "undecided";
}

// Timed multiplicative disturbance: scales the line reactance and/or the
// whole load admittance.
struct TwoBusEvent {
  double time = 0.0;
  double x_factor = 1.0;
  double load_factor = 1.0;
};

struct TwoBusTrajectory {
  struct Sample {
    double t = 0.0;
    double r = 0.0;
    double V1 = 0.0;
    double V2 = 0.0;
  };
  std::vector<Sample> samples;
  Verdict verdict = Verdict::Undecided;
  double limit = 0.0;       // r_plus of the post-event parameters when Converged
  double t_collapse = 0.0;  // valid when Collapsed
};

// RK4 integration of T r' = V_2(r) - V_0 with events applied at exact step
// boundaries. Collapse is declared at r <= 1e-3 or when the voltage divider
// degenerates.
inline TwoBusTrajectory simulate_twobus(TwoBusParams p, double r0, double horizon,
                                        std::vector<TwoBusEvent> events = {},
                                        double dt = 0.0) {
  check_params(p);
  if (!(r0 > 0.0)) throw Error(ErrorCode::NonPositiveTap, "r0");
  if (dt <= 0.0) dt = p.T / 100.0;
  constexpr double r_floor = 1e-3;

  std::sort(events.begin(), events.end(),
            [](const TwoBusEvent& a, const TwoBusEvent& b) { return a.time < b.time; });

  TwoBusTrajectory traj;
  double t = 0.0, r = r0;
  size_t next_event = 0;

  const auto degenerate = [&](double rr) {
    const std::complex<double> denom =
        std::complex<double>(p.R, p.X) * std::complex<double>(p.G_L, p.B_L) + rr * rr;
    return std::abs(denom) < 1e-12;
  };
  const auto rate = [&](double rr) { return (secondary_voltage(p, rr) - p.V_0) / p.T; };
  const auto record = [&] {
    traj.samples.push_back({t, r, primary_voltage(p, r), secondary_voltage(p, r)});
  };

  record();
  while (t < horizon - 1e-12) {
    while (next_event < events.size() && events[next_event].time <= t + 1e-12) {
      p.X *= events[next_event].x_factor;
      p.G_L *= events[next_event].load_factor;
      p.B_L *= events[next_event].load_factor;
      ++next_event;
    }
    double t_stop = horizon;
    if (next_event < events.size()) t_stop = std::min(t_stop, events[next_event].time);
    const int steps = std::max(1, static_cast<int>(std::ceil((t_stop - t) / dt - 1e-9)));
    const double h = (t_stop - t) / steps;

    bool done = false;
    for (int s = 0; s < steps && !done; ++s) {
      if (r <= r_floor || degenerate(r)) {
        traj.verdict = Verdict::Collapsed;
        traj.t_collapse = t;
        return traj;
      }
      const double k1 = rate(r);
      const double k2 = rate(std::max(r + 0.5 * h * k1, 1e-12));
      const double k3 = rate(std::max(r + 0.5 * h * k2, 1e-12));
      const double k4 = rate(std::max(r + h * k3, 1e-12));
      r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t += h;
      record();

      if (next_event == events.size() && std::abs(rate(r)) < 1e-8) {
        if (auto eq = tap_equilibria(p); eq && std::abs(r - eq->r_plus) < 1e-4) {
          traj.verdict = Verdict::Converged;
          traj.limit = eq->r_plus;
          return traj;
        }
        done = true;  // settled somewhere that is not r_plus
      }
    }
    if (done) break;
  }

  if (r <= r_floor || degenerate(r)) {
    traj.verdict = Verdict::Collapsed;
    traj.t_collapse = t;
    return traj;
  }
  if (auto eq = tap_equilibria(p);
      eq && std::abs(rate(r)) < 1e-8 && std::abs(r - eq->r_plus) < 1e-4) {
    traj.verdict = Verdict::Converged;
    traj.limit = eq->r_plus;
  }
  return traj;
}

}  // namespace ltcstab
