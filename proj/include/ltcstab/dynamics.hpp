#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "ltcstab/network.hpp"
#include "ltcstab/twobus.hpp"  // Verdict

namespace ltcstab {

// Tap ratio deadband controller acting every `period` seconds.
struct DiscreteLtcConfig {
  Vector deadband;  // d, p.u.
  Vector step;      // tap increment, p.u.
  double period = 10.0;

  static DiscreteLtcConfig defaults(int n_load) {
    DiscreteLtcConfig cfg;
    cfg.deadband = Vector::Constant(n_load, 0.01);
    cfg.step = Vector::Constant(n_load, 0.0125);
    return cfg;
  }
};

struct NetworkEvent {
  enum class Action { ScaleLoad, ScaleLine, RemoveLine };
  double time = 0.0;
  Action action = Action::ScaleLoad;
  int target = 0;       // load bus index for ScaleLoad, line index otherwise
  double factor = 1.0;  // ignored for RemoveLine
};

struct Trajectory {
  struct Sample {
    double t = 0.0;
    Vector r;
    Vector V_s;
  };
  std::vector<Sample> samples;
  Verdict verdict = Verdict::Undecided;
  Vector limit;             // final tap vector when Converged
  double t_collapse = 0.0;  // valid when Collapsed
};

// Right-hand side of the continuous LTC dynamics, per load bus:
// r_i' = (V_{s,i}(r) - V_{0,i}) / T_i.
inline Vector rhs(const Network& net, const TapState& r) {
  auto [V, Vs] = load_voltages(net, r);
  return (Vs - net.setpoints).cwiseQuotient(net.time_constants);
}

struct SimulateOptions {
  double dt = 0.0;  // <= 0 selects min(T)/100
  std::vector<NetworkEvent> events;
  std::optional<Vector> alpha;  // convergence target (post-event equilibrium)
  double r_floor = 1e-3;
};

namespace detail {

inline void apply_event(Network& net, const NetworkEvent& ev) {
  switch (ev.action) {
    case NetworkEvent::Action::ScaleLoad:
      net.load_susceptances[ev.target] *= ev.factor;
      break;
    case NetworkEvent::Action::ScaleLine:
      net.lines[ev.target].b *= ev.factor;
      break;
    case NetworkEvent::Action::RemoveLine:
      net.lines[ev.target].b = 0.0;  // zero-susceptance line drops out of assembly
      break;
  }
}

}  // namespace detail

inline Trajectory integrate_continuous(Network net, const TapState& r0, double horizon,
                                       SimulateOptions opts = {}) {
  detail::check_taps(net, r0);
  double dt = opts.dt > 0.0 ? opts.dt : net.time_constants.minCoeff() / 100.0;
  std::sort(opts.events.begin(), opts.events.end(),
            [](const NetworkEvent& a, const NetworkEvent& b) { return a.time < b.time; });

  Trajectory traj;
  Vector r = r0;
  double t = 0.0;
  size_t next_event = 0;

  const auto collapse = [&] {
    traj.verdict = Verdict::Collapsed;
    traj.t_collapse = t;
  };
  const auto record = [&](const Vector& Vs) { traj.samples.push_back({t, r, Vs}); };

  try {
    {
      auto [V, Vs] = load_voltages(net, r);
      record(Vs);
    }
    while (t < horizon - 1e-12) {
      while (next_event < opts.events.size() && opts.events[next_event].time <= t + 1e-12) {
        detail::apply_event(net, opts.events[next_event]);
        ++next_event;
      }
      double t_stop = horizon;
      if (next_event < opts.events.size())
        t_stop = std::min(t_stop, opts.events[next_event].time);
      const int steps = std::max(1, static_cast<int>(std::ceil((t_stop - t) / dt - 1e-9)));
      const double h = (t_stop - t) / steps;

      for (int s = 0; s < steps; ++s) {
        if (r.minCoeff() <= opts.r_floor) {
          collapse();
          return traj;
        }
        const Vector k1 = rhs(net, r);
        if (next_event == opts.events.size() && k1.lpNorm<Eigen::Infinity>() < 1e-8) {
          const bool at_alpha =
              !opts.alpha || (r - *opts.alpha).lpNorm<Eigen::Infinity>() < 1e-4;
          if (at_alpha) {
            traj.verdict = Verdict::Converged;
            traj.limit = r;
            return traj;
          }
        }
        const Vector k2 = rhs(net, (r + 0.5 * h * k1).cwiseMax(1e-12));
        const Vector k3 = rhs(net, (r + 0.5 * h * k2).cwiseMax(1e-12));
        const Vector k4 = rhs(net, (r + h * k3).cwiseMax(1e-12));
        r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        r = r.cwiseMax(1e-12);
        t += h;
        auto [V, Vs] = load_voltages(net, r);
        record(Vs);
      }
    }

    if (r.minCoeff() <= opts.r_floor) {
      collapse();
      return traj;
    }
    const Vector rdot = rhs(net, r);
    if (rdot.lpNorm<Eigen::Infinity>() < 1e-8 &&
        (!opts.alpha || (r - *opts.alpha).lpNorm<Eigen::Infinity>() < 1e-4)) {
      traj.verdict = Verdict::Converged;
      traj.limit = r;
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SingularSystem) throw;
    collapse();
  }
  return traj;
}

// One deadband controller update. Strict inequalities: on the deadband edge
// the tap holds its position.
inline TapState step_discrete(const Network& net, const TapState& r,
                              const DiscreteLtcConfig& cfg) {
  auto [V, Vs] = load_voltages(net, r);
  TapState next = r;
  for (int i = 0; i < net.n_load; ++i) {
    if (Vs[i] > net.setpoints[i] + cfg.deadband[i])
      next[i] += cfg.step[i];
    else if (Vs[i] < net.setpoints[i] - cfg.deadband[i])
      next[i] -= cfg.step[i];
  }
  return next;
}

inline Trajectory simulate_discrete(Network net, const TapState& r0,
                                    const DiscreteLtcConfig& cfg, int max_steps,
                                    std::vector<NetworkEvent> events = {},
                                    double r_floor = 1e-3) {
  detail::check_taps(net, r0);
  std::sort(events.begin(), events.end(),
            [](const NetworkEvent& a, const NetworkEvent& b) { return a.time < b.time; });

  Trajectory traj;
  Vector r = r0;
  size_t next_event = 0;
  int quiet_steps = 0;

  try {
    for (int k = 0; k <= max_steps; ++k) {
      const double t = k * cfg.period;
      while (next_event < events.size() && events[next_event].time <= t + 1e-12) {
        detail::apply_event(net, events[next_event]);
        ++next_event;
      }
      if (r.minCoeff() <= r_floor) {
        traj.verdict = Verdict::Collapsed;
        traj.t_collapse = t;
        return traj;
      }
      auto [V, Vs] = load_voltages(net, r);
      traj.samples.push_back({t, r, Vs});

      const TapState next = step_discrete(net, r, cfg);
      quiet_steps = (next == r) ? quiet_steps + 1 : 0;
      if (quiet_steps >= 3 && next_event == events.size()) {
        traj.verdict = Verdict::Converged;
        traj.limit = r;
        return traj;
      }
      r = next;
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SingularSystem) throw;
    traj.verdict = Verdict::Collapsed;
    traj.t_collapse = traj.samples.empty() ? 0.0 : traj.samples.back().t;
  }
  return traj;
}

}  // namespace ltcstab
