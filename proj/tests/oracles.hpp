#pragma once

// Shared fixtures and independent oracles for the test suite. The oracles
// deliberately avoid the library's own computation paths: scalar closed
// forms, finite differences, grids and exhaustive sampling.

#include <cmath>
#include <optional>
#include <random>
#include <utility>

#include "ltcstab/dynamics.hpp"
#include "ltcstab/network.hpp"

namespace fixtures {

using ltcstab::Line;
using ltcstab::Matrix;
using ltcstab::Network;
using ltcstab::Vector;

// gen(1.0) -- load, line b = 1.
inline Network oneload(double b_s = 0.1875, double V0 = 1.0, double T = 1.0) {
  Network net;
  net.n_load = 1;
  net.n_gen = 1;
  net.lines = {{0, 1, 1.0}};
  net.gen_voltages = Vector::Constant(1, 1.0);
  net.load_susceptances = Vector::Constant(1, b_s);
  net.setpoints = Vector::Constant(1, V0);
  net.time_constants = Vector::Constant(1, T);
  return ltcstab::validate_network(net);
}

// gen -- load0 -- load1 chain, unit lines.
inline Network twoload_chain(double bs0 = 0.05, double bs1 = 0.05) {
  Network net;
  net.n_load = 2;
  net.n_gen = 1;
  net.lines = {{2, 0, 1.0}, {0, 1, 1.0}};
  net.gen_voltages = Vector::Constant(1, 1.0);
  net.load_susceptances = Vector(2);
  net.load_susceptances << bs0, bs1;
  net.setpoints = Vector::Constant(2, 1.0);
  net.time_constants = Vector::Constant(2, 1.0);
  return ltcstab::validate_network(net);
}

// Two identical loads on identical lines to one generator plus a tie.
inline Network twoload_sym(double bs = 0.15, double tie = 0.5) {
  Network net;
  net.n_load = 2;
  net.n_gen = 1;
  net.lines = {{2, 0, 1.0}, {2, 1, 1.0}, {0, 1, tie}};
  net.gen_voltages = Vector::Constant(1, 1.0);
  net.load_susceptances = Vector::Constant(2, bs);
  net.setpoints = Vector::Constant(2, 1.0);
  net.time_constants = Vector::Constant(2, 1.0);
  return ltcstab::validate_network(net);
}

// gen -- l0 -- l1 -- l2 chain for n = 3 oracle work.
inline Network threeload_chain(double bs = 0.03) {
  Network net;
  net.n_load = 3;
  net.n_gen = 1;
  net.lines = {{3, 0, 1.0}, {0, 1, 1.0}, {1, 2, 1.0}};
  net.gen_voltages = Vector::Constant(1, 1.0);
  net.load_susceptances = Vector::Constant(3, bs);
  net.setpoints = Vector::Constant(3, 1.0);
  net.time_constants = Vector::Constant(3, 1.0);
  return ltcstab::validate_network(net);
}

// Meshed 6-bus fixture: 2 generators, 4 loads.
inline Network sixbus() {
  Network net;
  net.n_load = 4;
  net.n_gen = 2;
  // loads 0..3, gens 4..5
  net.lines = {{4, 0, 2.0}, {5, 2, 2.0}, {0, 1, 1.0}, {1, 2, 1.0},
               {2, 3, 1.0}, {3, 0, 1.0}, {1, 3, 0.8}};
  net.gen_voltages = Vector(2);
  net.gen_voltages << 1.02, 1.0;
  net.load_susceptances = Vector(4);
  net.load_susceptances << 0.06, 0.05, 0.06, 0.05;
  net.setpoints = Vector::Constant(4, 1.0);
  net.time_constants = Vector(4);
  net.time_constants << 1.0, 1.0, 2.0, 2.0;
  return ltcstab::validate_network(net);
}

// Scalar closed forms for the one-load fixture (unit line, unit generator).
inline double oneload_Vs(double r, double b_s) { return r / (r * r + b_s); }

inline std::optional<std::pair<double, double>> oneload_roots(double b_s, double V0 = 1.0) {
  // V_s(r) = V0  <=>  V0 r^2 - r + V0 b_s = 0
  const double disc = 1.0 - 4.0 * V0 * V0 * b_s;
  if (disc < 0.0) return std::nullopt;
  const double lo = (1.0 - std::sqrt(disc)) / (2.0 * V0);
  const double hi = (1.0 + std::sqrt(disc)) / (2.0 * V0);
  return std::make_pair(lo, hi);
}

// Central finite differences of the dynamics right-hand side.
inline Matrix fd_jacobian(const Network& net, const Vector& r, double h = 1e-6) {
  const int n = net.n_load;
  Matrix J(n, n);
  for (int k = 0; k < n; ++k) {
    Vector rp = r, rm = r;
    rp[k] += h;
    rm[k] -= h;
    J.col(k) = (ltcstab::rhs(net, rp) - ltcstab::rhs(net, rm)) / (2.0 * h);
  }
  return J;
}

inline std::mt19937& rng() {
  static std::mt19937 gen(123456789u);
  return gen;
}

inline double uniform(double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng());
}

inline Vector uniform_vec(int n, double lo, double hi) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = uniform(lo, hi);
  return v;
}

}  // namespace fixtures
