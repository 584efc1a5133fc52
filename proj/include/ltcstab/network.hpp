#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "ltcstab/errors.hpp"

namespace ltcstab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Tap ratios, one per load bus. Strictly positive while the system is alive.
using TapState = Eigen::VectorXd;

// Bus indexing convention: load buses come first (0..n_load-1), generator
// buses follow (n_load..n_load+n_gen-1).
struct Line {
  int from = 0;
  int to = 0;
  double b = 0.0;  // series susceptance, p.u., > 0
};

struct Network {
  int n_load = 0;
  int n_gen = 0;
  std::vector<Line> lines;
  Vector gen_voltages;       // V_G, p.u.
  Vector load_susceptances;  // b_s, p.u., secondary-side shunt per load
  Vector setpoints;          // V_0, p.u., secondary voltage references
  Vector time_constants;     // T, seconds

  int n_bus() const { return n_load + n_gen; }
  bool is_load(int bus) const { return bus < n_load; }
};

struct SusceptanceBlocks {
  Matrix B_LL;       // load block including b_s/r^2 shunts on the diagonal
  Matrix B_LL_open;  // load block with the shunts removed
  Matrix B_LG;
  Matrix B_GG;       // assembled for completeness; nothing downstream reads it
  Vector h;          // -B_LG * V_G, constant in r
  Vector E_open;     // open-circuit load voltages, B_LL_open^{-1} h
  Matrix Z_open;     // B_LL_open^{-1}
};

namespace detail {

inline std::vector<std::vector<int>> adjacency(const Network& net) {
  std::vector<std::vector<int>> adj(net.n_bus());
  for (const Line& l : net.lines) {
    adj[l.from].push_back(l.to);
    adj[l.to].push_back(l.from);
  }
  return adj;
}

// BFS over a vertex subset; `member(v)` selects the subgraph.
template <typename Pred>
int reachable_count(const std::vector<std::vector<int>>& adj, int start, Pred member) {
  std::vector<char> seen(adj.size(), 0);
  std::vector<int> stack{start};
  seen[start] = 1;
  int count = 0;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    ++count;
    for (int w : adj[v]) {
      if (!seen[w] && member(w)) {
        seen[w] = 1;
        stack.push_back(w);
      }
    }
  }
  return count;
}

inline void require_positive(const Vector& v, const std::string& name) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0)) {
      throw Error(ErrorCode::NonPositiveParameter,
                  name + "[" + std::to_string(i) + "] = " + std::to_string(v[i]));
    }
  }
}

}  // namespace detail

// Validates a candidate network against the model assumptions: consistent
// sizes, strictly positive parameters, a connected graph, and a connected
// induced subgraph on the load buses.
inline Network validate_network(Network net) {
  if (net.n_load < 1 || net.n_gen < 1)
    throw Error(ErrorCode::NonPositiveParameter,
                "need at least one load and one generator bus");
  if (net.gen_voltages.size() != net.n_gen ||
      net.load_susceptances.size() != net.n_load ||
      net.setpoints.size() != net.n_load || net.time_constants.size() != net.n_load)
    throw Error(ErrorCode::NonPositiveParameter, "parameter vector sizes inconsistent");

  detail::require_positive(net.gen_voltages, "V_G");
  detail::require_positive(net.load_susceptances, "b_s");
  detail::require_positive(net.setpoints, "V_0");
  detail::require_positive(net.time_constants, "T");

  for (size_t idx = 0; idx < net.lines.size(); ++idx) {
    const Line& l = net.lines[idx];
    if (l.from < 0 || l.from >= net.n_bus() || l.to < 0 || l.to >= net.n_bus() ||
        l.from == l.to)
      throw Error(ErrorCode::ParseError, "line " + std::to_string(idx) + " endpoints invalid");
    if (!(l.b > 0.0))
      throw Error(ErrorCode::NonPositiveParameter,
                  "line[" + std::to_string(idx) + "].b = " + std::to_string(l.b));
  }

  auto adj = detail::adjacency(net);
  if (detail::reachable_count(adj, 0, [](int) { return true; }) != net.n_bus())
    throw Error(ErrorCode::DisconnectedGraph, "network graph is not connected");
  const int n = net.n_load;
  if (detail::reachable_count(adj, 0, [n](int v) { return v < n; }) != n)
    throw Error(ErrorCode::DisconnectedLoadSubgraph,
                "induced subgraph on load buses is not connected");
  return net;
}

namespace detail {

inline void check_taps(const Network& net, const TapState& r) {
  if (r.size() != net.n_load)
    throw Error(ErrorCode::NonPositiveTap, "tap vector size mismatch");
  for (Eigen::Index i = 0; i < r.size(); ++i)
    if (!(r[i] > 0.0))
      throw Error(ErrorCode::NonPositiveTap,
                  "r[" + std::to_string(i) + "] = " + std::to_string(r[i]));
}

// Tap-independent part of the partition.
struct OpenStructure {
  Matrix B_LL_open;
  Matrix B_LG;
  Matrix B_GG;
  Vector h;
};

inline OpenStructure open_structure(const Network& net) {
  const int n = net.n_load;
  const int m = net.n_gen;
  OpenStructure s;
  s.B_LL_open = Matrix::Zero(n, n);
  s.B_LG = Matrix::Zero(n, m);
  s.B_GG = Matrix::Zero(m, m);

  for (const Line& l : net.lines) {
    const int i = l.from, k = l.to;
    const bool li = net.is_load(i), lk = net.is_load(k);
    if (li && lk) {
      s.B_LL_open(i, k) -= l.b;
      s.B_LL_open(k, i) -= l.b;
      s.B_LL_open(i, i) += l.b;
      s.B_LL_open(k, k) += l.b;
    } else if (li && !lk) {
      s.B_LG(i, k - n) -= l.b;
      s.B_LL_open(i, i) += l.b;
      s.B_GG(k - n, k - n) += l.b;
    } else if (!li && lk) {
      s.B_LG(k, i - n) -= l.b;
      s.B_LL_open(k, k) += l.b;
      s.B_GG(i - n, i - n) += l.b;
    } else {
      s.B_GG(i - n, k - n) -= l.b;
      s.B_GG(k - n, i - n) -= l.b;
      s.B_GG(i - n, i - n) += l.b;
      s.B_GG(k - n, k - n) += l.b;
    }
  }
  s.h = -s.B_LG * net.gen_voltages;
  return s;
}

inline Matrix close_loads(const Network& net, const Matrix& B_LL_open, const TapState& r) {
  Matrix B = B_LL_open;
  for (int i = 0; i < net.n_load; ++i)
    B(i, i) += net.load_susceptances[i] / (r[i] * r[i]);
  return B;
}

}  // namespace detail

// Susceptance matrix partition for a given tap vector. The diagonal of B_LL
// carries the reflected load shunts b_s/r^2; B_LL_open omits them.
inline SusceptanceBlocks assemble_blocks(const Network& net, const TapState& r) {
  detail::check_taps(net, r);
  detail::OpenStructure s = detail::open_structure(net);

  SusceptanceBlocks blk;
  blk.B_LL = detail::close_loads(net, s.B_LL_open, r);
  blk.B_LL_open = std::move(s.B_LL_open);
  blk.B_LG = std::move(s.B_LG);
  blk.B_GG = std::move(s.B_GG);
  blk.h = std::move(s.h);

  Eigen::PartialPivLU<Matrix> lu(blk.B_LL_open);
  blk.Z_open = lu.solve(Matrix::Identity(net.n_load, net.n_load));
  blk.E_open = lu.solve(blk.h);
  return blk;
}

// Solves B_LL(r) V_L = h and returns (V_L, V_s) with V_s = V_L / r.
inline std::pair<Vector, Vector> load_voltages(const Network& net, const TapState& r) {
  detail::check_taps(net, r);
  detail::OpenStructure s = detail::open_structure(net);
  Matrix B = detail::close_loads(net, s.B_LL_open, r);
  Eigen::PartialPivLU<Matrix> lu(B);
  if (lu.rcond() < 1e-12)
    throw Error(ErrorCode::SingularSystem,
                "B_LL reciprocal condition estimate " + std::to_string(lu.rcond()));
  Vector V = lu.solve(s.h);
  Vector Vs = V.cwiseQuotient(r);
  return {std::move(V), std::move(Vs)};
}

}  // namespace ltcstab
