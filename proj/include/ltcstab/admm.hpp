#pragma once

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <optional>
#include <thread>
#include <vector>

#include "ltcstab/conic.hpp"
#include "ltcstab/network.hpp"

namespace ltcstab {

// Graph partition into connected agents. Consensus machinery only exists
// for load buses: generator voltages are constants, so foreign copies of
// them would carry no information.
struct Partition {
  int n_agents = 0;
  std::vector<int> agent_of_bus;                      // size n_bus
  std::vector<std::vector<int>> own_load;             // per agent, sorted
  std::vector<std::vector<int>> adjacent;             // N_i^a: all foreign adjacent buses
  std::vector<std::vector<int>> adj_load;             // N_i^a restricted to loads
  std::vector<std::vector<int>> own_boundary;         // own loads some other agent copies
  std::vector<int> boundary;                          // all shared load buses, sorted
  std::vector<std::vector<int>> bus_neighbor_agents;  // per load bus, sorted foreign agents
};

inline Partition build_partition(const Network& net, const std::vector<int>& assignment) {
  const int nb = net.n_bus();
  if (static_cast<int>(assignment.size()) != nb)
    throw Error(ErrorCode::PreconditionViolation, "assignment must cover every bus");
  Partition part;
  part.agent_of_bus = assignment;
  part.n_agents = *std::max_element(assignment.begin(), assignment.end()) + 1;
  for (int b = 0; b < nb; ++b)
    if (assignment[b] < 0 || assignment[b] >= part.n_agents)
      throw Error(ErrorCode::PreconditionViolation, "agent id out of range");

  const auto adj = detail::adjacency(net);
  part.own_load.resize(part.n_agents);
  part.adjacent.resize(part.n_agents);
  part.adj_load.resize(part.n_agents);
  part.own_boundary.resize(part.n_agents);
  part.bus_neighbor_agents.resize(net.n_load);

  for (int a = 0; a < part.n_agents; ++a) {
    int first = -1, count = 0;
    for (int b = 0; b < nb; ++b)
      if (assignment[b] == a) {
        if (first < 0) first = b;
        ++count;
      }
    if (count == 0)
      throw Error(ErrorCode::DisconnectedAgent, "agent " + std::to_string(a) + " is empty");
    const int reached = detail::reachable_count(
        adj, first, [&](int v) { return assignment[v] == a; });
    if (reached != count)
      throw Error(ErrorCode::DisconnectedAgent,
                  "agent " + std::to_string(a) + " induces a disconnected subgraph");
    for (int b = 0; b < net.n_load; ++b)
      if (assignment[b] == a) part.own_load[a].push_back(b);
  }

  std::vector<std::vector<char>> is_adj(part.n_agents, std::vector<char>(nb, 0));
  for (const Line& l : net.lines) {
    if (l.b == 0.0) continue;
    const int ai = assignment[l.from], ak = assignment[l.to];
    if (ai != ak) {
      is_adj[ai][l.to] = 1;
      is_adj[ak][l.from] = 1;
    }
  }
  for (int a = 0; a < part.n_agents; ++a) {
    for (int b = 0; b < nb; ++b) {
      if (!is_adj[a][b]) continue;
      part.adjacent[a].push_back(b);
      if (net.is_load(b)) {
        part.adj_load[a].push_back(b);
        part.bus_neighbor_agents[b].push_back(a);
      }
    }
  }
  for (int j = 0; j < net.n_load; ++j) {
    if (!part.bus_neighbor_agents[j].empty()) {
      part.boundary.push_back(j);
      part.own_boundary[assignment[j]].push_back(j);
    }
  }
  return part;
}

struct AgentState {
  int id = 0;
  Vector V;       // aligned with partition.own_load[id]
  Vector u;       // aligned with partition.own_load[id]
  Vector W;       // aligned with partition.adj_load[id]
  Vector lambda;  // aligned with partition.own_boundary[id]
  Vector mu;      // aligned with partition.adj_load[id]
  Vector z_own;   // consensus copies for own_boundary
  Vector z_adj;   // consensus copies for adj_load
};

// Message schema of the 3-step protocol. A W-kind message carries the
// aggregated consensus contribution mu + rho * W for one shared bus, a
// Z-kind message carries the refreshed consensus value.
enum class MsgKind { W, Z };

struct BusMessage {
  int from_agent = 0;
  int round = 0;
  int bus = 0;
  MsgKind kind = MsgKind::W;
  double value = 0.0;
};

// In-process bulk-synchronous transport: a round's sends all complete
// before any collect. Deliveries are ordered by (bus, sender).
class BulkSynchronousBus {
 public:
  void post(const BusMessage& m) { pending_.push_back(m); }

  void barrier() {
    std::stable_sort(pending_.begin(), pending_.end(),
                     [](const BusMessage& a, const BusMessage& b) {
                       return std::tie(a.bus, a.from_agent) < std::tie(b.bus, b.from_agent);
                     });
    delivered_ = std::move(pending_);
    pending_.clear();
  }

  std::vector<BusMessage> collect(MsgKind kind, int bus) const {
    std::vector<BusMessage> out;
    for (const auto& m : delivered_)
      if (m.kind == kind && m.bus == bus) out.push_back(m);
    return out;
  }

 private:
  std::vector<BusMessage> pending_;
  std::vector<BusMessage> delivered_;
};

// Closed-form consensus update for one shared bus: the owner's (lambda, V)
// plus one (mu + rho W) contribution per neighboring agent.
inline double z_update(double lambda, double V_new, const std::vector<double>& foreign_contrib,
                       double rho) {
  if (foreign_contrib.empty())
    throw Error(ErrorCode::MissingContribution,
                "bus has no neighboring agents; consensus update is undefined");
  double s = lambda + rho * V_new;
  for (double c : foreign_contrib) s += c;
  return s / (rho * (1.0 + static_cast<double>(foreign_contrib.size())));
}

namespace detail {

// Static description of one agent's subproblem; the prox right-hand sides
// are refreshed every round.
struct AgentProblem {
  int id = 0;
  int n_own = 0, n_adj = 0;
  std::vector<int> own, adj, own_bnd;
  std::vector<int> bnd_pos;  // positions of own_bnd inside own
  Matrix A_net;              // objective network rows
  Vector b_net;
  ConicProblem base;         // constraints + zero prox rows, filled per round
  int prox_row0 = 0;

  double objective(const Vector& x) const { return (A_net * x - b_net).squaredNorm(); }
};

inline AgentProblem build_agent_problem(const Network& net, const Partition& part,
                                        const TapState& r0, int a) {
  AgentProblem ap;
  ap.id = a;
  ap.own = part.own_load[a];
  ap.adj = part.adj_load[a];
  ap.own_bnd = part.own_boundary[a];
  ap.n_own = static_cast<int>(ap.own.size());
  ap.n_adj = static_cast<int>(ap.adj.size());

  std::map<int, int> pos_own, pos_adj;
  for (int i = 0; i < ap.n_own; ++i) pos_own[ap.own[i]] = i;
  for (int i = 0; i < ap.n_adj; ++i) pos_adj[ap.adj[i]] = i;
  for (int j : ap.own_bnd) ap.bnd_pos.push_back(pos_own[j]);

  const int nv = 2 * ap.n_own + ap.n_adj;
  ap.A_net = Matrix::Zero(ap.n_own, nv);
  ap.b_net = Vector::Zero(ap.n_own);

  for (const Line& l : net.lines) {
    if (l.b == 0.0) continue;
    for (int flip = 0; flip < 2; ++flip) {
      const int j = flip ? l.to : l.from;
      const int k = flip ? l.from : l.to;
      auto it = pos_own.find(j);
      if (it == pos_own.end() || !net.is_load(j)) continue;
      const int p = it->second;
      ap.A_net(p, p) += l.b;  // diagonal of the open-circuit block
      if (net.is_load(k)) {
        if (auto ko = pos_own.find(k); ko != pos_own.end())
          ap.A_net(p, ko->second) -= l.b;
        else
          ap.A_net(p, 2 * ap.n_own + pos_adj.at(k)) -= l.b;
      } else {
        ap.b_net[p] += l.b * net.gen_voltages[k - net.n_load];
      }
    }
  }
  for (int i = 0; i < ap.n_own; ++i)
    ap.A_net(i, ap.n_own + i) = net.load_susceptances[ap.own[i]];

  const int n_prox = static_cast<int>(ap.own_bnd.size()) + ap.n_adj;
  ConicProblem& p = ap.base;
  p.n = nv;
  p.A = Matrix::Zero(ap.n_own + n_prox, nv);
  p.b = Vector::Zero(ap.n_own + n_prox);
  p.A.topRows(ap.n_own) = ap.A_net;
  p.b.head(ap.n_own) = ap.b_net;
  ap.prox_row0 = ap.n_own;

  for (int i = 0; i < ap.n_own; ++i) {
    const int j = ap.own[i];
    p.hyperbolics.push_back({ap.n_own + i, i, net.setpoints[j]});
  }
  // V_j <= r0_j^2 u_j and the open-circuit ceiling rows
  p.G = Matrix::Zero(2 * ap.n_own, nv);
  p.g = Vector::Zero(2 * ap.n_own);
  for (int i = 0; i < ap.n_own; ++i) {
    const int j = ap.own[i];
    p.G(i, i) = 1.0;
    p.G(i, ap.n_own + i) = -r0[j] * r0[j];
  }
  p.G.bottomRows(ap.n_own) = ap.A_net;
  for (int i = 0; i < ap.n_own; ++i) p.G(ap.n_own + i, ap.n_own + i) = 0.0;  // drop u column
  p.g.tail(ap.n_own) = ap.b_net;

  p.lower = Vector::Constant(nv, -std::numeric_limits<double>::infinity());
  p.lower.head(ap.n_own).setZero();
  return ap;
}

}  // namespace detail

// Solves one agent's proximal subproblem given the current consensus values
// and multipliers. The dual linear terms are folded into completed squares,
// so the subproblem stays a plain least-squares cone program.
inline AgentState x_update(const detail::AgentProblem& ap, AgentState st, double rho) {
  ConicProblem p = ap.base;
  const double w = std::sqrt(rho / 2.0);
  int row = ap.prox_row0;
  for (size_t i = 0; i < ap.own_bnd.size(); ++i, ++row) {
    p.A(row, ap.bnd_pos[i]) = w;
    p.b[row] = w * (st.z_own[i] - st.lambda[i] / rho);
  }
  for (int i = 0; i < ap.n_adj; ++i, ++row) {
    p.A(row, 2 * ap.n_own + i) = w;
    p.b[row] = w * (st.z_adj[i] - st.mu[i] / rho);
  }

  SolveOptions opts;
  opts.tol = 1e-10;
  opts.max_newton = 400;
  Vector hint(p.n);
  hint.head(ap.n_own) = st.V;
  hint.segment(ap.n_own, ap.n_own) = st.u;
  hint.tail(ap.n_adj) = st.W;
  opts.start = hint;
  ConicSolution sol = solve(p, opts);
  if (sol.status != SolveStatus::Optimal)
    throw Error(ErrorCode::AgentSolveFailed,
                "agent " + std::to_string(ap.id) + ": " + to_string(sol.status));

  st.V = sol.x.head(ap.n_own);
  st.u = sol.x.segment(ap.n_own, ap.n_own);
  st.W = sol.x.tail(ap.n_adj);
  return st;
}

// Multiplier ascent for one agent after the round's consensus broadcast.
// Returns the largest consensus gap it saw (the agent's primal residual).
inline double dual_update(const detail::AgentProblem& ap, AgentState& s,
                          const std::map<int, double>& z, double rho) {
  double primal_res = 0.0;
  for (size_t i = 0; i < ap.own_bnd.size(); ++i) {
    const double zi = z.at(ap.own_bnd[i]);
    s.z_own[i] = zi;
    const double gap = s.V[ap.bnd_pos[i]] - zi;
    s.lambda[i] += rho * gap;
    primal_res = std::max(primal_res, std::abs(gap));
  }
  for (int i = 0; i < ap.n_adj; ++i) {
    const double zi = z.at(ap.adj[i]);
    s.z_adj[i] = zi;
    const double gap = s.W[i] - zi;
    s.mu[i] += rho * gap;
    primal_res = std::max(primal_res, std::abs(gap));
  }
  return primal_res;
}

enum class AdmmVerdict { Converged, MaxIter };

struct AdmmReport {
  int iterations = 0;
  std::vector<double> objective_history;
  std::vector<double> primal_residual_history;
  std::vector<double> dual_residual_history;
  std::vector<AgentState> agents;
  std::vector<double> z;  // aligned with partition.boundary
  double objective = 0.0;
  AdmmVerdict verdict = AdmmVerdict::MaxIter;
};

struct AdmmOptions {
  double rho = 200.0;
  double tol = 1e-6;  // consensus residual target, p.u.
  int max_iter = 20000;
  std::optional<Vector> V_init;  // global warm start, size n_load
  std::optional<Vector> u_init;
};

// Consensus ADMM over the partitioned surrogate, bulk-synchronous rounds:
// (1) local solves + W broadcast, (2) consensus updates at bus owners + z
// broadcast, (3) dual updates. Deterministic: reductions are ordered by
// (bus, agent) regardless of scheduling.
inline AdmmReport run_admm(const Network& net, const TapState& r0, const Partition& part,
                           AdmmOptions opts = {}) {
  detail::check_taps(net, r0);
  if (!(opts.rho > 0.0)) throw Error(ErrorCode::PreconditionViolation, "rho must be > 0");
  const int na = part.n_agents;

  std::vector<detail::AgentProblem> problems;
  problems.reserve(na);
  for (int a = 0; a < na; ++a) problems.push_back(detail::build_agent_problem(net, part, r0, a));

  const double u_flat = net.setpoints.maxCoeff() * net.setpoints.maxCoeff();
  std::vector<AgentState> st(na);
  for (int a = 0; a < na; ++a) {
    AgentState& s = st[a];
    s.id = a;
    const auto& ap = problems[a];
    s.V = Vector::Constant(ap.n_own, 1.0);
    s.u = Vector::Constant(ap.n_own, u_flat);
    s.W = Vector::Constant(ap.n_adj, 1.0);
    if (opts.V_init) {
      for (int i = 0; i < ap.n_own; ++i) s.V[i] = (*opts.V_init)[ap.own[i]];
      for (int i = 0; i < ap.n_adj; ++i) s.W[i] = (*opts.V_init)[ap.adj[i]];
    }
    if (opts.u_init)
      for (int i = 0; i < ap.n_own; ++i) s.u[i] = (*opts.u_init)[ap.own[i]];
    s.lambda = Vector::Zero(ap.own_bnd.size());
    s.mu = Vector::Zero(ap.n_adj);
    s.z_own = Vector::Constant(ap.own_bnd.size(), 1.0);
    s.z_adj = Vector::Constant(ap.n_adj, 1.0);
    if (opts.V_init) {
      for (size_t i = 0; i < ap.own_bnd.size(); ++i) s.z_own[i] = (*opts.V_init)[ap.own_bnd[i]];
      for (int i = 0; i < ap.n_adj; ++i) s.z_adj[i] = (*opts.V_init)[ap.adj[i]];
    }
  }

  std::map<int, double> z;  // consensus value per boundary bus
  for (int b : part.boundary) z[b] = opts.V_init ? (*opts.V_init)[b] : 1.0;

  AdmmReport rep;
  BulkSynchronousBus bus;
  double prev_obj = std::numeric_limits<double>::infinity();

  const auto for_each_agent = [&](auto&& fn) {
    const unsigned hw = std::thread::hardware_concurrency();
    if (hw > 1 && na > 1) {
      std::vector<std::future<void>> futs;
      futs.reserve(na);
      for (int a = 0; a < na; ++a) futs.push_back(std::async(std::launch::async, fn, a));
      for (auto& f : futs) f.get();
    } else {
      for (int a = 0; a < na; ++a) fn(a);
    }
  };

  for (int it = 1; it <= opts.max_iter; ++it) {
    // Step 1: local solves, then broadcast the consensus contributions.
    for_each_agent([&](int a) { st[a] = x_update(problems[a], std::move(st[a]), opts.rho); });
    for (int a = 0; a < na; ++a)
      for (int i = 0; i < problems[a].n_adj; ++i)
        bus.post({a, it, problems[a].adj[i], MsgKind::W,
                  st[a].mu[i] + opts.rho * st[a].W[i]});
    bus.barrier();

    // Step 2: consensus updates at the bus owners, then broadcast z.
    double dual_res = 0.0;
    for (int b : part.boundary) {
      const int owner = part.agent_of_bus[b];
      const auto& ap = problems[owner];
      const int k = static_cast<int>(std::lower_bound(ap.own_bnd.begin(), ap.own_bnd.end(), b) -
                                     ap.own_bnd.begin());
      std::vector<double> contrib;
      for (const auto& m : bus.collect(MsgKind::W, b)) contrib.push_back(m.value);
      if (contrib.size() != part.bus_neighbor_agents[b].size())
        throw Error(ErrorCode::MissingContribution,
                    "bus " + std::to_string(b) + " expected " +
                        std::to_string(part.bus_neighbor_agents[b].size()) + " contributions");
      const double z_new =
          z_update(st[owner].lambda[k], st[owner].V[ap.bnd_pos[k]], contrib, opts.rho);
      dual_res = std::max(dual_res, opts.rho * std::abs(z_new - z[b]));
      z[b] = z_new;
      bus.post({owner, it, b, MsgKind::Z, z_new});
    }
    bus.barrier();

    // Step 3: dual updates. Each agent sees its own buses' z locally (it
    // computed them) and its neighbors' through the broadcast messages.
    double primal_res = 0.0;
    for (int a = 0; a < na; ++a) {
      std::map<int, double> z_view;
      for (int b : problems[a].own_bnd) z_view[b] = z.at(b);
      for (int b : problems[a].adj) {
        const auto msgs = bus.collect(MsgKind::Z, b);
        if (msgs.empty())
          throw Error(ErrorCode::MissingContribution,
                      "no consensus broadcast for bus " + std::to_string(b));
        z_view[b] = msgs.front().value;
      }
      primal_res = std::max(primal_res, dual_update(problems[a], st[a], z_view, opts.rho));
    }

    double obj = 0.0;
    for (int a = 0; a < na; ++a) {
      Vector x(problems[a].base.n);
      x.head(problems[a].n_own) = st[a].V;
      x.segment(problems[a].n_own, problems[a].n_own) = st[a].u;
      x.tail(problems[a].n_adj) = st[a].W;
      obj += problems[a].objective(x);
    }

    rep.iterations = it;
    rep.objective_history.push_back(obj);
    rep.primal_residual_history.push_back(primal_res);
    rep.dual_residual_history.push_back(dual_res);

    // Both stops are in per-unit voltage terms: consensus gaps directly, and
    // z movement with the rho amplification of the recorded dual residual
    // divided back out.
    const bool obj_settled = std::abs(obj - prev_obj) <= 1e-4 * std::max(1.0, std::abs(obj));
    prev_obj = obj;
    if (it >= 2 && primal_res <= opts.tol && dual_res <= opts.tol * opts.rho && obj_settled) {
      rep.verdict = AdmmVerdict::Converged;
      break;
    }
  }

  rep.agents = std::move(st);
  for (int b : part.boundary) rep.z.push_back(z.at(b));
  rep.objective = rep.objective_history.empty() ? 0.0 : rep.objective_history.back();
  return rep;
}

}  // namespace ltcstab
