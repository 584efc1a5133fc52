// Command-line front end: network ingestion, scenario runs, and CSV/JSON
// emission for every analysis in the library.
//
// Exit codes: 0 success/stable, 2 certified-unstable-or-support-needed
// (also collapse and infeasibility verdicts), 1 errors.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ltcstab/admm.hpp"
#include "ltcstab/dynamics.hpp"
#include "ltcstab/equilibria.hpp"
#include "ltcstab/io.hpp"
#include "ltcstab/monitor.hpp"
#include "ltcstab/network.hpp"
#include "ltcstab/twobus.hpp"

using namespace ltcstab;

namespace {

int log_level() {
  const char* env = std::getenv("LTCSTAB_LOG");
  if (!env) return 0;
  const std::string v(env);
  if (v == "debug") return 2;
  if (v == "info") return 1;
  return 0;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[ltcstab] " << msg << "\n";
}

void emit(const std::string& command, const std::string& digest, const json& outputs,
          const std::string& verdict) {
  json env{{"command", command},
           {"inputs", {{"digest", digest}}},
           {"outputs", outputs},
           {"verdict", verdict}};
  std::cout << env.dump(2) << "\n";
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::ParseError, "cannot write " + path);
  out << content;
}

Vector parse_r0(const std::string& text, int n) {
  std::vector<double> vals;
  std::string token;
  std::istringstream ss(text);
  while (std::getline(ss, token, ',')) vals.push_back(std::stod(token));
  if (vals.size() == 1) return Vector::Constant(n, vals[0]);
  if (static_cast<int>(vals.size()) != n)
    throw Error(ErrorCode::ParseError, "--r0 needs 1 or n_load values");
  Eigen::Map<Vector> v(vals.data(), n);
  return v;
}

Vector resolve_r0(const NetworkFile& nf, const std::string& flag) {
  if (!flag.empty()) return parse_r0(flag, nf.network.n_load);
  if (nf.r0) return *nf.r0;
  throw Error(ErrorCode::ParseError, "no r0: pass --r0 or add it to the network file");
}

std::vector<TwoBusEvent> parse_twobus_events(const std::string& text) {
  std::vector<TwoBusEvent> events;
  if (text.empty()) return events;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("--events: ") + e.what());
  }
  for (const json& je : doc) {
    TwoBusEvent ev;
    ev.time = je.at("time").get<double>();
    if (je.contains("x_factor")) ev.x_factor = je["x_factor"].get<double>();
    if (je.contains("load_factor")) ev.load_factor = je["load_factor"].get<double>();
    events.push_back(ev);
  }
  return events;
}

std::vector<Vector> parse_directions(const std::string& text, int n) {
  std::vector<Vector> out;
  std::string token;
  std::istringstream ss(text);
  while (std::getline(ss, token, ';')) {
    if (token.empty()) continue;
    Vector c = Vector::Zero(n);
    if (token[0] == 'e') {
      const int k = std::stoi(token.substr(1));
      if (k < 1 || k > n) throw Error(ErrorCode::ParseError, "direction index out of range");
      c[k - 1] = 1.0;
    } else {
      std::vector<double> vals;
      std::string num;
      std::istringstream ts(token);
      while (std::getline(ts, num, ',')) vals.push_back(std::stod(num));
      if (static_cast<int>(vals.size()) != n)
        throw Error(ErrorCode::ParseError, "direction needs n_load components");
      for (int i = 0; i < n; ++i) c[i] = vals[i];
    }
    out.push_back(c);
  }
  if (out.empty()) throw Error(ErrorCode::ParseError, "no directions given");
  return out;
}

std::vector<int> load_partition_file(const std::string& path, const NetworkFile& nf) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  std::map<int, int> index_of;
  for (size_t i = 0; i < nf.load_ids.size(); ++i) index_of[nf.load_ids[i]] = static_cast<int>(i);
  for (size_t i = 0; i < nf.gen_ids.size(); ++i)
    index_of[nf.gen_ids[i]] = nf.network.n_load + static_cast<int>(i);
  std::vector<int> assignment(nf.network.n_bus(), -1);
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    auto found = index_of.find(std::stoi(it.key()));
    if (found == index_of.end())
      throw Error(ErrorCode::ParseError, "partition: unknown bus id " + it.key());
    assignment[found->second] = it.value().get<int>();
  }
  for (int b = 0; b < nf.network.n_bus(); ++b)
    if (assignment[b] < 0) throw Error(ErrorCode::ParseError, "partition must assign every bus");
  return assignment;
}

json equilibrium_json(const Equilibrium& eq) {
  return {{"r_star", to_json(eq.r_star)},
          {"residual", round12(eq.residual)},
          {"eigenvalues", to_json(eq.jacobian_eigenvalues)},
          {"stability", to_string(eq.stability)},
          {"stable", eq.stable()}};
}

int cmd_twobus(const TwoBusParams& p, bool curve, double kappa, double g_base,
               double direction, int samples, bool do_simulate, double r0, double horizon,
               double dt, const std::string& events_text, const std::string& csv_path,
               const std::string& digest) {
  json out;
  const auto q = quartic_coefficients(p);
  out["coefficients"] = {{"a", round12(q.a)},
                         {"b", round12(q.b)},
                         {"c", round12(q.c)},
                         {"discriminant", round12(q.discriminant)}};
  const auto eq = tap_equilibria(p);
  if (eq) {
    out["equilibria"] = {{"feasible", true},
                         {"r_minus", round12(eq->r_minus)},
                         {"r_plus", round12(eq->r_plus)}};
  } else {
    out["equilibria"] = {{"feasible", false}};
  }

  std::string verdict = eq ? "feasible" : "infeasible";
  int code = eq ? 0 : 2;

  if (curve) {
    TwoBusFamily fam;
    fam.E = p.E;
    fam.R = p.R;
    fam.X = p.X;
    fam.V_0 = p.V_0;
    fam.T = p.T;
    fam.kappa = kappa;
    fam.G_base = g_base;
    fam.direction = direction;
    const auto pts = bl_r_curve(fam, samples);
    out["critical_BL"] = round12(critical_susceptance(fam));
    out["curve_points"] = pts.size();
    std::vector<std::vector<double>> rows;
    for (const auto& cp : pts) rows.push_back({cp.B_L, cp.r_minus, cp.r_plus});
    std::ostringstream csv;
    write_csv(csv, {"B_L", "r_minus", "r_plus"}, rows);
    if (!csv_path.empty())
      write_file(csv_path, csv.str());
    else
      std::cout << csv.str();
    code = 0;
    verdict = "ok";
  }

  if (do_simulate) {
    const auto traj = simulate_twobus(p, r0, horizon, parse_twobus_events(events_text), dt);
    out["simulation"] = {{"verdict", to_string(traj.verdict)},
                         {"final_r", round12(traj.samples.back().r)}};
    if (traj.verdict == Verdict::Converged) out["simulation"]["limit"] = round12(traj.limit);
    if (traj.verdict == Verdict::Collapsed)
      out["simulation"]["t_collapse"] = round12(traj.t_collapse);
    if (!csv_path.empty()) {
      std::vector<std::vector<double>> rows;
      for (const auto& s : traj.samples) rows.push_back({s.t, s.r, s.V1, s.V2});
      std::ostringstream csv;
      write_csv(csv, {"t", "r", "V1", "V2"}, rows);
      write_file(csv_path, csv.str());
    }
    verdict = to_string(traj.verdict);
    code = traj.verdict == Verdict::Collapsed ? 2 : 0;
  }

  emit("twobus", digest, out, verdict);
  return code;
}

int cmd_simulate(const NetworkFile& nf, const std::string& model, const std::string& r0_flag,
                 double horizon, double dt, int max_steps, const std::string& csv_path,
                 const std::string& digest) {
  const Vector r0 = resolve_r0(nf, r0_flag);
  Trajectory traj;
  if (model == "continuous") {
    SimulateOptions opts;
    opts.dt = dt;
    opts.events = nf.events;
    // Convergence is judged against the equilibrium of the post-event network.
    Network post = nf.network;
    for (const auto& ev : nf.events) detail::apply_event(post, ev);
    const auto ar = find_alpha(post);
    if (ar.equilibrium) opts.alpha = ar.equilibrium->r_star;
    traj = integrate_continuous(nf.network, r0, horizon, opts);
  } else if (model == "discrete") {
    auto cfg = DiscreteLtcConfig::defaults(nf.network.n_load);
    traj = simulate_discrete(nf.network, r0, cfg, max_steps, nf.events);
  } else {
    throw Error(ErrorCode::ParseError, "--model must be continuous or discrete");
  }

  json out{{"model", model},
           {"verdict", to_string(traj.verdict)},
           {"samples", traj.samples.size()},
           {"final_r", to_json(traj.samples.back().r)}};
  if (traj.verdict == Verdict::Converged) out["limit"] = to_json(traj.limit);
  if (traj.verdict == Verdict::Collapsed) out["t_collapse"] = round12(traj.t_collapse);
  if (!csv_path.empty()) {
    std::ostringstream csv;
    trajectory_csv(csv, traj);
    write_file(csv_path, csv.str());
  }
  emit("simulate", digest, out, to_string(traj.verdict));
  return traj.verdict == Verdict::Collapsed ? 2 : 0;
}

int cmd_alpha(const NetworkFile& nf, const std::string& digest) {
  const auto res = find_alpha(nf.network);
  if (!res.equilibrium) {
    emit("alpha", digest, {{"feasible", false}, {"iterations", res.iterations}},
         "infeasible");
    return 2;
  }
  json out = equilibrium_json(*res.equilibrium);
  out["feasible"] = true;
  out["alpha"] = out["r_star"];
  out["iterations"] = res.iterations;
  out["monotone"] = res.monotone;
  emit("alpha", digest, out, "ok");
  return 0;
}

int cmd_roa(const NetworkFile& nf, const std::string& directions_text,
            const std::string& pair_text, double cap, const std::string& csv_path,
            const std::string& digest) {
  const int n = nf.network.n_load;
  const auto dirs = parse_directions(directions_text, n);
  const auto witnesses = union_roa(nf.network, dirs);
  json out;
  out["witnesses"] = json::array();
  for (const auto& w : witnesses)
    out["witnesses"].push_back({{"direction", to_json(w.direction)}, {"r", to_json(w.r)}});

  if (!pair_text.empty()) {
    int i = 0, j = 1;
    std::sscanf(pair_text.c_str(), "%d,%d", &i, &j);
    if (i < 1 || j < 1 || i > n || j > n || i == j)
      throw Error(ErrorCode::ParseError, "--pair must name two distinct load buses (1-based)");
    const auto corners = roa_projection_corners(witnesses, i - 1, j - 1, cap);
    std::vector<std::vector<double>> rows;
    for (const auto& c : corners) rows.push_back({c.first, c.second});
    std::ostringstream csv;
    write_csv(csv, {"r_" + std::to_string(i), "r_" + std::to_string(j)}, rows);
    if (!csv_path.empty())
      write_file(csv_path, csv.str());
    else
      std::cout << csv.str();
    out["corners"] = corners.size();
  }
  emit("roa", digest, out, "ok");
  return 0;
}

int cmd_monitor(const NetworkFile& nf, const std::string& r0_flag, double zero_tol,
                const std::string& digest) {
  const Vector r0 = resolve_r0(nf, r0_flag);
  const auto cert = certify_stability(nf.network, r0, zero_tol);
  json out{{"status", cert.stable ? "stable" : "needs_support"},
           {"cost", round12(cert.optimal_cost)},
           {"witness", {{"V", to_json(cert.V)}, {"u", to_json(cert.u)}}}};
  if (cert.stable) out["witness"]["underline_r"] = to_json(cert.underline_r);
  emit("monitor", digest, out, cert.stable ? "stable" : "needs_support");
  return cert.stable ? 0 : 2;
}

int cmd_support(const NetworkFile& nf, const std::string& r0_flag, const std::string& digest) {
  const Vector r0 = resolve_r0(nf, r0_flag);
  const auto plan = compute_support(nf.network, r0);
  json out{{"d", to_json(plan.d)},
           {"post_support_alpha", to_json(plan.post_support_alpha)},
           {"post_support_certified", plan.post_support_certified},
           {"optimal_cost", round12(plan.optimal_cost)},
           {"residual_norm", round12(plan.residual_norm)},
           {"total_support", round12(plan.total_support)},
           {"percent_susceptance", round12(plan.percent_susceptance)},
           {"percent_power", round12(plan.percent_power)}};
  emit("support", digest, out, "needs_support");
  return 2;
}

int cmd_admm(const NetworkFile& nf, const std::string& r0_flag,
             const std::string& partition_path, double rho, double tol, int max_iter,
             const std::string& warm_path, const std::string& csv_path, double zero_tol,
             const std::string& digest) {
  const Vector r0 = resolve_r0(nf, r0_flag);
  std::vector<int> assignment;
  if (!partition_path.empty())
    assignment = load_partition_file(partition_path, nf);
  else if (!nf.partition.empty())
    assignment = nf.partition;
  else
    throw Error(ErrorCode::ParseError, "no partition: pass --partition or add it to the file");

  const auto part = build_partition(nf.network, assignment);
  AdmmOptions opts;
  opts.rho = rho;
  opts.tol = tol;
  opts.max_iter = max_iter;
  if (!warm_path.empty()) {
    json doc = json::parse(read_file(warm_path));
    const int n = nf.network.n_load;
    Vector V(n), u(n);
    for (int i = 0; i < n; ++i) {
      V[i] = doc.at("V")[i].get<double>();
      u[i] = doc.at("u")[i].get<double>();
    }
    opts.V_init = V;
    opts.u_init = u;
  }
  log_info("running consensus admm with rho=" + std::to_string(rho));
  const auto rep = run_admm(nf.network, r0, part, opts);

  json out{{"objective", round12(rep.objective)},
           {"iterations", rep.iterations},
           {"verdict", rep.verdict == AdmmVerdict::Converged ? "converged" : "max_iter"},
           {"agents", part.n_agents},
           {"boundary_buses", part.boundary.size()}};
  if (!csv_path.empty()) {
    std::vector<std::vector<double>> rows;
    for (int k = 0; k < rep.iterations; ++k)
      rows.push_back({static_cast<double>(k + 1), rep.objective_history[k],
                      rep.primal_residual_history[k], rep.dual_residual_history[k]});
    std::ostringstream csv;
    write_csv(csv, {"iter", "objective", "primal_res", "dual_res"}, rows);
    write_file(csv_path, csv.str());
  }
  const bool ok = rep.verdict == AdmmVerdict::Converged && rep.objective <= zero_tol;
  emit("admm", digest, out,
       rep.verdict == AdmmVerdict::Converged
           ? (rep.objective <= zero_tol ? "stable" : "needs_support")
           : "max_iter");
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"long-term voltage stability analysis with load tap-changers"};
  app.require_subcommand(1);

  // twobus ------------------------------------------------------------------
  auto* twobus = app.add_subcommand("twobus", "closed-form two-bus analysis");
  TwoBusParams tb;
  bool curve = false, do_sim = false;
  double kappa = 0.0, g_base = 0.0, direction = 1.0, tb_r0 = 1.0, tb_horizon = 100.0,
         tb_dt = 0.0, cap = 5.0;
  int samples = 100;
  std::string events_text, csv_path;
  twobus->add_option("--E", tb.E);
  twobus->add_option("--R", tb.R);
  twobus->add_option("--X", tb.X);
  twobus->add_option("--GL", tb.G_L);
  twobus->add_option("--BL", tb.B_L);
  twobus->add_option("--V0", tb.V_0);
  twobus->add_option("--T", tb.T);
  twobus->add_flag("--curve", curve);
  twobus->add_option("--kappa", kappa);
  twobus->add_option("--gbase", g_base);
  twobus->add_option("--direction", direction);
  twobus->add_option("--samples", samples);
  twobus->add_flag("--simulate", do_sim);
  twobus->add_option("--r0", tb_r0);
  twobus->add_option("--horizon", tb_horizon);
  twobus->add_option("--dt", tb_dt);
  twobus->add_option("--events", events_text);
  twobus->add_option("--csv", csv_path);

  // network commands ----------------------------------------------------------
  std::string netfile, model = "continuous", r0_flag, directions_text = "e1",
              pair_text, partition_path, warm_path;
  double horizon = 300.0, dt = 0.0, zero_tol = 1e-10, rho = 200.0, admm_tol = 1e-6;
  int max_steps = 2000, max_iter = 20000;

  auto add_net = [&](CLI::App* sub) {
    sub->add_option("netfile", netfile)->required()->check(CLI::ExistingFile);
  };
  auto* simulate = app.add_subcommand("simulate", "integrate the LTC dynamics");
  add_net(simulate);
  simulate->add_option("--model", model);
  simulate->add_option("--r0", r0_flag);
  simulate->add_option("--horizon", horizon);
  simulate->add_option("--dt", dt);
  simulate->add_option("--max-steps", max_steps);
  simulate->add_option("--csv", csv_path);

  auto* alpha = app.add_subcommand("alpha", "largest equilibrium via fixed-point iteration");
  add_net(alpha);

  auto* roa = app.add_subcommand("roa", "directional ROA witnesses and projections");
  add_net(roa);
  roa->add_option("--directions", directions_text);
  roa->add_option("--pair", pair_text);
  roa->add_option("--cap", cap);
  roa->add_option("--csv", csv_path);

  auto* monitor = app.add_subcommand("monitor", "stability certificate for a tap position");
  add_net(monitor);
  monitor->add_option("--r0", r0_flag);
  monitor->add_option("--zero-tol", zero_tol);

  auto* support = app.add_subcommand("support", "minimum demand-side reactive support");
  add_net(support);
  support->add_option("--r0", r0_flag);

  // The distributed objective only reaches the consensus-tolerance floor,
  // so its zero classification is looser than the centralized monitor's.
  double admm_zero_tol = 1e-6;
  auto* admm = app.add_subcommand("admm", "distributed monitoring via consensus ADMM");
  add_net(admm);
  admm->add_option("--r0", r0_flag);
  admm->add_option("--partition", partition_path)->check(CLI::ExistingFile);
  admm->add_option("--rho", rho);
  admm->add_option("--tol", admm_tol);
  admm->add_option("--max-iter", max_iter);
  admm->add_option("--warm", warm_path)->check(CLI::ExistingFile);
  admm->add_option("--zero-tol", admm_zero_tol);
  admm->add_option("--csv", csv_path);

  CLI11_PARSE(app, argc, argv);

  try {
    if (twobus->parsed()) {
      std::ostringstream args;
      args << tb.E << "," << tb.R << "," << tb.X << "," << tb.G_L << "," << tb.B_L << ","
           << tb.V_0 << "," << tb.T;
      return cmd_twobus(tb, curve, kappa, g_base, direction, samples, do_sim, tb_r0,
                        tb_horizon, tb_dt, events_text, csv_path, fnv1a64(args.str()));
    }
    const std::string text = read_file(netfile);
    const std::string digest = fnv1a64(text);
    const NetworkFile nf = parse_network_file(text);
    if (simulate->parsed())
      return cmd_simulate(nf, model, r0_flag, horizon, dt, max_steps, csv_path, digest);
    if (alpha->parsed()) return cmd_alpha(nf, digest);
    if (roa->parsed()) return cmd_roa(nf, directions_text, pair_text, cap, csv_path, digest);
    if (monitor->parsed()) return cmd_monitor(nf, r0_flag, zero_tol, digest);
    if (support->parsed()) return cmd_support(nf, r0_flag, digest);
    if (admm->parsed())
      return cmd_admm(nf, r0_flag, partition_path, rho, admm_tol, max_iter, warm_path,
                      csv_path, admm_zero_tol, digest);
  } catch (const Error& e) {
    json out{{"error", e.what()}, {"code", to_string(e.code())}};
    std::cout << out.dump(2) << "\n";
    return 1;
  } catch (const std::exception& e) {
    json out{{"error", e.what()}};
    std::cout << out.dump(2) << "\n";
    return 1;
  }
  return 1;
}
