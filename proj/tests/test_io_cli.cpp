#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "ltcstab/io.hpp"
#include "oracles.hpp"

using namespace ltcstab;

namespace {

const std::string kFixtures = LTCSTAB_FIXTURE_DIR;
const std::string kCli = LTCSTAB_CLI_PATH;

struct CliResult {
  int exit_code = -1;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = kCli + " " + args + " 2>/dev/null";
  std::array<char, 4096> buf{};
  CliResult res;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  size_t got;
  while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0) res.out.append(buf.data(), got);
  const int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

json envelope(const CliResult& res) {
  const json doc = json::parse(res.out);
  REQUIRE(doc.contains("command"));
  REQUIRE(doc.contains("inputs"));
  REQUIRE(doc.contains("outputs"));
  REQUIRE(doc.contains("verdict"));
  return doc;
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

int csv_rows(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  int rows = -1;  // discount the header
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  return rows;
}

}  // namespace

TEST_CASE("network files parse into validated networks") {
  const auto nf = load_network_file(kFixtures + "/sixbus.json");
  CHECK(nf.network.n_load == 4);
  CHECK(nf.network.n_gen == 2);
  CHECK(nf.network.lines.size() == 7);
  CHECK(nf.partition.size() == 6);
  CHECK(nf.load_ids == std::vector<int>{1, 2, 3, 4});

  const auto ev = load_network_file(kFixtures + "/oneload_event.json");
  REQUIRE(ev.events.size() == 2);
  CHECK(ev.events[0].action == NetworkEvent::Action::ScaleLine);
  CHECK(ev.events[1].action == NetworkEvent::Action::ScaleLoad);
  REQUIRE(ev.r0.has_value());
}

TEST_CASE("unknown keys and malformed documents are rejected") {
  CHECK_THROWS_AS(parse_network_file("{\"version\": 1, \"buses\": [], \"lines\": [], \"zap\": 1}"),
                  Error);
  CHECK_THROWS_AS(
      parse_network_file(
          R"({"version": 1,
              "buses": [{"id": 1, "kind": "load", "b_s": 0.1, "V0": 1, "T": 1, "extra": 2},
                         {"id": 2, "kind": "gen", "V": 1}],
              "lines": [{"from": 1, "to": 2, "b": 1}]})"),
      Error);
  CHECK_THROWS_AS(parse_network_file("not json"), Error);
  // r0 of the wrong length
  CHECK_THROWS_AS(
      parse_network_file(
          R"({"version": 1,
              "buses": [{"id": 1, "kind": "load", "b_s": 0.1, "V0": 1, "T": 1},
                         {"id": 2, "kind": "gen", "V": 1}],
              "lines": [{"from": 1, "to": 2, "b": 1}],
              "r0": [0.5, 0.6]})"),
      Error);
}

TEST_CASE("floating point output uses 12 significant digits") {
  CHECK(format_double(1.0 / 3.0) == "0.333333333333");
  CHECK(format_double(0.1875) == "0.1875");
  CHECK(round12(1.0 / 3.0) == doctest::Approx(1.0 / 3.0).epsilon(1e-11));
}

TEST_CASE("cli: twobus equilibria") {
  const auto res = run_cli("twobus --E 1 --X 1 --R 0 --GL 0.8 --BL 0.4");
  CHECK(res.exit_code == 0);
  const json doc = envelope(res);
  CHECK(doc["outputs"]["equilibria"]["feasible"].get<bool>());
  CHECK(doc["outputs"]["equilibria"]["r_minus"].get<double>() ==
        doctest::Approx(0.894427191).epsilon(1e-8));
  CHECK(doc["outputs"]["equilibria"]["r_plus"].get<double>() ==
        doctest::Approx(1.0).epsilon(1e-8));

  const auto infeasible = run_cli("twobus --E 1 --X 1 --R 0 --GL 1.0 --BL 0.5");
  CHECK(infeasible.exit_code == 2);
  CHECK(envelope(infeasible)["verdict"] == "infeasible");
}

TEST_CASE("cli: twobus curve emission") {
  const std::string csv = tmp_path("ltcstab_curve.csv");
  const auto res = run_cli("twobus --curve --kappa 2 --samples 100 --csv " + csv);
  CHECK(res.exit_code == 0);
  const json doc = envelope(res);
  CHECK(doc["outputs"]["critical_BL"].get<double>() ==
        doctest::Approx(0.4045084972).epsilon(1e-7));
  CHECK(csv_rows(csv) == 100);
}

TEST_CASE("cli: twobus simulation with events") {
  const std::string events = R"([{"time":10,"x_factor":1.2},{"time":11,"load_factor":0.7}])";
  const auto rescued = run_cli(
      "twobus --GL 0.8 --BL 0.4 --simulate --r0 1.0 --horizon 200 --events '" + events +
      "'");
  CHECK(rescued.exit_code == 0);
  CHECK(envelope(rescued)["outputs"]["simulation"]["verdict"] == "converged");

  const auto lost = run_cli(
      R"(twobus --GL 0.8 --BL 0.4 --simulate --r0 1.0 --horizon 200 --events '[{"time":10,"x_factor":1.2}]')");
  CHECK(lost.exit_code == 2);
  CHECK(envelope(lost)["outputs"]["simulation"]["verdict"] == "collapsed");
}

TEST_CASE("cli: simulate on the one-load fixture") {
  const std::string net = kFixtures + "/oneload.json";
  const std::string csv = tmp_path("ltcstab_traj.csv");

  const auto conv = run_cli("simulate " + net + " --r0 0.5 --csv " + csv);
  CHECK(conv.exit_code == 0);
  const json doc = envelope(conv);
  CHECK(doc["verdict"] == "converged");
  CHECK(doc["outputs"]["limit"][0].get<double>() == doctest::Approx(0.75).epsilon(1e-3));
  CHECK(csv_rows(csv) > 10);

  const auto fall = run_cli("simulate " + net + " --r0 0.2");
  CHECK(fall.exit_code == 2);
  CHECK(envelope(fall)["verdict"] == "collapsed");

  const auto disc = run_cli("simulate " + net + " --model discrete --r0 0.5");
  CHECK(disc.exit_code == 0);
  const json ddoc = envelope(disc);
  CHECK(ddoc["verdict"] == "converged");
  CHECK(ddoc["outputs"]["final_r"][0].get<double>() == doctest::Approx(0.75).epsilon(0.05));
}

TEST_CASE("cli: scenario file events drive the run") {
  const std::string net = kFixtures + "/oneload_event.json";
  const auto res = run_cli("simulate " + net + " --horizon 300");
  CHECK(res.exit_code == 0);
  CHECK(envelope(res)["verdict"] == "converged");
}

TEST_CASE("cli: alpha") {
  const auto res = run_cli("alpha " + kFixtures + "/oneload.json");
  CHECK(res.exit_code == 0);
  const json doc = envelope(res);
  CHECK(doc["outputs"]["alpha"][0].get<double>() == doctest::Approx(0.75).epsilon(1e-8));
  CHECK(doc["outputs"]["stable"].get<bool>());

  const auto inf = run_cli("alpha " + kFixtures + "/oneload_infeasible.json");
  CHECK(inf.exit_code == 2);
  CHECK(envelope(inf)["verdict"] == "infeasible");
}

TEST_CASE("cli: monitor and support") {
  const std::string net = kFixtures + "/oneload.json";

  const auto stable = run_cli("monitor " + net + " --r0 0.5");
  CHECK(stable.exit_code == 0);
  CHECK(envelope(stable)["outputs"]["status"] == "stable");

  const auto needs = run_cli("monitor " + net + " --r0 0.2");
  CHECK(needs.exit_code == 2);
  const json ndoc = envelope(needs);
  CHECK(ndoc["outputs"]["status"] == "needs_support");
  CHECK(ndoc["outputs"]["cost"].get<double>() == doctest::Approx(0.01890625).epsilon(1e-6));

  const auto support = run_cli("support " + net + " --r0 0.2");
  CHECK(support.exit_code == 2);
  const json sdoc = envelope(support);
  CHECK(sdoc["outputs"]["d"][0].get<double>() == doctest::Approx(0.0275).epsilon(1e-5));
  CHECK(sdoc["outputs"]["post_support_certified"].get<bool>());
}

TEST_CASE("cli: roa witnesses and projection corners") {
  const std::string csv = tmp_path("ltcstab_roa.csv");
  const auto res = run_cli("roa " + kFixtures +
                           "/twoload_sym.json --directions \"e1;e2;0.5,0.5\" --pair 1,2 --csv " +
                           csv);
  CHECK(res.exit_code == 0);
  const json doc = envelope(res);
  CHECK(doc["outputs"]["witnesses"].size() == 3);
  CHECK(csv_rows(csv) >= 3);
}

TEST_CASE("cli: admm agrees with monitor") {
  const std::string net = kFixtures + "/twoload_chain.json";

  const auto mon = run_cli("monitor " + net + " --r0 0.2");
  const double cost = envelope(mon)["outputs"]["cost"].get<double>();

  const auto single = run_cli("admm " + net + " --r0 0.2 --partition " + kFixtures +
                              "/chain_single_agent.json");
  CHECK(single.exit_code == 2);  // converged, support needed
  const json sdoc = envelope(single);
  CHECK(sdoc["outputs"]["verdict"] == "converged");
  CHECK(sdoc["outputs"]["objective"].get<double>() ==
        doctest::Approx(cost).epsilon(1e-4));

  const std::string csv = tmp_path("ltcstab_admm.csv");
  const auto dual = run_cli("admm " + net + " --r0 0.2 --partition " + kFixtures +
                            "/chain_two_agents.json --csv " + csv);
  CHECK(dual.exit_code == 2);
  const json ddoc = envelope(dual);
  CHECK(ddoc["outputs"]["objective"].get<double>() == doctest::Approx(cost).epsilon(1e-4));
  CHECK(csv_rows(csv) == ddoc["outputs"]["iterations"].get<int>());

  const auto stable = run_cli("admm " + net + " --r0 0.85 --partition " + kFixtures +
                              "/chain_two_agents.json");
  CHECK(stable.exit_code == 0);
  CHECK(envelope(stable)["verdict"] == "stable");
}

TEST_CASE("cli: errors exit with code 1") {
  const auto missing = run_cli("alpha /nonexistent.json");
  CHECK(missing.exit_code != 0);

  const std::string bad = tmp_path("ltcstab_bad.json");
  std::ofstream(bad) << "{\"version\": 1, \"buses\": [], \"lines\": []}";
  const auto invalid = run_cli("alpha " + bad);
  CHECK(invalid.exit_code == 1);
  const json doc = json::parse(invalid.out);
  CHECK(doc.contains("error"));
}
