#include <doctest.h>

#include <cmath>

#include "ltcstab/conic.hpp"
#include "oracles.hpp"

using namespace ltcstab;

namespace {

double dist2(double ax, double ay, double bx, double by) {
  return (ax - bx) * (ax - bx) + (ay - by) * (ay - by);
}

// Dense 1-D scan over the hyperbola u v = k^2: the checked-in projection
// oracle.
std::pair<double, double> project_oracle(double u, double v, double k, int samples = 200000) {
  if (u > 0 && v > 0 && u * v >= k * k) return {u, v};
  double best_u = k, best_v = k, best = dist2(k, k, u, v);
  const double L = std::log(2.0 + (std::abs(u) + std::abs(v) + k) / k) + 2.0;
  for (int i = 0; i <= samples; ++i) {
    const double s = -L + 2.0 * L * i / samples;
    const double cu = k * std::exp(s), cv = k * std::exp(-s);
    const double d = dist2(cu, cv, u, v);
    if (d < best) {
      best = d;
      best_u = cu;
      best_v = cv;
    }
  }
  return {best_u, best_v};
}

// The monitoring surrogate for the one-load fixture at r0 = 0.2, assembled
// by hand: minimize (V + 0.1875 u - 1)^2 with u V >= 1, u >= 25 V, V >= 0.
ConicProblem oneload_monitor_instance() {
  ConicProblem p;
  p.n = 2;  // x = (V, u)
  p.A = Matrix(1, 2);
  p.A << 1.0, 0.1875;
  p.b = Vector::Constant(1, 1.0);
  p.hyperbolics = {{1, 0, 1.0}};
  p.G = Matrix(1, 2);
  p.G << 1.0, -0.04;  // V <= r0^2 u
  p.g = Vector::Zero(1);
  p.lower = Vector(2);
  p.lower << 0.0, -std::numeric_limits<double>::infinity();
  return p;
}

}  // namespace

TEST_CASE("hyperbolic projection basics") {
  SUBCASE("feasible points are untouched") {
    const auto [u, v] = project_hyperbolic(2.0, 2.0, 1.0);
    CHECK(u == 2.0);
    CHECK(v == 2.0);
  }
  SUBCASE("symmetric infeasible point lands on (k, k)") {
    const auto [u, v] = project_hyperbolic(1.0, 1.0, 2.0);
    CHECK(u == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(v == doctest::Approx(2.0).epsilon(1e-10));
  }
  SUBCASE("asymmetric point matches the dense oracle") {
    const auto [u, v] = project_hyperbolic(3.0, 0.5, 2.0);
    const auto [ou, ov] = project_oracle(3.0, 0.5, 2.0);
    CHECK(u == doctest::Approx(ou).epsilon(1e-6));
    CHECK(v == doctest::Approx(ov).epsilon(1e-6));
    CHECK(u * v >= 4.0 - 1e-12);
  }
  SUBCASE("k = 0 degenerates to the positive quadrant") {
    const auto [u, v] = project_hyperbolic(-1.0, 3.0, 0.0);
    CHECK(u == 0.0);
    CHECK(v == 3.0);
  }
}

TEST_CASE("projection is idempotent") {
  for (int trial = 0; trial < 1000; ++trial) {
    const double k = fixtures::uniform(0.0, 2.0);
    const double u = fixtures::uniform(-3.0, 4.0);
    const double v = fixtures::uniform(-3.0, 4.0);
    const auto [u1, v1] = project_hyperbolic(u, v, k);
    const auto [u2, v2] = project_hyperbolic(u1, v1, k);
    CHECK(std::abs(u2 - u1) <= 1e-12 * (1.0 + std::abs(u1)));
    CHECK(std::abs(v2 - v1) <= 1e-12 * (1.0 + std::abs(v1)));
  }
}

TEST_CASE("projection dominates sampled feasible points") {
  for (int trial = 0; trial < 1000; ++trial) {
    const double k = fixtures::uniform(0.1, 2.0);
    const double u = fixtures::uniform(-2.0, 3.0);
    const double v = fixtures::uniform(-2.0, 3.0);
    if (u > 0 && v > 0 && u * v >= k * k) continue;
    const auto [pu, pv] = project_hyperbolic(u, v, k);
    const double d_proj = dist2(pu, pv, u, v);
    const auto [ou, ov] = project_oracle(u, v, k, 10000);
    CHECK(d_proj <= dist2(ou, ov, u, v) + 1e-12);
  }
}

TEST_CASE("unconstrained solve reduces to the normal equations") {
  Matrix A(6, 4);
  Vector b(6);
  for (int i = 0; i < 6; ++i) {
    b[i] = fixtures::uniform(-2.0, 2.0);
    for (int j = 0; j < 4; ++j) A(i, j) = fixtures::uniform(-1.0, 1.0);
  }
  const auto sol = solve(ConicProblem::least_squares(A, b));
  REQUIRE(sol.status == SolveStatus::Optimal);
  const Vector x_ref = (A.transpose() * A).ldlt().solve(A.transpose() * b);
  CHECK((sol.x - x_ref).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("the one-load monitoring instance solves to the scalar optimum") {
  const ConicProblem p = oneload_monitor_instance();
  SolveOptions opts;
  opts.tol = 1e-11;
  opts.max_newton = 500;
  const auto sol = solve(p, opts);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.objective == doctest::Approx(0.1375 * 0.1375).epsilon(1e-7));
  CHECK(sol.x[0] == doctest::Approx(0.2).epsilon(1e-5));
  CHECK(sol.x[1] == doctest::Approx(5.0).epsilon(1e-5));
  CHECK(sol.kkt_residual <=
        1e-6 * (1.0 + (2.0 * p.A.transpose() * p.b).lpNorm<Eigen::Infinity>()));

  // Convexity sanity: no feasible point beats the reported objective.
  for (int i = 0; i < 2000; ++i) {
    const double V = fixtures::uniform(0.001, 0.2);
    const double u = std::max(1.0 / V, 25.0 * V) * fixtures::uniform(1.0, 3.0);
    const double resid = V + 0.1875 * u - 1.0;
    CHECK(resid * resid >= sol.objective - 1e-9);
  }
}

TEST_CASE("an empty box is reported infeasible") {
  ConicProblem p;
  p.n = 2;
  p.A = Matrix::Zero(1, 2);
  p.A(0, 0) = 1.0;
  p.b = Vector::Zero(1);
  p.hyperbolics = {{0, 1, 2.0}};  // u v >= 4
  p.G = Matrix(2, 2);
  p.G << 1.0, 0.0, 0.0, 1.0;  // u <= 1, v <= 1
  p.g = Vector::Ones(2);
  const auto sol = solve(p);
  CHECK(sol.status == SolveStatus::Infeasible);
}

TEST_CASE("constrained least squares with active linear rows") {
  // minimize (x0 - 1)^2 + (x1 - 2)^2 s.t. x0 + x1 <= 1: optimum on the line.
  ConicProblem p;
  p.n = 2;
  p.A = Matrix::Identity(2, 2);
  p.b = Vector(2);
  p.b << 1.0, 2.0;
  p.G = Matrix(1, 2);
  p.G << 1.0, 1.0;
  p.g = Vector::Constant(1, 1.0);
  SolveOptions opts;
  opts.tol = 1e-10;
  const auto sol = solve(p, opts);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.x[0] == doctest::Approx(0.0).epsilon(1e-5));
  CHECK(sol.x[1] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(sol.objective == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("debug trace records the barrier path") {
  SolveOptions opts;
  opts.collect_trace = true;
  const auto sol = solve(oneload_monitor_instance(), opts);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(!sol.trace.empty());
  CHECK(sol.trace.front()[1] >= sol.trace.back()[1]);  // mu decreases along the path

  std::ostringstream csv;
  trace_csv(csv, sol);
  std::istringstream in(csv.str());
  std::string header;
  std::getline(in, header);
  CHECK(header == "iter,mu,objective,kkt_residual");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == static_cast<int>(sol.trace.size()));
}
