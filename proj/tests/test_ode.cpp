#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "cnfik/dynamics.hpp"
#include "cnfik/errors.hpp"
#include "cnfik/ode.hpp"
#include "cnfik/rng.hpp"
#include "testutil.hpp"

using namespace cnfik;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd randomVec(Rng& rng, int n, double scale = 1.0) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

DynamicsNet randomNet(int stateDim, int conditionDim, std::vector<int> hidden,
                      Activation act, uint64_t seed, double scale = 0.3) {
  DynamicsConfig cfg;
  cfg.state_dim = stateDim;
  cfg.condition_dim = conditionDim;
  cfg.hidden = std::move(hidden);
  cfg.activation = act;
  DynamicsNet net(cfg);
  testutil::randomizeParams(net, seed, scale);
  return net;
}

}  // namespace

TEST_CASE("exponential decay is integrated to tolerance") {
  const VectorField f = [](double, const VectorXd& y, VectorXd& dy) { dy = -y; };
  const VectorXd y0 = VectorXd::Ones(1);

  SUBCASE("dopri5") {
    IntegrateStats stats;
    const VectorXd y = integrate(f, y0, 0.0, 2.0, SolverConfig::dopri5(1e-8, 1e-10), &stats);
    CHECK(std::abs(y[0] - std::exp(-2.0)) < 1e-7);
    CHECK(stats.accepted > 0);
    CHECK(stats.evals >= 6 * stats.accepted);
  }
  SUBCASE("rk4") {
    const VectorXd y = integrate(f, y0, 0.0, 2.0, SolverConfig::rk4(64));
    CHECK(std::abs(y[0] - std::exp(-2.0)) < 1e-7);
  }
  SUBCASE("backward in time") {
    const VectorXd yf = integrate(f, y0, 0.0, 2.0, SolverConfig::rk4(64));
    const VectorXd yb = integrate(f, yf, 2.0, 0.0, SolverConfig::rk4(64));
    CHECK(std::abs(yb[0] - 1.0) < 1e-8);
  }
  SUBCASE("zero-length interval returns the input") {
    const VectorXd y = integrate(f, y0, 0.5, 0.5, SolverConfig::rk4(8));
    CHECK(y[0] == 1.0);
  }
}

TEST_CASE("rk4 halving the step size divides the error by about sixteen") {
  const VectorField f = [](double t, const VectorXd& y, VectorXd& dy) {
    dy[0] = std::cos(t) * y[0];
  };
  const VectorXd y0 = VectorXd::Ones(1);
  const double exact = std::exp(std::sin(3.0));
  const double errCoarse =
      std::abs(integrate(f, y0, 0.0, 3.0, SolverConfig::rk4(20))[0] - exact);
  const double errFine =
      std::abs(integrate(f, y0, 0.0, 3.0, SolverConfig::rk4(40))[0] - exact);
  const double ratio = errCoarse / errFine;
  CHECK(ratio > 12.0);
  CHECK(ratio < 20.0);
}

TEST_CASE("harmonic oscillator stays on the circle") {
  const VectorField f = [](double, const VectorXd& y, VectorXd& dy) {
    dy[0] = y[1];
    dy[1] = -y[0];
  };
  VectorXd y0(2);
  y0 << 1.0, 0.0;
  const double tEnd = 10.0;
  const VectorXd y = integrate(f, y0, 0.0, tEnd, SolverConfig::dopri5(1e-8, 1e-8));
  CHECK(std::abs(y[0] - std::cos(tEnd)) < 1e-5);
  CHECK(std::abs(y[1] + std::sin(tEnd)) < 1e-5);
}

TEST_CASE("dopri5 error decreases with the tolerance") {
  const VectorField f = [](double t, const VectorXd& y, VectorXd& dy) {
    dy[0] = std::cos(t) * y[0];
  };
  const VectorXd y0 = VectorXd::Ones(1);
  const double exact = std::exp(std::sin(3.0));
  double prevErr = 1e9;
  for (double tol : {1e-4, 1e-6, 1e-8}) {
    const double err =
        std::abs(integrate(f, y0, 0.0, 3.0, SolverConfig::dopri5(tol, tol))[0] - exact);
    CHECK(err < 1e3 * tol);
    CHECK(err <= prevErr + 1e-12);
    prevErr = err;
  }
}

TEST_CASE("blowup raises SolverError with the failure time") {
  const VectorField f = [](double, const VectorXd& y, VectorXd& dy) {
    dy[0] = y[0] * y[0]; // finite-time singularity at t = 1
  };
  const VectorXd y0 = VectorXd::Ones(1);
  CHECK_THROWS_AS(integrate(f, y0, 0.0, 2.0, SolverConfig::rk4(32)), SolverError);
  try {
    integrate(f, y0, 0.0, 2.0, SolverConfig::rk4(32));
  } catch (const SolverError& e) {
    CHECK(e.t > 0.0);
    CHECK(e.t <= 2.0);
  }
  CHECK_THROWS_AS(integrate(f, y0, 0.0, 2.0, SolverConfig::dopri5(1e-6, 1e-6)),
                  SolverError);
}

TEST_CASE("step budget exhaustion raises SolverError") {
  const VectorField f = [](double, const VectorXd& y, VectorXd& dy) { dy = -y; };
  SolverConfig cfg = SolverConfig::dopri5(1e-10, 1e-12);
  cfg.max_steps = 3;
  CHECK_THROWS_AS(integrate(f, VectorXd::Ones(1), 0.0, 50.0, cfg), SolverError);
}

TEST_CASE("augmented integration of a linear field matches the matrix exponential") {
  Rng rng(77);
  const int n = 3;
  MatrixXd A(n, n);
  for (int i = 0; i < n * n; ++i) A(i / n, i % n) = 0.4 * rng.normal();
  const DynamicsNet net = testutil::linearNet(A, 2);
  const VectorXd cond = VectorXd::Zero(2);
  const VectorXd z0 = randomVec(rng, n);

  SUBCASE("forward: state exp(A) z0, logdet -tr(A)") {
    const AugmentedState s =
        integrateAugmented(net, z0, cond, 0.0, 1.0, TraceSpec::exact(n),
                           SolverConfig::rk4(64));
    const VectorXd expected = A.exp() * z0;
    CHECK((s.z - expected).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(s.logdet == doctest::Approx(-A.trace()).epsilon(1e-9));
  }
  SUBCASE("backward from q: state exp(-A) q, logdet +tr(A)") {
    const VectorXd q = randomVec(rng, n);
    const AugmentedState s =
        integrateAugmented(net, q, cond, 1.0, 0.0, TraceSpec::exact(n),
                           SolverConfig::rk4(64));
    const VectorXd expected = (-A).exp() * q;
    CHECK((s.z - expected).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(s.logdet == doctest::Approx(A.trace()).epsilon(1e-9));
  }
  SUBCASE("TraceSpec::none leaves the logdet at zero") {
    const AugmentedState s = integrateAugmented(net, z0, cond, 0.0, 1.0,
                                                TraceSpec::none(), SolverConfig::rk4(16));
    CHECK(s.logdet == 0.0);
  }
}

TEST_CASE("round trip through a random net returns the start point") {
  Rng rng(88);
  for (int trial = 0; trial < 5; ++trial) {
    const DynamicsNet net =
        randomNet(4, 3, {8, 8}, trial % 2 ? Activation::Tanh : Activation::Softplus,
                  100 + trial);
    const VectorXd cond = randomVec(rng, 3, 0.5);
    const VectorXd z = randomVec(rng, 4);
    const SolverConfig solver = SolverConfig::rk4(64);
    const AugmentedState fwd =
        integrateAugmented(net, z, cond, 0.0, 1.0, TraceSpec::none(), solver);
    const AugmentedState back =
        integrateAugmented(net, fwd.z, cond, 1.0, 0.0, TraceSpec::none(), solver);
    CHECK((back.z - z).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("forward and backward logdet cancel") {
  Rng rng(99);
  const DynamicsNet net = randomNet(3, 2, {8}, Activation::Tanh, 55);
  const VectorXd cond = randomVec(rng, 2, 0.5);
  const VectorXd z = randomVec(rng, 3);
  const SolverConfig solver = SolverConfig::rk4(64);
  const AugmentedState fwd =
      integrateAugmented(net, z, cond, 0.0, 1.0, TraceSpec::exact(3), solver);
  const AugmentedState back =
      integrateAugmented(net, fwd.z, cond, 1.0, 0.0, TraceSpec::exact(3), solver);
  CHECK(fwd.logdet == doctest::Approx(-back.logdet).epsilon(1e-8));
}

// The training pattern: q fixed at t = 1, backward pass produces z(0) and the
// logdet, and the loss is phi(z(0)) + c * logdet. The adjoint pass run from 0
// back up to 1 must match central finite differences over the parameters.
TEST_CASE("adjoint gradients match finite differences") {
  Rng rng(123);
  const SolverConfig solver = SolverConfig::rk4(32);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 2 + trial % 3;
    DynamicsNet net =
        randomNet(n, 2, {5}, trial % 2 ? Activation::Tanh : Activation::Softplus,
                  200 + trial, 0.4);
    const VectorXd cond = randomVec(rng, 2, 0.5);
    const VectorXd q = randomVec(rng, n);
    const VectorXd g = randomVec(rng, n);
    const double cLogdet = trial % 2 ? 1.0 : -0.7;
    const TraceSpec trace = TraceSpec::exact(n);

    auto loss = [&](DynamicsNet& nn) {
      const AugmentedState s = integrateAugmented(nn, q, cond, 1.0, 0.0, trace, solver);
      return g.dot(s.z) + cLogdet * s.logdet;
    };

    const AugmentedState base = integrateAugmented(net, q, cond, 1.0, 0.0, trace, solver);
    const AdjointResult adj = integrateAdjoint(net, base.z, g, cLogdet, cond,
                                               0.0, 1.0, trace, solver);

    // adjoint state at tStart=1 is dL/dq
    const double h = 1e-5;
    VectorXd fdQ(n);
    for (int i = 0; i < n; ++i) {
      DynamicsNet nn = net;
      const VectorXd qp = q + h * VectorXd::Unit(n, i);
      const VectorXd qm = q - h * VectorXd::Unit(n, i);
      const AugmentedState sp = integrateAugmented(nn, qp, cond, 1.0, 0.0, trace, solver);
      const AugmentedState sm = integrateAugmented(nn, qm, cond, 1.0, 0.0, trace, solver);
      fdQ[i] = (g.dot(sp.z) + cLogdet * sp.logdet - g.dot(sm.z) - cLogdet * sm.logdet) / (2 * h);
    }
    CHECK((adj.gradState - fdQ).norm() / std::max(1.0, fdQ.norm()) < 1e-4);

    DynamicsNet probe = net;
    auto fp = [&](const VectorXd& theta) {
      probe.params() = theta;
      return loss(probe);
    };
    const VectorXd fdP = testutil::fdGradient(fp, net.params(), 1e-5);
    const double rel = (adj.gradParams - fdP).norm() / std::max(1.0, fdP.norm());
    CAPTURE(trial);
    CHECK(rel < 1e-4);

    // the re-integrated state must land back on q
    CHECK((adj.state - q).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("adjoint with Hutchinson probes differentiates the estimator itself") {
  Rng rng(321);
  const int n = 3;
  DynamicsNet net = randomNet(n, 2, {6}, Activation::Tanh, 17, 0.4);
  const VectorXd cond = randomVec(rng, 2, 0.5);
  const VectorXd q = randomVec(rng, n);
  const SolverConfig solver = SolverConfig::rk4(32);

  MatrixXd probes(n, 2);
  Rng prng(5150);
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < n; ++i) probes(i, j) = prng.rademacher();
  const TraceSpec trace = TraceSpec::hutchinson(probes);

  const AugmentedState base = integrateAugmented(net, q, cond, 1.0, 0.0, trace, solver);
  const AdjointResult adj =
      integrateAdjoint(net, base.z, base.z, 1.0, cond, 0.0, 1.0, trace, solver);

  DynamicsNet probe = net;
  auto fp = [&](const VectorXd& theta) {
    probe.params() = theta;
    const AugmentedState s = integrateAugmented(probe, q, cond, 1.0, 0.0, trace, solver);
    return 0.5 * s.z.squaredNorm() + s.logdet;
  };
  const VectorXd fdP = testutil::fdGradient(fp, net.params(), 1e-5);
  CHECK((adj.gradParams - fdP).norm() / std::max(1.0, fdP.norm()) < 1e-4);
}

TEST_CASE("solver config validation") {
  CHECK(SolverConfig::rk4(16).method == OdeMethod::Rk4);
  CHECK(SolverConfig::dopri5(1e-6, 1e-7).rel_tol == 1e-6);
  const VectorField f = [](double, const VectorXd& y, VectorXd& dy) { dy = -y; };
  SolverConfig bad = SolverConfig::rk4(0);
  CHECK_THROWS_AS(integrate(f, VectorXd::Ones(1), 0.0, 1.0, bad), DimensionError);
}
