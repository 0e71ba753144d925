#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "cnfik/dynamics.hpp"
#include "cnfik/errors.hpp"
#include "cnfik/rng.hpp"
#include "testutil.hpp"

using namespace cnfik;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

DynamicsConfig smallConfig(Activation act) {
  DynamicsConfig cfg;
  cfg.state_dim = 3;
  cfg.condition_dim = 4;
  cfg.hidden = {5, 4};
  cfg.activation = act;
  return cfg;
}

VectorXd randomVec(Rng& rng, int n, double scale = 1.0) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

}  // namespace

TEST_CASE("parameter count matches the stored vector") {
  for (auto act : {Activation::Tanh, Activation::Softplus}) {
    DynamicsConfig cfg = smallConfig(act);
    DynamicsNet net(cfg);
    long expected = 0;
    int prev = cfg.state_dim;
    const int ci = cfg.condInputDim();
    for (int w : cfg.hidden) {
      expected += static_cast<long>(w) * prev + w + 2L * w * ci;
      prev = w;
    }
    expected += static_cast<long>(cfg.state_dim) * prev;
    CHECK(net.parameterCount() == expected);
    CHECK(net.params().size() == expected);
    CHECK(DynamicsNet::parameterCount(cfg) == expected);
  }
}

TEST_CASE("eval matches a direct computation on a one-layer net") {
  DynamicsConfig cfg;
  cfg.state_dim = 2;
  cfg.condition_dim = 1;
  cfg.hidden = {3};
  cfg.activation = Activation::Tanh;
  DynamicsNet net(cfg);
  testutil::randomizeParams(net, 99);

  const double* p = net.params().data();
  const Eigen::Map<const MatrixXd> W(p + net.offsetW(0), 3, 2);
  const Eigen::Map<const VectorXd> b(p + net.offsetB(0), 3);
  const Eigen::Map<const MatrixXd> S(p + net.offsetS(0), 3, 2);
  const Eigen::Map<const MatrixXd> T(p + net.offsetT(0), 3, 2);
  const Eigen::Map<const MatrixXd> Wout(p + net.offsetOut(), 2, 3);

  Rng rng(5);
  const VectorXd z = randomVec(rng, 2);
  VectorXd c(2);
  c << 0.7, -0.2;

  const VectorXd act = (W * z + b).array().tanh();
  const VectorXd a =
      (act.array() * ((S * c).array() + 1.0) + (T * c).array()).matrix();
  const VectorXd expected = Wout * a;

  DynamicsNet::Workspace ws(cfg);
  const VectorXd& out = net.eval(z, c, ws);
  CHECK((out - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("vjp agrees with finite differences") {
  for (auto act : {Activation::Tanh, Activation::Softplus}) {
    CAPTURE(static_cast<int>(act));
    DynamicsConfig cfg = smallConfig(act);
    DynamicsNet net(cfg);
    testutil::randomizeParams(net, 7 + static_cast<int>(act));
    DynamicsNet::Workspace ws(cfg);

    Rng rng(11);
    const VectorXd z = randomVec(rng, cfg.state_dim);
    const VectorXd c = randomVec(rng, cfg.condInputDim(), 0.5);
    const VectorXd v = randomVec(rng, cfg.state_dim);

    net.eval(z, c, ws);
    VectorXd gradZ(cfg.state_dim);
    VectorXd gradP = VectorXd::Zero(net.parameterCount());
    net.vjp(v, ws, &gradZ, gradP, true);

    auto fz = [&](const VectorXd& zz) { return v.dot(net.eval(zz, c, ws)); };
    const VectorXd fdZ = testutil::fdGradient(fz, z);
    CHECK((gradZ - fdZ).cwiseAbs().maxCoeff() < 1e-6);

    DynamicsNet probe = net;
    DynamicsNet::Workspace pws(cfg);
    auto fp = [&](const VectorXd& theta) {
      probe.params() = theta;
      return v.dot(probe.eval(z, c, pws));
    };
    const VectorXd fdP = testutil::fdGradient(fp, net.params());
    CHECK((gradP - fdP).cwiseAbs().maxCoeff() < 1e-6);

    // split products match the fused one
    VectorXd gz2(cfg.state_dim);
    net.eval(z, c, ws);
    net.vjpState(v, ws, gz2);
    CHECK((gz2 - gradZ).cwiseAbs().maxCoeff() == 0.0);
    VectorXd gp2 = VectorXd::Zero(net.parameterCount());
    net.vjpParams(v, ws, gp2);
    CHECK((gp2 - gradP).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("vjp accumulates into the parameter gradient") {
  DynamicsConfig cfg = smallConfig(Activation::Tanh);
  DynamicsNet net(cfg);
  testutil::randomizeParams(net, 3);
  DynamicsNet::Workspace ws(cfg);
  Rng rng(4);
  const VectorXd z = randomVec(rng, cfg.state_dim);
  const VectorXd c = randomVec(rng, cfg.condInputDim());
  const VectorXd v = randomVec(rng, cfg.state_dim);

  net.eval(z, c, ws);
  VectorXd once = VectorXd::Zero(net.parameterCount());
  net.vjp(v, ws, nullptr, once, true);
  VectorXd twice = once;
  net.vjp(v, ws, nullptr, twice, true);
  CHECK((twice - 2 * once).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("jvp agrees with finite differences and is linear in the tangent") {
  for (auto act : {Activation::Tanh, Activation::Softplus}) {
    DynamicsConfig cfg = smallConfig(act);
    DynamicsNet net(cfg);
    testutil::randomizeParams(net, 21 + static_cast<int>(act));
    DynamicsNet::Workspace ws(cfg);

    Rng rng(13);
    const VectorXd z = randomVec(rng, cfg.state_dim);
    const VectorXd c = randomVec(rng, cfg.condInputDim(), 0.5);
    const VectorXd t = randomVec(rng, cfg.state_dim);

    net.eval(z, c, ws);
    const VectorXd jv = net.jvp(t, ws);

    const double h = 1e-6;
    const VectorXd outP = net.eval(z + h * t, c, ws);
    const VectorXd outM = net.eval(z - h * t, c, ws);
    const VectorXd fd = (outP - outM) / (2 * h);
    CHECK((jv - fd).cwiseAbs().maxCoeff() < 1e-6);

    net.eval(z, c, ws);
    const VectorXd jv2 = net.jvp(2.5 * t, ws);
    CHECK((jv2 - 2.5 * jv).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("quadForm with identity probes equals the Jacobian trace") {
  DynamicsConfig cfg = smallConfig(Activation::Tanh);
  DynamicsNet net(cfg);
  testutil::randomizeParams(net, 31);
  DynamicsNet::Workspace ws(cfg);

  Rng rng(17);
  const VectorXd z = randomVec(rng, cfg.state_dim);
  const VectorXd c = randomVec(rng, cfg.condInputDim(), 0.5);

  const MatrixXd probes = MatrixXd::Identity(cfg.state_dim, cfg.state_dim);
  const VectorXd weights = VectorXd::Ones(cfg.state_dim);
  net.eval(z, c, ws);
  const double tr = net.quadForm(probes, weights, ws);

  double trFd = 0.0;
  const double h = 1e-6;
  for (int i = 0; i < cfg.state_dim; ++i) {
    const VectorXd e = VectorXd::Unit(cfg.state_dim, i);
    const double fp = net.eval(z + h * e, c, ws)[i];
    const double fm = net.eval(z - h * e, c, ws)[i];
    trFd += (fp - fm) / (2 * h);
  }
  CHECK(tr == doctest::Approx(trFd).epsilon(1e-6));
}

TEST_CASE("quadFormGrad agrees with finite differences of the quadratic form") {
  for (auto act : {Activation::Tanh, Activation::Softplus}) {
    CAPTURE(static_cast<int>(act));
    DynamicsConfig cfg = smallConfig(act);
    DynamicsNet net(cfg);
    testutil::randomizeParams(net, 41 + static_cast<int>(act));
    DynamicsNet::Workspace ws(cfg);

    Rng rng(19);
    const VectorXd z = randomVec(rng, cfg.state_dim);
    const VectorXd c = randomVec(rng, cfg.condInputDim(), 0.5);

    MatrixXd probes(cfg.state_dim, 2);
    probes.col(0) = randomVec(rng, cfg.state_dim);
    probes.col(1) = randomVec(rng, cfg.state_dim);
    VectorXd weights(2);
    weights << 0.6, -1.3;
    const double scaleGrad = 0.8;

    net.eval(z, c, ws);
    VectorXd gradZ = VectorXd::Zero(cfg.state_dim);
    VectorXd gradP = VectorXd::Zero(net.parameterCount());
    const double value =
        net.quadFormGrad(probes, weights, ws, scaleGrad, gradZ, gradP);
    net.eval(z, c, ws);
    CHECK(value == doctest::Approx(net.quadForm(probes, weights, ws)).epsilon(1e-12));

    auto quad = [&](DynamicsNet& nn, DynamicsNet::Workspace& w2,
                    const VectorXd& zz) {
      nn.eval(zz, c, w2);
      double s = 0.0;
      for (int j = 0; j < probes.cols(); ++j)
        s += weights[j] * probes.col(j).dot(nn.jvp(probes.col(j), w2));
      return s;
    };

    auto fz = [&](const VectorXd& zz) { return scaleGrad * quad(net, ws, zz); };
    const VectorXd fdZ = testutil::fdGradient(fz, z);
    CHECK((gradZ - fdZ).cwiseAbs().maxCoeff() < 2e-5);

    DynamicsNet probeNet = net;
    DynamicsNet::Workspace pws(cfg);
    auto fp = [&](const VectorXd& theta) {
      probeNet.params() = theta;
      return scaleGrad * quad(probeNet, pws, z);
    };
    const VectorXd fdP = testutil::fdGradient(fp, net.params());
    CHECK((gradP - fdP).cwiseAbs().maxCoeff() < 2e-5);
  }
}

TEST_CASE("softplus identity construction gives an exactly linear field") {
  Rng rng(23);
  MatrixXd A(3, 3);
  for (int i = 0; i < 9; ++i) A(i / 3, i % 3) = 0.5 * rng.normal();
  DynamicsNet net = testutil::linearNet(A, 4);
  DynamicsNet::Workspace ws(net.config());

  for (int trial = 0; trial < 5; ++trial) {
    const VectorXd z = randomVec(rng, 3, 2.0);
    const VectorXd c = randomVec(rng, 5);
    const VectorXd out = net.eval(z, c, ws);
    CHECK((out - A * z).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("initialization is deterministic in the seed") {
  DynamicsConfig cfg = smallConfig(Activation::Tanh);
  const DynamicsNet a = DynamicsNet::initialized(cfg, 12);
  const DynamicsNet b = DynamicsNet::initialized(cfg, 12);
  const DynamicsNet c = DynamicsNet::initialized(cfg, 13);
  CHECK(a.params() == b.params());
  CHECK(a.params() != c.params());

  const VectorXd z = VectorXd::Constant(cfg.state_dim, 0.4);
  const VectorXd cond = VectorXd::Constant(cfg.condInputDim(), 1.2);
  DynamicsNet::Workspace ws(cfg);
  const VectorXd out = a.eval(z, cond, ws);
  CHECK(out.cwiseAbs().maxCoeff() == 0.0); // fresh nets start as the identity flow
}

TEST_CASE("config validation rejects bad shapes") {
  DynamicsConfig cfg = smallConfig(Activation::Tanh);
  cfg.hidden.clear();
  CHECK_THROWS_AS(cfg.validate(), DimensionError);
  cfg = smallConfig(Activation::Tanh);
  cfg.hidden = {8, 0};
  CHECK_THROWS_AS(cfg.validate(), DimensionError);
  cfg = smallConfig(Activation::Tanh);
  cfg.state_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), DimensionError);
  cfg = smallConfig(Activation::Tanh);
  cfg.condition_dim = -1;
  CHECK_THROWS_AS(cfg.validate(), DimensionError);
}
