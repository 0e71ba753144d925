#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "cnfik/cnf.hpp"
#include "cnfik/errors.hpp"
#include "cnfik/iksolver.hpp"
#include "cnfik/kinematics.hpp"
#include "cnfik/rng.hpp"
#include "testutil.hpp"

using namespace cnfik;
using Eigen::Vector3d;
using Eigen::VectorXd;

namespace {

KinematicModel loadRobot(const char* name) {
  return KinematicModel::fromJsonFile(std::string(CNFIK_SOURCE_DIR) + "/robots/" + name);
}

FlowModel modelFor(const KinematicModel& km, uint64_t seed = 0) {
  FlowModel m = FlowModel::create(km, {16, 16}, Activation::Tanh, 0,
                                  SolverConfig::rk4(32),
                                  SolverConfig::dopri5(1e-6, 1e-8), 7);
  if (seed != 0) testutil::randomizeParams(m.net, seed, 0.15);
  return m;
}

std::vector<std::vector<Pose>> targetsFromJoints(const KinematicModel& km,
                                                 const std::vector<VectorXd>& qs) {
  std::vector<std::vector<Pose>> out;
  out.reserve(qs.size());
  for (const auto& q : qs) out.push_back(forwardKinematics(km, q));
  return out;
}

}  // namespace

TEST_CASE("damped least squares recovers the unique planar full-pose solution") {
  const KinematicModel km = testutil::planar2r();
  VectorXd qTrue(2);
  qTrue << 0.4, 0.9;
  const auto targets = forwardKinematics(km, qTrue);

  VectorXd init(2);
  init << 0.1, 0.1;
  const DlsResult res = dlsSolve(km, targets, init);
  REQUIRE(res.converged);
  CHECK(res.iterations > 0);

  const auto reached = forwardKinematics(km, res.q);
  CHECK(positionError(reached[0], targets[0]) < 1e-6);
  CHECK(orientationError(reached[0], targets[0]) < 1e-6);

  // A full-pose target pins q0+q1 to the tool angle left only one branch,
  // so the solver must land on qTrue itself.
  CHECK((res.q - qTrue).cwiseAbs().maxCoeff() < 1e-5);

  // Closed-form cross-check of the target itself.
  const double theta = qTrue[0] + qTrue[1];
  CHECK(targets[0].position.x() ==
        doctest::Approx(std::cos(qTrue[0]) + std::cos(theta)).epsilon(1e-12));
  CHECK(targets[0].position.y() ==
        doctest::Approx(std::sin(qTrue[0]) + std::sin(theta)).epsilon(1e-12));
}

TEST_CASE("damped least squares converges in zero iterations at the solution") {
  const KinematicModel km = testutil::planar2r();
  VectorXd qTrue(2);
  qTrue << -0.7, 1.2;
  const auto targets = forwardKinematics(km, qTrue);
  const DlsResult res = dlsSolve(km, targets, qTrue);
  CHECK(res.converged);
  CHECK(res.iterations == 0);
}

TEST_CASE("damped least squares reports failure beyond the workspace") {
  const KinematicModel km = testutil::planar2r();
  std::vector<Pose> targets{Pose(Vector3d(3.0, 0.0, 0.0), Eigen::Quaterniond::Identity())};
  const DlsResult res = dlsSolve(km, targets, VectorXd::Zero(2));
  CHECK_FALSE(res.converged);
  CHECK(res.iterations == DlsParams{}.max_iters);
}

TEST_CASE("damped least squares handles spatial and multi-target robots") {
  for (const char* name : {"spatial6r.json", "dualbranch7.json"}) {
    CAPTURE(name);
    const KinematicModel km = loadRobot(name);
    const VectorXd qTrue = 0.8 * sampleJoints(km, 1, 11)[0];
    const auto targets = forwardKinematics(km, qTrue);
    const VectorXd init =
        km.clampToLimits(qTrue + VectorXd::Constant(km.dof(), 0.05));
    const DlsResult res = dlsSolve(km, targets, init);
    REQUIRE(res.converged);
    const auto reached = forwardKinematics(km, res.q);
    for (int j = 0; j < km.targetCount(); ++j) {
      CHECK(positionError(reached[j], targets[j]) < 1e-6);
      CHECK(orientationError(reached[j], targets[j]) < 1e-6);
    }
  }
}

TEST_CASE("damped least squares validates its inputs") {
  const KinematicModel km = testutil::planar2r();
  const auto targets = forwardKinematics(km, VectorXd::Zero(2));
  CHECK_THROWS_AS(dlsSolve(km, {}, VectorXd::Zero(2)), DimensionError);
  CHECK_THROWS_AS(dlsSolve(km, targets, VectorXd::Zero(3)), DimensionError);
}

TEST_CASE("fresh model batch solve passes latents straight through") {
  const KinematicModel km = testutil::planar2r();
  const FlowModel model = modelFor(km);
  const auto targets = targetsFromJoints(km, sampleJoints(km, 4, 3));

  std::vector<VectorXd> latents;
  Rng rng(17);
  for (int i = 0; i < 4; ++i) {
    VectorXd z(2);
    z << rng.normal(), rng.normal();
    latents.push_back(z);
  }
  const BatchResult res = solveBatch(model, km, BatchRequest::provided(targets, latents));
  REQUIRE(res.failures.empty());
  for (int i = 0; i < 4; ++i) {
    CHECK(res.q[i] == latents[i]); // identity flow, bitwise
    const auto reached = forwardKinematics(km, latents[i]);
    CHECK(res.posErr[i] ==
          doctest::Approx(positionError(reached[0], targets[i][0])).epsilon(1e-12));
    CHECK(res.oriErr[i] ==
          doctest::Approx(orientationError(reached[0], targets[i][0])).epsilon(1e-12));
  }

  // one latent broadcasts across the batch
  const BatchResult bc =
      solveBatch(model, km, BatchRequest::provided(targets, {latents[0]}));
  for (int i = 0; i < 4; ++i) CHECK(bc.q[i] == latents[0]);
}

TEST_CASE("sampled latents follow the per-index stream") {
  const KinematicModel km = testutil::planar2r();
  const FlowModel model = modelFor(km);
  const auto targets = targetsFromJoints(km, sampleJoints(km, 5, 6));

  const BatchResult a = solveBatch(model, km, BatchRequest::sampled(targets, 42));
  const BatchResult b = solveBatch(model, km, BatchRequest::sampled(targets, 42));
  for (int i = 0; i < 5; ++i) {
    CHECK(a.q[i] == latentForIndex(42, static_cast<uint64_t>(i), 2));
    CHECK(a.q[i] == b.q[i]);
  }
  const BatchResult c = solveBatch(model, km, BatchRequest::sampled(targets, 43));
  bool anyDiff = false;
  for (int i = 0; i < 5; ++i) anyDiff = anyDiff || a.q[i] != c.q[i];
  CHECK(anyDiff);
}

TEST_CASE("batch entries are independent of their neighbors") {
  const KinematicModel km = testutil::planar2r();
  const FlowModel model = modelFor(km, 5);
  auto targets = targetsFromJoints(km, sampleJoints(km, 6, 9));
  std::vector<VectorXd> latents;
  for (int i = 0; i < 6; ++i) latents.push_back(latentForIndex(1, i, 2));

  const BatchResult whole = solveBatch(model, km, BatchRequest::provided(targets, latents));
  REQUIRE(whole.failures.empty());
  for (int i = 0; i < 6; ++i) {
    const BatchResult single = solveBatch(
        model, km, BatchRequest::provided({targets[i]}, {latents[i]}));
    CHECK(single.q[0] == whole.q[i]);
    CHECK(single.posErr[0] == whole.posErr[i]);
  }
}

TEST_CASE("a poisoned entry fails alone") {
  const KinematicModel km = testutil::planar2r();
  const FlowModel model = modelFor(km, 5);
  auto targets = targetsFromJoints(km, sampleJoints(km, 3, 10));
  targets[1][0].position[0] = std::numeric_limits<double>::quiet_NaN();

  const BatchResult res = solveBatch(model, km, BatchRequest::sampled(targets, 2));
  REQUIRE(res.failures.size() == 1);
  CHECK(res.failures[0] == 1);
  CHECK_FALSE(res.failureMessages[0].empty());
  CHECK(res.q[1].size() == 0);
  CHECK(std::isnan(res.posErr[1]));
  CHECK(std::isfinite(res.posErr[0]));
  CHECK(std::isfinite(res.posErr[2]));
}

TEST_CASE("batch request validation") {
  const KinematicModel km = testutil::planar2r();
  const FlowModel model = modelFor(km);
  auto targets = targetsFromJoints(km, sampleJoints(km, 2, 1));

  auto extra = targets;
  extra[1].push_back(Pose());
  CHECK_THROWS_AS(solveBatch(model, km, BatchRequest::sampled(extra, 0)), DimensionError);

  CHECK_THROWS_AS(
      solveBatch(model, km, BatchRequest::provided(targets, {VectorXd::Zero(2),
                                                             VectorXd::Zero(2),
                                                             VectorXd::Zero(2)})),
      DimensionError);
  CHECK_THROWS_AS(
      solveBatch(model, km, BatchRequest::sharedLatent(targets, VectorXd::Zero(3))),
      DimensionError);
}

TEST_CASE("a constant path with a shared latent is continuous") {
  const KinematicModel km = testutil::planar2r();
  const FlowModel model = modelFor(km, 21);
  VectorXd q(2);
  q << 0.5, 0.8;
  const std::vector<Pose> wp = forwardKinematics(km, q);
  const std::vector<std::vector<Pose>> path(8, wp);

  VectorXd z(2);
  z << 0.3, -0.4;
  const PathReport rep = solvePath(model, km, path, z, 0.25);
  CHECK(rep.continuous);
  CHECK(rep.maxJointStep == 0.0);
  CHECK(rep.discontinuousIndex == -1);
  CHECK(rep.withinLimits);
  CHECK(rep.batch.failures.empty());
}

TEST_CASE("a zero step threshold flags the first move") {
  const KinematicModel km = testutil::planar2r();
  const FlowModel model = modelFor(km, 21);
  std::vector<std::vector<Pose>> path;
  for (int i = 0; i < 5; ++i) {
    VectorXd q(2);
    q << 0.2 + 0.1 * i, 0.6;
    path.push_back(forwardKinematics(km, q));
  }
  VectorXd z(2);
  z << 0.1, 0.2;
  const PathReport rep = solvePath(model, km, path, z, 0.0);
  CHECK_FALSE(rep.continuous);
  CHECK(rep.discontinuousIndex == 1);
  CHECK(rep.maxJointStep > 0.0);

  // the same path with a generous threshold passes
  CHECK(solvePath(model, km, path, z, 10.0).continuous);
}

TEST_CASE("limit violations are reported separately from continuity") {
  const KinematicModel km = testutil::planar2r();
  const FlowModel model = modelFor(km); // identity flow
  VectorXd q(2);
  q << 0.5, 0.8;
  const std::vector<std::vector<Pose>> path(3, forwardKinematics(km, q));
  VectorXd z(2);
  z << 5.0, 5.0; // outside the +-pi joint limits
  const PathReport rep = solvePath(model, km, path, z, 0.25);
  CHECK(rep.continuous);
  CHECK_FALSE(rep.withinLimits);
}

TEST_CASE("path retries draw from the documented attempt stream") {
  const KinematicModel km = testutil::planar2r();
  const FlowModel model = modelFor(km, 33);
  std::vector<std::vector<Pose>> path;
  for (int i = 0; i < 6; ++i) {
    VectorXd q(2);
    q << 0.3 + 0.05 * i, 0.7 - 0.05 * i;
    path.push_back(forwardKinematics(km, q));
  }

  const PathReport rep = retryPath(model, km, path, 4, 77, 10.0);
  CHECK(rep.continuous);
  CHECK(rep.attempt == 0);

  // reconstruct attempt 0's latent and confirm the joints match
  Rng rng(mixSeed(77, 0x9e7a, 0));
  VectorXd z(2);
  z << rng.normal(), rng.normal();
  const PathReport direct = solvePath(model, km, path, z, 10.0);
  REQUIRE(rep.batch.q.size() == direct.batch.q.size());
  for (size_t i = 0; i < rep.batch.q.size(); ++i)
    CHECK(rep.batch.q[i] == direct.batch.q[i]);
}

TEST_CASE("exhausted retries return the smoothest attempt") {
  const KinematicModel km = testutil::planar2r();
  const FlowModel model = modelFor(km, 33);
  std::vector<std::vector<Pose>> path;
  for (int i = 0; i < 4; ++i) {
    VectorXd q(2);
    q << 0.3 + 0.2 * i, 0.5;
    path.push_back(forwardKinematics(km, q));
  }

  const PathReport rep = retryPath(model, km, path, 5, 123, 0.0);
  CHECK_FALSE(rep.continuous);
  CHECK(rep.attempt >= 0);
  CHECK(rep.attempt < 5);
  CHECK(rep.maxJointStep > 0.0);

  // its step is minimal among the five attempts, and the call repeats exactly
  double bestStep = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 5; ++a) {
    Rng rng(mixSeed(123, 0x9e7a, static_cast<uint64_t>(a)));
    VectorXd z(2);
    z << rng.normal(), rng.normal();
    bestStep = std::min(bestStep, solvePath(model, km, path, z, 0.0).maxJointStep);
  }
  CHECK(rep.maxJointStep == bestStep);
  const PathReport again = retryPath(model, km, path, 5, 123, 0.0);
  CHECK(again.attempt == rep.attempt);
  CHECK(again.maxJointStep == rep.maxJointStep);
}

TEST_CASE("path input validation") {
  const KinematicModel km = testutil::planar2r();
  const FlowModel model = modelFor(km);
  const std::vector<std::vector<Pose>> path(3, forwardKinematics(km, VectorXd::Zero(2)));
  CHECK_THROWS_AS(solvePath(model, km, {path[0]}, VectorXd::Zero(2), 0.1),
                  DimensionError);
  CHECK_THROWS_AS(solvePath(model, km, path, VectorXd::Zero(2), -0.1), DimensionError);
  CHECK_THROWS_AS(retryPath(model, km, path, 0, 1, 0.1), DimensionError);
}
