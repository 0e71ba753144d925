#include "cnfik/iksolver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Geometry>

#include "cnfik/errors.hpp"
#include "cnfik/kinematics.hpp"
#include "cnfik/rng.hpp"

namespace cnfik {

using Eigen::MatrixXd;
using Eigen::VectorXd;

BatchRequest BatchRequest::sampled(std::vector<std::vector<Pose>> targets,
                                   uint64_t seed) {
  BatchRequest r;
  r.targets = std::move(targets);
  r.mode = LatentMode::Sampled;
  r.seed = seed;
  return r;
}

BatchRequest BatchRequest::provided(std::vector<std::vector<Pose>> targets,
                                    std::vector<VectorXd> latents) {
  BatchRequest r;
  r.targets = std::move(targets);
  r.mode = LatentMode::Provided;
  r.latents = std::move(latents);
  return r;
}

BatchRequest BatchRequest::sharedLatent(std::vector<std::vector<Pose>> targets,
                                        VectorXd z) {
  BatchRequest r;
  r.targets = std::move(targets);
  r.mode = LatentMode::Shared;
  r.shared = std::move(z);
  return r;
}

VectorXd latentForIndex(uint64_t seed, uint64_t flatIndex, int dim) {
  Rng rng(mixSeed(seed, 0x1a7e, flatIndex));
  VectorXd z(dim);
  for (int i = 0; i < dim; ++i) z[i] = rng.normal();
  return z;
}

BatchResult solveBatch(const FlowModel& model, const KinematicModel& km,
                       const BatchRequest& req, ExecPolicy policy) {
  checkSignature(model, km);
  const long k = static_cast<long>(req.targets.size());
  const int n = km.dof();
  const int m = km.targetCount();
  for (long i = 0; i < k; ++i)
    if (static_cast<int>(req.targets[i].size()) != m)
      throw DimensionError("solveBatch: entry " + std::to_string(i) + " has " +
                           std::to_string(req.targets[i].size()) +
                           " poses, robot has " + std::to_string(m) + " targets");
  if (req.mode == LatentMode::Provided && req.latents.size() != 1 &&
      static_cast<long>(req.latents.size()) != k)
    throw DimensionError("solveBatch: provided latents must number 1 or k");
  if (req.mode == LatentMode::Shared && req.shared.size() != n)
    throw DimensionError("solveBatch: shared latent has wrong dimension");

  BatchResult res;
  res.q.assign(k, VectorXd());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  res.posErr.assign(k, nan);
  res.oriErr.assign(k, nan);
  std::vector<std::string> errors(k);

  // Per-slot work; exceptions are captured in the slot, never thrown across
  // the parallel region.
  parallelFor(policy, k, [&](long i) {
    try {
      VectorXd z;
      switch (req.mode) {
        case LatentMode::Sampled:
          z = latentForIndex(req.seed, static_cast<uint64_t>(i), n);
          break;
        case LatentMode::Provided:
          z = req.latents.size() == 1 ? req.latents[0] : req.latents[i];
          break;
        case LatentMode::Shared:
          z = req.shared;
          break;
      }
      if (z.size() != n) throw DimensionError("solveBatch: latent dimension");
      const VectorXd q = flowForward(model, z, req.targets[i]);
      const std::vector<Pose> reached = forwardKinematics(km, q);
      double pe = 0.0, oe = 0.0;
      for (int j = 0; j < m; ++j) {
        pe += positionError(reached[j], req.targets[i][j]);
        oe += orientationError(reached[j], req.targets[i][j]);
      }
      res.q[i] = q;
      res.posErr[i] = pe / m;
      res.oriErr[i] = oe / m;
    } catch (const std::exception& e) {
      errors[i] = e.what()[0] ? e.what() : "unknown failure";
    }
  });

  for (long i = 0; i < k; ++i) {
    if (!errors[i].empty()) {
      res.failures.push_back(static_cast<int>(i));
      res.failureMessages.push_back(errors[i]);
    }
  }
  return res;
}

PathReport solvePath(const FlowModel& model, const KinematicModel& km,
                     const std::vector<std::vector<Pose>>& path, const VectorXd& z,
                     double stepThreshold, ExecPolicy policy) {
  if (path.size() < 2) throw DimensionError("solvePath: need at least 2 waypoints");
  if (stepThreshold < 0) throw DimensionError("solvePath: negative step threshold");

  PathReport rep;
  rep.stepThreshold = stepThreshold;
  rep.batch = solveBatch(model, km, BatchRequest::sharedLatent(path, z), policy);

  const long k = static_cast<long>(path.size());
  if (!rep.batch.failures.empty()) {
    rep.continuous = false;
    rep.discontinuousIndex = rep.batch.failures.front();
    rep.maxJointStep = std::numeric_limits<double>::infinity();
    rep.withinLimits = false;
  } else {
    rep.continuous = true;
    rep.maxJointStep = 0.0;
    for (long i = 0; i + 1 < k; ++i) {
      const double step =
          (rep.batch.q[i + 1] - rep.batch.q[i]).lpNorm<Eigen::Infinity>();
      rep.maxJointStep = std::max(rep.maxJointStep, step);
      if (rep.continuous && step > stepThreshold) {
        rep.continuous = false;
        rep.discontinuousIndex = static_cast<int>(i + 1);
      }
    }
    rep.withinLimits = true;
    for (long i = 0; i < k; ++i)
      if (!km.withinLimits(rep.batch.q[i])) {
        rep.withinLimits = false;
        break;
      }
  }

  double pe = 0.0, oe = 0.0;
  long ok = 0;
  for (long i = 0; i < k; ++i) {
    if (std::isfinite(rep.batch.posErr[i])) {
      pe += rep.batch.posErr[i];
      oe += rep.batch.oriErr[i];
      ++ok;
    }
  }
  rep.posErrMean = ok ? pe / ok : std::numeric_limits<double>::quiet_NaN();
  rep.oriErrMean = ok ? oe / ok : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

PathReport retryPath(const FlowModel& model, const KinematicModel& km,
                     const std::vector<std::vector<Pose>>& path, int maxRetries,
                     uint64_t seed, double stepThreshold, ExecPolicy policy) {
  if (maxRetries < 1) throw DimensionError("retryPath: need at least 1 attempt");
  const int n = km.dof();
  PathReport best;
  bool haveBest = false;
  for (int a = 0; a < maxRetries; ++a) {
    Rng rng(mixSeed(seed, 0x9e7a, static_cast<uint64_t>(a)));
    VectorXd z(n);
    for (int i = 0; i < n; ++i) z[i] = rng.normal();
    PathReport rep = solvePath(model, km, path, z, stepThreshold, policy);
    rep.attempt = a;
    if (rep.continuous) return rep;
    if (!haveBest || rep.maxJointStep < best.maxJointStep) {
      best = std::move(rep);
      haveBest = true;
    }
  }
  return best;
}

DlsResult dlsSolve(const KinematicModel& km, const std::vector<Pose>& targets,
                   const VectorXd& qInit, const DlsParams& params) {
  const int n = km.dof();
  const int m = km.targetCount();
  if (static_cast<int>(targets.size()) != m)
    throw DimensionError("dlsSolve: expected " + std::to_string(m) + " targets");
  if (qInit.size() != n) throw DimensionError("dlsSolve: qInit dimension");
  if (params.max_iters < 0 || params.damping < 0)
    throw DimensionError("dlsSolve: bad parameters");

  DlsResult res;
  res.q = km.clampToLimits(qInit);

  MatrixXd J(6 * m, n);
  VectorXd e(6 * m);
  for (int it = 0; it <= params.max_iters; ++it) {
    const std::vector<Pose> cur = forwardKinematics(km, res.q);
    bool done = true;
    for (int j = 0; j < m; ++j) {
      const Eigen::Vector3d dp = targets[j].position - cur[j].position;
      const Eigen::Quaterniond dq =
          targets[j].orientation * cur[j].orientation.conjugate();
      const Eigen::Vector3d dw = rotationLog(dq);
      e.segment<3>(6 * j) = dp;
      e.segment<3>(6 * j + 3) = dw;
      if (dp.norm() > params.tol_pos || dw.norm() > params.tol_ori) done = false;
    }
    if (done) {
      res.converged = true;
      res.iterations = it;
      return res;
    }
    if (it == params.max_iters) break;

    for (int j = 0; j < m; ++j)
      J.middleRows<6>(6 * j) = jacobian(km, res.q, j);
    MatrixXd A = J * J.transpose();
    A.diagonal().array() += params.damping * params.damping;
    const VectorXd y = A.ldlt().solve(e);
    res.q = km.clampToLimits(res.q + J.transpose() * y);
  }
  res.converged = false;
  res.iterations = params.max_iters;
  return res;
}

}  // namespace cnfik
