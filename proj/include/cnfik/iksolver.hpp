#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cnfik/cnf.hpp"
#include "cnfik/parallel.hpp"
#include "cnfik/pose.hpp"
#include "cnfik/robot.hpp"

namespace cnfik {

/// How latents are chosen for a batch: one fresh draw per entry from a seeded
/// stream, caller-provided vectors (length k, or 1 to broadcast), or one
/// vector shared by every entry (the path-generation mode).
enum class LatentMode { Sampled, Provided, Shared };

struct BatchRequest {
  std::vector<std::vector<Pose>> targets; // k entries, m poses each
  LatentMode mode = LatentMode::Sampled;
  uint64_t seed = 0;
  std::vector<Eigen::VectorXd> latents;
  Eigen::VectorXd shared;

  static BatchRequest sampled(std::vector<std::vector<Pose>> targets, uint64_t seed);
  static BatchRequest provided(std::vector<std::vector<Pose>> targets,
                               std::vector<Eigen::VectorXd> latents);
  static BatchRequest sharedLatent(std::vector<std::vector<Pose>> targets,
                                   Eigen::VectorXd z);
};

/// Per-entry joint solutions with errors measured by forward kinematics of
/// the prediction. Entries whose integration failed keep their slot (NaN
/// errors) and are listed in `failures`.
struct BatchResult {
  std::vector<Eigen::VectorXd> q;
  std::vector<double> posErr, oriErr; // mean over the m targets of the entry
  std::vector<int> failures;
  std::vector<std::string> failureMessages; // aligned with failures
};

/// The latent used for flat sample index i under Sampled mode. Shared between
/// solveBatch, training-time evaluation, and the CLI so that equal seeds mean
/// equal draws everywhere.
Eigen::VectorXd latentForIndex(uint64_t seed, uint64_t flatIndex, int dim);

/// One flow integration per entry. Entry i depends only on (targets_i, z_i):
/// results are identical whatever the policy, thread count, or other entries.
BatchResult solveBatch(const FlowModel& model, const KinematicModel& km,
                       const BatchRequest& req,
                       ExecPolicy policy = ExecPolicy::Serial);

struct PathReport {
  BatchResult batch;
  bool continuous = false;
  int discontinuousIndex = -1; // first waypoint that breaks continuity
  double maxJointStep = 0.0;   // max over consecutive |dq|_inf
  bool withinLimits = false;
  double stepThreshold = 0.0;
  int attempt = 0; // retry index that produced this report
  double posErrMean = 0.0, oriErrMean = 0.0;
};

/// Solves every waypoint with the same latent z and checks the resulting
/// joint path: continuous when no consecutive step exceeds stepThreshold in
/// the infinity norm. Solver failures mark the path discontinuous. The input
/// path is never modified.
PathReport solvePath(const FlowModel& model, const KinematicModel& km,
                     const std::vector<std::vector<Pose>>& path,
                     const Eigen::VectorXd& z, double stepThreshold,
                     ExecPolicy policy = ExecPolicy::Serial);

/// Draws a fresh shared z per attempt (stream keyed by seed and attempt
/// index) and returns the first continuous report, otherwise the attempt
/// with the smallest maxJointStep.
PathReport retryPath(const FlowModel& model, const KinematicModel& km,
                     const std::vector<std::vector<Pose>>& path, int maxRetries,
                     uint64_t seed, double stepThreshold,
                     ExecPolicy policy = ExecPolicy::Serial);

struct DlsParams {
  double damping = 0.1;
  int max_iters = 200;
  double tol_pos = 1e-6; // meters
  double tol_ori = 1e-6; // radians
};

struct DlsResult {
  Eigen::VectorXd q;
  bool converged = false;
  int iterations = 0;
};

/// Damped least squares IK: q <- clamp(q + J^T (J J^T + damping^2 I)^{-1} e)
/// with the per-target 6-vector errors (position difference; rotation log)
/// stacked. Converged once every target is within both tolerances; running
/// out of iterations reports converged = false instead of throwing.
DlsResult dlsSolve(const KinematicModel& km, const std::vector<Pose>& targets,
                   const Eigen::VectorXd& qInit, const DlsParams& params = {});

}  // namespace cnfik
