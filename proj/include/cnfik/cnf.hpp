#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cnfik/dynamics.hpp"
#include "cnfik/ode.hpp"
#include "cnfik/pose.hpp"
#include "cnfik/robot.hpp"

namespace cnfik {

/// Binds a trained model to the robot it was trained for.
struct RobotSignature {
  std::string name;
  int dof = 0;
  int targets = 0;
  bool operator==(const RobotSignature&) const = default;
};

RobotSignature signatureOf(const KinematicModel& model);

/// The conditional flow: a latent z drawn from N(0, I) is carried to a joint
/// configuration q by integrating the learned dynamics from t = 0 to t = 1,
/// conditioned on the target poses. Inverting the integration recovers z and
/// the log-determinant of the map, giving exact densities.
struct FlowModel {
  DynamicsNet net;
  SolverConfig train_solver = SolverConfig::rk4(32);
  SolverConfig infer_solver = SolverConfig::dopri5(1e-5, 1e-5);
  RobotSignature robot;
  Eigen::VectorXd cond_scale; // per-channel input scaling, default all ones

  /// Fresh model for a robot: state dim = dof, condition dim = 7 per target
  /// plus extraCondDims zero-filled extension channels.
  static FlowModel create(const KinematicModel& km, const std::vector<int>& hidden,
                          Activation act, int extraCondDims,
                          const SolverConfig& trainSolver,
                          const SolverConfig& inferSolver, uint64_t seed);
};

/// Condition vector for a target set: per target [position; quaternion
/// (w,x,y,z) on the canonical hemisphere], then the extension channels as
/// zeros, all multiplied by cond_scale. Flow time t is appended later by the
/// integrators.
Eigen::VectorXd makeCondition(const FlowModel& model,
                              const std::vector<Pose>& targets);

/// z -> q: integrates t 0 -> 1 under infer_solver (or an override).
Eigen::VectorXd flowForward(const FlowModel& model, const Eigen::VectorXd& z,
                            const std::vector<Pose>& targets,
                            const SolverConfig* solver = nullptr);

struct InverseResult {
  Eigen::VectorXd z;
  double logdet = 0.0; // integral of tr(dh/dz) over [0, 1]
};

/// q -> (z, logdet): integrates t 1 -> 0 accumulating the trace integral, so
/// that log p(q) = log N(z; 0, I) - logdet.
InverseResult flowInverse(const FlowModel& model, const Eigen::VectorXd& q,
                          const std::vector<Pose>& targets, const TraceSpec& trace,
                          const SolverConfig* solver = nullptr);

/// log p(q | targets) via flowInverse. Deterministic with an exact trace.
double logDensity(const FlowModel& model, const Eigen::VectorXd& q,
                  const std::vector<Pose>& targets, const TraceSpec& trace,
                  const SolverConfig* solver = nullptr);

struct TrainSample {
  Eigen::VectorXd q;
  std::vector<Pose> targets;
};

enum class TraceMode { Exact, Hutchinson };

/// Trace spec for one training sample: exact unit-basis probes, or Rademacher
/// probes drawn from a stream keyed by (seed, sampleIndex) and held fixed
/// along that sample's trajectory.
TraceSpec sampleTrace(TraceMode mode, int stateDim, int probes, uint64_t seed,
                      uint64_t sampleIndex);

/// Mean negative log-density over the batch. A solver failure is rethrown
/// with the failing sample index and time attached.
double batchLoss(const FlowModel& model, const std::vector<TrainSample>& batch,
                 TraceMode mode, int probes, uint64_t seed,
                 const SolverConfig* solver = nullptr);

/// Negative log-density of one sample plus its exact parameter gradient,
/// computed by the adjoint sweep under train_solver. gradParams must be
/// parameter-sized; the gradient is accumulated into it.
double sampleLossGrad(const FlowModel& model, const Eigen::VectorXd& q,
                      const std::vector<Pose>& targets, const TraceSpec& trace,
                      Eigen::Ref<Eigen::VectorXd> gradParams);

/// Adam accumulators, serialized inside checkpoints so training can resume.
struct OptimizerState {
  Eigen::VectorXd m, v;
  long step = 0;      // Adam bias-correction counter
  long iteration = 0; // training iterations completed
  long samples = 0;   // training samples consumed
};

/// Single-JSON checkpoint: format version, shapes, solver configs, robot
/// signature, weights as nested decimal lists, optional optimizer block.
/// Serialization is canonical, so save -> load -> save is byte-identical.
void saveCheckpoint(const FlowModel& model, const std::string& path,
                    const OptimizerState* opt = nullptr);

FlowModel loadCheckpoint(const std::string& path, OptimizerState* opt = nullptr,
                         bool* hasOpt = nullptr);

/// Load plus signature check against the robot the model is about to drive.
FlowModel loadCheckpoint(const std::string& path, const KinematicModel& km,
                         OptimizerState* opt = nullptr, bool* hasOpt = nullptr);

/// Throws SignatureError unless the model was built for this robot.
void checkSignature(const FlowModel& model, const KinematicModel& km);

}  // namespace cnfik
