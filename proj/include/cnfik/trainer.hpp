#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cnfik/cnf.hpp"
#include "cnfik/parallel.hpp"

namespace cnfik {

/// Everything a training run needs, loadable from a JSON file. Defaults are
/// the working desk-scale choices; any omitted key keeps its default, and an
/// unknown key is an error.
struct TrainConfig {
  // model shape
  std::vector<int> hidden = {64, 64, 64};
  Activation activation = Activation::Tanh;
  int extra_condition_dims = 0;
  SolverConfig train_solver = SolverConfig::rk4(32);
  SolverConfig infer_solver = SolverConfig::dopri5(1e-5, 1e-5);

  // optimization
  int batch_size = 32;
  long iterations = 20000;
  double learning_rate = 1e-3;
  double lr_final = 1e-4; // cosine decay target; equal to learning_rate = flat
  double beta1 = 0.9, beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 10.0; // global norm; 0 disables clipping
  TraceMode trace_mode = TraceMode::Hutchinson;
  int hutchinson_probes = 1;

  // loop
  long eval_every = 2000;       // 0: evaluate only at the end
  long checkpoint_every = 2000; // 0: checkpoint only at the end
  uint64_t seed = 1;
  int eval_targets = 100;
  int eval_samples = 50;

  void validate() const;
  static TrainConfig fromJsonFile(const std::string& path);
  static TrainConfig fromJsonText(const std::string& text);
};

struct StepResult {
  double loss = 0.0;
  double gradNorm = 0.0;
  bool skipped = false;
  std::string diagnostic; // set when skipped
};

/// One optimization step: draw batch_size joint vectors uniformly within
/// limits, compute their targets by forward kinematics, accumulate the exact
/// adjoint gradient of the mean negative log-density, and apply one Adam
/// update with cosine-decayed learning rate and optional global-norm clip.
/// A non-finite loss/gradient or a solver failure skips the update (skipped =
/// true, parameters untouched). Per-sample work parallelizes; the gradient
/// reduction is ordered by sample index, so results do not depend on policy.
StepResult trainStep(FlowModel& model, const KinematicModel& km,
                     const TrainConfig& cfg, long iteration, OptimizerState& opt,
                     ExecPolicy policy = ExecPolicy::Serial);

/// Reachable target sets: forward kinematics of uniformly sampled joints.
std::vector<std::vector<Pose>> sampleTargetPoses(const KinematicModel& km,
                                                 int count, uint64_t seed);

struct EvalSummary {
  double posMean = 0.0, posP95 = 0.0; // meters
  double oriMean = 0.0, oriP95 = 0.0; // radians
  int failures = 0;
  std::vector<double> posErrs, oriErrs; // per successful sample
};

/// Samples nTargets reachable targets, draws nSamplesPerTarget latents each,
/// runs the flow, and measures pose errors of the predictions. Failed
/// integrations are counted, not averaged. Same seed, same summary.
EvalSummary evaluateModel(const FlowModel& model, const KinematicModel& km,
                          int nTargets, int nSamplesPerTarget, uint64_t seed,
                          ExecPolicy policy = ExecPolicy::Serial);

struct MetricsRow {
  long iteration = 0;
  long samples = 0;
  double loss = 0.0; // mean training loss since the previous row
  double posMean = 0.0, posP95 = 0.0;
  double oriMean = 0.0, oriP95 = 0.0;
  double wall = 0.0; // seconds since the loop started
};

/// Full training run: fresh model (or resume, restoring optimizer state),
/// trainStep per iteration, metrics CSV row at every eval_every boundary,
/// periodic and final checkpoints (optimizer state included). Three
/// consecutive skipped steps abort with TrainAbortError. `progress`, when
/// given, receives one human-readable line per metrics row.
FlowModel trainLoop(const KinematicModel& km, const TrainConfig& cfg,
                    const std::string& checkpointPath,
                    const std::string& metricsPath,
                    const std::string& resumePath = "",
                    ExecPolicy policy = ExecPolicy::Serial,
                    std::ostream* progress = nullptr);

}  // namespace cnfik
