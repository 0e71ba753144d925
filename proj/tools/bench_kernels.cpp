// Times the batch kernels under the serial reference policy and the OpenMP
// policy, and checks that both produce bit-identical results.

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cnfik/cnf.hpp"
#include "cnfik/iksolver.hpp"
#include "cnfik/parallel.hpp"
#include "cnfik/rng.hpp"
#include "cnfik/robot.hpp"
#include "cnfik/trainer.hpp"

namespace {

using namespace cnfik;
using Eigen::VectorXd;

const char* kRobotText = R"json({
  "name": "bench-planar3r",
  "joints": [
    {"name": "j0", "kind": "revolute", "parent": -1, "axis": [0, 0, 1],
     "lower": -3.14159265358979, "upper": 3.14159265358979},
    {"name": "j1", "kind": "revolute", "parent": 0, "axis": [0, 0, 1],
     "origin": {"position": [0.5, 0, 0]},
     "lower": -3.14159265358979, "upper": 3.14159265358979},
    {"name": "j2", "kind": "revolute", "parent": 1, "axis": [0, 0, 1],
     "origin": {"position": [0.5, 0, 0]},
     "lower": -3.14159265358979, "upper": 3.14159265358979},
    {"name": "tool", "kind": "fixed", "parent": 2,
     "origin": {"position": [0.5, 0, 0]}}
  ],
  "end_effectors": ["tool"]
})json";

template <typename Fn>
double bestOf(int repeat, Fn&& fn) {
  double best = 1e300;
  for (int r = 0; r < repeat; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    best = std::min(best, ms);
  }
  return best;
}

double maxAbsDiff(const VectorXd& a, const VectorXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial vs parallel kernel benchmark"};
  int batch = 64;
  int targets = 200;
  int repeat = 3;
  int threads = maxThreads();
  app.add_option("--batch", batch, "Training batch size");
  app.add_option("--targets", targets, "solve batch size");
  app.add_option("--repeat", repeat, "Repetitions per timing (best kept)");
  app.add_option("--threads", threads, "OpenMP thread count");
  CLI11_PARSE(app, argc, argv);

  setThreadCount(threads);
  const KinematicModel km = KinematicModel::fromJsonText(kRobotText);

  TrainConfig cfg;
  cfg.hidden = {64, 64, 64};
  cfg.batch_size = batch;
  cfg.seed = 7;
  const FlowModel base =
      FlowModel::create(km, cfg.hidden, cfg.activation, cfg.extra_condition_dims,
                        cfg.train_solver, cfg.infer_solver, mixSeed(cfg.seed, 0x1417));

  std::printf("threads: %d\n", threads);
  std::printf("%-26s %12s %12s %9s %14s\n", "kernel", "serial_ms", "parallel_ms",
              "speedup", "max_abs_diff");

  {
    FlowModel ms = base, mp = base;
    OptimizerState os, op;
    const double tSerial = bestOf(repeat, [&] {
      ms = base;
      os = OptimizerState();
      trainStep(ms, km, cfg, 0, os, ExecPolicy::Serial);
    });
    const double tParallel = bestOf(repeat, [&] {
      mp = base;
      op = OptimizerState();
      trainStep(mp, km, cfg, 0, op, ExecPolicy::Parallel);
    });
    const double diff = maxAbsDiff(ms.net.params(), mp.net.params());
    std::printf("%-26s %12.2f %12.2f %9.2f %14g\n",
                ("train_step b=" + std::to_string(batch)).c_str(), tSerial,
                tParallel, tSerial / tParallel, diff);
  }

  {
    const auto poses = sampleTargetPoses(km, targets, 11);
    BatchResult rs, rp;
    const double tSerial = bestOf(repeat, [&] {
      rs = solveBatch(base, km, BatchRequest::sampled(poses, 3), ExecPolicy::Serial);
    });
    const double tParallel = bestOf(repeat, [&] {
      rp = solveBatch(base, km, BatchRequest::sampled(poses, 3), ExecPolicy::Parallel);
    });
    double diff = 0.0;
    for (size_t i = 0; i < rs.q.size(); ++i)
      diff = std::max(diff, maxAbsDiff(rs.q[i], rp.q[i]));
    std::printf("%-26s %12.2f %12.2f %9.2f %14g\n",
                ("solve_batch k=" + std::to_string(targets)).c_str(), tSerial,
                tParallel, tSerial / tParallel, diff);
  }

  return 0;
}
