// Command line front end: train, solve, path, bench, fk.
//
// Exit codes: 0 success, 2 bad input (arguments, files, formats), 3 training
// aborted, 4 no continuous path found.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cnfik/cnf.hpp"
#include "cnfik/csvio.hpp"
#include "cnfik/errors.hpp"
#include "cnfik/iksolver.hpp"
#include "cnfik/kinematics.hpp"
#include "cnfik/manifest.hpp"
#include "cnfik/parallel.hpp"
#include "cnfik/rng.hpp"
#include "cnfik/robot.hpp"
#include "cnfik/trainer.hpp"

namespace {

using namespace cnfik;
using Eigen::VectorXd;
using json = nlohmann::ordered_json;

constexpr double kRadToDeg = 57.29577951308232;

double meanOf(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double p95Of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const size_t idx =
      static_cast<size_t>(std::ceil(0.95 * static_cast<double>(v.size())));
  return v[std::min(v.size() - 1, idx == 0 ? 0 : idx - 1)];
}

struct TrainArgs {
  std::string robot, config, out, resume, metrics;
  bool quiet = false;
};

int cmdTrain(const TrainArgs& a, ExecPolicy policy) {
  const KinematicModel km = KinematicModel::fromJsonFile(a.robot);
  const TrainConfig cfg = TrainConfig::fromJsonFile(a.config);
  const std::string metricsPath =
      a.metrics.empty() ? a.out + ".metrics.csv" : a.metrics;

  RunManifest mf;
  mf.command = "train";
  mf.inputs.emplace_back("robot", hashHex(fnv1a64File(a.robot)));
  mf.inputs.emplace_back("config", hashHex(fnv1a64File(a.config)));
  if (!a.resume.empty())
    mf.inputs.emplace_back("resume", hashHex(fnv1a64File(a.resume)));
  mf.seed = cfg.seed;
  mf.artifacts = {a.out, metricsPath};
  writeManifest(mf, a.out + ".manifest.json");

  try {
    trainLoop(km, cfg, a.out, metricsPath, a.resume, policy,
              a.quiet ? nullptr : &std::cerr);
  } catch (const TrainAbortError& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return 3;
  }
  return 0;
}

struct SolveArgs {
  std::string robot, checkpoint, targets, out;
  int samples = 1;
  uint64_t seed = 0;
};

void writeSolveCsv(std::ostream& os, const KinematicModel& km,
                   const BatchResult& res, long nRows, int samples) {
  const int n = km.dof();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  writeSolveHeader(os, n);
  VectorXd nanQ = VectorXd::Constant(n, nan);
  for (long i = 0; i < nRows; ++i) {
    for (int j = 0; j < samples; ++j) {
      const long flat = i * samples + j;
      const VectorXd& q = res.q[flat].size() == n ? res.q[flat] : nanQ;
      writeSolveRow(os, i, j, q, res.posErr[flat], res.oriErr[flat]);
    }
  }
  std::vector<double> pos, ori;
  for (size_t i = 0; i < res.posErr.size(); ++i) {
    if (std::isfinite(res.posErr[i])) {
      pos.push_back(res.posErr[i]);
      ori.push_back(res.oriErr[i]);
    }
  }
  os << "# summary pos_err_mean_mm=" << formatDouble(1e3 * meanOf(pos))
     << " pos_err_p95_mm=" << formatDouble(1e3 * p95Of(pos))
     << " ori_err_mean_deg=" << formatDouble(kRadToDeg * meanOf(ori))
     << " ori_err_p95_deg=" << formatDouble(kRadToDeg * p95Of(ori))
     << " failures=" << res.failures.size() << '\n';
}

int cmdSolve(const SolveArgs& a, ExecPolicy policy) {
  const KinematicModel km = KinematicModel::fromJsonFile(a.robot);
  const FlowModel model = loadCheckpoint(a.checkpoint, km);
  const auto rows = readPoseCsv(a.targets, km.targetCount());
  if (rows.empty()) throw FormatError("no target rows in " + a.targets);

  std::vector<std::vector<Pose>> flat;
  flat.reserve(rows.size() * a.samples);
  for (const auto& row : rows)
    for (int j = 0; j < a.samples; ++j) flat.push_back(row);

  const BatchResult res =
      solveBatch(model, km, BatchRequest::sampled(std::move(flat), a.seed), policy);

  if (a.out.empty()) {
    writeSolveCsv(std::cout, km, res, static_cast<long>(rows.size()), a.samples);
    return 0;
  }
  std::ofstream os(a.out, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open output: " + a.out);
  writeSolveCsv(os, km, res, static_cast<long>(rows.size()), a.samples);

  RunManifest mf;
  mf.command = "solve";
  mf.inputs.emplace_back("robot", hashHex(fnv1a64File(a.robot)));
  mf.inputs.emplace_back("checkpoint", hashHex(fnv1a64File(a.checkpoint)));
  mf.inputs.emplace_back("targets", hashHex(fnv1a64File(a.targets)));
  mf.seed = a.seed;
  mf.artifacts = {a.out};
  writeManifest(mf, a.out + ".manifest.json");
  return 0;
}

struct PathArgs {
  std::string robot, checkpoint, waypoints, outPrefix;
  int retries = 20;
  uint64_t seed = 0;
  double threshold = 0.25;
};

int cmdPath(const PathArgs& a, ExecPolicy policy) {
  const KinematicModel km = KinematicModel::fromJsonFile(a.robot);
  const FlowModel model = loadCheckpoint(a.checkpoint, km);
  const auto waypoints = readPoseCsv(a.waypoints, km.targetCount());

  const PathReport rep =
      retryPath(model, km, waypoints, a.retries, a.seed, a.threshold, policy);

  const std::string jointsPath = a.outPrefix + ".joints.csv";
  const std::string reportPath = a.outPrefix + ".report.json";
  {
    std::ofstream os(jointsPath, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open output: " + jointsPath);
    writeSolveHeader(os, km.dof());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const VectorXd nanQ = VectorXd::Constant(km.dof(), nan);
    for (size_t i = 0; i < rep.batch.q.size(); ++i) {
      const VectorXd& q =
          rep.batch.q[i].size() == km.dof() ? rep.batch.q[i] : nanQ;
      writeSolveRow(os, static_cast<long>(i), 0, q, rep.batch.posErr[i],
                    rep.batch.oriErr[i]);
    }
  }
  {
    json j;
    j["continuous"] = rep.continuous;
    j["attempt"] = rep.attempt;
    j["waypoints"] = waypoints.size();
    j["step_threshold_rad"] = rep.stepThreshold;
    j["max_joint_step_rad"] =
        std::isfinite(rep.maxJointStep) ? json(rep.maxJointStep) : json();
    j["discontinuous_index"] = rep.discontinuousIndex;
    j["within_limits"] = rep.withinLimits;
    j["failures"] = rep.batch.failures.size();
    j["pos_err_mean_mm"] = 1e3 * rep.posErrMean;
    j["ori_err_mean_deg"] = kRadToDeg * rep.oriErrMean;
    std::ofstream os(reportPath, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open output: " + reportPath);
    os << j.dump(1) << '\n';
  }

  RunManifest mf;
  mf.command = "path";
  mf.inputs.emplace_back("robot", hashHex(fnv1a64File(a.robot)));
  mf.inputs.emplace_back("checkpoint", hashHex(fnv1a64File(a.checkpoint)));
  mf.inputs.emplace_back("waypoints", hashHex(fnv1a64File(a.waypoints)));
  mf.seed = a.seed;
  mf.artifacts = {jointsPath, reportPath};
  writeManifest(mf, a.outPrefix + ".manifest.json");

  if (!rep.continuous) {
    std::cerr << "no continuous path within " << a.retries
              << " attempts (best max step " << rep.maxJointStep << " rad)\n";
    return 4;
  }
  return 0;
}

struct BenchArgs {
  std::string robot, checkpoint;
  int targets = 100;
  int samples = 50;
  uint64_t seed = 0;
  bool baseline = false;
};

int cmdBench(const BenchArgs& a, ExecPolicy policy) {
  const KinematicModel km = KinematicModel::fromJsonFile(a.robot);
  const FlowModel model = loadCheckpoint(a.checkpoint, km);

  std::printf("parameters: %ld\n", model.net.parameterCount());

  const auto t0 = std::chrono::steady_clock::now();
  const EvalSummary es =
      evaluateModel(model, km, a.targets, a.samples, a.seed, policy);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const long total = static_cast<long>(a.targets) * a.samples;

  std::printf("targets: %d  samples_per_target: %d  failures: %d\n", a.targets,
              a.samples, es.failures);
  std::printf("pos_err_mean_mm: %.6g\n", 1e3 * es.posMean);
  std::printf("pos_err_p95_mm: %.6g\n", 1e3 * es.posP95);
  std::printf("ori_err_mean_deg: %.6g\n", kRadToDeg * es.oriMean);
  std::printf("ori_err_p95_deg: %.6g\n", kRadToDeg * es.oriP95);
  std::printf("solve_rate_per_s: %.6g\n", total / secs);

  if (a.baseline) {
    const auto targets = sampleTargetPoses(km, a.targets, mixSeed(a.seed, 0xe7a9));
    const auto inits = sampleJoints(km, a.targets, mixSeed(a.seed, 0xd15));
    int solved = 0;
    long iters = 0;
    const auto b0 = std::chrono::steady_clock::now();
    for (int i = 0; i < a.targets; ++i) {
      const DlsResult r = dlsSolve(km, targets[i], inits[i]);
      solved += r.converged ? 1 : 0;
      iters += r.iterations;
    }
    const double bsecs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - b0)
            .count();
    std::printf("dls_success_rate: %.6g\n",
                static_cast<double>(solved) / a.targets);
    std::printf("dls_mean_iterations: %.6g\n",
                static_cast<double>(iters) / a.targets);
    std::printf("dls_rate_per_s: %.6g\n", a.targets / bsecs);
  }
  return 0;
}

int cmdFk(const std::string& robotPath, const std::vector<double>& q) {
  const KinematicModel km = KinematicModel::fromJsonFile(robotPath);
  if (static_cast<int>(q.size()) != km.dof())
    throw DimensionError("fk: expected " + std::to_string(km.dof()) +
                         " joint values, got " + std::to_string(q.size()));
  const VectorXd qv = Eigen::Map<const VectorXd>(q.data(), q.size());
  for (const Pose& p : forwardKinematics(km, qv)) {
    std::printf("%.9f %.9f %.9f  %.9g %.9g %.9g %.9g\n", p.position.x(),
                p.position.y(), p.position.z(), p.orientation.w(),
                p.orientation.x(), p.orientation.y(), p.orientation.z());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned inverse kinematics: train and query flow models"};
  app.require_subcommand(1);

  int threads = maxThreads();
  bool serial = false;
  app.add_option("--threads", threads, "Worker thread count")
      ->check(CLI::PositiveNumber);
  app.add_flag("--serial", serial, "Run batch work on the reference serial path");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Fit a flow model to a robot");
  train->add_option("--robot", ta.robot, "Robot description JSON")->required();
  train->add_option("--config", ta.config, "Training config JSON")->required();
  train->add_option("--out", ta.out, "Checkpoint output path")->required();
  train->add_option("--resume", ta.resume, "Checkpoint to continue from");
  train->add_option("--metrics", ta.metrics,
                    "Metrics CSV path (default: <out>.metrics.csv)");
  train->add_flag("--quiet", ta.quiet, "Suppress progress lines");

  SolveArgs sa;
  auto* solve = app.add_subcommand("solve", "Solve target poses from a CSV");
  solve->add_option("--robot", sa.robot, "Robot description JSON")->required();
  solve->add_option("--model,--checkpoint", sa.checkpoint, "Trained model")
      ->required();
  solve->add_option("--targets", sa.targets, "Pose CSV, one row per target set")
      ->required();
  solve->add_option("--samples", sa.samples, "Solutions per target row")
      ->check(CLI::PositiveNumber);
  solve->add_option("--seed", sa.seed, "Latent sampling seed");
  solve->add_option("--out", sa.out, "Output CSV (default: stdout)");

  PathArgs pa;
  auto* path = app.add_subcommand("path", "Solve a waypoint path continuously");
  path->add_option("--robot", pa.robot, "Robot description JSON")->required();
  path->add_option("--model,--checkpoint", pa.checkpoint, "Trained model")
      ->required();
  path->add_option("--path,--waypoints", pa.waypoints,
                   "Pose CSV, one row per waypoint")
      ->required();
  path->add_option("--out-prefix", pa.outPrefix,
                   "Writes <prefix>.joints.csv and <prefix>.report.json")
      ->required();
  path->add_option("--retries", pa.retries, "Latent attempts before giving up")
      ->check(CLI::PositiveNumber);
  path->add_option("--seed", pa.seed, "Latent sampling seed");
  path->add_option("--step-threshold,--threshold", pa.threshold,
                   "Max joint step between waypoints, radians")
      ->check(CLI::NonNegativeNumber);

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Accuracy and throughput report");
  bench->add_option("--robot", ba.robot, "Robot description JSON")->required();
  bench->add_option("--model,--checkpoint", ba.checkpoint, "Trained model")
      ->required();
  bench->add_option("--targets", ba.targets, "Evaluation target count")
      ->check(CLI::PositiveNumber);
  bench->add_option("--samples", ba.samples, "Solutions per target")
      ->check(CLI::PositiveNumber);
  bench->add_option("--seed", ba.seed, "Evaluation seed");
  bench->add_flag("--baseline", ba.baseline,
                  "Also run the damped least squares baseline");

  std::string fkRobot;
  std::vector<double> fkQ;
  auto* fk = app.add_subcommand("fk", "Forward kinematics of one configuration");
  fk->add_option("--robot", fkRobot, "Robot description JSON")->required();
  fk->add_option("--q", fkQ, "Joint values, comma separated")
      ->delimiter(',')
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  setThreadCount(threads);
  const ExecPolicy policy = serial ? ExecPolicy::Serial : ExecPolicy::Parallel;

  try {
    if (train->parsed()) return cmdTrain(ta, policy);
    if (solve->parsed()) return cmdSolve(sa, policy);
    if (path->parsed()) return cmdPath(pa, policy);
    if (bench->parsed()) return cmdBench(ba, policy);
    if (fk->parsed()) return cmdFk(fkRobot, fkQ);
  } catch (const TrainAbortError& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
