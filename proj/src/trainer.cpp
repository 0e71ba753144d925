#include "cnfik/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "cnfik/csvio.hpp"
#include "cnfik/errors.hpp"
#include "cnfik/iksolver.hpp"
#include "cnfik/kinematics.hpp"
#include "cnfik/rng.hpp"
#include "cnfik/serialize.hpp"

namespace cnfik {

using Eigen::VectorXd;
using json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  DynamicsConfig shape;
  shape.hidden = hidden;
  shape.validate();
  if (extra_condition_dims < 0)
    throw FormatError("train config: extra_condition_dims must be >= 0");
  if (batch_size < 1) throw FormatError("train config: batch_size must be >= 1");
  if (iterations < 0) throw FormatError("train config: iterations must be >= 0");
  if (learning_rate < 0 || lr_final < 0)
    throw FormatError("train config: learning rates must be >= 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw FormatError("train config: betas must lie in [0, 1)");
  if (adam_eps <= 0) throw FormatError("train config: adam_eps must be > 0");
  if (grad_clip_norm < 0)
    throw FormatError("train config: grad_clip_norm must be >= 0");
  if (hutchinson_probes < 1)
    throw FormatError("train config: hutchinson_probes must be >= 1");
  if (eval_every < 0 || checkpoint_every < 0)
    throw FormatError("train config: cadence values must be >= 0");
  if (eval_targets < 1 || eval_samples < 1)
    throw FormatError("train config: eval counts must be >= 1");
}

namespace {

const std::vector<std::string> kKnownKeys = {
    "hidden",          "activation",      "extra_condition_dims",
    "train_solver",    "infer_solver",    "batch_size",
    "iterations",      "learning_rate",   "lr_final",
    "beta1",           "beta2",           "adam_eps",
    "grad_clip_norm",  "trace",           "hutchinson_probes",
    "eval_every",      "checkpoint_every", "seed",
    "eval_targets",    "eval_samples"};

}  // namespace

TrainConfig TrainConfig::fromJsonText(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  TrainConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      (void)value;
      if (std::find(kKnownKeys.begin(), kKnownKeys.end(), key) ==
          kKnownKeys.end())
        throw FormatError("train config: unknown key '" + key + "'");
    }
    if (j.contains("hidden")) cfg.hidden = j["hidden"].get<std::vector<int>>();
    if (j.contains("activation")) {
      const std::string a = j["activation"].get<std::string>();
      if (a == "tanh")
        cfg.activation = Activation::Tanh;
      else if (a == "softplus")
        cfg.activation = Activation::Softplus;
      else
        throw FormatError("train config: unknown activation '" + a + "'");
    }
    if (j.contains("extra_condition_dims"))
      cfg.extra_condition_dims = j["extra_condition_dims"].get<int>();
    if (j.contains("train_solver"))
      cfg.train_solver = solverFromJson(j["train_solver"]);
    if (j.contains("infer_solver"))
      cfg.infer_solver = solverFromJson(j["infer_solver"]);
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
    if (j.contains("iterations")) cfg.iterations = j["iterations"].get<long>();
    if (j.contains("learning_rate"))
      cfg.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("lr_final")) cfg.lr_final = j["lr_final"].get<double>();
    if (j.contains("beta1")) cfg.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) cfg.beta2 = j["beta2"].get<double>();
    if (j.contains("adam_eps")) cfg.adam_eps = j["adam_eps"].get<double>();
    if (j.contains("grad_clip_norm"))
      cfg.grad_clip_norm = j["grad_clip_norm"].get<double>();
    if (j.contains("trace")) {
      const std::string t = j["trace"].get<std::string>();
      if (t == "exact")
        cfg.trace_mode = TraceMode::Exact;
      else if (t == "hutchinson")
        cfg.trace_mode = TraceMode::Hutchinson;
      else
        throw FormatError("train config: unknown trace mode '" + t + "'");
    }
    if (j.contains("hutchinson_probes"))
      cfg.hutchinson_probes = j["hutchinson_probes"].get<int>();
    if (j.contains("eval_every")) cfg.eval_every = j["eval_every"].get<long>();
    if (j.contains("checkpoint_every"))
      cfg.checkpoint_every = j["checkpoint_every"].get<long>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("eval_targets"))
      cfg.eval_targets = j["eval_targets"].get<int>();
    if (j.contains("eval_samples"))
      cfg.eval_samples = j["eval_samples"].get<int>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::fromJsonFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open train config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return fromJsonText(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

namespace {

double cosineLr(const TrainConfig& cfg, long iteration) {
  constexpr double kPi = 3.14159265358979323846;
  if (cfg.iterations <= 1) return cfg.learning_rate;
  const double frac =
      static_cast<double>(iteration) / static_cast<double>(cfg.iterations - 1);
  return cfg.lr_final +
         (cfg.learning_rate - cfg.lr_final) * 0.5 * (1.0 + std::cos(kPi * frac));
}

}  // namespace

StepResult trainStep(FlowModel& model, const KinematicModel& km,
                     const TrainConfig& cfg, long iteration, OptimizerState& opt,
                     ExecPolicy policy) {
  checkSignature(model, km);
  const int B = cfg.batch_size;
  const int n = km.dof();
  const long P = model.net.parameterCount();
  if (opt.m.size() != P) opt.m = VectorXd::Zero(P);
  if (opt.v.size() != P) opt.v = VectorXd::Zero(P);

  const uint64_t seedQ = mixSeed(cfg.seed, 0x5a11);
  const uint64_t seedT = mixSeed(cfg.seed, 0x7bce);
  const VectorXd lo = km.lowerBounds();
  const VectorXd hi = km.upperBounds();

  std::vector<VectorXd> grads(B);
  std::vector<double> losses(B, 0.0);
  std::vector<std::string> failed(B);

  parallelFor(policy, B, [&](long i) {
    try {
      Rng rq(mixSeed(seedQ, static_cast<uint64_t>(iteration),
                     static_cast<uint64_t>(i)));
      VectorXd q(n);
      for (int c = 0; c < n; ++c) q[c] = rq.uniform(lo[c], hi[c]);
      const std::vector<Pose> targets = forwardKinematics(km, q);
      const TraceSpec trace =
          sampleTrace(cfg.trace_mode, n, cfg.hutchinson_probes,
                      mixSeed(seedT, static_cast<uint64_t>(iteration)),
                      static_cast<uint64_t>(i));
      grads[i] = VectorXd::Zero(P);
      losses[i] = sampleLossGrad(model, q, targets, trace, grads[i]);
    } catch (const std::exception& e) {
      failed[i] = e.what()[0] ? e.what() : "unknown failure";
    }
  });

  StepResult out;
  for (int i = 0; i < B; ++i) {
    if (!failed[i].empty()) {
      out.skipped = true;
      out.diagnostic = "iteration " + std::to_string(iteration) + ", sample " +
                       std::to_string(i) + ": " + failed[i];
      return out;
    }
  }

  VectorXd g = VectorXd::Zero(P);
  double loss = 0.0;
  for (int i = 0; i < B; ++i) { // fixed order: policy-independent reduction
    g += grads[i];
    loss += losses[i];
  }
  g /= B;
  loss /= B;
  out.loss = loss;

  if (!std::isfinite(loss) || !g.allFinite()) {
    out.skipped = true;
    out.diagnostic = "iteration " + std::to_string(iteration) +
                     ": non-finite loss or gradient";
    return out;
  }

  out.gradNorm = g.norm();
  if (cfg.grad_clip_norm > 0 && out.gradNorm > cfg.grad_clip_norm)
    g *= cfg.grad_clip_norm / out.gradNorm;

  const double lr = cosineLr(cfg, iteration);
  ++opt.step;
  opt.m = cfg.beta1 * opt.m + (1.0 - cfg.beta1) * g;
  opt.v = cfg.beta2 * opt.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  model.net.params().array() -=
      lr * (opt.m.array() / bc1) /
      ((opt.v.array() / bc2).sqrt() + cfg.adam_eps);
  return out;
}

std::vector<std::vector<Pose>> sampleTargetPoses(const KinematicModel& km,
                                                 int count, uint64_t seed) {
  std::vector<std::vector<Pose>> targets;
  targets.reserve(count);
  for (const VectorXd& q : sampleJoints(km, count, seed))
    targets.push_back(forwardKinematics(km, q));
  return targets;
}

EvalSummary evaluateModel(const FlowModel& model, const KinematicModel& km,
                          int nTargets, int nSamplesPerTarget, uint64_t seed,
                          ExecPolicy policy) {
  if (nTargets < 1 || nSamplesPerTarget < 1)
    throw DimensionError("evaluateModel: counts must be >= 1");
  const std::vector<std::vector<Pose>> targets =
      sampleTargetPoses(km, nTargets, mixSeed(seed, 0xe7a9));

  std::vector<std::vector<Pose>> flat;
  flat.reserve(static_cast<size_t>(nTargets) * nSamplesPerTarget);
  for (int i = 0; i < nTargets; ++i)
    for (int j = 0; j < nSamplesPerTarget; ++j) flat.push_back(targets[i]);

  const BatchResult res =
      solveBatch(model, km, BatchRequest::sampled(std::move(flat), seed), policy);

  EvalSummary sum;
  for (size_t i = 0; i < res.posErr.size(); ++i) {
    if (std::isfinite(res.posErr[i])) {
      sum.posErrs.push_back(res.posErr[i]);
      sum.oriErrs.push_back(res.oriErr[i]);
    }
  }
  sum.failures = static_cast<int>(res.failures.size());
  if (sum.posErrs.empty()) {
    sum.posMean = sum.posP95 = sum.oriMean = sum.oriP95 =
        std::numeric_limits<double>::quiet_NaN();
    return sum;
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto p95 = [](std::vector<double> v) { // nearest-rank percentile
    std::sort(v.begin(), v.end());
    const size_t idx =
        static_cast<size_t>(std::ceil(0.95 * static_cast<double>(v.size())));
    return v[std::min(v.size() - 1, idx == 0 ? 0 : idx - 1)];
  };
  sum.posMean = mean(sum.posErrs);
  sum.oriMean = mean(sum.oriErrs);
  sum.posP95 = p95(sum.posErrs);
  sum.oriP95 = p95(sum.oriErrs);
  return sum;
}

namespace {

// Drops metrics rows beyond the resumed iteration so the continued log stays
// monotone when the checkpoint is older than the metrics file.
void truncateMetrics(const std::string& path, long iteration) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      keep.push_back(line);
      first = false;
      continue;
    }
    if (line.empty()) continue;
    long iter = 0;
    const auto res = std::from_chars(line.data(), line.data() + line.size(), iter);
    if (res.ec == std::errc{} && iter <= iteration) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (const std::string& l : keep) out << l << '\n';
}

}  // namespace

FlowModel trainLoop(const KinematicModel& km, const TrainConfig& cfg,
                    const std::string& checkpointPath,
                    const std::string& metricsPath,
                    const std::string& resumePath, ExecPolicy policy,
                    std::ostream* progress) {
  cfg.validate();

  FlowModel model;
  OptimizerState opt;
  if (!resumePath.empty()) {
    bool hasOpt = false;
    model = loadCheckpoint(resumePath, km, &opt, &hasOpt);
    if (!hasOpt)
      throw FormatError("resume checkpoint has no optimizer state: " +
                        resumePath);
    const DynamicsConfig& have = model.net.config();
    if (have.hidden != cfg.hidden || have.activation != cfg.activation ||
        have.condition_dim != 7 * km.targetCount() + cfg.extra_condition_dims)
      throw FormatError("resume checkpoint shape does not match train config");
    model.train_solver = cfg.train_solver;
    model.infer_solver = cfg.infer_solver;
    truncateMetrics(metricsPath, opt.iteration);
  } else {
    model = FlowModel::create(km, cfg.hidden, cfg.activation,
                              cfg.extra_condition_dims, cfg.train_solver,
                              cfg.infer_solver, mixSeed(cfg.seed, 0x1417));
  }

  std::ofstream metrics;
  if (!resumePath.empty()) {
    metrics.open(metricsPath, std::ios::binary | std::ios::app);
    if (metrics && metrics.tellp() == 0) writeMetricsHeader(metrics);
  } else {
    metrics.open(metricsPath, std::ios::binary | std::ios::trunc);
    if (metrics) writeMetricsHeader(metrics);
  }
  if (!metrics) throw FormatError("cannot open metrics log: " + metricsPath);

  const auto start = std::chrono::steady_clock::now();
  auto wallSeconds = [&start] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  };

  double lossSum = 0.0;
  long lossCount = 0;
  int consecutiveSkips = 0;

  for (long it = opt.iteration; it < cfg.iterations; ++it) {
    const StepResult r = trainStep(model, km, cfg, it, opt, policy);
    if (r.skipped) {
      ++consecutiveSkips;
      if (progress)
        *progress << "skipped step: " << r.diagnostic << '\n';
      if (consecutiveSkips >= 3) {
        saveCheckpoint(model, checkpointPath, &opt);
        throw TrainAbortError("3 consecutive skipped steps; last: " +
                              r.diagnostic);
      }
    } else {
      consecutiveSkips = 0;
      lossSum += r.loss;
      ++lossCount;
    }
    opt.iteration = it + 1;
    opt.samples += cfg.batch_size;

    const bool evalDue = cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0;
    const bool lastIter = it + 1 == cfg.iterations;
    if (evalDue || (lastIter && !(cfg.eval_every > 0 &&
                                  cfg.iterations % cfg.eval_every == 0))) {
      const EvalSummary es =
          evaluateModel(model, km, cfg.eval_targets, cfg.eval_samples,
                        mixSeed(cfg.seed, 0xea1, static_cast<uint64_t>(it + 1)),
                        policy);
      MetricsRow row;
      row.iteration = it + 1;
      row.samples = opt.samples;
      row.loss = lossCount ? lossSum / lossCount
                           : std::numeric_limits<double>::quiet_NaN();
      row.posMean = es.posMean;
      row.posP95 = es.posP95;
      row.oriMean = es.oriMean;
      row.oriP95 = es.oriP95;
      row.wall = wallSeconds();
      writeMetricsRow(metrics, row);
      metrics.flush();
      lossSum = 0.0;
      lossCount = 0;
      if (progress)
        *progress << "iter " << row.iteration << "/" << cfg.iterations
                  << "  loss " << row.loss << "  pos_err " << row.posMean
                  << " m  ori_err " << row.oriMean << " rad  (" << es.failures
                  << " failures, " << row.wall << " s)\n";
    }
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0)
      saveCheckpoint(model, checkpointPath, &opt);
  }

  saveCheckpoint(model, checkpointPath, &opt);
  return model;
}

}  // namespace cnfik
