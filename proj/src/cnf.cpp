#include "cnfik/cnf.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cnfik/errors.hpp"
#include "cnfik/rng.hpp"
#include "cnfik/serialize.hpp"

namespace cnfik {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::ordered_json;

namespace {
constexpr int kCheckpointVersion = 1;
constexpr const char* kCheckpointFormat = "cnfik-checkpoint";
constexpr double kLog2Pi = 1.8378770664093454836;
}  // namespace

RobotSignature signatureOf(const KinematicModel& model) {
  return RobotSignature{model.name(), model.dof(), model.targetCount()};
}

FlowModel FlowModel::create(const KinematicModel& km, const std::vector<int>& hidden,
                            Activation act, int extraCondDims,
                            const SolverConfig& trainSolver,
                            const SolverConfig& inferSolver, uint64_t seed) {
  if (extraCondDims < 0)
    throw DimensionError("FlowModel: extra condition dims must be >= 0");
  DynamicsConfig cfg;
  cfg.state_dim = km.dof();
  cfg.condition_dim = 7 * km.targetCount() + extraCondDims;
  cfg.hidden = hidden;
  cfg.activation = act;

  FlowModel m;
  m.net = DynamicsNet::initialized(cfg, seed);
  m.train_solver = trainSolver;
  m.infer_solver = inferSolver;
  m.robot = signatureOf(km);
  m.cond_scale = VectorXd::Ones(cfg.condition_dim);
  return m;
}

VectorXd makeCondition(const FlowModel& model, const std::vector<Pose>& targets) {
  const int m = model.robot.targets;
  if (static_cast<int>(targets.size()) != m)
    throw DimensionError("makeCondition: expected " + std::to_string(m) +
                         " target poses, got " + std::to_string(targets.size()));
  VectorXd cond = VectorXd::Zero(model.net.config().condition_dim);
  for (int j = 0; j < m; ++j) {
    const Pose& t = targets[j];
    const Eigen::Quaterniond q = canonicalized(t.orientation.normalized());
    cond.segment<3>(7 * j) = t.position;
    cond[7 * j + 3] = q.w();
    cond[7 * j + 4] = q.x();
    cond[7 * j + 5] = q.y();
    cond[7 * j + 6] = q.z();
  }
  cond.array() *= model.cond_scale.array();
  return cond;
}

VectorXd flowForward(const FlowModel& model, const VectorXd& z,
                     const std::vector<Pose>& targets, const SolverConfig* solver) {
  const VectorXd cond = makeCondition(model, targets);
  const SolverConfig& cfg = solver ? *solver : model.infer_solver;
  return integrateAugmented(model.net, z, cond, 0.0, 1.0, TraceSpec::none(), cfg).z;
}

InverseResult flowInverse(const FlowModel& model, const VectorXd& q,
                          const std::vector<Pose>& targets, const TraceSpec& trace,
                          const SolverConfig* solver) {
  const VectorXd cond = makeCondition(model, targets);
  const SolverConfig& cfg = solver ? *solver : model.infer_solver;
  const AugmentedState end =
      integrateAugmented(model.net, q, cond, 1.0, 0.0, trace, cfg);
  return InverseResult{end.z, end.logdet};
}

double logDensity(const FlowModel& model, const VectorXd& q,
                  const std::vector<Pose>& targets, const TraceSpec& trace,
                  const SolverConfig* solver) {
  const InverseResult inv = flowInverse(model, q, targets, trace, solver);
  const double n = static_cast<double>(inv.z.size());
  return -0.5 * inv.z.squaredNorm() - 0.5 * n * kLog2Pi - inv.logdet;
}

TraceSpec sampleTrace(TraceMode mode, int stateDim, int probes, uint64_t seed,
                      uint64_t sampleIndex) {
  if (mode == TraceMode::Exact) return TraceSpec::exact(stateDim);
  if (probes < 1) throw DimensionError("sampleTrace: probes must be >= 1");
  Rng rng(mixSeed(seed, 0x7bacce5, sampleIndex));
  MatrixXd eps(stateDim, probes);
  for (int j = 0; j < probes; ++j)
    for (int i = 0; i < stateDim; ++i) eps(i, j) = rng.rademacher();
  return TraceSpec::hutchinson(eps);
}

double batchLoss(const FlowModel& model, const std::vector<TrainSample>& batch,
                 TraceMode mode, int probes, uint64_t seed,
                 const SolverConfig* solver) {
  if (batch.empty()) throw DimensionError("batchLoss: empty batch");
  const SolverConfig& cfg = solver ? *solver : model.train_solver;
  const int n = model.net.config().state_dim;
  double total = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    const TraceSpec trace = sampleTrace(mode, n, probes, seed, i);
    double lp;
    try {
      lp = logDensity(model, batch[i].q, batch[i].targets, trace, &cfg);
    } catch (const SolverError& e) {
      throw SolverError("batchLoss: sample " + std::to_string(i) + ": " + e.what(),
                        e.t);
    }
    total += -lp;
  }
  return total / static_cast<double>(batch.size());
}

double sampleLossGrad(const FlowModel& model, const VectorXd& q,
                      const std::vector<Pose>& targets, const TraceSpec& trace,
                      Eigen::Ref<VectorXd> gradParams) {
  const SolverConfig& cfg = model.train_solver;
  const InverseResult inv = flowInverse(model, q, targets, trace, &cfg);
  const double n = static_cast<double>(inv.z.size());
  const double loss = 0.5 * inv.z.squaredNorm() + 0.5 * n * kLog2Pi + inv.logdet;

  const VectorXd cond = makeCondition(model, targets);
  const AdjointResult adj = integrateAdjoint(model.net, inv.z, inv.z, 1.0, cond,
                                             0.0, 1.0, trace, cfg);
  gradParams += adj.gradParams;
  return loss;
}

void checkSignature(const FlowModel& model, const KinematicModel& km) {
  const RobotSignature expect = signatureOf(km);
  if (model.robot == expect) return;
  std::ostringstream msg;
  msg << "checkpoint signature (" << model.robot.name << ", dof "
      << model.robot.dof << ", targets " << model.robot.targets
      << ") does not match robot (" << expect.name << ", dof " << expect.dof
      << ", targets " << expect.targets << ")";
  throw SignatureError(msg.str());
}

json solverToJson(const SolverConfig& s) {
  json j;
  j["method"] = s.method == OdeMethod::Rk4 ? "rk4" : "dopri5";
  j["steps"] = s.steps;
  j["rel_tol"] = s.rel_tol;
  j["abs_tol"] = s.abs_tol;
  j["max_steps"] = s.max_steps;
  return j;
}

SolverConfig solverFromJson(const json& j) {
  SolverConfig s;
  const std::string method = j.at("method").get<std::string>();
  if (method == "rk4")
    s.method = OdeMethod::Rk4;
  else if (method == "dopri5")
    s.method = OdeMethod::Dopri5;
  else
    throw FormatError("solver config: unknown method '" + method + "'");
  s.steps = j.at("steps").get<int>();
  s.rel_tol = j.at("rel_tol").get<double>();
  s.abs_tol = j.at("abs_tol").get<double>();
  s.max_steps = j.at("max_steps").get<long>();
  if (s.steps < 1 || s.rel_tol <= 0 || s.abs_tol <= 0 || s.max_steps < 1)
    throw FormatError("solver config: value out of range");
  return s;
}

namespace {

json matrixToJson(const Eigen::Map<const MatrixXd>& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vectorToJson(const Eigen::Map<const VectorXd>& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

void matrixFromJson(const json& j, Eigen::Map<MatrixXd> out, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != out.rows())
    throw FormatError(std::string("checkpoint: bad row count in ") + what);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const json& row = j[r];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != out.cols())
      throw FormatError(std::string("checkpoint: bad column count in ") + what);
    for (Eigen::Index c = 0; c < out.cols(); ++c)
      out(r, c) = row[c].get<double>();
  }
}

void vectorFromJson(const json& j, Eigen::Map<VectorXd> out, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != out.size())
    throw FormatError(std::string("checkpoint: bad length in ") + what);
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = j[i].get<double>();
}

VectorXd vectorFromJson(const json& j, const char* what) {
  if (!j.is_array()) throw FormatError(std::string("checkpoint: ") + what + " must be an array");
  VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

}  // namespace

void saveCheckpoint(const FlowModel& model, const std::string& path,
                    const OptimizerState* opt) {
  const DynamicsConfig& cfg = model.net.config();
  const double* p = model.net.params().data();

  json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["robot"] = {{"name", model.robot.name},
                {"dof", model.robot.dof},
                {"targets", model.robot.targets}};
  json dyn;
  dyn["state_dim"] = cfg.state_dim;
  dyn["condition_dim"] = cfg.condition_dim;
  dyn["hidden"] = cfg.hidden;
  dyn["activation"] = cfg.activation == Activation::Tanh ? "tanh" : "softplus";
  j["dynamics"] = std::move(dyn);
  j["condition_scale"] = vectorToJson(
      Eigen::Map<const VectorXd>(model.cond_scale.data(), model.cond_scale.size()));
  j["train_solver"] = solverToJson(model.train_solver);
  j["infer_solver"] = solverToJson(model.infer_solver);

  json layers = json::array();
  const int condIn = cfg.condInputDim();
  int prev = cfg.state_dim;
  for (int l = 0; l < model.net.layerCount(); ++l) {
    const int w = cfg.hidden[l];
    json layer;
    layer["W"] = matrixToJson(Eigen::Map<const MatrixXd>(p + model.net.offsetW(l), w, prev));
    layer["b"] = vectorToJson(Eigen::Map<const VectorXd>(p + model.net.offsetB(l), w));
    layer["S"] = matrixToJson(Eigen::Map<const MatrixXd>(p + model.net.offsetS(l), w, condIn));
    layer["T"] = matrixToJson(Eigen::Map<const MatrixXd>(p + model.net.offsetT(l), w, condIn));
    layers.push_back(std::move(layer));
    prev = w;
  }
  json weights;
  weights["layers"] = std::move(layers);
  weights["out"] = matrixToJson(
      Eigen::Map<const MatrixXd>(p + model.net.offsetOut(), cfg.state_dim, prev));
  j["weights"] = std::move(weights);

  if (opt) {
    json o;
    o["step"] = opt->step;
    o["iteration"] = opt->iteration;
    o["samples"] = opt->samples;
    o["m"] = vectorToJson(Eigen::Map<const VectorXd>(opt->m.data(), opt->m.size()));
    o["v"] = vectorToJson(Eigen::Map<const VectorXd>(opt->v.data(), opt->v.size()));
    j["optimizer"] = std::move(o);
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path);
  out << j.dump(1) << '\n';
  if (!out) throw FormatError("failed writing checkpoint: " + path);
}

FlowModel loadCheckpoint(const std::string& path, OptimizerState* opt,
                         bool* hasOpt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path + ": " + e.what());
  }

  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat)
      throw FormatError("checkpoint " + path + ": not a checkpoint file");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw FormatError("checkpoint " + path + ": unsupported version " +
                        j.at("version").dump());

    DynamicsConfig cfg;
    const json& dyn = j.at("dynamics");
    cfg.state_dim = dyn.at("state_dim").get<int>();
    cfg.condition_dim = dyn.at("condition_dim").get<int>();
    cfg.hidden = dyn.at("hidden").get<std::vector<int>>();
    const std::string act = dyn.at("activation").get<std::string>();
    if (act == "tanh")
      cfg.activation = Activation::Tanh;
    else if (act == "softplus")
      cfg.activation = Activation::Softplus;
    else
      throw FormatError("checkpoint: unknown activation '" + act + "'");
    cfg.validate();

    FlowModel model;
    model.net = DynamicsNet(cfg);
    model.robot.name = j.at("robot").at("name").get<std::string>();
    model.robot.dof = j.at("robot").at("dof").get<int>();
    model.robot.targets = j.at("robot").at("targets").get<int>();
    if (model.robot.dof != cfg.state_dim)
      throw FormatError("checkpoint: robot dof does not match state_dim");
    if (model.robot.targets < 1 || 7 * model.robot.targets > cfg.condition_dim)
      throw FormatError("checkpoint: target count inconsistent with condition_dim");
    model.cond_scale = vectorFromJson(j.at("condition_scale"), "condition_scale");
    if (model.cond_scale.size() != cfg.condition_dim)
      throw FormatError("checkpoint: condition_scale length mismatch");
    model.train_solver = solverFromJson(j.at("train_solver"));
    model.infer_solver = solverFromJson(j.at("infer_solver"));

    double* p = model.net.params().data();
    const json& weights = j.at("weights");
    const json& layers = weights.at("layers");
    if (static_cast<int>(layers.size()) != model.net.layerCount())
      throw FormatError("checkpoint: hidden layer count mismatch");
    const int condIn = cfg.condInputDim();
    int prev = cfg.state_dim;
    for (int l = 0; l < model.net.layerCount(); ++l) {
      const int w = cfg.hidden[l];
      const json& layer = layers[l];
      matrixFromJson(layer.at("W"), Eigen::Map<MatrixXd>(p + model.net.offsetW(l), w, prev), "W");
      vectorFromJson(layer.at("b"), Eigen::Map<VectorXd>(p + model.net.offsetB(l), w), "b");
      matrixFromJson(layer.at("S"), Eigen::Map<MatrixXd>(p + model.net.offsetS(l), w, condIn), "S");
      matrixFromJson(layer.at("T"), Eigen::Map<MatrixXd>(p + model.net.offsetT(l), w, condIn), "T");
      prev = w;
    }
    matrixFromJson(weights.at("out"),
                   Eigen::Map<MatrixXd>(p + model.net.offsetOut(), cfg.state_dim, prev),
                   "out");

    if (hasOpt) *hasOpt = false;
    if (j.contains("optimizer")) {
      if (opt) {
        const json& o = j.at("optimizer");
        opt->step = o.at("step").get<long>();
        opt->iteration = o.at("iteration").get<long>();
        opt->samples = o.at("samples").get<long>();
        opt->m = vectorFromJson(o.at("m"), "optimizer.m");
        opt->v = vectorFromJson(o.at("v"), "optimizer.v");
        if (opt->m.size() != model.net.parameterCount() ||
            opt->v.size() != model.net.parameterCount())
          throw FormatError("checkpoint: optimizer state size mismatch");
        if (hasOpt) *hasOpt = true;
      }
    }
    return model;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path + ": " + e.what());
  }
}

FlowModel loadCheckpoint(const std::string& path, const KinematicModel& km,
                         OptimizerState* opt, bool* hasOpt) {
  FlowModel model = loadCheckpoint(path, opt, hasOpt);
  checkSignature(model, km);
  return model;
}

}  // namespace cnfik
