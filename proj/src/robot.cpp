#include "cnfik/robot.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cnfik/errors.hpp"

namespace cnfik {

KinematicModel::KinematicModel(std::string name, std::vector<JointSpec> joints,
                               std::vector<std::string> endEffectorNames)
    : name_(std::move(name)), joints_(std::move(joints)), ee_names_(std::move(endEffectorNames)) {
  state_index_.assign(joints_.size(), -1);
  for (size_t i = 0; i < joints_.size(); ++i) {
    if (joints_[i].kind != JointKind::Fixed) state_index_[i] = dof_++;
  }
  for (const std::string& ee : ee_names_) {
    int idx = -1;
    for (size_t i = 0; i < joints_.size(); ++i) {
      if (joints_[i].name == ee) { idx = static_cast<int>(i); break; }
    }
    if (idx < 0) throw FormatError("end effector '" + ee + "' names no joint frame");
    end_effectors_.push_back(idx);
  }
  validate();

  // Ancestor table: which actuated joints sit on the chain from the world to
  // each end-effector frame.
  on_path_.assign(end_effectors_.size(), std::vector<char>(joints_.size(), 0));
  for (size_t e = 0; e < end_effectors_.size(); ++e) {
    for (int j = end_effectors_[e]; j >= 0; j = joints_[j].parent) on_path_[e][j] = 1;
  }
}

void KinematicModel::validate() const {
  if (joints_.empty()) throw FormatError("robot '" + name_ + "' has no joints");
  for (size_t i = 0; i < joints_.size(); ++i) {
    const JointSpec& j = joints_[i];
    if (j.name.empty()) throw FormatError("joint " + std::to_string(i) + " has no name");
    if (j.parent >= static_cast<int>(i))
      throw FormatError("joint '" + j.name + "': parent index must precede the joint (rooted tree, topological order)");
    if (j.parent < -1)
      throw FormatError("joint '" + j.name + "': invalid parent index");
    if (j.kind != JointKind::Fixed) {
      if (std::abs(j.axis.norm() - 1.0) > 1e-9)
        throw FormatError("joint '" + j.name + "': axis must be a unit vector");
      if (j.lower > j.upper)
        throw FormatError("joint '" + j.name + "': lower limit exceeds upper limit");
    }
    if (std::abs(j.origin.orientation.norm() - 1.0) > 1e-9)
      throw FormatError("joint '" + j.name + "': origin quaternion is not normalized");
  }
  if (end_effectors_.empty()) throw FormatError("robot '" + name_ + "' declares no end effectors");
  if (dof_ < 1) throw FormatError("robot '" + name_ + "' has no actuated joints");
}

bool KinematicModel::affectsEndEffector(int joint, int eeIndex) const {
  if (eeIndex < 0 || eeIndex >= static_cast<int>(end_effectors_.size()))
    throw DimensionError("end-effector index out of range");
  return on_path_[eeIndex][joint] != 0;
}

Eigen::VectorXd KinematicModel::lowerBounds() const {
  Eigen::VectorXd lo(dof_);
  for (size_t i = 0; i < joints_.size(); ++i)
    if (state_index_[i] >= 0) lo[state_index_[i]] = joints_[i].lower;
  return lo;
}

Eigen::VectorXd KinematicModel::upperBounds() const {
  Eigen::VectorXd hi(dof_);
  for (size_t i = 0; i < joints_.size(); ++i)
    if (state_index_[i] >= 0) hi[state_index_[i]] = joints_[i].upper;
  return hi;
}

bool KinematicModel::withinLimits(const Eigen::VectorXd& q) const {
  if (q.size() != dof_) throw DimensionError("joint vector size does not match dof");
  for (size_t i = 0; i < joints_.size(); ++i) {
    const int s = state_index_[i];
    if (s < 0) continue;
    if (q[s] < joints_[i].lower || q[s] > joints_[i].upper) return false;
  }
  return true;
}

Eigen::VectorXd KinematicModel::clampToLimits(const Eigen::VectorXd& q) const {
  if (q.size() != dof_) throw DimensionError("joint vector size does not match dof");
  Eigen::VectorXd out = q;
  for (size_t i = 0; i < joints_.size(); ++i) {
    const int s = state_index_[i];
    if (s < 0) continue;
    out[s] = std::min(joints_[i].upper, std::max(joints_[i].lower, out[s]));
  }
  return out;
}

namespace {

Eigen::Vector3d parseVec3(const nlohmann::json& a, const std::string& ctx) {
  if (!a.is_array() || a.size() != 3)
    throw FormatError(ctx + ": expected an array of 3 numbers");
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

Eigen::Quaterniond parseQuatWxyz(const nlohmann::json& a, const std::string& ctx) {
  if (!a.is_array() || a.size() != 4)
    throw FormatError(ctx + ": expected a quaternion [w, x, y, z]");
  return Eigen::Quaterniond(a[0].get<double>(), a[1].get<double>(),
                            a[2].get<double>(), a[3].get<double>());
}

JointKind parseKind(const std::string& s, const std::string& ctx) {
  if (s == "revolute") return JointKind::Revolute;
  if (s == "prismatic") return JointKind::Prismatic;
  if (s == "fixed") return JointKind::Fixed;
  throw FormatError(ctx + ": unknown joint kind '" + s + "'");
}

}  // namespace

KinematicModel KinematicModel::fromJsonText(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("robot spec is not valid JSON: ") + e.what());
  }
  if (!doc.contains("joints") || !doc["joints"].is_array())
    throw FormatError("robot spec: missing 'joints' array");

  std::vector<JointSpec> joints;
  for (const auto& jj : doc["joints"]) {
    JointSpec js;
    js.name = jj.value("name", "");
    const std::string ctx = "joint '" + js.name + "'";
    js.kind = parseKind(jj.value("kind", "fixed"), ctx);
    js.parent = jj.value("parent", -1);
    if (jj.contains("axis")) js.axis = parseVec3(jj["axis"], ctx + " axis");
    if (jj.contains("origin")) {
      const auto& o = jj["origin"];
      Eigen::Vector3d p = o.contains("position") ? parseVec3(o["position"], ctx + " origin") : Eigen::Vector3d::Zero();
      Eigen::Quaterniond q = o.contains("orientation") ? parseQuatWxyz(o["orientation"], ctx + " origin") : Eigen::Quaterniond::Identity();
      // Keep the raw quaternion so validation can reject non-unit input.
      js.origin.position = p;
      js.origin.orientation = canonicalized(q);
    }
    js.lower = jj.value("lower", 0.0);
    js.upper = jj.value("upper", 0.0);
    joints.push_back(std::move(js));
  }

  std::vector<std::string> ees;
  if (doc.contains("end_effectors")) {
    for (const auto& e : doc["end_effectors"]) ees.push_back(e.get<std::string>());
  }
  return KinematicModel(doc.value("name", "robot"), std::move(joints), std::move(ees));
}

KinematicModel KinematicModel::fromJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open robot spec: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return fromJsonText(ss.str());
}

}  // namespace cnfik
