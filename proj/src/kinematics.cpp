#include "cnfik/kinematics.hpp"

#include <cmath>

#include "cnfik/errors.hpp"
#include "cnfik/rng.hpp"

namespace cnfik {

namespace {

Pose jointMotion(const JointSpec& j, double value) {
  Pose m;
  switch (j.kind) {
    case JointKind::Revolute:
      m.orientation = Eigen::Quaterniond(Eigen::AngleAxisd(value, j.axis));
      break;
    case JointKind::Prismatic:
      m.position = value * j.axis;
      break;
    case JointKind::Fixed:
      break;
  }
  return m;
}

}  // namespace

std::vector<Pose> framePoses(const KinematicModel& model, const Eigen::VectorXd& q) {
  if (q.size() != model.dof())
    throw DimensionError("forwardKinematics: joint vector has size " +
                         std::to_string(q.size()) + ", model dof is " +
                         std::to_string(model.dof()));
  const auto& joints = model.joints();
  std::vector<Pose> frames(joints.size());
  for (size_t i = 0; i < joints.size(); ++i) {
    const JointSpec& j = joints[i];
    const Pose base = (j.parent >= 0) ? frames[j.parent] : Pose::identity();
    const int s = model.stateIndex(static_cast<int>(i));
    const double value = (s >= 0) ? q[s] : 0.0;
    frames[i] = base.compose(j.origin).compose(jointMotion(j, value));
  }
  return frames;
}

std::vector<Pose> forwardKinematics(const KinematicModel& model, const Eigen::VectorXd& q) {
  const std::vector<Pose> frames = framePoses(model, q);
  std::vector<Pose> out;
  out.reserve(model.targetCount());
  for (int idx : model.endEffectors()) out.push_back(frames[idx]);
  return out;
}

Eigen::MatrixXd jacobian(const KinematicModel& model, const Eigen::VectorXd& q, int eeIndex) {
  if (eeIndex < 0 || eeIndex >= model.targetCount())
    throw DimensionError("jacobian: end-effector index out of range");
  const auto& joints = model.joints();
  const std::vector<Pose> frames = framePoses(model, q);
  const Eigen::Vector3d p_ee = frames[model.endEffectors()[eeIndex]].position;

  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(6, model.dof());
  for (size_t i = 0; i < joints.size(); ++i) {
    const int s = model.stateIndex(static_cast<int>(i));
    if (s < 0) continue;
    if (!model.affectsEndEffector(static_cast<int>(i), eeIndex)) continue;

    // World-frame joint axis. Rotation about the axis leaves it fixed, so the
    // frame after the joint's own motion gives the same direction.
    const Pose& f = frames[i];
    const Eigen::Vector3d axis_w = f.orientation * joints[i].axis;
    if (joints[i].kind == JointKind::Revolute) {
      J.block<3, 1>(0, s) = axis_w.cross(p_ee - f.position);
      J.block<3, 1>(3, s) = axis_w;
    } else {  // prismatic
      J.block<3, 1>(0, s) = axis_w;
    }
  }
  return J;
}

std::vector<Eigen::VectorXd> sampleJoints(const KinematicModel& model, int count, uint64_t seed) {
  if (count < 1) throw DimensionError("sampleJoints: count must be >= 1");
  const Eigen::VectorXd lo = model.lowerBounds();
  const Eigen::VectorXd hi = model.upperBounds();
  Rng rng(seed);
  std::vector<Eigen::VectorXd> out(count);
  for (int k = 0; k < count; ++k) {
    Eigen::VectorXd q(model.dof());
    for (int i = 0; i < model.dof(); ++i) q[i] = rng.uniform(lo[i], hi[i]);
    out[k] = std::move(q);
  }
  return out;
}

}  // namespace cnfik
