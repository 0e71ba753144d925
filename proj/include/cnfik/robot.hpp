#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "cnfik/pose.hpp"

namespace cnfik {

enum class JointKind { Revolute, Prismatic, Fixed };

/// One joint of the kinematic tree. The joint frame is obtained by applying
/// `origin` in the parent frame and then the motion about/along `axis`
/// (rotation for revolute, translation for prismatic, none for fixed).
struct JointSpec {
  std::string name;
  JointKind kind = JointKind::Fixed;
  int parent = -1;  // index of parent joint, -1 attaches to the world frame
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  Pose origin;
  double lower = 0.0;  // rad or m depending on kind
  double upper = 0.0;
};

/// A rooted tree of joints with one or more end-effector frames. Immutable
/// after construction; every query on it is a pure function, safe to call
/// from any number of threads.
class KinematicModel {
public:
  KinematicModel(std::string name, std::vector<JointSpec> joints,
                 std::vector<std::string> endEffectorNames);

  /// Parses and validates a robot specification file. Throws FormatError
  /// naming the offending joint on the first violated invariant.
  static KinematicModel fromJsonFile(const std::string& path);
  static KinematicModel fromJsonText(const std::string& text);

  const std::string& name() const { return name_; }
  const std::vector<JointSpec>& joints() const { return joints_; }

  /// Number of actuated (non-fixed) joints: the dimension of a joint vector.
  int dof() const { return dof_; }

  /// Number of end-effector frames (IK targets driven by one joint vector).
  int targetCount() const { return static_cast<int>(end_effectors_.size()); }

  /// Joint index of each end-effector frame, in declared order.
  const std::vector<int>& endEffectors() const { return end_effectors_; }
  const std::vector<std::string>& endEffectorNames() const { return ee_names_; }

  /// Position of joint j's value inside a joint vector; -1 for fixed joints.
  int stateIndex(int joint) const { return state_index_[joint]; }

  /// Joint indices whose motion affects the given end effector (its ancestor
  /// chain), actuated joints only.
  bool affectsEndEffector(int joint, int eeIndex) const;

  Eigen::VectorXd lowerBounds() const;
  Eigen::VectorXd upperBounds() const;

  /// True when q_i is inside [lower_i, upper_i] for every actuated joint.
  bool withinLimits(const Eigen::VectorXd& q) const;

  /// Clamps q into the joint limits componentwise.
  Eigen::VectorXd clampToLimits(const Eigen::VectorXd& q) const;

private:
  void validate() const;

  std::string name_;
  std::vector<JointSpec> joints_;
  std::vector<int> end_effectors_;
  std::vector<std::string> ee_names_;
  std::vector<int> state_index_;
  std::vector<std::vector<char>> on_path_;  // [ee][joint]
  int dof_ = 0;
};

}  // namespace cnfik
