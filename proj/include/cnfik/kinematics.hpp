#pragma once

#include <vector>

#include <Eigen/Core>

#include "cnfik/robot.hpp"

namespace cnfik {

/// End-effector poses for joint vector q, composed root to leaf. Joint limits
/// are not enforced; out-of-range q is legal input. Deterministic, and the
/// returned quaternions are canonical.
std::vector<Pose> forwardKinematics(const KinematicModel& model, const Eigen::VectorXd& q);

/// Pose of every joint frame (after the joint's own motion), indexed like
/// model.joints().
std::vector<Pose> framePoses(const KinematicModel& model, const Eigen::VectorXd& q);

/// Space-frame geometric Jacobian of one end effector: rows 0-2 linear
/// velocity, rows 3-5 angular velocity, one column per actuated joint.
/// Columns of joints that do not drive this end effector are zero.
Eigen::MatrixXd jacobian(const KinematicModel& model, const Eigen::VectorXd& q, int eeIndex);

/// `count` i.i.d. joint vectors, each coordinate uniform in [lower, upper].
/// Reproducible: the same seed yields the same list.
std::vector<Eigen::VectorXd> sampleJoints(const KinematicModel& model, int count, uint64_t seed);

}  // namespace cnfik
