#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace cnfik {

/// Returns q or -q, whichever lies on the canonical hemisphere: w > 0, or
/// w == 0 and the first nonzero of (x, y, z) positive. Removes the quaternion
/// double cover so equal rotations compare equal componentwise.
Eigen::Quaterniond canonicalized(const Eigen::Quaterniond& q);

/// Rigid-body pose: position in meters, orientation as a unit quaternion kept
/// canonical (see canonicalized()).
struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();

  Pose() = default;
  Pose(const Eigen::Vector3d& p, const Eigen::Quaterniond& q);

  static Pose identity() { return Pose(); }

  /// this * child: child expressed in this pose's frame, result in the
  /// parent frame. Result is normalized and canonical.
  Pose compose(const Pose& child) const;
};

/// ||a.position - b.position||_2, meters.
double positionError(const Pose& a, const Pose& b);

/// Quaternion geodesic distance 2*acos(|<qa,qb>|), radians, in [0, pi].
/// Invariant to the sign of either quaternion.
double orientationError(const Pose& a, const Pose& b);

/// Rotation-vector logarithm of a unit quaternion: axis * angle with
/// angle in [0, pi]. Stable near the identity.
Eigen::Vector3d rotationLog(const Eigen::Quaterniond& q);

}  // namespace cnfik
