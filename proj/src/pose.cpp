#include "cnfik/pose.hpp"

#include <cmath>

namespace cnfik {

Eigen::Quaterniond canonicalized(const Eigen::Quaterniond& q) {
  const double* c[4] = {&q.w(), &q.x(), &q.y(), &q.z()};
  for (int i = 0; i < 4; ++i) {
    if (*c[i] > 0.0) return q;
    if (*c[i] < 0.0) return Eigen::Quaterniond(-q.w(), -q.x(), -q.y(), -q.z());
  }
  return q;  // all-zero, caller normalizes
}

Pose::Pose(const Eigen::Vector3d& p, const Eigen::Quaterniond& q)
    : position(p), orientation(canonicalized(q.normalized())) {}

Pose Pose::compose(const Pose& child) const {
  Pose out;
  out.position = position + orientation * child.position;
  out.orientation = canonicalized((orientation * child.orientation).normalized());
  return out;
}

double positionError(const Pose& a, const Pose& b) {
  return (a.position - b.position).norm();
}

double orientationError(const Pose& a, const Pose& b) {
  const double d = std::abs(a.orientation.dot(b.orientation));
  return 2.0 * std::acos(std::min(1.0, d));
}

Eigen::Vector3d rotationLog(const Eigen::Quaterniond& q_in) {
  const Eigen::Quaterniond q = canonicalized(q_in);
  const Eigen::Vector3d v = q.vec();
  const double vn = v.norm();
  const double angle = 2.0 * std::atan2(vn, q.w());
  if (vn < 1e-12) {
    // sin(angle/2) ~ angle/2: axis*angle ~ 2*v
    return 2.0 * v;
  }
  return (angle / vn) * v;
}

}  // namespace cnfik
