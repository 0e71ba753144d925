#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cnfik/pose.hpp"
#include "cnfik/trainer.hpp"

namespace cnfik {

/// Shortest decimal string that parses back to exactly the same double.
std::string formatDouble(double v);

inline constexpr const char* kMetricsHeader =
    "iteration,samples,loss,pos_err_mean,pos_err_p95,ori_err_mean,ori_err_p95,wall_s";

void writeMetricsHeader(std::ostream& out);
void writeMetricsRow(std::ostream& out, const MetricsRow& row);

/// Target/path CSV: one waypoint per row, columns px,py,pz,qw,qx,qy,qz
/// repeated once per end effector. Blank lines and lines starting with '#'
/// are skipped. Quaternions are normalized and canonicalized on load.
/// Errors name the 1-based line number.
std::vector<std::vector<Pose>> readPoseCsv(const std::string& path,
                                           int targetsPerRow);
void writePoseCsv(const std::string& path,
                  const std::vector<std::vector<Pose>>& rows);

/// Solution CSV: `target,sample,q0..q{n-1},pos_err,ori_err`.
void writeSolveHeader(std::ostream& out, int dof);
void writeSolveRow(std::ostream& out, long target, long sample,
                   const Eigen::VectorXd& q, double posErr, double oriErr);

}  // namespace cnfik
