#include "cnfik/csvio.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>

#include <Eigen/Geometry>

#include "cnfik/errors.hpp"

namespace cnfik {

std::string formatDouble(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void writeMetricsHeader(std::ostream& out) { out << kMetricsHeader << '\n'; }

void writeMetricsRow(std::ostream& out, const MetricsRow& row) {
  out << row.iteration << ',' << row.samples << ',' << formatDouble(row.loss)
      << ',' << formatDouble(row.posMean) << ',' << formatDouble(row.posP95)
      << ',' << formatDouble(row.oriMean) << ',' << formatDouble(row.oriP95)
      << ',' << formatDouble(row.wall) << '\n';
}

namespace {

std::vector<double> parseRow(const std::string& line, const std::string& path,
                             long lineNo) {
  std::vector<double> vals;
  size_t pos = 0;
  while (pos <= line.size()) {
    size_t comma = line.find(',', pos);
    if (comma == std::string::npos) comma = line.size();
    size_t a = pos, b = comma;
    while (a < b && std::isspace(static_cast<unsigned char>(line[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(line[b - 1]))) --b;
    double v = 0.0;
    const auto res = std::from_chars(line.data() + a, line.data() + b, v);
    if (res.ec != std::errc{} || res.ptr != line.data() + b)
      throw FormatError(path + ":" + std::to_string(lineNo) +
                        ": not a number: '" + line.substr(a, b - a) + "'");
    vals.push_back(v);
    pos = comma + 1;
    if (comma == line.size()) break;
  }
  return vals;
}

}  // namespace

std::vector<std::vector<Pose>> readPoseCsv(const std::string& path,
                                           int targetsPerRow) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open pose CSV: " + path);

  std::vector<std::vector<Pose>> rows;
  std::string line;
  long lineNo = 0;
  const int want = 7 * targetsPerRow;
  while (std::getline(in, line)) {
    ++lineNo;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;

    const std::vector<double> vals = parseRow(line, path, lineNo);
    if (static_cast<int>(vals.size()) != want)
      throw FormatError(path + ":" + std::to_string(lineNo) + ": expected " +
                        std::to_string(want) + " values, got " +
                        std::to_string(vals.size()));
    std::vector<Pose> poses;
    for (int j = 0; j < targetsPerRow; ++j) {
      const double* v = vals.data() + 7 * j;
      Eigen::Quaterniond q(v[3], v[4], v[5], v[6]);
      if (q.norm() < 1e-9)
        throw FormatError(path + ":" + std::to_string(lineNo) +
                          ": zero-norm quaternion in target " +
                          std::to_string(j));
      poses.emplace_back(Eigen::Vector3d(v[0], v[1], v[2]), q);
    }
    rows.push_back(std::move(poses));
  }
  return rows;
}

void writePoseCsv(const std::string& path,
                  const std::vector<std::vector<Pose>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open pose CSV for writing: " + path);
  out << "# px,py,pz,qw,qx,qy,qz";
  if (!rows.empty() && rows.front().size() > 1)
    out << " (x" << rows.front().size() << " targets)";
  out << '\n';
  for (const auto& row : rows) {
    for (size_t j = 0; j < row.size(); ++j) {
      const Pose& p = row[j];
      if (j) out << ',';
      out << formatDouble(p.position.x()) << ',' << formatDouble(p.position.y())
          << ',' << formatDouble(p.position.z()) << ','
          << formatDouble(p.orientation.w()) << ','
          << formatDouble(p.orientation.x()) << ','
          << formatDouble(p.orientation.y()) << ','
          << formatDouble(p.orientation.z());
    }
    out << '\n';
  }
  if (!out) throw FormatError("failed writing pose CSV: " + path);
}

void writeSolveHeader(std::ostream& out, int dof) {
  out << "target,sample";
  for (int i = 0; i < dof; ++i) out << ",q" << i;
  out << ",pos_err,ori_err\n";
}

void writeSolveRow(std::ostream& out, long target, long sample,
                   const Eigen::VectorXd& q, double posErr, double oriErr) {
  out << target << ',' << sample;
  for (Eigen::Index i = 0; i < q.size(); ++i) out << ',' << formatDouble(q[i]);
  out << ',' << formatDouble(posErr) << ',' << formatDouble(oriErr) << '\n';
}

}  // namespace cnfik
