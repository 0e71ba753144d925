#include "cnfik/ode.hpp"

#include <algorithm>
#include <cmath>

#include "cnfik/errors.hpp"

namespace cnfik {

using Eigen::VectorXd;

SolverConfig SolverConfig::rk4(int steps) {
  SolverConfig c;
  c.method = OdeMethod::Rk4;
  c.steps = steps;
  return c;
}

SolverConfig SolverConfig::dopri5(double relTol, double absTol) {
  SolverConfig c;
  c.method = OdeMethod::Dopri5;
  c.rel_tol = relTol;
  c.abs_tol = absTol;
  return c;
}

TraceSpec TraceSpec::none() { return TraceSpec{}; }

TraceSpec TraceSpec::exact(int dim) {
  TraceSpec t;
  t.mode = Mode::Exact;
  t.probes = Eigen::MatrixXd::Identity(dim, dim);
  t.weights = VectorXd::Ones(dim);
  return t;
}

TraceSpec TraceSpec::hutchinson(const Eigen::MatrixXd& probes) {
  if (probes.cols() < 1)
    throw DimensionError("TraceSpec: Hutchinson needs at least one probe");
  TraceSpec t;
  t.mode = Mode::Hutchinson;
  t.probes = probes;
  t.weights = VectorXd::Constant(probes.cols(), 1.0 / probes.cols());
  return t;
}

namespace {

VectorXd integrateRk4(const VectorField& f, const VectorXd& y0, double t0,
                      double t1, int steps, IntegrateStats* stats) {
  if (steps < 1) throw DimensionError("integrate: rk4 needs steps >= 1");
  const auto n = y0.size();
  const double h = (t1 - t0) / steps;
  VectorXd y = y0, ytmp(n), k1(n), k2(n), k3(n), k4(n);
  for (int i = 0; i < steps; ++i) {
    const double t = t0 + i * h;
    f(t, y, k1);
    ytmp = y + (0.5 * h) * k1;
    f(t + 0.5 * h, ytmp, k2);
    ytmp = y + (0.5 * h) * k2;
    f(t + 0.5 * h, ytmp, k3);
    ytmp = y + h * k3;
    f(t + h, ytmp, k4);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!y.allFinite())
      throw SolverError("ode: non-finite state during rk4 step", t + h);
    if (stats) {
      ++stats->accepted;
      stats->evals += 4;
    }
  }
  return y;
}

// Dormand-Prince 5(4) coefficients.
constexpr double A21 = 1.0 / 5;
constexpr double A31 = 3.0 / 40, A32 = 9.0 / 40;
constexpr double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9;
constexpr double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187,
                 A53 = 64448.0 / 6561, A54 = -212.0 / 729;
constexpr double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247,
                 A64 = 49.0 / 176, A65 = -5103.0 / 18656;
constexpr double B1 = 35.0 / 384, B3 = 500.0 / 1113, B4 = 125.0 / 192,
                 B5 = -2187.0 / 6784, B6 = 11.0 / 84;
constexpr double E1 = 71.0 / 57600, E3 = -71.0 / 16695, E4 = 71.0 / 1920,
                 E5 = -17253.0 / 339200, E6 = 22.0 / 525, E7 = -1.0 / 40;
constexpr double C2 = 1.0 / 5, C3 = 3.0 / 10, C4 = 4.0 / 5, C5 = 8.0 / 9;

VectorXd integrateDopri5(const VectorField& f, const VectorXd& y0, double t0,
                         double t1, const SolverConfig& cfg,
                         IntegrateStats* stats) {
  const auto n = y0.size();
  const double dir = (t1 > t0) ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);
  VectorXd y = y0, ynew(n), ytmp(n), errv(n);
  VectorXd k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n);

  double t = t0;
  double h = dir * span / 100.0;
  double errOld = 1e-4;
  double facmax = 5.0;
  bool last = false;
  long count = 0;

  f(t, y, k1); // FSAL: reused as the first stage of the next step
  if (stats) ++stats->evals;

  while (true) {
    if (++count > cfg.max_steps)
      throw SolverError("ode: adaptive step budget exhausted", t);
    if (std::abs(h) <= 1e-14 * std::max(1.0, std::abs(t)))
      throw SolverError("ode: step size underflow", t);
    if ((t + h - t1) * dir >= 0.0) {
      h = t1 - t;
      last = true;
    } else {
      last = false;
    }

    ytmp = y + h * (A21 * k1);
    f(t + C2 * h, ytmp, k2);
    ytmp = y + h * (A31 * k1 + A32 * k2);
    f(t + C3 * h, ytmp, k3);
    ytmp = y + h * (A41 * k1 + A42 * k2 + A43 * k3);
    f(t + C4 * h, ytmp, k4);
    ytmp = y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4);
    f(t + C5 * h, ytmp, k5);
    ytmp = y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5);
    f(t + h, ytmp, k6);
    ynew = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
    f(t + h, ynew, k7);
    if (stats) stats->evals += 6;

    errv = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double tol =
          cfg.abs_tol +
          cfg.rel_tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      const double r = errv[i] / tol;
      acc += r * r;
    }
    const double err = std::sqrt(acc / static_cast<double>(n));

    if (std::isfinite(err) && err <= 1.0) {
      t += h;
      y.swap(ynew);
      k1.swap(k7);
      if (stats) ++stats->accepted;
      if (!y.allFinite())
        throw SolverError("ode: non-finite state during adaptive step", t);
      if (last) break;
      const double fac = 0.9 * std::pow(err, -0.14) * std::pow(errOld, 0.08);
      h *= std::min(facmax, std::max(0.2, fac));
      errOld = std::max(err, 1e-4);
      facmax = 5.0;
    } else {
      if (stats) ++stats->rejected;
      if (!std::isfinite(err))
        h *= 0.1;
      else
        h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
      facmax = 1.0;
    }
  }
  return y;
}

}  // namespace

VectorXd integrate(const VectorField& f, const VectorXd& y0, double t0,
                   double t1, const SolverConfig& cfg, IntegrateStats* stats) {
  if (t0 == t1) return y0;
  if (cfg.method == OdeMethod::Rk4)
    return integrateRk4(f, y0, t0, t1, cfg.steps, stats);
  return integrateDopri5(f, y0, t0, t1, cfg, stats);
}

AugmentedState integrateAugmented(const DynamicsNet& net, const VectorXd& z0,
                                  const VectorXd& condBase, double t0, double t1,
                                  const TraceSpec& trace, const SolverConfig& cfg,
                                  IntegrateStats* stats) {
  const int n = net.config().state_dim;
  if (z0.size() != n)
    throw DimensionError("integrateAugmented: state size mismatch");
  if (condBase.size() != net.config().condition_dim)
    throw DimensionError("integrateAugmented: condition size mismatch");

  DynamicsNet::Workspace ws(net.config());
  VectorXd cond(net.config().condInputDim());
  cond.head(condBase.size()) = condBase;
  VectorXd zbuf(n);

  const bool wantTrace = trace.mode != TraceSpec::Mode::None;
  VectorXd y0(n + 1);
  y0.head(n) = z0;
  y0[n] = 0.0;

  VectorField field = [&](double t, const VectorXd& y, VectorXd& dy) {
    cond[cond.size() - 1] = t;
    zbuf = y.head(n);
    net.eval(zbuf, cond, ws);
    dy.head(n) = ws.y;
    dy[n] = wantTrace ? -net.quadForm(trace.probes, trace.weights, ws) : 0.0;
  };

  const VectorXd yEnd = integrate(field, y0, t0, t1, cfg, stats);
  AugmentedState out;
  out.z = yEnd.head(n);
  out.logdet = yEnd[n];
  return out;
}

AdjointResult integrateAdjoint(const DynamicsNet& net, const VectorXd& stateAtEnd,
                               const VectorXd& dLdStateEnd, double dLdLogdet,
                               const VectorXd& condBase, double tEnd,
                               double tStart, const TraceSpec& trace,
                               const SolverConfig& cfg, IntegrateStats* stats) {
  const int n = net.config().state_dim;
  const long p = net.parameterCount();
  if (stateAtEnd.size() != n || dLdStateEnd.size() != n)
    throw DimensionError("integrateAdjoint: state size mismatch");
  if (condBase.size() != net.config().condition_dim)
    throw DimensionError("integrateAdjoint: condition size mismatch");

  DynamicsNet::Workspace ws(net.config());
  VectorXd cond(net.config().condInputDim());
  cond.head(condBase.size()) = condBase;
  VectorXd zbuf(n), abuf(n), gz(n), gp(p), gzq(n);

  const bool wantTrace =
      trace.mode != TraceSpec::Mode::None && dLdLogdet != 0.0;

  VectorXd y0(2 * n + p);
  y0.head(n) = stateAtEnd;
  y0.segment(n, n) = dLdStateEnd;
  y0.tail(p).setZero();

  VectorField field = [&](double t, const VectorXd& y, VectorXd& dy) {
    cond[cond.size() - 1] = t;
    zbuf = y.head(n);
    abuf = y.segment(n, n);
    net.eval(zbuf, cond, ws);
    dy.head(n) = ws.y;
    gp.setZero();
    net.vjp(abuf, ws, &gz, gp, true);
    dy.segment(n, n) = -gz;
    dy.tail(p) = -gp;
    if (wantTrace) {
      gzq.setZero();
      net.quadFormGrad(trace.probes, trace.weights, ws, dLdLogdet, gzq,
                       dy.tail(p));
      dy.segment(n, n) += gzq;
    }
  };

  const VectorXd yEnd = integrate(field, y0, tEnd, tStart, cfg, stats);
  AdjointResult out;
  out.state = yEnd.head(n);
  out.gradState = yEnd.segment(n, n);
  out.gradParams = yEnd.tail(p);
  return out;
}

}  // namespace cnfik
