#pragma once

#include <functional>

#include <Eigen/Core>

#include "cnfik/dynamics.hpp"

namespace cnfik {

enum class OdeMethod { Rk4, Dopri5 };

/// Integrator selection and controls. Fixed-step RK4 takes exactly `steps`
/// steps; adaptive Dormand-Prince 5(4) uses the embedded error estimate with
/// PI step-size control and the mixed tolerance
/// `abs_tol + rel_tol * max(|y|, |y_new|)` per component.
struct SolverConfig {
  OdeMethod method = OdeMethod::Dopri5;
  int steps = 32;        // fixed-step count (Rk4 only)
  double rel_tol = 1e-5; // adaptive only
  double abs_tol = 1e-5;
  long max_steps = 100000; // adaptive step budget, counting rejections

  static SolverConfig rk4(int steps);
  static SolverConfig dopri5(double relTol, double absTol);
  bool operator==(const SolverConfig&) const = default;
};

struct IntegrateStats {
  long accepted = 0;
  long rejected = 0;
  long evals = 0;
};

/// dy = f(t, y). The callee must not resize dy.
using VectorField =
    std::function<void(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy)>;

/// Integrates y' = f(t, y) from t0 to t1; t1 < t0 integrates backward.
/// Throws SolverError (carrying the time reached) on a non-finite state,
/// step-size underflow, or an exhausted step budget.
Eigen::VectorXd integrate(const VectorField& f, const Eigen::VectorXd& y0,
                          double t0, double t1, const SolverConfig& cfg,
                          IntegrateStats* stats = nullptr);

/// How to obtain the trace of dh/dz inside the augmented systems: skip it,
/// evaluate it exactly with one unit-basis probe per state dimension, or
/// estimate it with fixed Rademacher probes averaged with weight 1/P.
struct TraceSpec {
  enum class Mode { None, Exact, Hutchinson };
  Mode mode = Mode::None;
  Eigen::MatrixXd probes;  // state_dim x P
  Eigen::VectorXd weights; // P

  static TraceSpec none();
  static TraceSpec exact(int dim);
  static TraceSpec hutchinson(const Eigen::MatrixXd& probes);
};

struct AugmentedState {
  Eigen::VectorXd z;
  double logdet = 0.0;
};

/// Integrates the flow state together with the log-density change
///
///   dz/dt = h(z, [cond; t]),      dl/dt = -tr(dh/dz),
///
/// from t0 to t1 with l(t0) = 0. Integrating backward from 1 to 0 therefore
/// returns l = +integral of the trace over [0, 1], the log-determinant of the
/// forward map's Jacobian. With TraceSpec::none() the logdet stays 0.
AugmentedState integrateAugmented(const DynamicsNet& net, const Eigen::VectorXd& z0,
                                  const Eigen::VectorXd& condBase, double t0,
                                  double t1, const TraceSpec& trace,
                                  const SolverConfig& cfg,
                                  IntegrateStats* stats = nullptr);

struct AdjointResult {
  Eigen::VectorXd state;      // z at tStart, re-integrated
  Eigen::VectorXd gradState;  // dL/dz(tStart)
  Eigen::VectorXd gradParams; // dL/dtheta
};

/// Adjoint sensitivity pass for a loss that depends on the state at tEnd and
/// on the accumulated logdet. Starting from the forward result z(tEnd) and the
/// seeds a = dL/dz(tEnd), dLdLogdet, it integrates the combined system
///
///   dz/dt = h,
///   da/dt = -a^T dh/dz + dLdLogdet * grad_z tr(dh/dz),
///   dg/dt = -a^T dh/dtheta + dLdLogdet * grad_theta tr(dh/dz),
///
/// from tEnd to tStart and returns the gradients with respect to the state at
/// tStart and the parameters. The trace spec must match the one used in the
/// forward pass for the gradient to be exact (same probes for Hutchinson).
AdjointResult integrateAdjoint(const DynamicsNet& net,
                               const Eigen::VectorXd& stateAtEnd,
                               const Eigen::VectorXd& dLdStateEnd,
                               double dLdLogdet, const Eigen::VectorXd& condBase,
                               double tEnd, double tStart, const TraceSpec& trace,
                               const SolverConfig& cfg,
                               IntegrateStats* stats = nullptr);

}  // namespace cnfik
