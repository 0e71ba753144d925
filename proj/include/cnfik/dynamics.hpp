#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace cnfik {

enum class Activation { Tanh, Softplus };

/// Shape of the hidden-dynamics network. `condition_dim` counts the condition
/// channels fed by the caller (pose blocks plus any extra channels); the flow
/// time t is appended as one more channel at evaluation, so the conditioning
/// maps have condition_dim + 1 columns.
struct DynamicsConfig {
  int state_dim = 1;
  int condition_dim = 7;
  std::vector<int> hidden = {64, 64, 64};
  Activation activation = Activation::Tanh;

  int condInputDim() const { return condition_dim + 1; }
  void validate() const;
  bool operator==(const DynamicsConfig&) const = default;
};

/// The hidden dynamics h(z, cond): a multilayer perceptron whose every hidden
/// layer is modulated by an affine function of the condition,
///
///   a_l = act(W_l a_{l-1} + b_l) .* (S_l c + 1) + T_l c,     y = Wout a_last,
///
/// with c = [condition; t]. Parameters live in one flat vector; per-tensor
/// views are mapped on demand. Evaluation and the derivative products are
/// const and reentrant; each caller owns a Workspace for intermediates.
///
/// All derivative products (vjpState, vjpParams, quadFormGrad) are exact
/// reverse-mode accumulations, not approximations.
class DynamicsNet {
public:
  DynamicsNet() = default;
  explicit DynamicsNet(const DynamicsConfig& cfg);  // all parameters zero

  /// Hidden weights scaled by 1/sqrt(fan-in); conditioning maps and the output
  /// layer start at zero, so a fresh net is the identity flow (h == 0).
  static DynamicsNet initialized(const DynamicsConfig& cfg, uint64_t seed);

  const DynamicsConfig& config() const { return cfg_; }
  long parameterCount() const;  // closed-form, equals params().size()
  static long parameterCount(const DynamicsConfig& cfg);

  const Eigen::VectorXd& params() const { return params_; }
  Eigen::VectorXd& params() { return params_; }

  // Flat-vector offsets of the per-layer tensors, for serialization and tests.
  // Layer l owns, in order: W (w x prev), b (w), S (w x condIn), T (w x condIn);
  // after all hidden layers comes the output weight (state_dim x last width).
  int layerCount() const { return static_cast<int>(cfg_.hidden.size()); }
  long offsetW(int l) const { return off_[l].W; }
  long offsetB(int l) const { return off_[l].b; }
  long offsetS(int l) const { return off_[l].S; }
  long offsetT(int l) const { return off_[l].T; }
  long offsetOut() const { return out_off_; }

  struct Workspace {
    explicit Workspace(const DynamicsConfig& cfg);
    Eigen::VectorXd z_in;                 // input state as last evaluated
    Eigen::VectorXd cond;                 // [condition; t] as last evaluated
    std::vector<Eigen::VectorXd> pre;     // W a + b
    std::vector<Eigen::VectorXd> act;     // activation(pre)
    std::vector<Eigen::VectorXd> dact;    // activation'(pre)
    std::vector<Eigen::VectorXd> scale;   // S c + 1
    std::vector<Eigen::VectorXd> out;     // layer outputs a_l
    Eigen::VectorXd y;                    // network output
    // tangent sweep
    std::vector<Eigen::VectorXd> tpre, tout;
    Eigen::VectorXd ty;
    // backward sweep scratch (per layer, preallocated)
    std::vector<Eigen::VectorXd> gout, gpre, tb, tpb;
    Eigen::VectorXd gz;
  };

  /// dz/dt for state z and condition vector [condition; t]. Caches every
  /// intermediate in ws; the derivative products below reuse that cache and
  /// must be called after an eval() with the same arguments.
  const Eigen::VectorXd& eval(const Eigen::VectorXd& z, const Eigen::VectorXd& cond,
                              Workspace& ws) const;

  /// v^T dh/dz from the cached forward pass.
  void vjpState(const Eigen::VectorXd& v, Workspace& ws, Eigen::VectorXd& gradZ) const;

  /// v^T dh/dtheta, one entry per parameter, accumulated into gradParams
  /// (which must be zeroed or pre-loaded by the caller).
  void vjpParams(const Eigen::VectorXd& v, Workspace& ws,
                 Eigen::Ref<Eigen::VectorXd> gradParams) const;

  /// Both products in one backward sweep.
  void vjp(const Eigen::VectorXd& v, Workspace& ws, Eigen::VectorXd* gradZ,
           Eigen::Ref<Eigen::VectorXd> gradParams, bool wantParams) const;

  /// (dh/dz) u from the cached forward pass (directional derivative).
  const Eigen::VectorXd& jvp(const Eigen::VectorXd& u, Workspace& ws) const;

  /// sum_j weights[j] * probes_j^T (dh/dz) probes_j. With unit-basis probes and
  /// unit weights this is exactly tr(dh/dz); with Rademacher probes and 1/P
  /// weights it is the Hutchinson estimate.
  double quadForm(const Eigen::MatrixXd& probes, const Eigen::VectorXd& weights,
                  Workspace& ws) const;

  /// quadForm value plus its exact gradients with respect to z and parameters
  /// (second-order reverse-over-forward sweep). Gradients are accumulated,
  /// scaled by `scaleGrad`, into gradZ / gradParams.
  double quadFormGrad(const Eigen::MatrixXd& probes, const Eigen::VectorXd& weights,
                      Workspace& ws, double scaleGrad, Eigen::VectorXd& gradZ,
                      Eigen::Ref<Eigen::VectorXd> gradParams) const;

private:
  struct Offsets { long W, b, S, T; };
  void buildOffsets();

  DynamicsConfig cfg_;
  Eigen::VectorXd params_;
  std::vector<Offsets> off_;
  long out_off_ = 0;
  long total_ = 0;
};

}  // namespace cnfik
