#include "cnfik/dynamics.hpp"

#include <cmath>

#include "cnfik/errors.hpp"
#include "cnfik/rng.hpp"

namespace cnfik {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using CMap = Eigen::Map<const Eigen::MatrixXd>;
using MMap = Eigen::Map<Eigen::MatrixXd>;
using CVMap = Eigen::Map<const Eigen::VectorXd>;
using MVMap = Eigen::Map<Eigen::VectorXd>;

void DynamicsConfig::validate() const {
  if (state_dim < 1) throw DimensionError("DynamicsConfig: state_dim must be >= 1");
  if (condition_dim < 0) throw DimensionError("DynamicsConfig: condition_dim must be >= 0");
  if (hidden.empty()) throw DimensionError("DynamicsConfig: hidden widths must be nonempty");
  for (int w : hidden)
    if (w < 1) throw DimensionError("DynamicsConfig: hidden widths must be positive");
}

DynamicsNet::DynamicsNet(const DynamicsConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  buildOffsets();
  params_ = VectorXd::Zero(total_);
}

void DynamicsNet::buildOffsets() {
  const int condIn = cfg_.condInputDim();
  long at = 0;
  int prev = cfg_.state_dim;
  off_.clear();
  for (int w : cfg_.hidden) {
    Offsets o;
    o.W = at; at += static_cast<long>(w) * prev;
    o.b = at; at += w;
    o.S = at; at += static_cast<long>(w) * condIn;
    o.T = at; at += static_cast<long>(w) * condIn;
    off_.push_back(o);
    prev = w;
  }
  out_off_ = at;
  at += static_cast<long>(cfg_.state_dim) * prev;
  total_ = at;
}

long DynamicsNet::parameterCount(const DynamicsConfig& cfg) {
  const int condIn = cfg.condInputDim();
  long n = 0;
  int prev = cfg.state_dim;
  for (int w : cfg.hidden) {
    n += static_cast<long>(w) * prev + w + 2L * w * condIn;
    prev = w;
  }
  n += static_cast<long>(cfg.state_dim) * prev;
  return n;
}

long DynamicsNet::parameterCount() const { return parameterCount(cfg_); }

DynamicsNet DynamicsNet::initialized(const DynamicsConfig& cfg, uint64_t seed) {
  DynamicsNet net(cfg);
  Rng rng(seed);
  int prev = cfg.state_dim;
  for (size_t l = 0; l < cfg.hidden.size(); ++l) {
    const int w = cfg.hidden[l];
    const double bound = std::sqrt(3.0 / prev);  // zero mean, variance 1/fan-in
    MMap W(net.params_.data() + net.off_[l].W, w, prev);
    for (int c = 0; c < prev; ++c)
      for (int r = 0; r < w; ++r) W(r, c) = rng.uniform(-bound, bound);
    prev = w;
  }
  // b, S, T, Wout stay zero: the fresh flow is the identity map.
  return net;
}

DynamicsNet::Workspace::Workspace(const DynamicsConfig& cfg) {
  const size_t L = cfg.hidden.size();
  z_in.setZero(cfg.state_dim);
  cond.setZero(cfg.condInputDim());
  pre.resize(L); act.resize(L); dact.resize(L); scale.resize(L); out.resize(L);
  tpre.resize(L); tout.resize(L);
  gout.resize(L); gpre.resize(L); tb.resize(L); tpb.resize(L);
  for (size_t l = 0; l < L; ++l) {
    const int w = cfg.hidden[l];
    pre[l].setZero(w); act[l].setZero(w); dact[l].setZero(w);
    scale[l].setZero(w); out[l].setZero(w);
    tpre[l].setZero(w); tout[l].setZero(w);
    gout[l].setZero(w); gpre[l].setZero(w); tb[l].setZero(w); tpb[l].setZero(w);
  }
  y.setZero(cfg.state_dim);
  ty.setZero(cfg.state_dim);
  gz.setZero(cfg.state_dim);
}

static inline double softplusStable(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

static inline double sigmoidStable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

const VectorXd& DynamicsNet::eval(const VectorXd& z, const VectorXd& cond,
                                  Workspace& ws) const {
  if (z.size() != cfg_.state_dim)
    throw DimensionError("dynamics eval: state size mismatch");
  if (cond.size() != cfg_.condInputDim())
    throw DimensionError("dynamics eval: condition size mismatch (t must be appended)");

  ws.z_in = z;
  ws.cond = cond;
  const VectorXd* a = &ws.z_in;
  int prev = cfg_.state_dim;
  for (int l = 0; l < layerCount(); ++l) {
    const int w = cfg_.hidden[l];
    CMap W(params_.data() + off_[l].W, w, prev);
    CVMap b(params_.data() + off_[l].b, w);
    CMap S(params_.data() + off_[l].S, w, cfg_.condInputDim());
    CMap T(params_.data() + off_[l].T, w, cfg_.condInputDim());

    ws.pre[l].noalias() = W * (*a);
    ws.pre[l] += b;
    if (cfg_.activation == Activation::Tanh) {
      ws.act[l] = ws.pre[l].array().tanh();
      ws.dact[l] = 1.0 - ws.act[l].array().square();
    } else {
      ws.act[l] = ws.pre[l].unaryExpr([](double x) { return softplusStable(x); });
      ws.dact[l] = ws.pre[l].unaryExpr([](double x) { return sigmoidStable(x); });
    }
    ws.scale[l].noalias() = S * cond;
    ws.scale[l].array() += 1.0;
    ws.out[l].noalias() = T * cond;
    ws.out[l].array() += ws.act[l].array() * ws.scale[l].array();
    a = &ws.out[l];
    prev = w;
  }
  CMap Wout(params_.data() + out_off_, cfg_.state_dim, prev);
  ws.y.noalias() = Wout * (*a);
  return ws.y;
}

void DynamicsNet::vjp(const VectorXd& v, Workspace& ws, VectorXd* gradZ,
                      Eigen::Ref<VectorXd> gradParams, bool wantParams) const {
  const int L = layerCount();
  const int last = cfg_.hidden.back();
  const int condIn = cfg_.condInputDim();
  CMap Wout(params_.data() + out_off_, cfg_.state_dim, last);

  ws.gout[L - 1].noalias() = Wout.transpose() * v;
  if (wantParams) {
    MMap dWout(gradParams.data() + out_off_, cfg_.state_dim, last);
    dWout.noalias() += v * ws.out[L - 1].transpose();
  }
  for (int l = L - 1; l >= 0; --l) {
    const int w = cfg_.hidden[l];
    const int prev = (l == 0) ? cfg_.state_dim : cfg_.hidden[l - 1];
    const VectorXd& aprev = (l == 0) ? ws.z_in : ws.out[l - 1];
    CMap W(params_.data() + off_[l].W, w, prev);

    ws.gpre[l].array() =
        ws.gout[l].array() * ws.scale[l].array() * ws.dact[l].array();
    if (wantParams) {
      MMap dS(gradParams.data() + off_[l].S, w, condIn);
      MMap dT(gradParams.data() + off_[l].T, w, condIn);
      MMap dW(gradParams.data() + off_[l].W, w, prev);
      MVMap db(gradParams.data() + off_[l].b, w);
      dT.noalias() += ws.gout[l] * ws.cond.transpose();
      dS.noalias() += (ws.gout[l].cwiseProduct(ws.act[l])) * ws.cond.transpose();
      dW.noalias() += ws.gpre[l] * aprev.transpose();
      db += ws.gpre[l];
    }
    if (l > 0) {
      ws.gout[l - 1].noalias() = W.transpose() * ws.gpre[l];
    } else if (gradZ) {
      gradZ->noalias() = W.transpose() * ws.gpre[l];
    }
  }
}

void DynamicsNet::vjpState(const VectorXd& v, Workspace& ws, VectorXd& gradZ) const {
  static VectorXd dummy;
  vjp(v, ws, &gradZ, Eigen::Ref<VectorXd>(dummy), false);
}

void DynamicsNet::vjpParams(const VectorXd& v, Workspace& ws,
                            Eigen::Ref<VectorXd> gradParams) const {
  vjp(v, ws, nullptr, gradParams, true);
}

const VectorXd& DynamicsNet::jvp(const VectorXd& u, Workspace& ws) const {
  const int L = layerCount();
  const VectorXd* t = &u;
  int prev = cfg_.state_dim;
  for (int l = 0; l < L; ++l) {
    const int w = cfg_.hidden[l];
    CMap W(params_.data() + off_[l].W, w, prev);
    ws.tpre[l].noalias() = W * (*t);
    ws.tout[l].array() =
        ws.dact[l].array() * ws.tpre[l].array() * ws.scale[l].array();
    t = &ws.tout[l];
    prev = w;
  }
  CMap Wout(params_.data() + out_off_, cfg_.state_dim, prev);
  ws.ty.noalias() = Wout * (*t);
  return ws.ty;
}

double DynamicsNet::quadForm(const MatrixXd& probes, const VectorXd& weights,
                             Workspace& ws) const {
  double c = 0.0;
  for (int j = 0; j < probes.cols(); ++j) {
    const VectorXd& ty = jvp(probes.col(j), ws);
    c += weights[j] * probes.col(j).dot(ty);
  }
  return c;
}

// Gradient of c = sum_j w_j e_j^T (dh/dz) e_j with respect to z and theta.
// Reverse sweep over the tangent program: two adjoint streams per layer, one
// for the primal chain (gout/gpre) and one for the tangent chain (tb/tpb).
double DynamicsNet::quadFormGrad(const MatrixXd& probes, const VectorXd& weights,
                                 Workspace& ws, double scaleGrad, VectorXd& gradZ,
                                 Eigen::Ref<VectorXd> gradParams) const {
  const int L = layerCount();
  const int last = cfg_.hidden.back();
  const int condIn = cfg_.condInputDim();
  CMap Wout(params_.data() + out_off_, cfg_.state_dim, last);
  double c = 0.0;

  for (int j = 0; j < probes.cols(); ++j) {
    const VectorXd probe = probes.col(j);
    const VectorXd& ty = jvp(probe, ws);
    c += weights[j] * probe.dot(ty);

    const double s = scaleGrad * weights[j];
    // Seed: adjoint of ty is s * probe. The primal output y itself does not
    // enter c, so the primal stream starts at zero.
    ws.tb[L - 1].noalias() = Wout.transpose() * (s * probe);
    ws.gout[L - 1].setZero();
    {
      MMap dWout(gradParams.data() + out_off_, cfg_.state_dim, last);
      dWout.noalias() += (s * probe) * ws.tout[L - 1].transpose();
    }
    for (int l = L - 1; l >= 0; --l) {
      const int w = cfg_.hidden[l];
      const int prev = (l == 0) ? cfg_.state_dim : cfg_.hidden[l - 1];
      const VectorXd& aprev = (l == 0) ? ws.z_in : ws.out[l - 1];
      const VectorXd& tprev = (l == 0) ? probe : ws.tout[l - 1];
      CMap W(params_.data() + off_[l].W, w, prev);
      MMap dW(gradParams.data() + off_[l].W, w, prev);
      MVMap db(gradParams.data() + off_[l].b, w);
      MMap dS(gradParams.data() + off_[l].S, w, condIn);
      MMap dT(gradParams.data() + off_[l].T, w, condIn);

      // tangent-out: tout = (dact .* tpre) .* scale
      dS.noalias() += (ws.tb[l].cwiseProduct(ws.dact[l].cwiseProduct(ws.tpre[l]))) *
                      ws.cond.transpose();
      // primal-out: out = act .* scale + T c
      dT.noalias() += ws.gout[l] * ws.cond.transpose();
      dS.noalias() += (ws.gout[l].cwiseProduct(ws.act[l])) * ws.cond.transpose();

      // adjoint of tpre and of dact
      ws.tpb[l].array() = ws.tb[l].array() * ws.scale[l].array() * ws.dact[l].array();
      // act''(pre): tanh -> -2 act dact ; softplus -> dact (1 - dact)
      if (cfg_.activation == Activation::Tanh) {
        ws.gpre[l].array() =
            ws.gout[l].array() * ws.scale[l].array() * ws.dact[l].array() +
            ws.tb[l].array() * ws.scale[l].array() * ws.tpre[l].array() *
                (-2.0 * ws.act[l].array() * ws.dact[l].array());
      } else {
        ws.gpre[l].array() =
            ws.gout[l].array() * ws.scale[l].array() * ws.dact[l].array() +
            ws.tb[l].array() * ws.scale[l].array() * ws.tpre[l].array() *
                (ws.dact[l].array() * (1.0 - ws.dact[l].array()));
      }

      dW.noalias() += ws.tpb[l] * tprev.transpose();
      dW.noalias() += ws.gpre[l] * aprev.transpose();
      db += ws.gpre[l];

      if (l > 0) {
        ws.tb[l - 1].noalias() = W.transpose() * ws.tpb[l];
        ws.gout[l - 1].noalias() = W.transpose() * ws.gpre[l];
      } else {
        // The tangent input is the constant probe; only the primal stream
        // reaches z.
        gradZ.noalias() += W.transpose() * ws.gpre[l];
      }
    }
  }
  return c;
}

}  // namespace cnfik
