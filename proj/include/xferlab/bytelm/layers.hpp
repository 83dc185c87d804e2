#pragma once

#include <cmath>

#include "xferlab/bytelm/parameters.hpp"

namespace xferlab::bytelm {

enum class Activation { gelu, identity };

inline constexpr double kRmsEpsilon = 1e-6;

// RMS normalization: y = x / sqrt(mean(x^2) + eps) * gain, row by row.

template <typename S>
struct RmsState {
  Matrix<S> xhat;  // x / rms(x)
  Vector<S> inv_rms;
};

template <typename S>
Matrix<S> rms_forward(const Matrix<S>& x, const Vector<S>& gain, RmsState<S>& st) {
  st.inv_rms = (x.array().square().rowwise().mean() + static_cast<S>(kRmsEpsilon)).rsqrt().matrix();
  st.xhat = (x.array().colwise() * st.inv_rms.array()).matrix();
  return (st.xhat.array().rowwise() * gain.transpose().array()).matrix();
}

/// Accumulates into dgain and returns dL/dx.
template <typename S>
Matrix<S> rms_backward(const Matrix<S>& dy, const Vector<S>& gain, const RmsState<S>& st, Vector<S>& dgain) {
  dgain += (dy.array() * st.xhat.array()).colwise().sum().transpose().matrix();
  Matrix<S> dxhat = (dy.array().rowwise() * gain.transpose().array()).matrix();
  Vector<S> proj = (dxhat.array() * st.xhat.array()).rowwise().mean().matrix();
  return ((dxhat.array() - st.xhat.array().colwise() * proj.array()).colwise() * st.inv_rms.array()).matrix();
}

// tanh-approximated GELU, as in the T5 family.
template <typename S>
Matrix<S> activate(const Matrix<S>& x, Activation act) {
  if (act == Activation::identity) return x;
  const S k = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  const S c = static_cast<S>(0.044715);
  auto a = x.array();
  return (static_cast<S>(0.5) * a * (static_cast<S>(1) + (k * (a + c * a.cube())).tanh())).matrix();
}

template <typename S>
Matrix<S> activate_grad(const Matrix<S>& x, Activation act) {
  if (act == Activation::identity) return Matrix<S>::Ones(x.rows(), x.cols());
  const S k = static_cast<S>(0.7978845608028654);
  const S c = static_cast<S>(0.044715);
  auto a = x.array();
  auto th = (k * (a + c * a.cube())).tanh().eval();
  return (static_cast<S>(0.5) * (static_cast<S>(1) + th) +
          static_cast<S>(0.5) * a * (static_cast<S>(1) - th.square()) * k * (static_cast<S>(1) + 3 * c * a.square()))
      .matrix();
}

// Gated MLP: y = (act(h Wg) * (h Wu)) Wd.

template <typename S>
struct MlpState {
  Matrix<S> gate_pre, gate_act, up, hidden;
};

template <typename S>
Matrix<S> mlp_forward(const Matrix<S>& h, const Matrix<S>& w_gate, const Matrix<S>& w_up, const Matrix<S>& w_down,
                      Activation act, MlpState<S>& st) {
  st.gate_pre = h * w_gate;
  st.gate_act = activate(st.gate_pre, act);
  st.up = h * w_up;
  st.hidden = (st.gate_act.array() * st.up.array()).matrix();
  return st.hidden * w_down;
}

/// Accumulates weight gradients and returns dL/dh.
template <typename S>
Matrix<S> mlp_backward(const Matrix<S>& dy, const Matrix<S>& h, const Matrix<S>& w_gate, const Matrix<S>& w_up,
                       const Matrix<S>& w_down, Activation act, const MlpState<S>& st, Matrix<S>& d_gate,
                       Matrix<S>& d_up, Matrix<S>& d_down) {
  d_down.noalias() += st.hidden.transpose() * dy;
  Matrix<S> dhidden = dy * w_down.transpose();
  Matrix<S> dup = (dhidden.array() * st.gate_act.array()).matrix();
  Matrix<S> dgate = (dhidden.array() * st.up.array() * activate_grad(st.gate_pre, act).array()).matrix();
  d_gate.noalias() += h.transpose() * dgate;
  d_up.noalias() += h.transpose() * dup;
  Matrix<S> dh = dgate * w_gate.transpose();
  dh.noalias() += dup * w_up.transpose();
  return dh;
}

}  // namespace xferlab::bytelm
