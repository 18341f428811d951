#include "rfvoice/nn/adam.hpp"

#include <cmath>

#include "rfvoice/error.hpp"

namespace rfvoice::nn {

AdamState::AdamState(const AdamConfig& c, const ParamSet& params) : cfg(c) {
  for (const auto& p : params) {
    m.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    v.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
  }
}

double adam_step(ParamSet& params, AdamState& st) {
  if (st.m.size() != params.size()) throw ArgumentError("adam: state does not match parameters");
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (p.grad.rows() != st.m[i].rows() || p.grad.cols() != st.m[i].cols()) {
      throw ArgumentError("adam: shape mismatch for " + p.name);
    }
    if (!p.grad.allFinite()) throw DivergenceError("adam: non-finite gradient in " + p.name);
    sq += p.grad.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double clip = (st.cfg.clip_norm > 0.0 && norm > st.cfg.clip_norm) ? st.cfg.clip_norm / norm : 1.0;
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const Mat grad = p.grad * clip;
    st.m[i] = st.cfg.beta1 * st.m[i] + (1.0 - st.cfg.beta1) * grad;
    st.v[i] = st.cfg.beta2 * st.v[i] + (1.0 - st.cfg.beta2) * grad.cwiseAbs2();
    const double lr = st.cfg.lr;
    const double eps = st.cfg.eps;
    p.value.array() -= lr * (st.m[i].array() / bc1) / ((st.v[i].array() / bc2).sqrt() + eps);
  }
  return norm;
}

}  // namespace rfvoice::nn
