#pragma once

#include "nspbert/tensor.hpp"

#include <cmath>
#include <vector>

namespace nspbert {

struct AdamConfig {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates, one pair per parameter.
template <typename Scalar>
struct AdamState {
  std::vector<Matrix<Scalar>> m;
  std::vector<Matrix<Scalar>> v;
  long step = 0;
};

/// One bias-corrected Adam update. Parameters without a gradient are left
/// untouched (their moments still decay).
template <typename Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, AdamState<Scalar>& state, const AdamConfig& cfg) {
  if (state.m.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const auto& p : params) {
      state.m.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
      state.v.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state holds " + std::to_string(state.m.size()) + " slots for " +
                         std::to_string(params.size()) + " parameters");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.rows() != p.rows() || m.cols() != p.cols()) {
      throw DimensionError("adam_step: state shape mismatch for parameter " + std::to_string(i));
    }
    if (!p.has_grad()) {
      m *= static_cast<Scalar>(cfg.beta1);
      v *= static_cast<Scalar>(cfg.beta2);
      continue;
    }
    const auto& g = p.grad();
    auto& w = p.mutable_value();
    for (Index k = 0; k < w.size(); ++k) {
      const double gk = g.data()[k];
      const double mk = cfg.beta1 * m.data()[k] + (1.0 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * v.data()[k] + (1.0 - cfg.beta2) * gk * gk;
      m.data()[k] = static_cast<Scalar>(mk);
      v.data()[k] = static_cast<Scalar>(vk);
      const double update = cfg.lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg.eps);
      w.data()[k] = static_cast<Scalar>(w.data()[k] - update);
    }
  }
}

template <typename Scalar>
void zero_grads(std::vector<Tensor<Scalar>>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace nspbert
