#include "chg2cap/optim.hpp"

#include <cmath>

#include "chg2cap/error.hpp"

namespace chg2cap {

void adam_step(const ParameterList& params, const std::vector<std::vector<double>>& grads, AdamState& state,
               double lr, const AdamHyper& hyper) {
  if (grads.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].tensor.numel() || state.m[i].size() != grads[i].size()) {
      throw DimensionError("adam_step: gradient for " + params[i].name + " has " + std::to_string(grads[i].size()) +
                           " entries, parameter has " + std::to_string(params[i].tensor.numel()));
    }
  }

  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    auto data = p.data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < g.size(); ++k) {
      m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
      v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
      data[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + hyper.eps);
    }
  }
}

void Adam::step(double lr) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.push_back(p.tensor.grad());
  adam_step(params_, grads, state_, lr, hyper_);
}

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg) {
  if (cfg.decay_every == 0) throw ConfigError("decay_every must be >= 1");
  return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.decay_every));
}

}  // namespace chg2cap
