#pragma once

#include <cstddef>
#include <vector>

#include "chg2cap/config.hpp"
#include "chg2cap/parameters.hpp"

namespace chg2cap {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update of `params` in place. `grads[i]` must match
/// params[i] in size; an empty state is sized on first use.
void adam_step(const ParameterList& params, const std::vector<std::vector<double>>& grads, AdamState& state,
               double lr, const AdamHyper& hyper = {});

/// Adam over the gradients accumulated in each parameter's grad buffer.
class Adam {
 public:
  explicit Adam(ParameterList params, AdamHyper hyper = {}) : params_(std::move(params)), hyper_(hyper) {}
  void step(double lr);
  void zero_grad() { zero_grads(params_); }
  const AdamState& state() const { return state_; }

 private:
  ParameterList params_;
  AdamHyper hyper_;
  AdamState state_;
};

/// lr0 * lr_decay^floor(epoch / decay_every).
double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg);

}  // namespace chg2cap
