#pragma once

#include <string>
#include <vector>

#include "chg2cap/random.hpp"
#include "chg2cap/tensor.hpp"

namespace chg2cap {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered (name, tensor) pairs. Tensors alias the owning parameter structs.
using ParameterList = std::vector<NamedTensor>;

std::size_t parameter_count(const ParameterList& params);
void zero_grads(const ParameterList& params);

/// Glorot/Xavier uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng);
Tensor trainable(Tensor t);

}  // namespace chg2cap
