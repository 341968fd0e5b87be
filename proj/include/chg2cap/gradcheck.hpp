#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "chg2cap/error.hpp"
#include "chg2cap/tensor.hpp"

namespace chg2cap {

class DeterminismError : public ContractError {
 public:
  using ContractError::ContractError;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Probe at most this many entries per tensor (0 = every entry). Entries
  /// are drawn with a seeded generator so runs are reproducible.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
  /// When a +-step probe changes the sign pattern of any relu input relative
  /// to the base point, the difference straddles a kink and is not a valid
  /// oracle. The probe is repeated with the step divided by 10, at most this
  /// many times; entries that still straddle are skipped and counted.
  int kink_retries = 3;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probed = 0;
  std::size_t restepped = 0;  // probed with a reduced step to avoid a relu kink
  std::size_t skipped = 0;    // still straddling a kink at the smallest step
  std::string worst;  // "<input index>[<flat entry>]" of the largest error
};

/// Compares reverse-mode gradients of the scalar `f()` with respect to each
/// tensor in `inputs` against central differences. The error per entry is
/// |autodiff - fd| / max(1, |fd|). Entries whose difference would cross a
/// relu kink are re-probed with a smaller step (see kink_retries).
GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

/// Single-input form.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step = 1e-5);

}  // namespace chg2cap
