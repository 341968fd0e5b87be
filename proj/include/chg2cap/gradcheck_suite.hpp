#pragma once

#include <string>
#include <vector>

#include "chg2cap/gradcheck.hpp"

namespace chg2cap {

struct GradCheckReport {
  std::string name;
  GradCheckResult result;
  double seconds = 0.0;
};

/// Finite-difference checks on random toy-scale instances. `module` is one of
/// "ops", "encoder", "decoder", "model" or "all". `max_entries_per_tensor`
/// limits probing (0 probes every entry).
std::vector<GradCheckReport> run_gradcheck_suite(const std::string& module, std::size_t max_entries_per_tensor = 0,
                                                 std::uint64_t seed = 0);

}  // namespace chg2cap
