#include "chg2cap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "chg2cap/ops.hpp"
#include "chg2cap/random.hpp"

namespace chg2cap {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  const Tensor y = f();
  if (y.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  return y.item();
}

double evaluate(const std::function<Tensor()>& f, std::vector<unsigned char>& signs) {
  ops::ReluSignTrace trace;
  const double y = evaluate(f);
  signs = trace.signs();
  return y;
}

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  if (!(options.step > 0.0) || !std::isfinite(options.step)) {
    throw ContractError("grad_check: step must be a positive finite number");
  }

  std::vector<bool> saved_flags;
  for (auto& x : inputs) {
    saved_flags.push_back(x.requires_grad());
    x.set_requires_grad(true);
    x.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor y = f();
    if (y.numel() != 1) throw ContractError("grad_check: function must return a scalar");
    backward(y, tape);
  }
  for (auto& x : inputs) {
    analytic.push_back(x.grad());
    x.zero_grad();
  }

  std::vector<unsigned char> base_signs, signs_p, signs_m;
  const double base_a = evaluate(f, base_signs);
  const double base_b = evaluate(f);
  if (!bit_equal(base_a, base_b)) {
    throw DeterminismError("grad_check: two evaluations at the same point differ");
  }

  Rng rng(options.seed);
  GradCheckResult result;
  const double h = options.step;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto data = inputs[t].data();
    std::vector<std::size_t> entries(data.size());
    std::iota(entries.begin(), entries.end(), 0);
    if (options.max_entries_per_tensor > 0 && entries.size() > options.max_entries_per_tensor) {
      rng.shuffle(entries.begin(), entries.end());
      entries.resize(options.max_entries_per_tensor);
      std::sort(entries.begin(), entries.end());
    }
    for (std::size_t idx : entries) {
      const double orig = data[idx];
      double step = h;
      bool smooth = false;
      double fd = 0.0;
      for (int attempt = 0; attempt <= options.kink_retries; ++attempt, step /= 10.0) {
        data[idx] = orig + step;
        const double fp = evaluate(f, signs_p);
        data[idx] = orig - step;
        const double fm = evaluate(f, signs_m);
        data[idx] = orig;
        fd = (fp - fm) / (2.0 * step);
        if (signs_p == base_signs && signs_m == base_signs) {
          smooth = true;
          if (attempt > 0) ++result.restepped;
          break;
        }
      }
      if (!smooth) {
        ++result.skipped;
        continue;
      }
      const double err = std::abs(analytic[t][idx] - fd) / std::max(1.0, std::abs(fd));
      ++result.probed;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : INFINITY;
        result.worst = std::to_string(t) + "[" + std::to_string(idx) + "]";
      }
    }
  }

  for (std::size_t t = 0; t < inputs.size(); ++t) inputs[t].set_requires_grad(saved_flags[t]);
  return result;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step) {
  GradCheckOptions options;
  options.step = step;
  return grad_check([&] { return f(x); }, {x}, options).max_rel_error;
}

}  // namespace chg2cap
