#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lappyr/tensor.hpp"

namespace lappyr {

struct GradCheckItem {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckItem> items;
  bool all_passed() const {
    for (const auto& i : items)
      if (!i.passed) return false;
    return true;
  }
};

// Central finite differences against reverse-mode gradients, in double.
// loss_fn must rebuild its graph from the current leaf values on every call.
// Relative error uses max(|analytic|, |fd|, 1e-8) as denominator. Elements
// whose mismatch shrinks when re-measured at a smaller step are treated as
// finite-difference artifacts (kinks of |.| terms), not gradient errors.
// max_per_leaf 0 checks every element; otherwise a seeded subset per leaf.
double max_relative_gradient_error(const std::function<Tensor<double>()>& loss_fn,
                                   const std::vector<Tensor<double>>& leaves,
                                   double epsilon = 1e-4, int max_per_leaf = 0,
                                   std::uint64_t sample_seed = 7);

// Per-operation checks, per-loss checks, and a sampled full-network check.
GradCheckReport run_gradient_suite(std::uint64_t seed);

}  // namespace lappyr
