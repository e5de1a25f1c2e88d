// Independent finite-difference verifier for analytic gradients.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "quiet/tensor.hpp"

namespace quiet::diff {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked_coordinates = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradCheckEntry> per_tensor;
};

// Compares analytic gradients against central differences
// (loss(x+h) - loss(x-h)) / (2h) for every coordinate of every parameter
// (or a deterministic spread of 200 coordinates for tensors larger than
// that). Relative error is |a - n| / max(|a|, |n|, 1e-8).
//
// loss_fn(record_gradients) evaluates the scalar loss at the current
// parameter values; when record_gradients is true it must also leave
// d(loss)/d(param) in each parameter's grad. The closure must be a pure
// function of the parameter values (frozen dropout masks, fixed data).
GradCheckReport finite_diff_check(const std::function<double(bool)>& loss_fn,
                                  const std::vector<NamedTensor>& params, double step = 1e-5);

}  // namespace quiet::diff
