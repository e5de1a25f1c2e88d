#include "quiet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace quiet::diff {

namespace {
constexpr std::size_t kMaxCoordsPerTensor = 200;

std::vector<std::size_t> coordinate_spread(std::size_t n) {
  std::vector<std::size_t> idx;
  if (n <= kMaxCoordsPerTensor) {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  } else {
    idx.reserve(kMaxCoordsPerTensor);
    for (std::size_t k = 0; k < kMaxCoordsPerTensor; ++k) idx.push_back(k * n / kMaxCoordsPerTensor);
  }
  return idx;
}
}  // namespace

GradCheckReport finite_diff_check(const std::function<double(bool)>& loss_fn,
                                  const std::vector<NamedTensor>& params, double step) {
  if (!(step > 0.0)) throw ContractError("finite_diff_check: step must be positive");

  for (const NamedTensor& p : params) p.tensor->zero_grad();
  const double base = loss_fn(true);
  if (!std::isfinite(base)) {
    throw NumericError("finite_diff_check: non-finite loss at the base point");
  }

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const NamedTensor& p : params) analytic.push_back(p.tensor->grad);

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& t = *params[pi].tensor;
    GradCheckEntry entry;
    entry.name = params[pi].name;
    const auto coords = coordinate_spread(t.size());
    entry.checked_coordinates = coords.size();
    for (std::size_t c : coords) {
      const double saved = t.values[c];
      t.values[c] = saved + step;
      const double plus = loss_fn(false);
      t.values[c] = saved - step;
      const double minus = loss_fn(false);
      t.values[c] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("finite_diff_check: non-finite loss while perturbing " +
                           params[pi].name + "[" + std::to_string(c) + "]");
      }
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[pi][c];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.per_tensor.push_back(std::move(entry));
  }
  return report;
}

}  // namespace quiet::diff
