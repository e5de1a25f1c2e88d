#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "quiet/error.hpp"

namespace quiet::diff {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// A block of 64-bit values with a shape, optionally carrying a gradient
// of the same length. Parameters set requires_grad; plain inputs leave
// it off.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;

  Tensor() = default;

  explicit Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), values(numel(shape), fill) {}

  Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != numel(shape)) {
      throw DimensionError("Tensor: " + std::to_string(values.size()) +
                           " values do not fill shape " + shape_string(shape));
    }
  }

  std::size_t size() const { return values.size(); }

  void set_requires_grad(bool on) {
    requires_grad = on;
    grad.assign(on ? values.size() : 0, 0.0);
  }

  void zero_grad() { grad.assign(grad.size(), 0.0); }
};

// Named view of a parameter tensor, used by the gradient checker, the
// optimizer and checkpointing.
struct NamedTensor {
  std::string name;
  Tensor* tensor = nullptr;
};

}  // namespace quiet::diff
