#include "quiet/tape.hpp"

#include <cmath>

namespace quiet::diff {

namespace {
bool g_sabotage_backward = false;
constexpr double kLogClamp = 1e-12;
constexpr double kSqrtClamp = 1e-12;
constexpr double kNormClamp = 1e-12;
constexpr double kAbsEps = 1e-8;
}  // namespace

void Tape::set_backward_sabotage(bool on) { g_sabotage_backward = on; }

Value Tape::push(Shape shape, std::vector<double> val) {
  Node n;
  n.shape = std::move(shape);
  n.val = std::move(val);
  nodes_.push_back(std::move(n));
  return Value{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Value Tape::leaf(Tensor& t) {
  auto it = leaf_cache_.find(&t);
  if (it != leaf_cache_.end()) return it->second;
  Value v = push(t.shape, t.values);
  node(v).source = &t;
  leaf_cache_.emplace(&t, v);
  return v;
}

Value Tape::constant(Shape shape, std::vector<double> v) {
  if (v.size() != numel(shape)) {
    throw DimensionError("constant: " + std::to_string(v.size()) + " values do not fill shape " +
                         shape_string(shape));
  }
  return push(std::move(shape), std::move(v));
}

Value Tape::constant(std::vector<double> v) {
  Shape s{v.size()};
  return push(std::move(s), std::move(v));
}

Value Tape::scalar(double v) { return push(Shape{1}, {v}); }

void Tape::check_same_shape(Value a, Value b, const char* op) const {
  if (node(a).shape != node(b).shape) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(node(a).shape) + " and " +
                         shape_string(node(b).shape) + " differ");
  }
}

std::span<const double> Tape::values(Value v) const { return node(v).val; }

std::vector<double> Tape::values_copy(Value v) const { return node(v).val; }

const Shape& Tape::shape(Value v) const { return node(v).shape; }

double Tape::scalar_value(Value v) const {
  if (node(v).val.size() != 1) {
    throw DimensionError("scalar_value: node has " + std::to_string(node(v).val.size()) +
                         " elements");
  }
  return node(v).val[0];
}

std::span<const double> Tape::gradient(Value v) const { return node(v).grad; }

Value Tape::add(Value a, Value b) {
  check_same_shape(a, b, "add");
  const auto& av = node(a).val;
  const auto& bv = node(b).val;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Value r = push(node(a).shape, std::move(out));
  node(r).vjp = [a, b](Tape& t, const Node& self) {
    auto& ga = t.node(a).grad;
    auto& gb = t.node(b).grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i];
      gb[i] += self.grad[i];
    }
  };
  return r;
}

Value Tape::sub(Value a, Value b) {
  check_same_shape(a, b, "sub");
  const auto& av = node(a).val;
  const auto& bv = node(b).val;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  Value r = push(node(a).shape, std::move(out));
  node(r).vjp = [a, b](Tape& t, const Node& self) {
    auto& ga = t.node(a).grad;
    auto& gb = t.node(b).grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i];
      gb[i] -= self.grad[i];
    }
  };
  return r;
}

Value Tape::elementwise_mul(Value a, Value b) {
  check_same_shape(a, b, "elementwise_mul");
  const auto& av = node(a).val;
  const auto& bv = node(b).val;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Value r = push(node(a).shape, std::move(out));
  node(r).vjp = [a, b](Tape& t, const Node& self) {
    const auto& av = t.node(a).val;
    const auto& bv = t.node(b).val;
    auto& ga = t.node(a).grad;
    auto& gb = t.node(b).grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i] * bv[i];
      gb[i] += self.grad[i] * av[i];
    }
  };
  return r;
}

Value Tape::matmul(Value a, Value b) {
  const auto& as = node(a).shape;
  const auto& bs = node(b).shape;
  if (as.size() != 2) {
    throw DimensionError("matmul: left operand must be 2-D, got " + shape_string(as));
  }
  const std::size_t m = as[0], k = as[1];
  const bool vec = bs.size() == 1;
  if (!vec && bs.size() != 2) {
    throw DimensionError("matmul: right operand must be 1-D or 2-D, got " + shape_string(bs));
  }
  const std::size_t bk = vec ? bs[0] : bs[0];
  const std::size_t n = vec ? 1 : bs[1];
  if (bk != k) {
    throw DimensionError("matmul: inner dimensions " + std::to_string(k) + " vs " +
                         std::to_string(bk));
  }
  const auto& av = node(a).val;
  const auto& bv = node(b).val;
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aik * bv[kk * n + j];
    }
  Shape out_shape = vec ? Shape{m} : Shape{m, n};
  Value r = push(std::move(out_shape), std::move(out));
  node(r).vjp = [a, b, m, k, n](Tape& t, const Node& self) {
    const auto& av = t.node(a).val;
    const auto& bv = t.node(b).val;
    auto& ga = t.node(a).grad;
    auto& gb = t.node(b).grad;
    // dA = g . B^T ; dB = A^T . g
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += self.grad[i * n + j] * bv[kk * n + j];
        ga[i * k + kk] += acc;
      }
    for (std::size_t kk = 0; kk < k; ++kk)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += av[i * k + kk] * self.grad[i * n + j];
        gb[kk * n + j] += acc;
      }
  };
  return r;
}

Value Tape::dot(Value a, Value b) {
  check_same_shape(a, b, "dot");
  const auto& av = node(a).val;
  const auto& bv = node(b).val;
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  Value r = push(Shape{1}, {acc});
  node(r).vjp = [a, b](Tape& t, const Node& self) {
    const double g = self.grad[0];
    const auto& av = t.node(a).val;
    const auto& bv = t.node(b).val;
    auto& ga = t.node(a).grad;
    auto& gb = t.node(b).grad;
    for (std::size_t i = 0; i < av.size(); ++i) {
      ga[i] += g * bv[i];
      gb[i] += g * av[i];
    }
  };
  return r;
}

Value Tape::concat(const std::vector<Value>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  std::size_t total = 0;
  for (Value p : parts) {
    if (node(p).shape.size() != 1) {
      throw DimensionError("concat: inputs must be 1-D, got " + shape_string(node(p).shape));
    }
    total += node(p).val.size();
  }
  std::vector<double> out;
  out.reserve(total);
  for (Value p : parts) out.insert(out.end(), node(p).val.begin(), node(p).val.end());
  Value r = push(Shape{total}, std::move(out));
  node(r).vjp = [parts](Tape& t, const Node& self) {
    std::size_t off = 0;
    for (Value p : parts) {
      auto& gp = t.node(p).grad;
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[off + i];
      off += gp.size();
    }
  };
  return r;
}

Value Tape::slice(Value a, std::size_t begin, std::size_t end) {
  if (node(a).shape.size() != 1) {
    throw DimensionError("slice: input must be 1-D, got " + shape_string(node(a).shape));
  }
  const std::size_t len = node(a).val.size();
  if (begin >= end || end > len) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for length " + std::to_string(len));
  }
  std::vector<double> out(node(a).val.begin() + begin, node(a).val.begin() + end);
  Value r = push(Shape{end - begin}, std::move(out));
  node(r).vjp = [a, begin](Tape& t, const Node& self) {
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[begin + i] += self.grad[i];
  };
  return r;
}

Value Tape::tanh(Value a) {
  std::vector<double> out(node(a).val.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(node(a).val[i]);
  Value r = push(node(a).shape, std::move(out));
  node(r).vjp = [a](Tape& t, const Node& self) {
    auto& ga = t.node(a).grad;
    const double fudge = g_sabotage_backward ? 1.5 : 1.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += fudge * self.grad[i] * (1.0 - self.val[i] * self.val[i]);
    }
  };
  return r;
}

Value Tape::sigmoid(Value a) {
  std::vector<double> out(node(a).val.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-node(a).val[i]));
  Value r = push(node(a).shape, std::move(out));
  node(r).vjp = [a](Tape& t, const Node& self) {
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i] * self.val[i] * (1.0 - self.val[i]);
    }
  };
  return r;
}

Value Tape::softmax(Value a) {
  const auto& as = node(a).shape;
  std::size_t rows, cols;
  if (as.size() == 1) {
    rows = 1;
    cols = as[0];
  } else if (as.size() == 2) {
    rows = as[0];
    cols = as[1];
  } else {
    throw DimensionError("softmax: input must be 1-D or 2-D, got " + shape_string(as));
  }
  if (cols == 0) throw DimensionError("softmax: empty row");
  const auto& av = node(a).val;
  std::vector<double> out(av.size());
  for (std::size_t rix = 0; rix < rows; ++rix) {
    const double* x = av.data() + rix * cols;
    double* y = out.data() + rix * cols;
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < cols; ++j) y[j] /= z;
  }
  Value r = push(as, std::move(out));
  node(r).vjp = [a, rows, cols](Tape& t, const Node& self) {
    auto& ga = t.node(a).grad;
    for (std::size_t rix = 0; rix < rows; ++rix) {
      const double* y = self.val.data() + rix * cols;
      const double* g = self.grad.data() + rix * cols;
      double inner = 0.0;
      for (std::size_t j = 0; j < cols; ++j) inner += g[j] * y[j];
      for (std::size_t j = 0; j < cols; ++j) ga[rix * cols + j] += y[j] * (g[j] - inner);
    }
  };
  return r;
}

Value Tape::natural_log(Value a) {
  std::vector<double> out(node(a).val.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::log(std::max(node(a).val[i], kLogClamp));
  }
  Value r = push(node(a).shape, std::move(out));
  node(r).vjp = [a](Tape& t, const Node& self) {
    const auto& av = t.node(a).val;
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (av[i] > kLogClamp) ga[i] += self.grad[i] / av[i];
    }
  };
  return r;
}

Value Tape::sqrt(Value a) {
  std::vector<double> out(node(a).val.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::sqrt(std::max(node(a).val[i], 0.0));
  }
  Value r = push(node(a).shape, std::move(out));
  // The derivative clamps its input at 1e-12 so the slope stays finite
  // where the root touches zero.
  node(r).vjp = [a](Tape& t, const Node& self) {
    const auto& av = t.node(a).val;
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i] / (2.0 * std::sqrt(std::max(av[i], kSqrtClamp)));
    }
  };
  return r;
}

Value Tape::square(Value a) {
  std::vector<double> out(node(a).val.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = node(a).val[i] * node(a).val[i];
  Value r = push(node(a).shape, std::move(out));
  node(r).vjp = [a](Tape& t, const Node& self) {
    const auto& av = t.node(a).val;
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += 2.0 * av[i] * self.grad[i];
  };
  return r;
}

Value Tape::abs_smooth(Value a) {
  std::vector<double> out(node(a).val.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = node(a).val[i];
    out[i] = std::sqrt(x * x + kAbsEps * kAbsEps);
  }
  Value r = push(node(a).shape, std::move(out));
  node(r).vjp = [a](Tape& t, const Node& self) {
    const auto& av = t.node(a).val;
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i] * av[i] / self.val[i];
    }
  };
  return r;
}

namespace {

// Shared by l2_normalize and rows_l2_normalize.
void normalize_rows_forward(const std::vector<double>& in, std::size_t rows, std::size_t cols,
                            std::vector<double>& out, std::vector<double>& norms) {
  out.resize(in.size());
  norms.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sq += in[r * cols + j] * in[r * cols + j];
    const double n = std::max(std::sqrt(sq), kNormClamp);
    norms[r] = n;
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = in[r * cols + j] / n;
  }
}

}  // namespace

Value Tape::l2_normalize(Value a) {
  const std::size_t len = node(a).val.size();
  std::vector<double> out, norms;
  normalize_rows_forward(node(a).val, 1, len, out, norms);
  Value r = push(node(a).shape, std::move(out));
  const double n = norms[0];
  node(r).vjp = [a, n](Tape& t, const Node& self) {
    auto& ga = t.node(a).grad;
    const auto& av = t.node(a).val;
    double sq = 0.0;
    for (double x : av) sq += x * x;
    if (std::sqrt(sq) <= kNormClamp) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] / n;
      return;
    }
    double inner = 0.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) inner += self.grad[i] * self.val[i];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += (self.grad[i] - self.val[i] * inner) / n;
    }
  };
  return r;
}

Value Tape::rows_l2_normalize(Value a) {
  const auto& as = node(a).shape;
  if (as.size() != 2) {
    throw DimensionError("rows_l2_normalize: input must be 2-D, got " + shape_string(as));
  }
  const std::size_t rows = as[0], cols = as[1];
  std::vector<double> out, norms;
  normalize_rows_forward(node(a).val, rows, cols, out, norms);
  Value r = push(as, std::move(out));
  node(r).vjp = [a, rows, cols, norms](Tape& t, const Node& self) {
    auto& ga = t.node(a).grad;
    const auto& av = t.node(a).val;
    for (std::size_t rix = 0; rix < rows; ++rix) {
      const double n = norms[rix];
      const double* g = self.grad.data() + rix * cols;
      const double* y = self.val.data() + rix * cols;
      double sq = 0.0;
      for (std::size_t j = 0; j < cols; ++j) sq += av[rix * cols + j] * av[rix * cols + j];
      if (std::sqrt(sq) <= kNormClamp) {
        for (std::size_t j = 0; j < cols; ++j) ga[rix * cols + j] += g[j] / n;
        continue;
      }
      double inner = 0.0;
      for (std::size_t j = 0; j < cols; ++j) inner += g[j] * y[j];
      for (std::size_t j = 0; j < cols; ++j) {
        ga[rix * cols + j] += (g[j] - y[j] * inner) / n;
      }
    }
  };
  return r;
}

Value Tape::cos(Value a) {
  std::vector<double> out(node(a).val.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::cos(node(a).val[i]);
  Value r = push(node(a).shape, std::move(out));
  node(r).vjp = [a](Tape& t, const Node& self) {
    const auto& av = t.node(a).val;
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] -= self.grad[i] * std::sin(av[i]);
    }
  };
  return r;
}

Value Tape::sin(Value a) {
  std::vector<double> out(node(a).val.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sin(node(a).val[i]);
  Value r = push(node(a).shape, std::move(out));
  node(r).vjp = [a](Tape& t, const Node& self) {
    const auto& av = t.node(a).val;
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i] * std::cos(av[i]);
    }
  };
  return r;
}

Value Tape::dropout_mask_apply(Value a, const std::vector<double>& mask) {
  if (mask.size() != node(a).val.size()) {
    throw DimensionError("dropout_mask_apply: mask length " + std::to_string(mask.size()) +
                         " vs input length " + std::to_string(node(a).val.size()));
  }
  std::vector<double> out(node(a).val.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = node(a).val[i] * mask[i];
  Value r = push(node(a).shape, std::move(out));
  node(r).vjp = [a, mask](Tape& t, const Node& self) {
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * mask[i];
  };
  return r;
}

Value Tape::sum(Value a) {
  double acc = 0.0;
  for (double x : node(a).val) acc += x;
  Value r = push(Shape{1}, {acc});
  node(r).vjp = [a](Tape& t, const Node& self) {
    auto& ga = t.node(a).grad;
    for (double& g : ga) g += self.grad[0];
  };
  return r;
}

Value Tape::scale(Value a, Value s) {
  if (node(s).val.size() != 1) {
    throw DimensionError("scale: scale factor must be a scalar, got " +
                         shape_string(node(s).shape));
  }
  const double sv = node(s).val[0];
  std::vector<double> out(node(a).val.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = node(a).val[i] * sv;
  Value r = push(node(a).shape, std::move(out));
  node(r).vjp = [a, s, sv](Tape& t, const Node& self) {
    const auto& av = t.node(a).val;
    auto& ga = t.node(a).grad;
    auto& gs = t.node(s).grad;
    double acc = 0.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i] * sv;
      acc += self.grad[i] * av[i];
    }
    gs[0] += acc;
  };
  return r;
}

Value Tape::scale_const(Value a, double c) {
  std::vector<double> out(node(a).val.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = node(a).val[i] * c;
  Value r = push(node(a).shape, std::move(out));
  node(r).vjp = [a, c](Tape& t, const Node& self) {
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * c;
  };
  return r;
}

Value Tape::diagonal(Value a) {
  const auto& as = node(a).shape;
  if (as.size() != 2 || as[0] != as[1]) {
    throw DimensionError("diagonal: input must be a square matrix, got " + shape_string(as));
  }
  const std::size_t n = as[0];
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = node(a).val[i * n + i];
  Value r = push(Shape{n}, std::move(out));
  node(r).vjp = [a, n](Tape& t, const Node& self) {
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < n; ++i) ga[i * n + i] += self.grad[i];
  };
  return r;
}

Value Tape::reshape(Value a, Shape s) {
  if (numel(s) != node(a).val.size()) {
    throw DimensionError("reshape: cannot view " + std::to_string(node(a).val.size()) +
                         " values as " + shape_string(s));
  }
  Value r = push(std::move(s), node(a).val);
  node(r).vjp = [a](Tape& t, const Node& self) {
    auto& ga = t.node(a).grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  };
  return r;
}

void Tape::backward(Value loss) {
  if (node(loss).val.size() != 1) {
    throw DimensionError("backward: loss must be a scalar, has " +
                         std::to_string(node(loss).val.size()) + " elements");
  }
  for (Node& n : nodes_) n.grad.assign(n.val.size(), 0.0);
  node(loss).grad[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].vjp) nodes_[i].vjp(*this, nodes_[i]);
  }
  for (Node& n : nodes_) {
    if (n.source != nullptr && n.source->requires_grad) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) n.source->grad[i] += n.grad[i];
    }
  }
}

}  // namespace quiet::diff
