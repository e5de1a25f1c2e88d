#include "quiet/qcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace quiet::qcore {

namespace {

void require_same_square(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.square() || !b.square() || a.rows != b.rows) {
    throw DimensionError(std::string(op) + ": expected equal square matrices, got " +
                         std::to_string(a.rows) + "x" + std::to_string(a.cols) + " and " +
                         std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
}

}  // namespace

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> d)
    : rows(r), cols(c), data(std::move(d)) {
  if (data.size() != rows * cols) {
    throw DimensionError("Matrix: data length " + std::to_string(data.size()) +
                         " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols) + " vs " +
                         std::to_string(b.rows));
  }
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) {
        out(i, j) += aik * b(k, j);
      }
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
  return out;
}

double trace(const Matrix& m) {
  double t = 0.0;
  const std::size_t n = std::min(m.rows, m.cols);
  for (std::size_t i = 0; i < n; ++i) t += m(i, i);
  return t;
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data) s += v * v;
  return std::sqrt(s);
}

double max_abs_asymmetry(const Matrix& m) {
  double worst = 0.0;
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = i + 1; j < m.cols; ++j)
      worst = std::max(worst, std::abs(m(i, j) - m(j, i)));
  return worst;
}

ComplexVector::ComplexVector(std::vector<double> re_, std::vector<double> im_)
    : re(std::move(re_)), im(std::move(im_)) {
  if (re.size() != im.size()) {
    throw DimensionError("ComplexVector: re length " + std::to_string(re.size()) +
                         " vs im length " + std::to_string(im.size()));
  }
}

double ComplexVector::squared_norm() const {
  double s = 0.0;
  for (std::size_t j = 0; j < re.size(); ++j) s += re[j] * re[j] + im[j] * im[j];
  return s;
}

ComplexVector complex_from_polar(const PolarForm& p) {
  if (p.r.size() != p.theta.size()) {
    throw DimensionError("complex_from_polar: r length " + std::to_string(p.r.size()) +
                         " vs theta length " + std::to_string(p.theta.size()));
  }
  std::vector<double> re(p.r.size()), im(p.r.size());
  for (std::size_t j = 0; j < p.r.size(); ++j) {
    re[j] = p.r[j] * std::cos(p.theta[j]);
    im[j] = p.r[j] * std::sin(p.theta[j]);
  }
  return ComplexVector(std::move(re), std::move(im));
}

std::vector<double> born_probabilities(const ComplexVector& v) {
  std::vector<double> out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = v.re[j] * v.re[j] + v.im[j] * v.im[j];
  return out;
}

Matrix outer_product(const std::vector<double>& v) {
  Matrix out(v.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == 0.0) continue;
    for (std::size_t j = 0; j < v.size(); ++j) out(i, j) = v[i] * v[j];
  }
  return out;
}

DensityMatrix mix_density(const std::vector<std::vector<double>>& states,
                          const std::vector<double>& weights) {
  if (states.empty()) throw ContractError("mix_density: no states");
  if (states.size() != weights.size()) {
    throw ContractError("mix_density: " + std::to_string(states.size()) + " states vs " +
                        std::to_string(weights.size()) + " weights");
  }
  const std::size_t n = states.front().size();
  double weight_sum = 0.0;
  for (std::size_t k = 0; k < states.size(); ++k) {
    if (states[k].size() != n) {
      throw ContractError("mix_density: state " + std::to_string(k) + " has dimension " +
                          std::to_string(states[k].size()) + ", expected " + std::to_string(n));
    }
    double sq = 0.0;
    for (double x : states[k]) sq += x * x;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
      throw ContractError("mix_density: state " + std::to_string(k) +
                          " is not unit-normalized (norm " + std::to_string(std::sqrt(sq)) + ")");
    }
    if (weights[k] < 0.0) {
      throw ContractError("mix_density: negative weight at index " + std::to_string(k));
    }
    weight_sum += weights[k];
  }
  if (std::abs(weight_sum - 1.0) > 1e-9) {
    throw ContractError("mix_density: weights sum to " + std::to_string(weight_sum));
  }

  Matrix rho(n, n);
  for (std::size_t k = 0; k < states.size(); ++k) {
    const auto& h = states[k];
    const double p = weights[k];
    if (p == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double pi = p * h[i];
      for (std::size_t j = 0; j < n; ++j) rho(i, j) += pi * h[j];
    }
  }
  return DensityMatrix{std::move(rho)};
}

DensityMatrix density_from_operator(Matrix m) {
  if (!m.square()) throw DimensionError("density_from_operator: matrix is not square");
  if (max_abs_asymmetry(m) > 1e-10) {
    throw ContractError("density_from_operator: operator is not symmetric");
  }
  const double t = trace(m);
  if (!(t > 0.0)) throw ContractError("density_from_operator: non-positive trace");
  for (double& v : m.data) v /= t;
  return DensityMatrix{std::move(m)};
}

Matrix tensor_product(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows * b.rows, a.cols * b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) {
      const double aij = a(i, j);
      if (aij == 0.0) continue;
      for (std::size_t k = 0; k < b.rows; ++k)
        for (std::size_t l = 0; l < b.cols; ++l)
          out(i * b.rows + k, j * b.cols + l) = aij * b(k, l);
    }
  return out;
}

CommutatorResult commutator(const Matrix& a, const Matrix& b) {
  require_same_square(a, b, "commutator");
  Matrix ab = matmul(a, b);
  const Matrix ba = matmul(b, a);
  double sq = 0.0;
  for (std::size_t i = 0; i < ab.data.size(); ++i) {
    ab.data[i] -= ba.data[i];
    sq += ab.data[i] * ab.data[i];
  }
  return CommutatorResult{std::move(ab), std::sqrt(sq)};
}

EigResult hermitian_eig(const Matrix& m) {
  if (!m.square()) throw DimensionError("hermitian_eig: matrix is not square");
  const double asym = max_abs_asymmetry(m);
  if (asym > 1e-10) {
    throw ContractError("hermitian_eig: asymmetry " + std::to_string(asym) + " exceeds 1e-10");
  }
  const std::size_t n = m.rows;

  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (m(i, j) + m(j, i));
  Matrix v = Matrix::identity(n);

  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  const double threshold = 1e-12 * std::max(1.0, frobenius_norm(a));
  constexpr int kMaxSweeps = 100;
  double off = off_norm();
  for (int sweep = 0; sweep < kMaxSweeps && off > threshold; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= threshold / (n * n)) continue;
        const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (tau >= 0.0) ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                                      : 1.0 / (tau - std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    off = off_norm();
  }
  if (off > threshold) {
    throw NumericError("hermitian_eig: no convergence after 100 sweeps, off-diagonal residual " +
                       std::to_string(off));
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });

  EigResult res;
  res.eigenvalues.resize(n);
  res.eigenvectors = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    res.eigenvalues[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) res.eigenvectors(i, k) = v(i, order[k]);
  }
  return res;
}

Matrix matrix_log(const Matrix& sym, double clamp) {
  const EigResult eig = hermitian_eig(sym);
  const std::size_t n = sym.rows;
  Matrix out(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double lk = std::log(std::max(eig.eigenvalues[k], clamp));
    for (std::size_t i = 0; i < n; ++i) {
      const double vik = eig.eigenvectors(i, k) * lk;
      if (vik == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += vik * eig.eigenvectors(j, k);
    }
  }
  return out;
}

double relative_entropy(const DensityMatrix& sigma, const DensityMatrix& rho) {
  if (sigma.dim() != rho.dim()) {
    throw DimensionError("relative_entropy: dimensions " + std::to_string(sigma.dim()) + " vs " +
                         std::to_string(rho.dim()));
  }
  for (const auto* d : {&sigma, &rho}) {
    const double t = trace(d->entries);
    if (std::abs(t - 1.0) > 1e-6) {
      throw ContractError("relative_entropy: operand trace " + std::to_string(t) + " is not 1");
    }
  }
  constexpr double kClamp = 1e-12;

  // Tr sigma log sigma through sigma's own eigenvalues; the clamp inside
  // the log makes 0*log(0) evaluate to 0.
  const EigResult es = hermitian_eig(sigma.entries);
  double term_sigma = 0.0;
  for (double lambda : es.eigenvalues) {
    term_sigma += lambda * std::log(std::max(lambda, kClamp));
  }

  const Matrix log_rho = matrix_log(rho.entries, kClamp);
  double term_cross = 0.0;
  const std::size_t n = sigma.dim();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) term_cross += sigma.entries(i, j) * log_rho(j, i);

  return term_sigma - term_cross;
}

}  // namespace quiet::qcore
