// qcore.hpp
// Pure value-semantics complex linear algebra and quantum-probability
// primitives. Everything here is a const function over immutable inputs
// and safe to share across threads.
#pragma once

#include <cstddef>
#include <vector>

#include "quiet/error.hpp"

namespace quiet::qcore {

// Dense row-major real matrix. The only matrix layout the library needs.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> d);

  static Matrix identity(std::size_t n);

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  bool square() const { return rows == cols; }
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
double trace(const Matrix& m);
double frobenius_norm(const Matrix& m);
double max_abs_asymmetry(const Matrix& m);

// Hilbert-space state stored as split real/imaginary coordinate arrays.
struct ComplexVector {
  std::vector<double> re;
  std::vector<double> im;

  ComplexVector() = default;
  ComplexVector(std::vector<double> re_, std::vector<double> im_);

  std::size_t size() const { return re.size(); }
  double squared_norm() const;
};

// Amplitude/phase pair. Amplitudes are non-negative; when produced by the
// encoder the squared amplitudes sum to 1.
struct PolarForm {
  std::vector<double> r;
  std::vector<double> theta;
};

// Real symmetric trace-1 PSD matrix. Constructed by mix_density (which
// guarantees the invariants) or wrapped from a matrix already known to be
// a valid density.
struct DensityMatrix {
  Matrix entries;

  std::size_t dim() const { return entries.rows; }
};

// z_j = r_j (cos theta_j + i sin theta_j).
ComplexVector complex_from_polar(const PolarForm& p);

// Born rule: out_j = re_j^2 + im_j^2.
std::vector<double> born_probabilities(const ComplexVector& v);

// |v><v| for a real vector.
Matrix outer_product(const std::vector<double>& v);

// rho = sum_k weights_k |states_k><states_k|. States must be unit vectors,
// weights a probability vector.
DensityMatrix mix_density(const std::vector<std::vector<double>>& states,
                          const std::vector<double>& weights);

// Wraps a symmetric matrix as a density, normalizing it to trace 1.
DensityMatrix density_from_operator(Matrix m);

// Kronecker product.
Matrix tensor_product(const Matrix& a, const Matrix& b);

struct CommutatorResult {
  Matrix matrix;          // AB - BA
  double frobenius_norm;  // sqrt(sum of squared entries)
};

CommutatorResult commutator(const Matrix& a, const Matrix& b);

struct EigResult {
  std::vector<double> eigenvalues;  // ascending
  Matrix eigenvectors;              // column k pairs with eigenvalues[k]
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Input asymmetry
// beyond 1e-10 is a contract violation; smaller asymmetry is symmetrized
// away before iterating.
EigResult hermitian_eig(const Matrix& m);

// log of a symmetric PSD matrix via eigendecomposition, eigenvalues
// clamped at `clamp` inside the logarithm.
Matrix matrix_log(const Matrix& sym, double clamp = 1e-12);

// D(sigma || rho) = Tr sigma log sigma - Tr sigma log rho, with
// eigenvalues below 1e-12 clamped inside the logarithms.
double relative_entropy(const DensityMatrix& sigma, const DensityMatrix& rho);

}  // namespace quiet::qcore
