#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <numbers>

#include "quiet/qcore.hpp"
#include "test_util.hpp"

using namespace quiet;
using namespace quiet::qcore;
constexpr double pi = std::numbers::pi;

TEST_CASE("complex_from_polar maps amplitude and phase") {
  // p = 0.5 realized as (sqrt(2)/2) e^{i pi/4}.
  const ComplexVector z = complex_from_polar({{std::sqrt(2.0) / 2.0}, {pi / 4.0}});
  CHECK(z.squared_norm() == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(z.re[0] == doctest::Approx(0.5));
  CHECK(z.im[0] == doctest::Approx(0.5));
}

TEST_CASE("complex_from_polar ignores phase at zero amplitude") {
  const ComplexVector z = complex_from_polar({{1.0, 0.0}, {0.7, 123.4}});
  CHECK(z.re[0] == doctest::Approx(std::cos(0.7)));
  CHECK(z.im[0] == doctest::Approx(std::sin(0.7)));
  CHECK(z.re[1] == 0.0);
  CHECK(z.im[1] == 0.0);
  CHECK(z.squared_norm() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("complex_from_polar preserves the squared-amplitude total") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    PolarForm p;
    p.r = testutil::random_unit(rng, 8);
    for (double& x : p.r) x = std::abs(x);
    p.theta = testutil::random_vector(rng, 8, -pi, pi);
    double amplitude_total = 0.0;
    for (double r : p.r) amplitude_total += r * r;
    CHECK(std::abs(complex_from_polar(p).squared_norm() - amplitude_total) < 1e-12);
  }
}

TEST_CASE("complex_from_polar rejects mismatched lengths") {
  CHECK_THROWS_AS(complex_from_polar({{1.0, 0.0}, {0.0}}), DimensionError);
}

TEST_CASE("born_probabilities of a basis state") {
  const auto probs = born_probabilities(ComplexVector({1.0, 0.0}, {0.0, 0.0}));
  CHECK(probs[0] == 1.0);
  CHECK(probs[1] == 0.0);
}

TEST_CASE("born_probabilities is phase-independent") {
  const ComplexVector z =
      complex_from_polar({{std::sqrt(2.0) / 2.0, std::sqrt(2.0) / 2.0}, {pi / 4.0, -pi / 3.0}});
  const auto probs = born_probabilities(z);
  CHECK(probs[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(probs[1] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("born_probabilities are non-negative and sum to the squared norm") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const ComplexVector v(testutil::random_vector(rng, 6), testutil::random_vector(rng, 6));
    const auto probs = born_probabilities(v);
    double total = 0.0;
    for (double p : probs) {
      CHECK(p >= 0.0);
      total += p;
    }
    CHECK(total == doctest::Approx(v.squared_norm()).epsilon(1e-12));
  }
}

TEST_CASE("outer_product basics") {
  const Matrix m = outer_product({1.0, 0.0});
  CHECK(m(0, 0) == 1.0);
  CHECK(m(0, 1) == 0.0);
  CHECK(m(1, 0) == 0.0);
  CHECK(m(1, 1) == 0.0);

  const Matrix zero = outer_product({0.0, 0.0, 0.0});
  for (double x : zero.data) CHECK(x == 0.0);
}

TEST_CASE("outer_product trace equals the squared norm") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto v = testutil::random_vector(rng, 7);
    double expected = 0.0;
    for (double x : v) expected += x * x;
    CHECK(std::abs(trace(outer_product(v)) - expected) < 1e-12);
  }
}

TEST_CASE("mix_density of a single pure state") {
  const DensityMatrix rho = mix_density({{1.0, 0.0, 0.0}}, {1.0});
  CHECK(rho.entries(0, 0) == 1.0);
  CHECK(trace(rho.entries) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("mix_density of an equal orthogonal mixture") {
  const DensityMatrix rho = mix_density({{1.0, 0.0}, {0.0, 1.0}}, {0.5, 0.5});
  CHECK(rho.entries(0, 0) == doctest::Approx(0.5));
  CHECK(rho.entries(1, 1) == doctest::Approx(0.5));
  CHECK(rho.entries(0, 1) == 0.0);
}

TEST_CASE("mix_density satisfies the density invariants") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<std::vector<double>> states;
    for (int k = 0; k < 5; ++k) states.push_back(testutil::random_unit(rng, 6));
    const DensityMatrix rho = mix_density(states, testutil::random_simplex(rng, 5));
    CHECK(max_abs_asymmetry(rho.entries) <= 1e-12);
    CHECK(std::abs(trace(rho.entries) - 1.0) <= 1e-9);
    const EigResult eig = hermitian_eig(rho.entries);
    CHECK(eig.eigenvalues.front() >= -1e-10);
  }
}

TEST_CASE("mix_density rejects bad inputs") {
  CHECK_THROWS_AS(mix_density({{2.0, 0.0}}, {1.0}), ContractError);
  CHECK_THROWS_AS(mix_density({{1.0, 0.0}}, {0.5}), ContractError);
  CHECK_THROWS_AS(mix_density({{1.0, 0.0}, {0.0, 1.0}}, {1.5, -0.5}), ContractError);
  CHECK_THROWS_AS(mix_density({{1.0, 0.0}, {1.0}}, {0.5, 0.5}), ContractError);
}

TEST_CASE("tensor_product identities") {
  const Matrix eye4 = tensor_product(Matrix::identity(2), Matrix::identity(2));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(eye4(i, j) == (i == j ? 1.0 : 0.0));

  std::mt19937_64 rng(15);
  const Matrix a = testutil::random_matrix(rng, 2, 2);
  const Matrix zero(2, 2);
  for (double x : tensor_product(a, zero).data) CHECK(x == 0.0);
}

TEST_CASE("tensor_product matches the explicit block-expansion oracle") {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix a = testutil::random_matrix(rng, 2, 2);
    const Matrix b = testutil::random_matrix(rng, 2, 2);
    const Matrix got = tensor_product(a, b);
    // Brute-force 4x4 indexing.
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t k = 0; k < 2; ++k)
          for (std::size_t l = 0; l < 2; ++l) {
            CHECK(std::abs(got(2 * i + k, 2 * j + l) - a(i, j) * b(k, l)) <= 1e-12);
          }
  }
}

TEST_CASE("tensor_product trace is multiplicative") {
  std::mt19937_64 rng(17);
  for (std::size_t n = 2; n <= 4; ++n) {
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix a = testutil::random_matrix(rng, n, n);
      const Matrix b = testutil::random_matrix(rng, n, n);
      const double got = trace(tensor_product(a, b));
      const double expected = trace(a) * trace(b);
      CHECK(testutil::rel_err(got, expected, 1e-9) < 1e-9);
    }
  }
}

TEST_CASE("commutator of commuting operators vanishes") {
  std::mt19937_64 rng(18);
  const Matrix a = testutil::random_matrix(rng, 3, 3);
  const CommutatorResult self = commutator(a, a);
  CHECK(self.frobenius_norm == 0.0);
  for (double x : self.matrix.data) CHECK(x == 0.0);

  Matrix d1(3, 3), d2(3, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    d1(i, i) = static_cast<double>(i) + 1.0;
    d2(i, i) = 7.0 - static_cast<double>(i);
  }
  CHECK(commutator(d1, d2).frobenius_norm == 0.0);
}

TEST_CASE("commutator of the Pauli pair") {
  Matrix x(2, 2), z(2, 2);
  x(0, 1) = 1.0;
  x(1, 0) = 1.0;
  z(0, 0) = 1.0;
  z(1, 1) = -1.0;
  const CommutatorResult c = commutator(x, z);
  CHECK(c.matrix(0, 0) == 0.0);
  CHECK(c.matrix(0, 1) == -2.0);
  CHECK(c.matrix(1, 0) == 2.0);
  CHECK(c.matrix(1, 1) == 0.0);
  CHECK(c.frobenius_norm == doctest::Approx(2.0 * std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("commutator norm is antisymmetric") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = testutil::random_matrix(rng, 4, 4);
    const Matrix b = testutil::random_matrix(rng, 4, 4);
    CHECK(commutator(a, b).frobenius_norm == commutator(b, a).frobenius_norm);
  }
}

TEST_CASE("commutator rejects mismatched dimensions") {
  std::mt19937_64 rng(20);
  CHECK_THROWS_AS(
      commutator(testutil::random_matrix(rng, 2, 2), testutil::random_matrix(rng, 3, 3)),
      DimensionError);
}

TEST_CASE("hermitian_eig sorts eigenvalues ascending") {
  Matrix d(3, 3);
  d(0, 0) = 3.0;
  d(1, 1) = 1.0;
  d(2, 2) = 2.0;
  const EigResult eig = hermitian_eig(d);
  CHECK(eig.eigenvalues[0] == doctest::Approx(1.0));
  CHECK(eig.eigenvalues[1] == doctest::Approx(2.0));
  CHECK(eig.eigenvalues[2] == doctest::Approx(3.0));

  const EigResult id = hermitian_eig(Matrix::identity(4));
  for (double lambda : id.eigenvalues) CHECK(lambda == doctest::Approx(1.0));
}

TEST_CASE("hermitian_eig reconstructs the input") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 15; ++trial) {
    const Matrix m = testutil::random_symmetric(rng, 6);
    const EigResult eig = hermitian_eig(m);

    // V Lambda V^T
    Matrix lambda(6, 6);
    for (std::size_t i = 0; i < 6; ++i) lambda(i, i) = eig.eigenvalues[i];
    const Matrix rebuilt = matmul(matmul(eig.eigenvectors, lambda), transpose(eig.eigenvectors));
    for (std::size_t i = 0; i < m.data.size(); ++i) {
      CHECK(std::abs(rebuilt.data[i] - m.data[i]) < 1e-8);
    }

    const Matrix gram = matmul(transpose(eig.eigenvectors), eig.eigenvectors);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        CHECK(std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)) < 1e-8);
      }
  }
}

TEST_CASE("hermitian_eig rejects asymmetric input") {
  Matrix m(2, 2);
  m(0, 1) = 1.0;
  CHECK_THROWS_AS(hermitian_eig(m), ContractError);
}

TEST_CASE("relative_entropy of identical states is zero") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const DensityMatrix rho = testutil::random_density(rng, 5, 3);
    CHECK(std::abs(relative_entropy(rho, rho)) <= 1e-9);
  }
}

TEST_CASE("relative_entropy matches the classical KL oracle on diagonals") {
  DensityMatrix sigma{Matrix(2, 2)}, rho{Matrix(2, 2)};
  sigma.entries(0, 0) = 0.75;
  sigma.entries(1, 1) = 0.25;
  rho.entries(0, 0) = 0.5;
  rho.entries(1, 1) = 0.5;
  const double expected = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  CHECK(relative_entropy(sigma, rho) == doctest::Approx(expected).epsilon(1e-12));

  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = testutil::random_simplex(rng, 4);
    const auto q = testutil::random_simplex(rng, 4);
    DensityMatrix s{Matrix(4, 4)}, r{Matrix(4, 4)};
    double kl = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      s.entries(i, i) = p[i];
      r.entries(i, i) = q[i];
      kl += p[i] * std::log(p[i] / q[i]);
    }
    CHECK(std::abs(relative_entropy(s, r) - kl) <= 1e-9);
  }
}

TEST_CASE("relative_entropy is non-negative for valid pairs") {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 40; ++trial) {
    const DensityMatrix sigma = testutil::random_density(rng, 4, 3);
    const DensityMatrix rho = testutil::random_density(rng, 4, 4);
    CHECK(relative_entropy(sigma, rho) >= -1e-9);
  }
}

TEST_CASE("relative_entropy rejects mismatched dimensions") {
  std::mt19937_64 rng(25);
  const DensityMatrix a = testutil::random_density(rng, 3, 2);
  const DensityMatrix b = testutil::random_density(rng, 4, 2);
  CHECK_THROWS_AS(relative_entropy(a, b), DimensionError);
}
