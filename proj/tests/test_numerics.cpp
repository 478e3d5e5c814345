#include <catch2/catch_amalgamated.hpp>

#include "corrspace/numerics.hpp"
#include "helpers.hpp"

using namespace corrspace;
using testing_helpers::fixed_rng;
using testing_helpers::random_state;
using testing_helpers::random_unitary;

namespace {

StateVector basis_vec(int dim, int k) {
  StateVector v = StateVector::Zero(dim);
  v(k) = 1;
  return v;
}

}  // namespace

TEST_CASE("schmidt: product state has a single unit coefficient") {
  StateVector v = kron_vec(basis_vec(2, 0), basis_vec(2, 1));  // |0>|1>
  auto sd = schmidt_decompose(v, 2, 2);
  REQUIRE(sd.coefficients.size() == 2);
  CHECK(sd.coefficients(0) == Catch::Approx(1.0).margin(1e-12));
  CHECK(sd.coefficients(1) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("schmidt: Bell pair is balanced") {
  StateVector v = StateVector::Zero(4);
  v(0) = v(3) = 1.0 / std::sqrt(2.0);
  auto sd = schmidt_decompose(v, 2, 2);
  CHECK(sd.coefficients(0) == Catch::Approx(1.0 / std::sqrt(2.0)).margin(1e-12));
  CHECK(sd.coefficients(1) == Catch::Approx(1.0 / std::sqrt(2.0)).margin(1e-12));
}

TEST_CASE("schmidt: four-site chain state matches density-matrix oracle") {
  // State built by explicit contraction of four H / HZ site matrices at
  // theta = pi/4 between |0> and |+> boundary vectors.
  std::vector<std::array<ComplexMatrix, 2>> site(4);
  double c = std::cos(M_PI / 4), s = std::sin(M_PI / 4);
  for (auto& t : site) t = {c * gates::H(), s * gates::H() * gates::Z()};
  StateVector left = basis_vec(2, 0);
  StateVector right = (basis_vec(2, 0) + basis_vec(2, 1)) / std::sqrt(2.0);
  StateVector v = testing_helpers::naive_expand_wire(site, left, right);
  auto sd = schmidt_decompose(v, 4, 4);
  auto oracle = testing_helpers::schmidt_coeffs_via_density(v, 4, 4);
  REQUIRE(sd.coefficients.size() == oracle.size());
  for (int i = 0; i < oracle.size(); ++i)
    CHECK(sd.coefficients(i) == Catch::Approx(oracle(i)).margin(1e-10));
}

TEST_CASE("schmidt: reconstruction on random states") {
  auto rng = fixed_rng(11);
  std::vector<std::pair<int, int>> cuts = {{2, 2}, {2, 4}, {4, 2}, {4, 4}, {2, 8}, {8, 2}};
  for (int trial = 0; trial < 1000; ++trial) {
    auto [da, db] = cuts[trial % cuts.size()];
    StateVector v = random_state(da * db, rng);
    auto sd = schmidt_decompose(v, da, db);
    StateVector rec = StateVector::Zero(v.size());
    for (int k = 0; k < sd.coefficients.size(); ++k)
      rec += sd.coefficients(k) *
             kron_vec(StateVector(sd.left.col(k)), StateVector(sd.right.col(k)));
    REQUIRE((rec - v).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("schmidt: dimension mismatch is rejected") {
  StateVector v = StateVector::Ones(6);
  CHECK_THROWS_AS(schmidt_decompose(v, 2, 2), std::invalid_argument);
  CHECK_THROWS_AS(schmidt_decompose(StateVector::Zero(4), 2, 2), std::invalid_argument);
}

TEST_CASE("eig: diagonal example sorted by modulus") {
  ComplexMatrix m = ComplexMatrix::Zero(3, 3);
  m(0, 0) = 0.5;
  m(1, 1) = 2.0;
  m(2, 2) = -1.0;
  auto ed = eig_general(m);
  CHECK(std::abs(ed.values(0) - Complex(2, 0)) < 1e-12);
  CHECK(std::abs(ed.values(1) - Complex(-1, 0)) < 1e-12);
  CHECK(std::abs(ed.values(2) - Complex(0.5, 0)) < 1e-12);
}

TEST_CASE("eig: modulus ties break by real part, then imaginary") {
  ComplexMatrix m = ComplexMatrix::Zero(4, 4);
  m(0, 0) = Complex(-1, 0);
  m(1, 1) = Complex(1, 0);
  m(2, 2) = Complex(0, 1);
  m(3, 3) = Complex(0, -1);
  auto ed = eig_general(m);
  CHECK(std::abs(ed.values(0) - Complex(1, 0)) < 1e-12);
  CHECK(std::abs(ed.values(1) - Complex(0, 1)) < 1e-12);
  CHECK(std::abs(ed.values(2) - Complex(0, -1)) < 1e-12);
  CHECK(std::abs(ed.values(3) - Complex(-1, 0)) < 1e-12);
}

TEST_CASE("eig: unit-cell transfer matrix of the theta=pi/8 wire") {
  // Two-site unit cell: square of E = sum_s A[s] (x) conj(A[s]).
  double th = M_PI / 8;
  ComplexMatrix a0 = std::cos(th) * gates::H();
  ComplexMatrix a1 = std::sin(th) * gates::H() * gates::Z();
  ComplexMatrix e = kron(a0, a0.conjugate()) + kron(a1, a1.conjugate());
  ComplexMatrix cell = e * e;
  auto ed = eig_general(cell);
  CHECK(std::abs(ed.values(0)) == Catch::Approx(1.0).margin(1e-9));
  CHECK(std::abs(ed.values(1)) == Catch::Approx(std::cos(M_PI / 4)).margin(1e-9));
}

TEST_CASE("eig: residuals of random matrices") {
  auto rng = fixed_rng(12);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    int dim = 2 + (trial % 7);
    ComplexMatrix m(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) m(i, j) = Complex(g(rng), g(rng));
    auto ed = eig_general(m);
    for (int k = 0; k < dim; ++k) {
      StateVector r = m * ed.vectors.col(k) - ed.values(k) * ed.vectors.col(k);
      REQUIRE(r.cwiseAbs().maxCoeff() <= 1e-9);
    }
    for (int k = 0; k + 1 < dim; ++k)
      REQUIRE(std::abs(ed.values(k)) >= std::abs(ed.values(k + 1)) - 1e-12);
  }
}

TEST_CASE("eig: guards on shape and size") {
  CHECK_THROWS_AS(eig_general(ComplexMatrix::Zero(2, 3)), std::invalid_argument);
  CHECK_THROWS_AS(eig_general(ComplexMatrix::Zero(65, 65)), std::invalid_argument);
}

TEST_CASE("unitary products stay unitary") {
  auto rng = fixed_rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    int dim = (trial % 2) ? 2 : 4;
    ComplexMatrix p = ComplexMatrix::Identity(dim, dim);
    for (int k = 0; k < 40; ++k) p = (random_unitary(dim, rng) * p).eval();
    REQUIRE(unitarity_residual(p) <= 1e-11);
  }
}

TEST_CASE("factor op application matches explicit kron") {
  auto rng = fixed_rng(14);
  std::vector<int> dims = {2, 2, 2};
  for (int trial = 0; trial < 20; ++trial) {
    StateVector v = random_state(8, rng);
    ComplexMatrix u = random_unitary(2, rng);
    for (int k = 0; k < 3; ++k) {
      StateVector a = v;
      apply_factor_op(a, dims, k, u);
      ComplexMatrix full = ComplexMatrix::Identity(1, 1);
      for (int j = 0; j < 3; ++j)
        full = kron(full, j == k ? u : gates::I2()).eval();
      StateVector b = full * v;
      REQUIRE((a - b).cwiseAbs().maxCoeff() <= 1e-12);
    }
    ComplexMatrix u4 = random_unitary(4, rng);
    StateVector a = v;
    apply_factor_op2(a, dims, 0, 2, u4);
    // explicit: permute factor order (0,2,1), apply u4 (x) I, permute back
    StateVector b = StateVector::Zero(8);
    for (int i0 = 0; i0 < 2; ++i0)
      for (int i1 = 0; i1 < 2; ++i1)
        for (int i2 = 0; i2 < 2; ++i2) {
          int src = i0 * 4 + i1 * 2 + i2;
          for (int j0 = 0; j0 < 2; ++j0)
            for (int j2 = 0; j2 < 2; ++j2)
              b(j0 * 4 + i1 * 2 + j2) += u4(j0 * 2 + j2, i0 * 2 + i2) * v(src);
        }
    REQUIRE((a - b).cwiseAbs().maxCoeff() <= 1e-12);
    StateVector c = v;
    apply_factor_op2(c, dims, 2, 0, u4);
    // swapped factor roles: row index of op is i2 * 2 + i0
    StateVector d = StateVector::Zero(8);
    for (int i0 = 0; i0 < 2; ++i0)
      for (int i1 = 0; i1 < 2; ++i1)
        for (int i2 = 0; i2 < 2; ++i2)
          for (int j0 = 0; j0 < 2; ++j0)
            for (int j2 = 0; j2 < 2; ++j2)
              d(j0 * 4 + i1 * 2 + j2) += u4(j2 * 2 + j0, i2 * 2 + i0) * v(i0 * 4 + i1 * 2 + i2);
    REQUIRE((c - d).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("shot streams are deterministic and distinct") {
  auto a1 = shot_stream(42, 0);
  auto a2 = shot_stream(42, 0);
  auto b = shot_stream(42, 1);
  CHECK(a1() == a2());
  CHECK(a1() != b());
}
