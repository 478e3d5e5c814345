#pragma once

#include <array>
#include <random>
#include <vector>

#include "corrspace/common.hpp"

namespace testing_helpers {

using corrspace::Complex;
using corrspace::ComplexMatrix;
using corrspace::StateVector;

inline std::mt19937_64 fixed_rng(uint64_t seed = 0xC0FFEE123456789ULL) {
  return std::mt19937_64(seed);
}

inline StateVector random_state(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  StateVector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = Complex(g(rng), g(rng));
  v.normalize();
  return v;
}

inline ComplexMatrix random_unitary(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  ComplexMatrix m(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) m(i, j) = Complex(g(rng), g(rng));
  Eigen::HouseholderQR<ComplexMatrix> qr(m);
  ComplexMatrix q = qr.householderQ();
  ComplexMatrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < dim; ++i) {
    Complex d = r(i, i);
    q.col(i) *= (std::abs(d) > 0 ? d / std::abs(d) : Complex(1, 0));
  }
  return q;
}

inline ComplexMatrix random_su2(std::mt19937_64& rng) {
  ComplexMatrix u = random_unitary(2, rng);
  Complex det = u(0, 0) * u(1, 1) - u(0, 1) * u(1, 0);
  return u / std::sqrt(det);
}

// reduced density of qubit q (0 = most significant) of a dense state
inline ComplexMatrix dense_qubit_density(const StateVector& psi, int total, int q) {
  Eigen::Index post = Eigen::Index(1) << (total - q - 1);
  Eigen::Index pre = psi.size() / (post * 2);
  ComplexMatrix rho = ComplexMatrix::Zero(2, 2);
  for (Eigen::Index pr = 0; pr < pre; ++pr)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (Eigen::Index po = 0; po < post; ++po)
          rho(a, b) += psi((pr * 2 + a) * post + po) *
                       std::conj(psi((pr * 2 + b) * post + po));
  return rho;
}

// Independent Schmidt-coefficient oracle: eigenvalues of the reduced density
// matrix, no SVD involved.
inline Eigen::VectorXd schmidt_coeffs_via_density(const StateVector& v, int da, int db) {
  ComplexMatrix rho = ComplexMatrix::Zero(da, da);
  for (int i = 0; i < da; ++i)
    for (int k = 0; k < da; ++k)
      for (int j = 0; j < db; ++j)
        rho(i, k) += v(static_cast<Eigen::Index>(i) * db + j) *
                     std::conj(v(static_cast<Eigen::Index>(k) * db + j));
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(rho);
  Eigen::VectorXd ev = es.eigenvalues().reverse();
  for (int i = 0; i < ev.size(); ++i) ev(i) = std::sqrt(std::max(0.0, ev(i)));
  return ev;
}

// Naive wire expansion: loops over every bitstring and multiplies the site
// matrices explicitly. amplitude(s_1..s_N) = <R| A[s_N] ... A[s_1] |L>,
// with site 1 stored as the most significant qubit of the output index.
inline StateVector naive_expand_wire(const std::vector<std::array<ComplexMatrix, 2>>& site,
                                     const StateVector& left, const StateVector& right) {
  int n = static_cast<int>(site.size());
  StateVector out(Eigen::Index(1) << n);
  for (Eigen::Index idx = 0; idx < out.size(); ++idx) {
    StateVector v = left;
    for (int k = 0; k < n; ++k) {
      int bit = (idx >> (n - 1 - k)) & 1;  // site k+1 is most significant first
      v = (site[k][bit] * v).eval();
    }
    out(idx) = right.dot(v);  // <R|v>
  }
  double nrm = out.norm();
  if (nrm > 0) out /= nrm;
  return out;
}

struct NaiveCoupling {
  int wire_a = 0;
  int wire_b = 0;
  int column = 0;  // applied after both wires' tensors of this column
  ComplexMatrix op;  // 4x4 on (corr_a, corr_b)
};

// Naive web expansion over M wires of equal length. Output qubit order:
// wire 0 site 1 first (most significant), then wire 0 site 2, ..., then wire 1.
inline StateVector naive_expand_web(
    const std::vector<std::vector<std::array<ComplexMatrix, 2>>>& wires,
    const std::vector<StateVector>& left, const std::vector<StateVector>& right,
    const std::vector<NaiveCoupling>& couplings) {
  int m = static_cast<int>(wires.size());
  int n = static_cast<int>(wires[0].size());
  int total = m * n;
  StateVector out(Eigen::Index(1) << total);
  int corr_dim = 1 << m;
  std::vector<int> dims(m, 2);
  for (Eigen::Index idx = 0; idx < out.size(); ++idx) {
    StateVector v = left[0];
    for (int w = 1; w < m; ++w) v = corrspace::kron_vec(v, left[w]);
    for (int c = 0; c < n; ++c) {
      for (int w = 0; w < m; ++w) {
        int flat = w * n + c;
        int bit = (idx >> (total - 1 - flat)) & 1;
        corrspace::apply_factor_op(v, dims, w, wires[w][c][bit]);
      }
      for (const auto& cp : couplings)
        if (cp.column == c + 1)  // columns are 1-based
          corrspace::apply_factor_op2(v, dims, cp.wire_a, cp.wire_b, cp.op);
    }
    StateVector r = right[0];
    for (int w = 1; w < m; ++w) r = corrspace::kron_vec(r, right[w]);
    out(idx) = r.dot(v);
  }
  double nrm = out.norm();
  if (nrm > 0) out /= nrm;
  (void)corr_dim;
  return out;
}

}  // namespace testing_helpers
