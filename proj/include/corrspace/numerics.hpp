#pragma once

#include <algorithm>
#include <numeric>

#include "corrspace/common.hpp"

namespace corrspace {

struct SchmidtDecomposition {
  Eigen::VectorXd coefficients;  // descending, >= 0
  ComplexMatrix left;            // column k = left vector k (dim_a)
  ComplexMatrix right;           // column k = right vector k (dim_b)
};

// Schmidt decomposition of v across the bipartition dim_a x dim_b, factor A
// most significant: v(i*dim_b + j). Satisfies
//   v = sum_k coefficients[k] * kron(left.col(k), right.col(k)).
inline SchmidtDecomposition schmidt_decompose(const StateVector& v, int dim_a, int dim_b) {
  if (dim_a < 1 || dim_b < 1 || static_cast<Eigen::Index>(dim_a) * dim_b != v.size())
    throw std::invalid_argument(
        fmt::format("schmidt_decompose: bipartition {}x{} does not match dim {}", dim_a,
                    dim_b, v.size()));
  require_finite(v, "schmidt_decompose");
  if (v.norm() == 0.0)
    throw std::invalid_argument("schmidt_decompose: zero vector");
  ComplexMatrix m(dim_a, dim_b);
  for (int i = 0; i < dim_a; ++i)
    for (int j = 0; j < dim_b; ++j) m(i, j) = v(static_cast<Eigen::Index>(i) * dim_b + j);
  Eigen::JacobiSVD<ComplexMatrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SchmidtDecomposition out;
  out.coefficients = svd.singularValues();
  out.left = svd.matrixU();
  out.right = svd.matrixV().conjugate();
  return out;
}

struct EigenDecomposition {
  Eigen::VectorXcd values;  // sorted: modulus desc, then real desc, then imag desc
  ComplexMatrix vectors;    // column k pairs with values[k], unit norm
};

inline EigenDecomposition eig_general(const ComplexMatrix& m) {
  if (m.rows() != m.cols())
    throw std::invalid_argument("eig_general: matrix not square");
  if (m.rows() < 1 || m.rows() > 64)
    throw std::invalid_argument(fmt::format("eig_general: dim {} outside [1,64]", m.rows()));
  require_finite(m, "eig_general");
  Eigen::ComplexEigenSolver<ComplexMatrix> solver(m, true);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("eig_general: eigensolver failed to converge");
  Eigen::VectorXcd vals = solver.eigenvalues();
  ComplexMatrix vecs = solver.eigenvectors();
  std::vector<int> order(vals.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    double ma = std::abs(vals(a)), mb = std::abs(vals(b));
    if (ma != mb) return ma > mb;
    if (vals(a).real() != vals(b).real()) return vals(a).real() > vals(b).real();
    return vals(a).imag() > vals(b).imag();
  });
  EigenDecomposition out;
  out.values.resize(vals.size());
  out.vectors.resize(vecs.rows(), vecs.cols());
  for (Eigen::Index k = 0; k < vals.size(); ++k) {
    out.values(k) = vals(order[k]);
    out.vectors.col(k) = vecs.col(order[k]).normalized();
  }
  return out;
}

}  // namespace corrspace
