#pragma once

#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>
#include <fmt/format.h>

namespace corrspace {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using StateVector = Eigen::VectorXcd;

// Numeric tolerance policy. ATOL covers state/value comparisons, UNITARY_TOL
// covers unitarity and completeness residuals.
struct Tolerances {
  double atol = 1e-10;
  double unitary = 1e-12;
};

inline Tolerances& tolerances() {
  static Tolerances t;
  return t;
}

namespace gates {

inline const ComplexMatrix& I2() {
  static const ComplexMatrix m = ComplexMatrix::Identity(2, 2);
  return m;
}

inline const ComplexMatrix& X() {
  static const ComplexMatrix m = [] {
    ComplexMatrix x(2, 2);
    x << 0, 1, 1, 0;
    return x;
  }();
  return m;
}

inline const ComplexMatrix& Y() {
  static const ComplexMatrix m = [] {
    ComplexMatrix y(2, 2);
    y << Complex(0, 0), Complex(0, -1), Complex(0, 1), Complex(0, 0);
    return y;
  }();
  return m;
}

inline const ComplexMatrix& Z() {
  static const ComplexMatrix m = [] {
    ComplexMatrix z(2, 2);
    z << 1, 0, 0, -1;
    return z;
  }();
  return m;
}

inline const ComplexMatrix& H() {
  static const ComplexMatrix m = [] {
    ComplexMatrix h(2, 2);
    double s = 1.0 / std::sqrt(2.0);
    h << s, s, s, -s;
    return h;
  }();
  return m;
}

inline ComplexMatrix rz(double angle) {
  ComplexMatrix m = ComplexMatrix::Zero(2, 2);
  m(0, 0) = std::polar(1.0, -angle / 2);
  m(1, 1) = std::polar(1.0, angle / 2);
  return m;
}

inline ComplexMatrix rx(double angle) {
  ComplexMatrix m(2, 2);
  m(0, 0) = std::cos(angle / 2);
  m(1, 1) = std::cos(angle / 2);
  m(0, 1) = Complex(0, -std::sin(angle / 2));
  m(1, 0) = Complex(0, -std::sin(angle / 2));
  return m;
}

inline ComplexMatrix pauli(int x_power, int z_power) {
  ComplexMatrix p = I2();
  if (z_power & 1) p = Z() * p;
  if (x_power & 1) p = X() * p;
  return p;
}

}  // namespace gates

inline ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b) {
  return Eigen::kroneckerProduct(a, b).eval();
}

inline StateVector kron_vec(const StateVector& a, const StateVector& b) {
  StateVector out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i)
    out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

inline void require_finite(const ComplexMatrix& m, const std::string& what) {
  if (!m.allFinite())
    throw std::invalid_argument(fmt::format("{}: non-finite entries", what));
}

inline void require_finite(const StateVector& v, const std::string& what) {
  if (!v.allFinite())
    throw std::invalid_argument(fmt::format("{}: non-finite entries", what));
}

inline double unitarity_residual(const ComplexMatrix& m) {
  ComplexMatrix r = m.adjoint() * m - ComplexMatrix::Identity(m.cols(), m.cols());
  return r.cwiseAbs().maxCoeff();
}

inline bool is_unitary(const ComplexMatrix& m, double tol) {
  return m.rows() == m.cols() && unitarity_residual(m) <= tol;
}

inline bool is_unitary(const ComplexMatrix& m) {
  return is_unitary(m, tolerances().unitary);
}

inline void require_unitary(const ComplexMatrix& m, const std::string& what) {
  if (!is_unitary(m))
    throw std::invalid_argument(
        fmt::format("{}: not unitary (residual {:.3e})", what, unitarity_residual(m)));
}

// |<u|v>|^2 on normalized copies; global phase irrelevant.
inline double fidelity(const StateVector& u, const StateVector& v) {
  double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0)
    throw std::invalid_argument("fidelity: zero vector");
  Complex ov = u.dot(v) / (nu * nv);
  return std::norm(ov);
}

// min over global phase of max-abs difference, phase fixed by tr(b^dag a)
inline double phase_aligned_distance(const ComplexMatrix& a, const ComplexMatrix& b) {
  Complex t = (b.adjoint() * a).trace();
  Complex phase = std::abs(t) > 0 ? t / std::abs(t) : Complex(1, 0);
  return (a - phase * b).cwiseAbs().maxCoeff();
}

inline double trace_distance(const ComplexMatrix& a, const ComplexMatrix& b) {
  Eigen::JacobiSVD<ComplexMatrix> svd(a - b);
  return 0.5 * svd.singularValues().sum();
}

// Applies op (d x d) to tensor factor k of v, where v is laid out with factor 0
// most significant: index = ((i_0 * d_1 + i_1) * d_2 + ...).
inline void apply_factor_op(StateVector& v, const std::vector<int>& dims, int k,
                            const ComplexMatrix& op) {
  int d = dims.at(k);
  if (op.rows() != d || op.cols() != d)
    throw std::invalid_argument("apply_factor_op: dimension mismatch");
  Eigen::Index stride = 1;
  for (size_t j = k + 1; j < dims.size(); ++j) stride *= dims[j];
  Eigen::Index block = stride * d;
  StateVector tmp(d);
  for (Eigen::Index base = 0; base < v.size(); base += block) {
    for (Eigen::Index off = 0; off < stride; ++off) {
      for (int i = 0; i < d; ++i) tmp(i) = v(base + i * stride + off);
      tmp = (op * tmp).eval();
      for (int i = 0; i < d; ++i) v(base + i * stride + off) = tmp(i);
    }
  }
}

// Applies op ((d_j*d_k) x (d_j*d_k)) to factors j < k; row index of op is
// i_j * d_k + i_k.
inline void apply_factor_op2(StateVector& v, const std::vector<int>& dims, int j, int k,
                             const ComplexMatrix& op) {
  if (j == k) throw std::invalid_argument("apply_factor_op2: equal factors");
  if (j > k) {
    // reorder op to match swapped roles
    int dj = dims.at(j), dk = dims.at(k);
    ComplexMatrix perm = ComplexMatrix::Zero(dj * dk, dj * dk);
    for (int a = 0; a < dk; ++a)
      for (int b = 0; b < dj; ++b) perm(b * dk + a, a * dj + b) = 1;
    apply_factor_op2(v, dims, k, j, perm * op * perm.adjoint());
    return;
  }
  int dj = dims.at(j), dk = dims.at(k);
  if (op.rows() != dj * dk || op.cols() != dj * dk)
    throw std::invalid_argument("apply_factor_op2: dimension mismatch");
  Eigen::Index stride_j = 1, stride_k = 1;
  for (size_t t = j + 1; t < dims.size(); ++t) stride_j *= dims[t];
  for (size_t t = k + 1; t < dims.size(); ++t) stride_k *= dims[t];
  StateVector tmp(dj * dk);
  std::vector<Eigen::Index> bases;
  Eigen::Index total = v.size();
  for (Eigen::Index idx = 0; idx < total; ++idx) {
    Eigen::Index ij = (idx / stride_j) % dj;
    Eigen::Index ik = (idx / stride_k) % dk;
    if (ij != 0 || ik != 0) continue;
    for (int a = 0; a < dj; ++a)
      for (int b = 0; b < dk; ++b) tmp(a * dk + b) = v(idx + a * stride_j + b * stride_k);
    tmp = (op * tmp).eval();
    for (int a = 0; a < dj; ++a)
      for (int b = 0; b < dk; ++b) v(idx + a * stride_j + b * stride_k) = tmp(a * dk + b);
  }
}

// SplitMix64, used to derive independent per-shot streams from (seed, shot).
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::mt19937_64 shot_stream(uint64_t master_seed, uint64_t shot_index) {
  uint64_t state = master_seed;
  uint64_t a = splitmix64(state);
  state = a ^ (shot_index * 0xD2B74407B1CE6E93ULL + 0x9E3779B97F4A7C15ULL);
  uint64_t lo = splitmix64(state);
  uint64_t hi = splitmix64(state);
  std::seed_seq seq{static_cast<uint32_t>(lo), static_cast<uint32_t>(lo >> 32),
                    static_cast<uint32_t>(hi), static_cast<uint32_t>(hi >> 32)};
  return std::mt19937_64(seq);
}

inline int sample_index(const std::vector<double>& probs, std::mt19937_64& rng) {
  double total = 0;
  for (double p : probs) total += p;
  if (total <= 0) throw std::runtime_error("sample_index: empty distribution");
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * total;
  double acc = 0;
  int last_positive = -1;
  for (size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0) continue;
    last_positive = static_cast<int>(i);
    acc += probs[i];
    if (u < acc) return last_positive;
  }
  if (last_positive < 0) throw std::runtime_error("sample_index: no positive weight");
  return last_positive;
}

}  // namespace corrspace
