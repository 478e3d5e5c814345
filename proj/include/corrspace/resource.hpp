#pragma once

#include <array>
#include <memory>
#include <optional>

#include "corrspace/numerics.hpp"

namespace corrspace {

// One wire site: two 2x2 correlation-space operators, computational physical
// basis. Site c acts as A[s_c] with site 1 applied to |L> first.
struct SiteTensor {
  std::array<ComplexMatrix, 2> a;

  SiteTensor() : a{ComplexMatrix::Zero(2, 2), ComplexMatrix::Zero(2, 2)} {}
  SiteTensor(ComplexMatrix a0, ComplexMatrix a1) : a{std::move(a0), std::move(a1)} {
    for (const auto& m : a) {
      if (m.rows() != 2 || m.cols() != 2)
        throw std::invalid_argument("SiteTensor: operators must be 2x2");
      require_finite(m, "SiteTensor");
    }
  }
};

// Canonical rank-one description:
//   A[m_0] = r0 |phi_0><0|,  A[m_1] = r1 |phi_0><0| + |phi_1><1|
// with orthonormal {|m_s>} and {|phi_s>}, r0 > 0, r1 >= 0, r0^2 + r1^2 = 1.
struct CanonicalWire {
  ComplexMatrix m_basis;    // columns |m_0>, |m_1>
  ComplexMatrix phi_basis;  // columns |phi_0>, |phi_1>
  double r0 = 1.0;
  double r1 = 0.0;

  ComplexMatrix a_m(int s) const {
    ComplexMatrix e0 = ComplexMatrix::Zero(1, 2), e1 = ComplexMatrix::Zero(1, 2);
    e0(0, 0) = 1;
    e1(0, 1) = 1;
    if (s == 0) return r0 * phi_basis.col(0) * e0;
    return r1 * phi_basis.col(0) * e0 + phi_basis.col(1) * e1;
  }

  // raw computational-basis tensors implied by the canonical data
  std::array<ComplexMatrix, 2> a_raw() const {
    std::array<ComplexMatrix, 2> out{ComplexMatrix::Zero(2, 2), ComplexMatrix::Zero(2, 2)};
    for (int s = 0; s < 2; ++s)
      for (int t = 0; t < 2; ++t) out[s] += m_basis(s, t) * a_m(t);
    return out;
  }
};

struct WireResource {
  std::vector<SiteTensor> sites;  // length N, column c stored at sites[c-1]
  StateVector left;               // |L>, default |0>
  StateVector right;              // |R>, default |+>
  std::optional<CanonicalWire> canonical;
  std::optional<double> theta;  // set for theta-family wires

  int length() const { return static_cast<int>(sites.size()); }

  const SiteTensor& site(int column) const {
    if (column < 1 || column > length())
      throw std::invalid_argument(fmt::format("wire column {} outside [1,{}]", column, length()));
    return sites[column - 1];
  }
};

struct WebCoupling {
  int wire_a = 0;
  int wire_b = 0;
  int column = 0;    // unitary acts on the two correlation spaces after column
  ComplexMatrix op;  // 4x4, row index = corr_a * 2 + corr_b
  std::string label = "cz";
};

inline ComplexMatrix cz_coupling() {
  ComplexMatrix m = ComplexMatrix::Identity(4, 4);
  m(3, 3) = -1;
  return m;
}

struct WebResource {
  std::vector<WireResource> wires;
  std::vector<WebCoupling> couplings;  // sorted by (column, insertion order)

  int wire_count() const { return static_cast<int>(wires.size()); }

  int total_sites() const {
    int n = 0;
    for (const auto& w : wires) n += w.length();
    return n;
  }

  // flat qubit index: wire 0 columns 1..N_0 first, then wire 1, ...
  int flat_index(int wire, int column) const {
    int base = 0;
    for (int w = 0; w < wire; ++w) base += wires[w].length();
    return base + column - 1;
  }
};

namespace detail {

inline StateVector default_left() {
  StateVector v(2);
  v << 1, 0;
  return v;
}

inline StateVector default_right() {
  StateVector v(2);
  v << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
  return v;
}

inline void check_boundary(const StateVector& v, const std::string& what) {
  if (v.size() != 2)
    throw std::invalid_argument(fmt::format("{}: boundary vector must have dim 2", what));
  require_finite(v, what);
  if (v.norm() < 1e-12)
    throw std::invalid_argument(fmt::format("{}: boundary vector is zero", what));
}

}  // namespace detail

// theta family: A[0] = cos(theta) H, A[1] = sin(theta) H Z, theta in (0, pi/4].
// r1 = cos(2 theta); theta = pi/4 is the cluster point (r1 snapped to exact 0).
inline WireResource make_theta_wire(double theta, int n,
                                    std::optional<StateVector> left = std::nullopt,
                                    std::optional<StateVector> right = std::nullopt) {
  if (!(theta > 0.0) || theta > M_PI / 4 + 1e-12)
    throw std::invalid_argument(fmt::format("make_theta_wire: theta {} outside (0, pi/4]", theta));
  if (n < 1) throw std::invalid_argument("make_theta_wire: need at least one site");
  WireResource w;
  w.left = left.value_or(detail::default_left());
  w.right = right.value_or(detail::default_right());
  detail::check_boundary(w.left, "make_theta_wire left");
  detail::check_boundary(w.right, "make_theta_wire right");
  ComplexMatrix a0 = std::cos(theta) * gates::H();
  ComplexMatrix a1 = std::sin(theta) * gates::H() * gates::Z();
  w.sites.assign(n, SiteTensor(a0, a1));
  double r1 = std::cos(2 * theta);
  if (std::abs(r1) < 1e-15) r1 = 0.0;
  double r0 = std::sin(2 * theta);
  CanonicalWire canon;
  canon.m_basis.resize(2, 2);
  canon.m_basis << std::sin(theta), std::cos(theta), std::cos(theta), -std::sin(theta);
  canon.phi_basis = gates::H();
  canon.r0 = r0;
  canon.r1 = r1;
  w.canonical = canon;
  w.theta = theta;
  return w;
}

// cluster wire: A[0] = |+><0|, A[1] = |-><1| (m basis computational,
// phi basis {|+>,|->}, r1 = 0)
inline WireResource make_cluster_wire(int n, std::optional<StateVector> left = std::nullopt,
                                      std::optional<StateVector> right = std::nullopt) {
  if (n < 1) throw std::invalid_argument("make_cluster_wire: need at least one site");
  WireResource w;
  w.left = left.value_or(detail::default_left());
  w.right = right.value_or(detail::default_right());
  detail::check_boundary(w.left, "make_cluster_wire left");
  detail::check_boundary(w.right, "make_cluster_wire right");
  CanonicalWire canon;
  canon.m_basis = ComplexMatrix::Identity(2, 2);
  canon.phi_basis = gates::H();
  canon.r0 = 1.0;
  canon.r1 = 0.0;
  auto raw = canon.a_raw();
  w.sites.assign(n, SiteTensor(raw[0], raw[1]));
  w.canonical = canon;
  return w;
}

// rank-one wire from explicit bases: A[m_s] = |phi_s><s|
inline WireResource make_simple_wire(const ComplexMatrix& m_basis,
                                     const ComplexMatrix& phi_basis, int n,
                                     std::optional<StateVector> left = std::nullopt,
                                     std::optional<StateVector> right = std::nullopt) {
  if (n < 1) throw std::invalid_argument("make_simple_wire: need at least one site");
  require_unitary(m_basis, "make_simple_wire m_basis");
  require_unitary(phi_basis, "make_simple_wire phi_basis");
  WireResource w;
  w.left = left.value_or(detail::default_left());
  w.right = right.value_or(detail::default_right());
  detail::check_boundary(w.left, "make_simple_wire left");
  detail::check_boundary(w.right, "make_simple_wire right");
  CanonicalWire canon;
  canon.m_basis = m_basis;
  canon.phi_basis = phi_basis;
  canon.r0 = 1.0;
  canon.r1 = 0.0;
  auto raw = canon.a_raw();
  w.sites.assign(n, SiteTensor(raw[0], raw[1]));
  w.canonical = canon;
  return w;
}

// Constructive canonical-form solver. Accepts any tensor pair proportional to
// a member of the family A[0] ~ W, A[1] ~ W diag(e^{-ia}, e^{ia}); rescales to
// sum_s A[s]^dag A[s] = I, finds the measurement basis that makes one branch
// rank one, and extracts (m, phi, r0, r1). Throws std::domain_error otherwise.
inline CanonicalWire to_canonical(const ComplexMatrix& a0_in, const ComplexMatrix& a1_in) {
  if (a0_in.rows() != 2 || a0_in.cols() != 2 || a1_in.rows() != 2 || a1_in.cols() != 2)
    throw std::invalid_argument("to_canonical: tensors must be 2x2");
  require_finite(a0_in, "to_canonical");
  require_finite(a1_in, "to_canonical");
  const double form_tol = 1e-8;
  double scale = std::sqrt((a0_in.squaredNorm() + a1_in.squaredNorm()) / 2.0);
  if (scale < 1e-14) throw std::domain_error("to_canonical: zero tensors");
  ComplexMatrix a0 = a0_in / scale, a1 = a1_in / scale;
  ComplexMatrix comp = a0.adjoint() * a0 + a1.adjoint() * a1 - ComplexMatrix::Identity(2, 2);
  if (comp.cwiseAbs().maxCoeff() > form_tol)
    throw std::domain_error("to_canonical: tensors are not isometric up to a common scale");

  // <m_0| = (u0, u1) must kill the |1> column of u0 A[0] + u1 A[1]
  ComplexMatrix cols(2, 2);
  cols.col(0) = a0.col(1);
  cols.col(1) = a1.col(1);
  Eigen::JacobiSVD<ComplexMatrix> svd(cols, Eigen::ComputeFullV);
  if (svd.singularValues()(0) < 1e-12)
    throw std::domain_error("to_canonical: tensors have no support on |1>");
  if (svd.singularValues()(1) > form_tol * std::max(1.0, svd.singularValues()(0)))
    throw std::domain_error("to_canonical: no basis yields a rank-one branch");
  StateVector u = svd.matrixV().col(1);  // cols * u = 0
  ComplexMatrix bm0 = u(0) * a0 + u(1) * a1;
  double r0 = bm0.col(0).norm();
  if (r0 < form_tol) throw std::domain_error("to_canonical: rank-one branch vanishes (r0 = 0)");
  StateVector phi0 = bm0.col(0) / r0;

  StateVector m0(2), m1(2);
  m0 << std::conj(u(0)), std::conj(u(1));
  m1 << -u(1), u(0);
  ComplexMatrix bm1 = std::conj(m1(0)) * a0 + std::conj(m1(1)) * a1;
  Complex c1 = phi0.dot(bm1.col(0));  // <phi0| bm1 |0>
  StateVector resid = bm1.col(0) - c1 * phi0;
  if (resid.norm() > form_tol)
    throw std::domain_error("to_canonical: second branch not aligned with |phi_0><0|");
  double r1 = std::abs(c1);
  if (r1 > 1e-12) {
    Complex phase = c1 / r1;
    m1 *= phase;
    bm1 /= phase;
  } else {
    r1 = 0.0;
  }
  StateVector phi1 = bm1.col(1);
  if (std::abs(phi1.norm() - 1.0) > form_tol || std::abs(phi0.dot(phi1)) > form_tol)
    throw std::domain_error("to_canonical: second branch basis is not orthonormal");
  if (std::abs(r0 * r0 + r1 * r1 - 1.0) > form_tol)
    throw std::domain_error("to_canonical: branch weights do not normalize");

  CanonicalWire canon;
  canon.m_basis.resize(2, 2);
  canon.m_basis.col(0) = m0;
  canon.m_basis.col(1) = m1;
  canon.phi_basis.resize(2, 2);
  canon.phi_basis.col(0) = phi0;
  canon.phi_basis.col(1) = phi1.normalized();
  canon.r0 = r0;
  canon.r1 = r1;

  auto rec = canon.a_raw();
  double rec_resid = std::max((rec[0] - a0).cwiseAbs().maxCoeff(),
                              (rec[1] - a1).cwiseAbs().maxCoeff());
  if (rec_resid > form_tol)
    throw std::domain_error(
        fmt::format("to_canonical: reconstruction residual {:.3e}", rec_resid));
  return canon;
}

// general canonical-family wire: A[0] = cos(mix) W, A[1] = sin(mix) W diag(e^{-ia}, e^{ia})
inline WireResource make_general_wire(const ComplexMatrix& w_op, double alpha, double mix,
                                      int n, std::optional<StateVector> left = std::nullopt,
                                      std::optional<StateVector> right = std::nullopt) {
  if (n < 1) throw std::invalid_argument("make_general_wire: need at least one site");
  require_unitary(w_op, "make_general_wire W");
  ComplexMatrix phases = ComplexMatrix::Zero(2, 2);
  phases(0, 0) = std::polar(1.0, -alpha);
  phases(1, 1) = std::polar(1.0, alpha);
  ComplexMatrix a0 = std::cos(mix) * w_op;
  ComplexMatrix a1 = std::sin(mix) * w_op * phases;
  WireResource w;
  w.left = left.value_or(detail::default_left());
  w.right = right.value_or(detail::default_right());
  detail::check_boundary(w.left, "make_general_wire left");
  detail::check_boundary(w.right, "make_general_wire right");
  w.sites.assign(n, SiteTensor(a0, a1));
  w.canonical = to_canonical(a0, a1);  // throws if (alpha, mix) degenerate
  return w;
}

inline WebResource make_web(std::vector<WireResource> wires, std::vector<WebCoupling> couplings) {
  if (wires.empty()) throw std::invalid_argument("make_web: no wires");
  WebResource web;
  web.wires = std::move(wires);
  int m = web.wire_count();
  for (auto& c : couplings) {
    if (c.wire_a < 0 || c.wire_a >= m || c.wire_b < 0 || c.wire_b >= m || c.wire_a == c.wire_b)
      throw std::invalid_argument(
          fmt::format("make_web: coupling wires ({},{}) invalid", c.wire_a, c.wire_b));
    int limit = std::min(web.wires[c.wire_a].length(), web.wires[c.wire_b].length());
    if (c.column < 1 || c.column >= limit)
      throw std::invalid_argument(
          fmt::format("make_web: coupling column {} outside [1,{})", c.column, limit));
    if (c.op.rows() != 4 || c.op.cols() != 4)
      throw std::invalid_argument("make_web: coupling operator must be 4x4");
    require_unitary(c.op, "make_web coupling");
  }
  std::stable_sort(couplings.begin(), couplings.end(),
                   [](const WebCoupling& a, const WebCoupling& b) { return a.column < b.column; });
  web.couplings = std::move(couplings);
  return web;
}

inline WebResource single_wire_web(WireResource wire) {
  WebResource web;
  web.wires.push_back(std::move(wire));
  return web;
}

// Dense expansion of the full physical state (normalized). Qubit order: wire 0
// site 1 most significant, then wire 0 site 2, ..., then wire 1, per flat_index.
inline StateVector expand_state(const WebResource& web, int max_qubits = 20) {
  int total = web.total_sites();
  if (total > max_qubits)
    throw std::invalid_argument(
        fmt::format("expand_state: {} qubits exceeds cap {}", total, max_qubits));
  int m = web.wire_count();
  int corr_dim = 1 << m;
  std::vector<int> corr_dims(m, 2);
  int max_len = 0;
  for (const auto& w : web.wires) max_len = std::max(max_len, w.length());

  // grow column-major, then permute bits into the wire-major flat order
  StateVector joint = web.wires[0].left;
  for (int w = 1; w < m; ++w) joint = kron_vec(joint, web.wires[w].left);
  std::vector<StateVector> layers = {joint};  // phys-index-major blocks of corr vectors
  std::vector<std::pair<int, int>> col_order;  // (wire, column) in growth order
  Eigen::Index phys = 1;
  StateVector cur(corr_dim * phys);
  cur = joint;
  for (int c = 1; c <= max_len; ++c) {
    for (int w = 0; w < m; ++w) {
      if (c > web.wires[w].length()) continue;
      col_order.push_back({w, c});
      StateVector next(cur.size() * 2);
      const auto& tensor = web.wires[w].site(c);
      for (Eigen::Index p = 0; p < phys; ++p) {
        StateVector seg = cur.segment(p * corr_dim, corr_dim);
        for (int s = 0; s < 2; ++s) {
          StateVector out = seg;
          apply_factor_op(out, corr_dims, w, tensor.a[s]);
          next.segment((p * 2 + s) * corr_dim, corr_dim) = out;
        }
      }
      cur = std::move(next);
      phys *= 2;
    }
    for (const auto& cp : web.couplings) {
      if (cp.column != c) continue;
      for (Eigen::Index p = 0; p < phys; ++p) {
        StateVector seg = cur.segment(p * corr_dim, corr_dim);
        apply_factor_op2(seg, corr_dims, cp.wire_a, cp.wire_b, cp.op);
        cur.segment(p * corr_dim, corr_dim) = seg;
      }
    }
  }
  StateVector rvec = web.wires[0].right;
  for (int w = 1; w < m; ++w) rvec = kron_vec(rvec, web.wires[w].right);
  StateVector col_major(phys);
  for (Eigen::Index p = 0; p < phys; ++p)
    col_major(p) = rvec.dot(cur.segment(p * corr_dim, corr_dim));

  StateVector out(phys);
  int n_bits = total;
  for (Eigen::Index p = 0; p < phys; ++p) {
    Eigen::Index flat = 0;
    for (int b = 0; b < n_bits; ++b) {
      int bit = (p >> (n_bits - 1 - b)) & 1;  // growth-order bit b
      auto [w, c] = col_order[b];
      int pos = web.flat_index(w, c);
      if (bit) flat |= Eigen::Index(1) << (n_bits - 1 - pos);
    }
    out(flat) = col_major(p);
  }
  double nrm = out.norm();
  if (nrm < 1e-300)
    throw std::runtime_error("expand_state: state has zero norm (degenerate resource)");
  return out / nrm;
}

inline StateVector expand_state(const WireResource& wire, int max_qubits = 20) {
  return expand_state(single_wire_web(wire), max_qubits);
}

}  // namespace corrspace
