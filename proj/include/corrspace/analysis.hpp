#pragma once

#include <limits>
#include <map>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "corrspace/numerics.hpp"
#include "corrspace/protocol.hpp"

namespace corrspace {

namespace detail {

inline bool uniform_sites(const WireResource& w) {
  for (int c = 2; c <= w.length(); ++c)
    for (int s = 0; s < 2; ++s)
      if ((w.site(c).a[s] - w.site(1).a[s]).cwiseAbs().maxCoeff() > 1e-14) return false;
  return true;
}

// one step of the doubled-layer contraction with a local operator inserted:
// rho -> sum_{s,s'} <s'|O|s> A[s] rho A[s']^dag
inline ComplexMatrix transfer_step(const SiteTensor& t, const ComplexMatrix& o,
                                   const ComplexMatrix& rho) {
  ComplexMatrix out = ComplexMatrix::Zero(2, 2);
  for (int s = 0; s < 2; ++s)
    for (int sp = 0; sp < 2; ++sp) {
      Complex c = o(sp, s);
      if (c != Complex(0, 0)) out += c * t.a[s] * rho * t.a[sp].adjoint();
    }
  return out;
}

// <Psi| prod_i O_i |Psi> over the full wire, unnormalized; `inserts` maps
// column -> local operator (identity elsewhere)
inline Complex wire_expectation(const WireResource& w,
                                const std::map<int, ComplexMatrix>& inserts) {
  ComplexMatrix id = ComplexMatrix::Identity(2, 2);
  ComplexMatrix rho = w.left * w.left.adjoint();
  for (int c = 1; c <= w.length(); ++c) {
    auto it = inserts.find(c);
    rho = transfer_step(w.site(c), it == inserts.end() ? id : it->second, rho);
  }
  return (w.right.adjoint() * rho * w.right)(0);
}

}  // namespace detail

struct TransferSpectrum {
  ComplexMatrix E;              // sum_s A[s] (x) conj(A[s])
  Eigen::VectorXcd eigenvalues; // sorted by modulus, descending
  double xi = 0.0;              // correlation length in sites; may be +inf
  bool degenerate = false;      // |lambda_2| = |lambda_1|: no decay scale
};

inline TransferSpectrum correlation_length(const WireResource& w) {
  if (w.length() < 1) throw std::invalid_argument("correlation_length: empty wire");
  if (!detail::uniform_sites(w))
    throw std::invalid_argument("correlation_length: wire is not uniform");
  const auto& t = w.site(1);
  TransferSpectrum out;
  out.E = kron(t.a[0], t.a[0].conjugate()) + kron(t.a[1], t.a[1].conjugate());
  out.eigenvalues = eig_general(out.E).values;
  double l1 = std::abs(out.eigenvalues(0));
  double l2 = std::abs(out.eigenvalues(1));
  if (l1 < 1e-280) throw std::invalid_argument("correlation_length: null transfer matrix");
  double ratio = l2 / l1;
  // defective zeros (nilpotent sector at the cluster point) are only resolved
  // to ~sqrt(machine eps) by the eigensolver
  if (ratio <= 1e-7) {
    out.xi = 0.0;
  } else if (ratio >= 1.0 - 1e-12) {
    out.xi = std::numeric_limits<double>::infinity();
    out.degenerate = true;
  } else {
    out.xi = -1.0 / std::log(ratio);
  }
  return out;
}

// connected two-point correlator <O_i O_j> - <O_i><O_j> on the finite wire,
// boundaries included exactly
inline double two_point_correlator(const WireResource& w, const ComplexMatrix& o, int i,
                                   int j) {
  if (o.rows() != 2 || o.cols() != 2)
    throw std::invalid_argument("two_point_correlator: observable must be 2x2");
  if ((o - o.adjoint()).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument("two_point_correlator: observable must be hermitian");
  if (i < 1 || j > w.length() || i >= j)
    throw std::invalid_argument(
        fmt::format("two_point_correlator: need 1 <= i < j <= {}, got ({}, {})",
                    w.length(), i, j));
  double norm = std::real(detail::wire_expectation(w, {}));
  if (norm < 1e-280) throw std::runtime_error("two_point_correlator: null state");
  double oi = std::real(detail::wire_expectation(w, {{i, o}})) / norm;
  double oj = std::real(detail::wire_expectation(w, {{j, o}})) / norm;
  double oij = std::real(detail::wire_expectation(w, {{i, o}, {j, o}})) / norm;
  return oij - oi * oj;
}

// least-squares fit of ln|correlator| vs distance over bulk pairs (two
// boundary sites excluded on each side); slope estimates -1/xi. Distances
// whose correlator vanishes are skipped: parity selection rules null the
// correlator on alternating distances for this tensor family.
struct DecayFit {
  double slope = 0.0;
  double intercept = 0.0;
  int points = 0;
};

inline DecayFit correlator_decay(const WireResource& w, const ComplexMatrix& o, int min_d,
                                 int max_d) {
  if (min_d < 1 || max_d < min_d)
    throw std::invalid_argument("correlator_decay: bad distance window");
  int i = 3;  // first bulk site
  if (i + max_d > w.length() - 2)
    throw std::invalid_argument(
        fmt::format("correlator_decay: wire of length {} too short for distance {}",
                    w.length(), max_d));
  std::vector<double> ds, cs;
  double cmax = 0.0;
  for (int d = min_d; d <= max_d; ++d) {
    double c = std::abs(two_point_correlator(w, o, i, i + d));
    ds.push_back(d);
    cs.push_back(c);
    cmax = std::max(cmax, c);
  }
  if (cmax < 1e-280)
    throw std::runtime_error(
        "correlator_decay: correlator vanishes over the whole distance window");
  std::vector<double> xs, ys;
  for (size_t k = 0; k < ds.size(); ++k) {
    if (cs[k] < cmax * 1e-12) continue;
    xs.push_back(ds[k]);
    ys.push_back(std::log(cs[k]));
  }
  if (xs.size() < 2)
    throw std::runtime_error("correlator_decay: fewer than two usable distances");
  int n = static_cast<int>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int k = 0; k < n; ++k) {
    sx += xs[k];
    sy += ys[k];
    sxx += xs[k] * xs[k];
    sxy += xs[k] * ys[k];
  }
  DecayFit fit;
  fit.points = n;
  fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  fit.intercept = (sy - fit.slope * sx) / n;
  return fit;
}

// von Neumann entropy (bits) of the one-site reduced state of the full wire
inline double local_entropy(const WireResource& w, int site) {
  if (site < 1 || site > w.length())
    throw std::invalid_argument(
        fmt::format("local_entropy: site {} outside [1,{}]", site, w.length()));
  ComplexMatrix id = ComplexMatrix::Identity(2, 2);
  ComplexMatrix rho_left = w.left * w.left.adjoint();
  for (int c = 1; c < site; ++c) rho_left = detail::transfer_step(w.site(c), id, rho_left);
  ComplexMatrix omega = w.right * w.right.adjoint();
  for (int c = w.length(); c > site; --c) {
    const auto& t = w.site(c);
    omega = (t.a[0].adjoint() * omega * t.a[0] + t.a[1].adjoint() * omega * t.a[1]).eval();
  }
  const auto& t = w.site(site);
  ComplexMatrix red(2, 2);
  for (int s = 0; s < 2; ++s)
    for (int sp = 0; sp < 2; ++sp)
      red(s, sp) = (t.a[s] * rho_left * t.a[sp].adjoint() * omega).trace();
  double tr = std::real(red.trace());
  if (tr < 1e-280) throw std::runtime_error("local_entropy: null state");
  red /= tr;
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(red);
  double h = 0;
  for (int k = 0; k < 2; ++k) {
    double p = es.eigenvalues()(k);
    if (p > 1e-15) h -= p * std::log2(p);
  }
  return h;
}

// Aggregate repeat-until-success shots against the closed-form law: phase
// success frequencies vs 1 - r1^l and a chi-square of the per-phase trial
// counts against the truncated geometric distribution.
struct SuccessStats {
  int shots = 0;
  int draws = 0;             // phase attempts pooled over shots
  double p_phase1 = 0.0;     // host site pinned within budget
  double p_phase2 = 0.0;     // distinguishing site pinned, given phase 1
  double expected = 1.0;     // 1 - r1^l
  double ci_half = 0.0;      // 99% normal half-width around p_phase1
  bool expected_in_ci = true;
  double chi_square = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

inline SuccessStats success_stats(const std::vector<LocalizationResult>& shots, double r1,
                                  int l) {
  if (shots.empty()) throw std::invalid_argument("success_stats: no shots");
  if (static_cast<int>(shots.size()) < 100)
    throw std::invalid_argument("success_stats: need at least 100 shots");
  if (!(r1 >= 0.0) || r1 >= 1.0)
    throw std::invalid_argument("success_stats: r1 must lie in [0,1)");
  if (l < 1) throw std::invalid_argument("success_stats: trial budget must be positive");

  SuccessStats st;
  st.shots = static_cast<int>(shots.size());
  st.expected = 1.0 - std::pow(r1, l);

  // each phase contributes one draw: (trials spent, completed or budget out)
  std::vector<int> hist(l + 1, 0);  // index l = budget exhausted
  int pinned = 0, finished = 0;
  for (const auto& s : shots) {
    bool host = s.host_site > 0;
    if (r1 == 0.0) {
      pinned += host ? 1 : 0;
      finished += s.succeeded ? 1 : 0;
      continue;
    }
    if (host && (s.trials_phase1 < 1 || s.trials_phase1 > l))
      throw std::invalid_argument("success_stats: shot inconsistent with trial budget");
    hist[host ? s.trials_phase1 - 1 : l]++;
    ++st.draws;
    if (!host) continue;
    ++pinned;
    if (s.succeeded && (s.trials_phase2 < 1 || s.trials_phase2 > l))
      throw std::invalid_argument("success_stats: shot inconsistent with trial budget");
    hist[s.succeeded ? s.trials_phase2 - 1 : l]++;
    ++st.draws;
    finished += s.succeeded ? 1 : 0;
  }
  st.p_phase1 = double(pinned) / st.shots;
  st.p_phase2 = pinned > 0 ? double(finished) / pinned : 0.0;
  if (r1 == 0.0) return st;  // filter-free runs: exact single trials, no histogram

  boost::math::normal norm01;
  double z = boost::math::quantile(norm01, 0.995);
  st.ci_half = z * std::sqrt(st.p_phase1 * (1.0 - st.p_phase1) / st.shots);
  st.expected_in_ci = std::abs(st.p_phase1 - st.expected) <= st.ci_half;

  st.dof = l;
  for (int k = 0; k <= l; ++k) {
    double pk = k < l ? std::pow(r1, k) * (1.0 - r1) : std::pow(r1, l);
    double e = st.draws * pk;
    if (e > 0) st.chi_square += (hist[k] - e) * (hist[k] - e) / e;
  }
  boost::math::chi_squared dist(st.dof);
  st.p_value = 1.0 - boost::math::cdf(dist, st.chi_square);
  return st;
}

}  // namespace corrspace
