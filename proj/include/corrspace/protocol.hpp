#pragma once

#include <memory>

#include "corrspace/compiler.hpp"

namespace corrspace {

// Two-outcome generalized measurement that orthogonalizes the dressed site
// states: F maps |m'_s> -> sqrt(1-r1)|m_s>, Fbar maps both onto |chi> and
// factors the site out. Matrices are expressed in the {|m0>,|m1>} basis.
struct FilterPOVM {
  double r1 = 0.0;
  double r0 = 1.0;
  ComplexMatrix F;
  ComplexMatrix Fbar;
  StateVector chi;
};

inline FilterPOVM build_filter(double r1) {
  if (!(r1 >= 0.0) || r1 >= 1.0)
    throw std::invalid_argument(
        fmt::format("build_filter: r1 = {} outside [0,1); the dressed basis states "
                    "coincide at r1 = 1 and cannot be filtered apart",
                    r1));
  FilterPOVM f;
  f.r1 = r1;
  f.r0 = std::sqrt(1.0 - r1 * r1);
  f.F = ComplexMatrix::Zero(2, 2);
  f.F(0, 0) = 1.0;
  f.F(1, 1) = f.r0;
  f.F(1, 0) = -r1;
  f.F /= std::sqrt(1.0 + r1);
  f.chi = StateVector(2);
  f.chi << std::sqrt((1.0 - r1) / 2.0), std::sqrt((1.0 + r1) / 2.0);
  f.Fbar = std::sqrt(2.0 * r1 / (1.0 + r1)) * f.chi * f.chi.adjoint();
  return f;
}

// the filter as Kraus operators on the physical site space
inline std::vector<ComplexMatrix> filter_kraus(const FilterPOVM& f,
                                               const ComplexMatrix& m_basis) {
  return {m_basis * f.F * m_basis.adjoint(), m_basis * f.Fbar * m_basis.adjoint()};
}

// correlation-length form of the trial count: with e^{-1/xi} = sqrt(r1) the
// bound l >= (1/2) ln(1/eps) xi reproduces ln(eps)/ln(r1)
inline double trials_xi_bound(double epsilon, double r1) {
  if (!(epsilon > 0.0) || epsilon >= 1.0)
    throw std::invalid_argument("trials_xi_bound: epsilon must lie in (0,1)");
  if (!(r1 > 0.0) || r1 >= 1.0)
    throw std::invalid_argument("trials_xi_bound: r1 must lie in (0,1)");
  double xi = -2.0 / std::log(r1);
  return 0.5 * std::log(1.0 / epsilon) * xi;
}

// smallest l with 1 - r1^l >= 1 - epsilon
inline int required_trials(double epsilon, double r1) {
  if (!(epsilon > 0.0) || epsilon >= 1.0)
    throw std::invalid_argument("required_trials: epsilon must lie in (0,1)");
  if (!(r1 >= 0.0) || r1 >= 1.0)
    throw std::invalid_argument("required_trials: r1 must lie in [0,1)");
  if (r1 == 0.0) return 1;
  int l = std::max(1, static_cast<int>(std::ceil(std::log(epsilon) / std::log(r1))));
  if (std::pow(r1, l) > epsilon * (1.0 + 1e-12))
    throw std::logic_error("required_trials: defining inequality violated");
  if (l < trials_xi_bound(epsilon, r1) - 1.0 - 1e-9)
    throw std::logic_error("required_trials: correlation-length bound violated");
  return l;
}

struct LocalizationResult {
  int wire = 0;
  int host_site = 0;     // column whose physical site carries the output
  int trials_phase1 = 0;  // filter trials spent pinning the host site
  int trials_phase2 = 0;  // filter trials spent on the distinguishing site
  int trials_used = 1;
  bool succeeded = false;
  PauliFrame frame;       // raw output ~ m_basis * X^x Z^z * (logical target)
  double fidelity = 0.0;
  int transcript_first = 0;
  int transcript_last = 0;
  std::string note;
};

namespace detail {

inline PauliFrame compose_frames(const PauliFrame& later, const PauliFrame& earlier) {
  PauliFrame f;
  f.x_power = later.x_power ^ earlier.x_power;
  f.z_power = later.z_power ^ earlier.z_power;
  return f;
}

inline MeasurementOp filter_measurement(int wire, int column, const FilterPOVM& f,
                                        const ComplexMatrix& m_basis) {
  return retained_povm(wire, column, filter_kraus(f, m_basis), "filter",
                       {"pass", "reject"});
}

// Phases after the output state has been prepared in the correlation space:
// pin a host site (filtering on general wires), map the output basis onto
// {|+>,|->}, then transfer the entanglement onto one distinguishing site.
// `acc` carries the byproduct frame accumulated by the preparation.
inline LocalizationResult localize_core(SimState& s, int wire, PauliFrame acc,
                                        double epsilon) {
  const WireResource& wr = s.web().wires.at(wire);
  if (!wr.canonical)
    throw std::domain_error("localize: wire has no canonical description");
  const CanonicalWire& canon = *wr.canonical;
  const ComplexMatrix& m = canon.m_basis;

  LocalizationResult res;
  res.wire = wire;
  res.transcript_first = static_cast<int>(s.transcript().size());
  MeasurementPattern vprime = compile_output_map(wr, epsilon);
  MeasurementPattern vmap =
      compile_unitary(wr, gates::H() * canon.phi_basis.adjoint(), epsilon);

  auto recover = [&](const MeasurementPattern& pat) -> PauliFrame {
    auto ex = run_pattern(s, wire, pat);
    if (!ex.succeeded)
      throw std::runtime_error(fmt::format(
          "localize: wire {} exhausted during a recovery segment ({})", wire,
          ex.failure_reason));
    return ex.frame;
  };

  if (canon.r1 == 0.0) {
    // dressed states are already orthogonal: retain, rotate, measure
    res.host_site = s.cursor(wire);
    s.retain_site(wire);
    int axor = recover(vmap).x_power;
    if (s.cursor(wire) > wr.length())
      throw std::runtime_error(fmt::format(
          "localize: wire {} exhausted before the distinguishing measurement", wire));
    auto mop = basis_measurement(wire, s.cursor(wire), m, "basis:m", {"m0", "m1"});
    const auto& rec = s.apply_measurement(mop);
    res.frame = acc;
    res.frame.z_power ^= rec.outcome ^ axor;
    res.frame.basis_tag = "m";
    res.succeeded = true;
    res.trials_used = 1;
    res.transcript_last = static_cast<int>(s.transcript().size());
    return res;
  }

  int l = required_trials(epsilon, canon.r1);
  FilterPOVM filt = build_filter(canon.r1);

  bool pinned = false;
  while (res.trials_phase1 < l && !pinned) {
    ++res.trials_phase1;
    int col = s.cursor(wire);
    s.retain_site(wire);
    const auto& rec = s.apply_measurement(filter_measurement(wire, col, filt, m));
    if (rec.outcome == 0) {
      pinned = true;
      res.host_site = col;
    } else {
      // site factored out onto |chi> and dropped; undo the output-basis twist
      acc = compose_frames(recover(vprime), acc);
    }
  }
  res.trials_used = res.trials_phase1;
  if (!pinned) {
    res.frame = acc;
    res.note = "host filter budget exhausted";
    res.transcript_last = static_cast<int>(s.transcript().size());
    return res;
  }

  int axor = recover(vmap).x_power;

  int final_outcome = -1;
  while (res.trials_phase2 < l && final_outcome < 0) {
    ++res.trials_phase2;
    int col = s.cursor(wire);
    s.retain_site(wire);
    const auto& rec = s.apply_measurement(filter_measurement(wire, col, filt, m));
    if (rec.outcome == 0) {
      std::vector<ComplexMatrix> proj = {m.col(0) * m.col(0).adjoint(),
                                         m.col(1) * m.col(1).adjoint()};
      auto mop = retained_povm(wire, col, proj, "basis:m", {"m0", "m1"});
      final_outcome = s.apply_measurement(mop).outcome;
    } else {
      axor ^= recover(vprime).x_power;
    }
  }
  res.trials_used = res.trials_phase1 + res.trials_phase2;
  if (final_outcome < 0) {
    res.frame = acc;
    res.note = "distinguishing filter budget exhausted";
    res.transcript_last = static_cast<int>(s.transcript().size());
    return res;
  }

  res.frame = acc;
  res.frame.z_power ^= final_outcome ^ axor;
  res.frame.basis_tag = "m";
  res.succeeded = true;
  res.transcript_last = static_cast<int>(s.transcript().size());
  return res;
}

}  // namespace detail

// weight fraction of the host site along the frame-predicted physical state
inline double localized_fidelity(const SimState& s, const LocalizationResult& res,
                                 const StateVector& logical_target) {
  const WireResource& wr = s.web().wires.at(res.wire);
  StateVector raw = res.frame.correction() * logical_target;
  StateVector phys = (wr.canonical->m_basis * raw).normalized();
  ComplexMatrix rho = s.retained_density(s.retained_position(res.wire, res.host_site));
  double tr = std::real(rho.trace());
  if (tr < 1e-280) throw std::runtime_error("localized_fidelity: zero-weight branch");
  return std::real(phys.dot(rho * phys)) / tr;
}

// Two-step localization for wires whose dressed basis is already orthogonal
// (r1 = 0): prepare, retain the host site, rotate the output basis onto
// {|+>,|->}, and measure the next site in the {|m_s>} basis.
inline LocalizationResult localize_simple(SimState& s, int wire,
                                          const MeasurementPattern& prep) {
  const WireResource& wr = s.web().wires.at(wire);
  if (!wr.canonical)
    throw std::domain_error("localize_simple: wire has no canonical description");
  if (wr.canonical->r1 != 0.0)
    throw std::domain_error(fmt::format(
        "localize_simple: wire has r1 = {}; the filter protocol is required",
        wr.canonical->r1));
  auto ex = run_pattern(s, wire, prep);
  if (!ex.succeeded)
    throw std::runtime_error(
        fmt::format("localize_simple: preparation failed ({})", ex.failure_reason));
  auto res = detail::localize_core(s, wire, ex.frame, 0.5);
  res.fidelity = localized_fidelity(s, res, StateVector(prep.target * wr.left));
  return res;
}

// Repeat-until-success localization for general canonical wires: each phase
// filters freshly retained sites until one passes, with at most
// required_trials(epsilon, r1) attempts per phase.
inline LocalizationResult localize_general(SimState& s, int wire,
                                           const MeasurementPattern& prep,
                                           double epsilon) {
  const WireResource& wr = s.web().wires.at(wire);
  if (!wr.canonical)
    throw std::domain_error("localize_general: wire has no canonical description");
  if (wr.canonical->r1 == 0.0) return localize_simple(s, wire, prep);
  auto ex = run_pattern(s, wire, prep);
  if (!ex.succeeded)
    throw std::runtime_error(
        fmt::format("localize_general: preparation failed ({})", ex.failure_reason));
  auto res = detail::localize_core(s, wire, ex.frame, epsilon);
  if (res.succeeded)
    res.fidelity = localized_fidelity(s, res, StateVector(prep.target * wr.left));
  return res;
}

// logical single-qubit state held by the host site, frame-corrected
inline StateVector decode_output(const LocalizationResult& res, const SimState& s) {
  if (!res.succeeded)
    throw std::invalid_argument("decode_output: localization did not succeed");
  const WireResource& wr = s.web().wires.at(res.wire);
  ComplexMatrix rho = s.retained_density(s.retained_position(res.wire, res.host_site));
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(rho);
  double tr = std::real(rho.trace());
  if (tr < 1e-280) throw std::runtime_error("decode_output: zero-weight branch");
  if (es.eigenvalues()(1) / tr < 1.0 - 1e-9)
    throw std::runtime_error(fmt::format(
        "decode_output: host site is not decoupled (purity {:.3e})",
        es.eigenvalues()(1) / tr));
  StateVector logical = wr.canonical->m_basis.adjoint() * es.eigenvectors().col(1);
  logical = res.frame.correction().adjoint() * logical;
  return logical.normalized();
}

namespace detail {

inline bool is_cz(const ComplexMatrix& op) {
  ComplexMatrix cz = ComplexMatrix::Identity(4, 4);
  cz(3, 3) = -1;
  return op.rows() == 4 && phase_aligned_distance(op, cz) < 1e-10;
}

// push an accumulated byproduct frame through a later stage's target: the
// stage realizes pauli(f)*U, so U pauli(acc) U^dag must again be a Pauli
inline PauliFrame conjugate_frame(const ComplexMatrix& u, const PauliFrame& f) {
  if (!(f.x_power & 1) && !(f.z_power & 1)) return f;
  ComplexMatrix pushed = u * f.correction() * u.adjoint();
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      if (phase_aligned_distance(pushed, gates::pauli(a, b)) < 1e-9) {
        PauliFrame out;
        out.x_power = a;
        out.z_power = b;
        return out;
      }
  throw std::invalid_argument(
      "localize_web: a preparation stage target does not propagate Pauli byproducts");
}

}  // namespace detail

// Run per-wire preparation stages in column lockstep (so inter-wire couplings
// fire between stages), then localize every wire's output independently.
// Byproduct frames are pushed through each CZ coupling as it fires. Results
// carry the joint frame-corrected fidelity against `joint_target`.
inline std::vector<LocalizationResult> localize_web(
    SimState& s, const std::vector<std::vector<MeasurementPattern>>& prep_stages,
    double epsilon, const StateVector& joint_target) {
  int m = s.wire_count();
  if (static_cast<int>(prep_stages.size()) != m)
    throw std::invalid_argument("localize_web: one pattern sequence per wire required");
  if (joint_target.size() != (1 << m))
    throw std::invalid_argument("localize_web: joint target dimension mismatch");

  std::vector<size_t> stage(m, 0);
  std::vector<std::unique_ptr<PatternRunner>> run(m);
  std::vector<PauliFrame> acc(m);
  auto settle = [&](int w) {  // open the next runnable pattern, folding finished ones
    while (true) {
      if (!run[w]) {
        if (stage[w] >= prep_stages[w].size()) return false;
        run[w] = std::make_unique<PatternRunner>(s, w, prep_stages[w][stage[w]]);
      }
      if (!run[w]->done()) return true;
      const auto& ex = run[w]->result();
      if (!ex.succeeded)
        throw std::runtime_error(fmt::format(
            "localize_web: preparation stage {} on wire {} failed ({})", stage[w], w,
            ex.failure_reason));
      acc[w] = detail::compose_frames(
          ex.frame, detail::conjugate_frame(prep_stages[w][stage[w]].target, acc[w]));
      run[w].reset();
      ++stage[w];
    }
  };
  auto at_boundary = [&](int w) { return !run[w] || run[w]->sites_consumed() == 0; };
  bool active = true;
  while (active) {
    active = false;
    for (int w = 0; w < m; ++w) {
      if (!settle(w)) continue;
      active = true;
      std::vector<char> before = s.coupling_state();
      run[w]->step();
      settle(w);
      for (size_t i = 0; i < before.size(); ++i) {
        if (before[i] || !s.coupling_state()[i]) continue;
        const auto& cp = s.web().couplings[i];
        if (!detail::is_cz(cp.op))
          throw std::invalid_argument(
              "localize_web: byproduct frames only propagate through CZ couplings");
        if (!at_boundary(cp.wire_a) || !at_boundary(cp.wire_b))
          throw std::invalid_argument(fmt::format(
              "localize_web: coupling at column {} fired inside a preparation pattern",
              cp.column));
        // CZ (X^xa Z^za x X^xb Z^zb) CZ = X^xa Z^(za^xb) x X^xb Z^(zb^xa)
        int xa = acc[cp.wire_a].x_power, xb = acc[cp.wire_b].x_power;
        acc[cp.wire_a].z_power ^= xb;
        acc[cp.wire_b].z_power ^= xa;
      }
    }
  }
  if (!s.all_couplings_applied())
    throw std::invalid_argument(
        "localize_web: a coupling column was not consumed by the preparation stages");

  std::vector<LocalizationResult> results;
  bool all_ok = true;
  for (int w = 0; w < m; ++w) {
    results.push_back(detail::localize_core(s, w, acc[w], epsilon));
    all_ok = all_ok && results.back().succeeded;
  }
  if (all_ok) {
    StateVector t = joint_target;
    std::vector<int> d(m, 2);
    for (int w = 0; w < m; ++w) {
      ComplexMatrix lift =
          s.web().wires[w].canonical->m_basis * results[w].frame.correction();
      apply_factor_op(t, d, w, lift);
    }
    t.normalize();
    ComplexMatrix rho = s.register_density();
    double joint_f = std::real(t.dot(rho * t)) / std::real(rho.trace());
    for (auto& r : results) r.fidelity = joint_f;
  }
  return results;
}

// Conservative wire length for which the trial budgets cannot exhaust it:
// both phases may spend l trials of (filter site + recovery segment) each,
// plus one segment for the output-basis rotation, plus a margin of 4.
inline int recommended_wire_length(const WireResource& wire,
                                   const MeasurementPattern& prep, double epsilon) {
  if (!wire.canonical)
    throw std::domain_error("recommended_wire_length: wire has no canonical description");
  int l = wire.canonical->r1 > 0.0 ? required_trials(epsilon, wire.canonical->r1) : 1;
  MeasurementPattern vprime = compile_output_map(wire, epsilon);
  MeasurementPattern vmap =
      compile_unitary(wire, gates::H() * wire.canonical->phi_basis.adjoint(), epsilon);
  int segment = std::max(vprime.declared_length, vmap.declared_length);
  return prep.declared_length + (2 * l + 1) * (segment + 1) + 4;
}

}  // namespace corrspace
