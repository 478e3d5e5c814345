#pragma once

#include <functional>
#include <sstream>

#include "corrspace/simulator.hpp"

namespace corrspace {

// Families the compiler can target. Both consist of branch operators of the
// form (scale) * H * diag(e^{-ia/2}, e^{ia/2}) for every attempt basis, so a
// measurement realizes a known Z-rotation sandwiched by an H.
struct CompilerFamily {
  enum class Kind { theta, cluster };
  Kind kind = Kind::cluster;
  double theta = 0.0;       // theta family only
  ComplexMatrix m_basis;    // attempt bases are expressed through |m_s>
};

inline double wrap_angle(double a) {
  a = std::remainder(a, 2 * M_PI);  // (-pi, pi]
  if (a <= -M_PI) a = M_PI;
  return a;
}

namespace detail {

inline Complex common_phase(const ComplexMatrix& a, const ComplexMatrix& b) {
  Complex tr = (b.adjoint() * a).trace();
  double m = std::abs(tr);
  return m > 1e-14 ? tr / m : Complex(1, 0);
}

}  // namespace detail

// Decide whether a wire is compilable and classify it. Throws std::domain_error
// for wires outside the supported families.
inline CompilerFamily classify_wire(const WireResource& wire) {
  if (!wire.canonical)
    throw std::domain_error("classify_wire: wire has no canonical description");
  const auto& c = *wire.canonical;
  if (phase_aligned_distance(c.phi_basis, gates::H()) > 1e-10)
    throw std::domain_error(
        "classify_wire: output basis is not Hadamard-aligned; unsupported family");
  CompilerFamily fam;
  fam.m_basis = c.m_basis;
  if (c.r1 < 1e-14) {
    fam.kind = CompilerFamily::Kind::cluster;
    return fam;
  }
  const auto& a = wire.site(1).a;
  double theta = std::atan2(a[1].norm(), a[0].norm());
  if (!(theta > 0) || theta >= M_PI / 4)
    throw std::domain_error("classify_wire: mixing angle outside (0, pi/4)");
  ComplexMatrix ref0 = std::cos(theta) * gates::H();
  ComplexMatrix ref1 = std::sin(theta) * gates::H() * gates::Z();
  Complex phase = detail::common_phase(a[0], ref0);
  if ((a[0] - phase * ref0).cwiseAbs().maxCoeff() > 1e-9 ||
      (a[1] - phase * ref1).cwiseAbs().maxCoeff() > 1e-9)
    throw std::domain_error("classify_wire: tensors not of the rotation-family form");
  fam.kind = CompilerFamily::Kind::theta;
  fam.theta = theta;
  return fam;
}

inline bool compiler_supports(const WireResource& wire) {
  try {
    classify_wire(wire);
    return true;
  } catch (const std::domain_error&) {
    return false;
  }
}

// Measurement basis whose success branch realizes H Rz(alpha0) on the
// correlation space. Column 0 is the success vector.
inline ComplexMatrix attempt_basis(const CompilerFamily& fam, double alpha0) {
  ComplexMatrix basis(2, 2);
  if (fam.kind == CompilerFamily::Kind::theta) {
    double g = std::atan2(std::sin(alpha0 / 2) * std::cos(fam.theta),
                          std::cos(alpha0 / 2) * std::sin(fam.theta));
    basis(0, 0) = std::cos(g);
    basis(1, 0) = Complex(0, 1) * std::sin(g);
    basis(0, 1) = Complex(0, 1) * std::sin(g);
    basis(1, 1) = std::cos(g);
  } else {
    // branch for (|m_0> + e^{iw}|m_1>)/sqrt(2) is (H/sqrt(2)) diag(1, e^{-iw})
    // up to a global phase; both outcomes realize alpha0 mod pi
    double w = -alpha0;
    StateVector m0 = fam.m_basis.col(0), m1 = fam.m_basis.col(1);
    basis.col(0) = (m0 + std::polar(1.0, w) * m1) / std::sqrt(2.0);
    basis.col(1) = (m0 - std::polar(1.0, w) * m1) / std::sqrt(2.0);
  }
  return basis;
}

// realized Z-rotation angle of a branch operator B where B must be
// (scale) * H * diag(e^{i p0}, e^{i p1}); returns p1 - p0 wrapped to (-pi, pi]
inline double realized_angle(const SiteTensor& t, const ComplexMatrix& basis, int outcome) {
  StateVector b = basis.col(outcome);
  ComplexMatrix branch = std::conj(b(0)) * t.a[0] + std::conj(b(1)) * t.a[1];
  ComplexMatrix m = gates::H().adjoint() * branch;
  double scale = m.norm();
  if (scale < 1e-14) throw std::runtime_error("realized_angle: vanishing branch");
  if (std::abs(m(0, 1)) > 1e-9 * scale || std::abs(m(1, 0)) > 1e-9 * scale)
    throw std::logic_error("realized_angle: branch is not a Z-rotation after H");
  if (std::abs(std::abs(m(0, 0)) - std::abs(m(1, 1))) > 1e-9 * scale)
    throw std::logic_error("realized_angle: branch is not unitary up to scale");
  return wrap_angle(std::arg(m(1, 1)) - std::arg(m(0, 0)));
}

// Compile-time sanity sweep: every attempt basis of the family must yield two
// branches that are Z-rotations of uniform magnitude (unitary up to scale).
inline void check_branch_soundness(const WireResource& wire, const CompilerFamily& fam) {
  const auto& t = wire.site(1);
  for (double alpha : {0.0, 0.37, -1.1, M_PI / 2, 2.4, M_PI}) {
    ComplexMatrix basis = attempt_basis(fam, alpha);
    require_unitary(basis, "attempt basis");
    for (int k = 0; k < 2; ++k) {
      StateVector b = basis.col(k);
      ComplexMatrix branch = std::conj(b(0)) * t.a[0] + std::conj(b(1)) * t.a[1];
      ComplexMatrix prod = branch.adjoint() * branch;
      double scale = std::real(prod.trace()) / 2.0;
      if (scale < 1e-14 || (prod - scale * ComplexMatrix::Identity(2, 2)).norm() > 1e-8)
        throw std::domain_error(
            "check_branch_soundness: branch magnitude depends on the state");
    }
    double got = realized_angle(t, basis, 0);
    if (std::abs(wrap_angle(got - alpha)) > 1e-9)
      throw std::logic_error(fmt::format(
          "check_branch_soundness: basis for angle {} realized {}", alpha, got));
  }
}

// An adaptive program: slot angles lambda_j such that the accumulated branch
// product realizes ... Rx(l4) Rz(l3) Rx(l2) Rz(l1) = target up to X^a Z^b.
struct MeasurementPattern {
  std::string family;       // "theta" | "cluster"
  double theta = 0.0;
  ComplexMatrix target;     // 2x2 unitary this pattern implements
  std::vector<double> plan;
  PauliFrame initial_frame;
  int declared_length = 0;  // site budget; adaptive runs may consume fewer
  double epsilon = 1e-9;    // per-pattern completion-failure budget
};

namespace detail {

struct Zxz {
  double l1 = 0, l2 = 0, l3 = 0;
};

inline Zxz zxz_decompose(const ComplexMatrix& c) {
  Complex det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
  ComplexMatrix su = c / std::sqrt(det);
  double ch = std::abs(su(0, 0)), sh = std::abs(su(1, 0));
  Zxz out;
  out.l2 = 2 * std::atan2(sh, ch);
  if (sh < 1e-12) {
    out.l1 = wrap_angle(2 * std::arg(su(1, 1)));
  } else if (ch < 1e-12) {
    out.l1 = wrap_angle(-2 * (std::arg(su(1, 0)) + M_PI / 2));
  } else {
    double sum = std::arg(su(1, 1));                    // (l1 + l3)/2
    double dif = -(std::arg(su(1, 0)) + M_PI / 2);      // (l1 - l3)/2
    out.l1 = wrap_angle(sum + dif);
    out.l3 = wrap_angle(sum - dif);
  }
  return out;
}

inline ComplexMatrix plan_operator(const std::vector<double>& plan) {
  ComplexMatrix w = ComplexMatrix::Identity(2, 2);
  for (double a : plan) w = (gates::H() * gates::rz(a) * w).eval();
  return w;
}

inline int slot_budget(const CompilerFamily& fam, double angle, double eps_slot) {
  if (fam.kind == CompilerFamily::Kind::cluster) return 1;
  if (std::abs(wrap_angle(angle)) < 1e-12) return 1;  // pads never miss
  double fail = std::cos(fam.theta) * std::cos(fam.theta);  // worst-case miss chance
  int tries = static_cast<int>(std::ceil(std::log(eps_slot) / std::log(fail)));
  tries = std::max(tries, 1);
  return 2 * tries - 1;  // a pad precedes every retry
}

}  // namespace detail

// Compile a single-qubit unitary into an adaptive pattern for the wire.
inline MeasurementPattern compile_unitary(const WireResource& wire, const ComplexMatrix& c,
                                          double epsilon = 1e-9) {
  require_unitary(c, "compile_unitary target");
  if (!(epsilon > 0) || epsilon >= 1)
    throw std::invalid_argument("compile_unitary: epsilon must lie in (0,1)");
  CompilerFamily fam = classify_wire(wire);
  check_branch_soundness(wire, fam);

  MeasurementPattern pat;
  pat.family = fam.kind == CompilerFamily::Kind::theta ? "theta" : "cluster";
  pat.theta = fam.theta;
  pat.target = c;
  pat.epsilon = epsilon;

  bool classified = false;
  for (int a = 0; a < 2 && !classified; ++a)
    for (int b = 0; b < 2 && !classified; ++b) {
      if (phase_aligned_distance(c, gates::pauli(a, b)) < 1e-10) {
        pat.initial_frame.x_power = a;
        pat.initial_frame.z_power = b;
        classified = true;
      }
    }
  if (!classified) {
    for (int a = 0; a < 2 && !classified; ++a)
      for (int b = 0; b < 2 && !classified; ++b) {
        ComplexMatrix d = (gates::pauli(a, b) * gates::H()).adjoint() * c;
        if (std::abs(d(0, 1)) < 1e-10 && std::abs(d(1, 0)) < 1e-10) {
          pat.initial_frame.x_power = a;
          pat.initial_frame.z_power = b;
          pat.plan = {wrap_angle(std::arg(d(1, 1)) - std::arg(d(0, 0)))};
          classified = true;
        }
      }
  }
  if (!classified) {
    auto e = detail::zxz_decompose(c);
    pat.plan = {e.l1, e.l2, e.l3, 0.0};
    // drop trailing no-op slot pairs, keeping the H count even
    while (pat.plan.size() >= 4 && std::abs(pat.plan[pat.plan.size() - 1]) < 1e-14 &&
           std::abs(pat.plan[pat.plan.size() - 2]) < 1e-14)
      pat.plan.resize(pat.plan.size() - 2);
  }

  // self-check: X^a Z^b (x) plan must reproduce the target up to phase
  ComplexMatrix rebuilt =
      gates::pauli(pat.initial_frame.x_power, pat.initial_frame.z_power) *
      detail::plan_operator(pat.plan);
  if (phase_aligned_distance(rebuilt, c) > 1e-9)
    throw std::logic_error("compile_unitary: plan reconstruction failed");

  double eps_slot = epsilon / std::max<size_t>(1, pat.plan.size());
  for (double a : pat.plan) pat.declared_length += detail::slot_budget(fam, a, eps_slot);
  return pat;
}

inline MeasurementPattern compile_rotation(const WireResource& wire, char axis, double angle,
                                           double epsilon = 1e-9) {
  if (axis == 'z') return compile_unitary(wire, gates::rz(angle), epsilon);
  if (axis == 'x') return compile_unitary(wire, gates::rx(angle), epsilon);
  throw std::invalid_argument("compile_rotation: axis must be 'z' or 'x'");
}

// pattern preparing the given single-qubit state from the wire input |0>
inline MeasurementPattern compile_prep(const WireResource& wire, const StateVector& target,
                                       double epsilon = 1e-9) {
  if (target.size() != 2) throw std::invalid_argument("compile_prep: need a qubit state");
  double n = target.norm();
  if (n < 1e-12) throw std::invalid_argument("compile_prep: zero target state");
  StateVector t = target / n;
  ComplexMatrix c(2, 2);
  c.col(0) = t;
  c(0, 1) = -std::conj(t(1));
  c(1, 1) = std::conj(t(0));
  return compile_unitary(wire, c, epsilon);
}

// pattern relabelling the output basis {|phi_s>} to the computational basis
inline MeasurementPattern compile_output_map(const WireResource& wire, double epsilon = 1e-9) {
  if (!wire.canonical) throw std::domain_error("compile_output_map: no canonical data");
  ComplexMatrix v = wire.canonical->phi_basis.adjoint();  // sum_s |s><phi_s|
  return compile_unitary(wire, v, epsilon);
}

struct PatternExecution {
  bool succeeded = false;
  std::string failure_reason;
  int sites_consumed = 0;
  PauliFrame frame;  // applied operator ~ X^a Z^b * pattern.target
};

// Incremental executor for a compiled pattern: each step() consumes exactly
// one site of the wire, so several wires' patterns can advance in lockstep.
class PatternRunner {
 public:
  PatternRunner(SimState& sim, int wire, const MeasurementPattern& pat)
      : sim_(&sim), wire_(wire), pat_(&pat) {
    const WireResource& wr = sim.web().wires.at(wire);
    fam_ = classify_wire(wr);
    std::string fam_name = fam_.kind == CompilerFamily::Kind::theta ? "theta" : "cluster";
    if (fam_name != pat.family || std::abs(fam_.theta - pat.theta) > 1e-9)
      throw std::invalid_argument(fmt::format(
          "run_pattern: pattern for family {}({:.6g}) cannot run on wire family {}({:.6g})",
          pat.family, pat.theta, fam_name, fam_.theta));
    ex_.frame = pat.initial_frame;
    if (pat_->plan.empty()) {
      ex_.succeeded = true;
      finished_ = true;
    }
  }

  bool done() const { return finished_; }
  int sites_consumed() const { return ex_.sites_consumed; }

  const PatternExecution& result() const {
    if (!finished_) throw std::logic_error("PatternRunner: pattern still running");
    return ex_;
  }

  void step(const std::function<int(const MeasurementOp&)>& chooser = {}) {
    if (finished_) throw std::logic_error("PatternRunner: pattern already finished");
    if (fresh_slot_) {
      residual_ = wrap_angle(pat_->plan[slot_]);
      fold();
      fresh_slot_ = false;
      next_pad_ = false;
    }
    int& a = ex_.frame.x_power;
    double alpha0 = next_pad_ ? 0.0 : (a ? -1.0 : 1.0) * residual_;
    if (!consume(alpha0, chooser)) {
      finished_ = true;
      return;
    }
    if (next_pad_) {  // pad keeps retries on-axis; the retry follows
      next_pad_ = false;
      return;
    }
    if (std::abs(residual_) <= ztol_) {
      ++slot_;
      fresh_slot_ = true;
      if (slot_ == pat_->plan.size()) {
        ex_.succeeded = true;
        finished_ = true;
      }
    } else {
      next_pad_ = true;
    }
  }

 private:
  static constexpr double ztol_ = 1e-10;
  SimState* sim_;
  int wire_;
  const MeasurementPattern* pat_;
  CompilerFamily fam_;
  PatternExecution ex_;
  size_t slot_ = 0;
  double residual_ = 0.0;
  bool fresh_slot_ = true;
  bool next_pad_ = false;
  bool finished_ = false;

  void fold() {
    int& b = ex_.frame.z_power;
    while (residual_ > M_PI / 2 + 1e-13) {
      residual_ -= M_PI;
      b ^= 1;
    }
    while (residual_ < -M_PI / 2 - 1e-13) {
      residual_ += M_PI;
      b ^= 1;
    }
  }

  bool consume(double alpha0, const std::function<int(const MeasurementOp&)>& chooser) {
    const WireResource& wr = sim_->web().wires.at(wire_);
    if (ex_.sites_consumed >= pat_->declared_length) {
      ex_.failure_reason = "length budget exhausted";
      return false;
    }
    if (sim_->cursor(wire_) > wr.length()) {
      ex_.failure_reason = "wire exhausted";
      return false;
    }
    ComplexMatrix basis = attempt_basis(fam_, alpha0);
    auto op = basis_measurement(wire_, sim_->cursor(wire_), basis,
                                fmt::format("attempt:{:.6g}", alpha0), {"hit", "miss"});
    int forced = chooser ? chooser(op) : -1;
    const auto& rec = sim_->apply_measurement(op, forced);
    double alpha = realized_angle(wr.site(rec.column), basis, rec.outcome);
    int& a = ex_.frame.x_power;
    int& b = ex_.frame.z_power;
    double eff = (a ? -1.0 : 1.0) * alpha;
    residual_ = wrap_angle(residual_ - eff);
    fold();
    std::swap(a, b);
    ++ex_.sites_consumed;
    return true;
  }
};

// Run a compiled pattern on the wire's upcoming sites. `chooser` (if given)
// forces outcomes; it receives the op and must return the branch index.
inline PatternExecution run_pattern(
    SimState& sim, int wire, const MeasurementPattern& pat,
    const std::function<int(const MeasurementOp&)>& chooser = {}) {
  PatternRunner runner(sim, wire, pat);
  while (!runner.done()) runner.step(chooser);
  return runner.result();
}

// --- pattern file format -----------------------------------------------------

inline std::string pattern_to_string(const MeasurementPattern& p) {
  std::string out;
  out += fmt::format("family {}\n", p.family);
  out += fmt::format("theta {:.17g}\n", p.theta);
  out += fmt::format("epsilon {:.17g}\n", p.epsilon);
  out += fmt::format("declared_length {}\n", p.declared_length);
  out += fmt::format("frame {} {}\n", p.initial_frame.x_power, p.initial_frame.z_power);
  out += fmt::format("plan {}", p.plan.size());
  for (double a : p.plan) out += fmt::format(" {:.17g}", a);
  out += "\ntarget";
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      out += fmt::format(" {:.17g} {:.17g}", p.target(i, j).real(), p.target(i, j).imag());
  out += "\n";
  return out;
}

inline MeasurementPattern pattern_from_string(const std::string& text) {
  std::istringstream in(text);
  MeasurementPattern p;
  p.target = ComplexMatrix::Zero(2, 2);
  std::string key;
  bool saw_family = false, saw_plan = false, saw_target = false;
  while (in >> key) {
    if (key == "family") {
      in >> p.family;
      saw_family = true;
    } else if (key == "theta") {
      in >> p.theta;
    } else if (key == "epsilon") {
      in >> p.epsilon;
    } else if (key == "declared_length") {
      in >> p.declared_length;
    } else if (key == "frame") {
      in >> p.initial_frame.x_power >> p.initial_frame.z_power;
    } else if (key == "plan") {
      size_t n = 0;
      in >> n;
      if (n > 64) throw std::invalid_argument("pattern_from_string: oversized plan");
      p.plan.resize(n);
      for (size_t i = 0; i < n; ++i) in >> p.plan[i];
      saw_plan = true;
    } else if (key == "target") {
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          double re, im;
          in >> re >> im;
          p.target(i, j) = Complex(re, im);
        }
      saw_target = true;
    } else {
      throw std::invalid_argument(fmt::format("pattern_from_string: unknown key '{}'", key));
    }
    if (in.fail()) throw std::invalid_argument("pattern_from_string: malformed value");
  }
  if (!saw_family || !saw_plan || !saw_target)
    throw std::invalid_argument("pattern_from_string: missing required fields");
  if (p.family != "theta" && p.family != "cluster")
    throw std::invalid_argument("pattern_from_string: unknown family");
  require_unitary(p.target, "pattern target");
  return p;
}

}  // namespace corrspace
