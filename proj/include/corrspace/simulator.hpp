#pragma once

#include <deque>
#include <random>

#include "corrspace/resource.hpp"

namespace corrspace {

// A measurement acting either on the wire's next unconsumed column (a
// complete rank-one basis, which consumes the site) or on a previously
// retained site (an arbitrary complete Kraus list).
struct MeasurementOp {
  int wire = 0;
  int column = 0;
  bool on_retained = false;
  ComplexMatrix basis;                // cursor ops: columns are outcome vectors
  std::vector<ComplexMatrix> kraus;   // retained ops
  std::string label;
  std::vector<std::string> outcome_labels;

  int outcome_count() const { return on_retained ? static_cast<int>(kraus.size()) : 2; }

  std::string outcome_name(int k) const {
    if (k >= 0 && k < static_cast<int>(outcome_labels.size())) return outcome_labels[k];
    return std::to_string(k);
  }
};

inline MeasurementOp basis_measurement(int wire, int column, const ComplexMatrix& basis,
                                       std::string label,
                                       std::vector<std::string> outcome_labels = {}) {
  require_unitary(basis, fmt::format("measurement basis '{}'", label));
  MeasurementOp op;
  op.wire = wire;
  op.column = column;
  op.basis = basis;
  op.label = std::move(label);
  op.outcome_labels = std::move(outcome_labels);
  return op;
}

inline MeasurementOp retained_povm(int wire, int column, std::vector<ComplexMatrix> kraus,
                                   std::string label,
                                   std::vector<std::string> outcome_labels = {}) {
  if (kraus.empty()) throw std::invalid_argument("retained_povm: empty Kraus list");
  ComplexMatrix sum = ComplexMatrix::Zero(2, 2);
  for (const auto& k : kraus) {
    if (k.rows() != 2 || k.cols() != 2)
      throw std::invalid_argument("retained_povm: Kraus operators must be 2x2");
    require_finite(k, "retained_povm");
    sum += k.adjoint() * k;
  }
  if ((sum - ComplexMatrix::Identity(2, 2)).cwiseAbs().maxCoeff() > 1e-8)
    throw std::invalid_argument(
        fmt::format("retained_povm '{}': Kraus list is not complete", label));
  MeasurementOp op;
  op.wire = wire;
  op.column = column;
  op.on_retained = true;
  op.kraus = std::move(kraus);
  op.label = std::move(label);
  op.outcome_labels = std::move(outcome_labels);
  return op;
}

inline MeasurementOp computational_measurement(int wire, int column) {
  return basis_measurement(wire, column, ComplexMatrix::Identity(2, 2), "basis:comp",
                           {"0", "1"});
}

struct PauliFrame {
  int x_power = 0;  // 0 or 1
  int z_power = 0;
  std::string basis_tag = "comp";

  ComplexMatrix correction() const { return gates::pauli(x_power, z_power); }
};

struct TranscriptRecord {
  enum class Kind { measure, retain, coupling };
  Kind kind = Kind::measure;
  int wire = 0;
  int wire_b = -1;  // couplings only
  int column = 0;
  std::string op_label;
  int outcome = -1;
  std::string outcome_label;
  double probability = 1.0;
};

inline std::string transcript_line(const TranscriptRecord& r) {
  switch (r.kind) {
    case TranscriptRecord::Kind::retain:
      return fmt::format("retain wire={} column={}", r.wire, r.column);
    case TranscriptRecord::Kind::coupling:
      return fmt::format("coupling wires={},{} column={} op={}", r.wire, r.wire_b, r.column,
                         r.op_label);
    default:
      return fmt::format("measure wire={} column={} op={} outcome={} label={} p={:.12g}",
                         r.wire, r.column, r.op_label, r.outcome, r.outcome_label,
                         r.probability);
  }
}

// Replayable event: what was done, and for measurements which branch was taken.
struct HistoryEvent {
  enum class Kind { measure, retain };
  Kind kind = Kind::measure;
  MeasurementOp op;  // unused for retain beyond wire
  int wire = 0;
  int outcome = -1;
};

class SimState {
 public:
  struct RetainedSite {
    int wire = 0;
    int column = 0;
  };

  SimState(std::shared_ptr<const WebResource> web, std::mt19937_64 rng)
      : web_(std::move(web)), rng_(rng) {
    if (!web_ || web_->wire_count() == 0)
      throw std::invalid_argument("SimState: empty resource");
    int m = web_->wire_count();
    cursor_.assign(m, 1);
    frames_.assign(m, PauliFrame{});
    coupling_applied_.assign(web_->couplings.size(), 0);
    joint_ = web_->wires[0].left;
    for (int w = 1; w < m; ++w) joint_ = kron_vec(joint_, web_->wires[w].left);
    build_env_cache();
    renormalize();
  }

  const WebResource& web() const { return *web_; }
  int wire_count() const { return web_->wire_count(); }
  int cursor(int wire) const { return cursor_.at(wire); }
  int remaining(int wire) const { return web_->wires[wire].length() - cursor_.at(wire) + 1; }
  const std::vector<RetainedSite>& retained() const { return retained_; }
  const std::vector<TranscriptRecord>& transcript() const { return transcript_; }
  const std::vector<HistoryEvent>& history() const { return history_; }
  const StateVector& joint() const { return joint_; }
  double branch_probability() const { return branch_probability_; }
  PauliFrame& frame(int wire) { return frames_.at(wire); }
  const PauliFrame& frame(int wire) const { return frames_.at(wire); }
  std::mt19937_64& rng() { return rng_; }

  int corr_dim() const { return 1 << wire_count(); }

  std::vector<int> dims() const {
    std::vector<int> d(retained_.size() + wire_count(), 2);
    return d;
  }

  // suffix environment of the not-yet-consumed network on the joint
  // correlation space, given per-wire cursors and coupling flags
  ComplexMatrix environment(const std::vector<int>& cursors,
                            const std::vector<char>& applied) const {
    int m = wire_count();
    bool pending = false;
    for (size_t i = 0; i < applied.size(); ++i)
      if (!applied[i]) pending = true;
    if (!pending) {
      ComplexMatrix env = env_cache_[0][cursors[0]];
      for (int w = 1; w < m; ++w)
        env = kron(env, env_cache_[w][cursors[w]]).eval();
      return env;
    }
    int cmax = 0;
    for (int w = 0; w < m; ++w) cmax = std::max(cmax, web_->wires[w].length());
    ComplexMatrix g = boundary_projector(0);
    for (int w = 1; w < m; ++w) g = kron(g, boundary_projector(w)).eval();
    std::vector<int> cdims(m, 2);
    for (int c = cmax; c >= 1; --c) {
      for (size_t i = web_->couplings.size(); i-- > 0;) {
        const auto& cp = web_->couplings[i];
        if (applied[i] || cp.column != c) continue;
        ComplexMatrix u = lift_pair(cp.op, m, cp.wire_a, cp.wire_b);
        g = (u.adjoint() * g * u).eval();
      }
      for (int w = m - 1; w >= 0; --w) {
        if (c < cursors[w] || c > web_->wires[w].length()) continue;
        const auto& t = web_->wires[w].site(c);
        ComplexMatrix next = ComplexMatrix::Zero(g.rows(), g.cols());
        for (int s = 0; s < 2; ++s) {
          ComplexMatrix lifted = lift_single(t.a[s], m, w);
          next += lifted.adjoint() * g * lifted;
        }
        g = std::move(next);
      }
    }
    return g;
  }

  ComplexMatrix environment() const { return environment(cursor_, coupling_applied_); }

  const ComplexMatrix& wire_environment(int wire, int column) const {
    return env_cache_.at(wire).at(column);
  }

  double weight() const { return weight_with(joint_, environment()); }

  std::vector<double> outcome_distribution(const MeasurementOp& op) const {
    auto [weights, total] = candidate_weights(op);
    std::vector<double> p(weights.size());
    for (size_t k = 0; k < weights.size(); ++k) p[k] = weights[k] / total;
    return p;
  }

  // forced < 0 draws from the branch distribution
  const TranscriptRecord& apply_measurement(const MeasurementOp& op, int forced = -1) {
    auto [weights, total] = candidate_weights(op);
    std::vector<double> p(weights.size());
    for (size_t k = 0; k < weights.size(); ++k) p[k] = weights[k] / total;
    int outcome;
    if (forced >= 0) {
      if (forced >= static_cast<int>(p.size()))
        throw std::invalid_argument("apply_measurement: forced outcome out of range");
      if (p[forced] < 1e-12)
        throw std::runtime_error(fmt::format(
            "apply_measurement: forced outcome {} of '{}' has vanishing probability",
            forced, op.label));
      outcome = forced;
    } else {
      outcome = static_cast<int>(sample_index(p, rng_));
    }

    size_t rec_index;  // couplings may append further records after this one
    if (op.on_retained) {
      int pos = retained_position(op.wire, op.column);
      apply_factor_op(joint_, dims(), pos, op.kraus[outcome]);
      branch_probability_ *= p[outcome];
      push_measure_record(op, outcome, p[outcome]);
      rec_index = transcript_.size() - 1;
      maybe_drop_factor(pos, op.kraus[outcome]);
    } else {
      check_cursor_op(op);
      int slot = corr_slot(op.wire);
      apply_factor_op(joint_, dims(), slot, site_branch(op, outcome));
      cursor_[op.wire] += 1;
      branch_probability_ *= p[outcome];
      push_measure_record(op, outcome, p[outcome]);
      rec_index = transcript_.size() - 1;
      fire_couplings();
    }
    renormalize();
    history_.push_back({HistoryEvent::Kind::measure, op, op.wire, outcome});
    return transcript_[rec_index];
  }

  // consume the cursor column without measuring: the site joins the register
  void retain_site(int wire) {
    if (wire < 0 || wire >= wire_count()) throw std::invalid_argument("retain_site: bad wire");
    int c = cursor_[wire];
    if (c > web_->wires[wire].length())
      throw std::runtime_error(fmt::format("retain_site: wire {} is exhausted", wire));
    int held = 0;
    for (const auto& r : retained_)
      if (r.wire == wire) ++held;
    if (held >= 2)
      throw std::runtime_error(
          fmt::format("retain_site: wire {} already holds two retained sites", wire));
    check_consume_allowed(wire, c);
    const auto& t = web_->wires[wire].site(c);
    int cd = corr_dim();
    Eigen::Index blocks = joint_.size() / cd;
    StateVector grown(joint_.size() * 2);
    auto d = dims();
    for (int s = 0; s < 2; ++s) {
      StateVector part = joint_;
      apply_factor_op(part, d, corr_slot(wire), t.a[s]);
      for (Eigen::Index b = 0; b < blocks; ++b)
        grown.segment((b * 2 + s) * cd, cd) = part.segment(b * cd, cd);
    }
    joint_ = std::move(grown);
    retained_.push_back({wire, c});
    cursor_[wire] += 1;
    TranscriptRecord rec;
    rec.kind = TranscriptRecord::Kind::retain;
    rec.wire = wire;
    rec.column = c;
    rec.op_label = "retain";
    transcript_.push_back(rec);
    history_.push_back({HistoryEvent::Kind::retain, MeasurementOp{}, wire, -1});
    fire_couplings();
    renormalize();
  }

  // the conditioned (unnormalized) dense state implied by the realized branch
  StateVector dense_reference(int max_qubits = 20) const {
    StateVector psi = expand_state(*web_, max_qubits);
    int total = web_->total_sites();
    std::vector<int> d(total, 2);
    for (const auto& ev : history_) {
      if (ev.kind != HistoryEvent::Kind::measure) continue;
      const auto& op = ev.op;
      int q = web_->flat_index(op.wire, op.column);
      ComplexMatrix k;
      if (op.on_retained) {
        k = op.kraus[ev.outcome];
      } else {
        StateVector b = op.basis.col(ev.outcome);
        k = b * b.adjoint();
      }
      apply_factor_op(psi, d, q, k);
    }
    return psi;
  }

  // total-variation gap between the simulator's branch distribution and the
  // dense-state distribution for one candidate measurement
  double oracle_probe(const MeasurementOp& op, int max_qubits = 20) const {
    auto sim_p = outcome_distribution(op);
    StateVector psi = dense_reference(max_qubits);
    double base = psi.squaredNorm();
    if (base < 1e-280) throw std::runtime_error("oracle_probe: dense branch has zero weight");
    int total = web_->total_sites();
    std::vector<int> d(total, 2);
    int q = web_->flat_index(op.wire, op.column);
    double tv = 0;
    for (int k = 0; k < op.outcome_count(); ++k) {
      ComplexMatrix kr;
      if (op.on_retained) {
        kr = op.kraus[k];
      } else {
        StateVector b = op.basis.col(k);
        kr = b * b.adjoint();
      }
      StateVector cond = psi;
      apply_factor_op(cond, d, q, kr);
      tv += std::abs(cond.squaredNorm() / base - sim_p[k]);
    }
    return 0.5 * tv;
  }

  // whether the wire's cursor column may be consumed right now
  bool can_consume(int wire) const {
    if (cursor_[wire] > web_->wires[wire].length()) return false;
    for (size_t i = 0; i < web_->couplings.size(); ++i) {
      const auto& cp = web_->couplings[i];
      if (coupling_applied_[i]) continue;
      if ((cp.wire_a == wire || cp.wire_b == wire) && cp.column < cursor_[wire]) return false;
    }
    return true;
  }

  // worst-case probe gap over the standard probe set at the current point
  double oracle_check(int max_qubits = 20) const {
    double worst = 0;
    for (int w = 0; w < wire_count(); ++w) {
      int c = cursor_[w];
      if (can_consume(w)) {
        worst = std::max(worst, oracle_probe(computational_measurement(w, c), max_qubits));
        if (web_->wires[w].canonical) {
          auto op = basis_measurement(w, c, web_->wires[w].canonical->m_basis, "basis:m",
                                      {"m0", "m1"});
          worst = std::max(worst, oracle_probe(op, max_qubits));
        }
      }
    }
    for (const auto& r : retained_) {
      StateVector e0(2), e1(2);
      e0 << 1, 0;
      e1 << 0, 1;
      std::vector<ComplexMatrix> kraus = {e0 * e0.adjoint(), e1 * e1.adjoint()};
      auto op = retained_povm(r.wire, r.column, kraus, "probe:comp", {"0", "1"});
      worst = std::max(worst, oracle_probe(op, max_qubits));
    }
    return worst;
  }

  int retained_position(int wire, int column) const {
    for (size_t i = 0; i < retained_.size(); ++i)
      if (retained_[i].wire == wire && retained_[i].column == column)
        return static_cast<int>(i);
    throw std::invalid_argument(
        fmt::format("no retained site at wire={} column={}", wire, column));
  }

  // environment-weighted reduced density matrix of one retained site
  ComplexMatrix retained_density(int pos) const {
    if (pos < 0 || pos >= static_cast<int>(retained_.size()))
      throw std::invalid_argument("retained_density: bad register position");
    return factor_density(pos, environment());
  }

  // environment-weighted density matrix of the whole retained register
  ComplexMatrix register_density() const {
    ComplexMatrix env = environment();
    int cd = corr_dim();
    Eigen::Index m = joint_.size() / cd;
    ComplexMatrix rho(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j)
        rho(j, i) = joint_.segment(i * cd, cd).dot(env * joint_.segment(j * cd, cd));
    return rho;
  }

  const std::vector<char>& coupling_state() const { return coupling_applied_; }

  bool all_couplings_applied() const {
    for (char f : coupling_applied_)
      if (!f) return false;
    return true;
  }

 private:
  std::shared_ptr<const WebResource> web_;
  std::vector<std::vector<ComplexMatrix>> env_cache_;  // [wire][column 1..N+1]
  std::vector<int> cursor_;
  std::vector<char> coupling_applied_;
  std::vector<RetainedSite> retained_;
  StateVector joint_;
  double branch_probability_ = 1.0;
  std::vector<TranscriptRecord> transcript_;
  std::vector<HistoryEvent> history_;
  std::vector<PauliFrame> frames_;
  std::mt19937_64 rng_;

  int corr_slot(int wire) const { return static_cast<int>(retained_.size()) + wire; }

  ComplexMatrix boundary_projector(int wire) const {
    const StateVector& r = web_->wires[wire].right;
    return r * r.adjoint();
  }

  void build_env_cache() {
    env_cache_.clear();
    for (const auto& wire : web_->wires) {
      int n = wire.length();
      std::vector<ComplexMatrix> envs(n + 2);
      envs[n + 1] = wire.right * wire.right.adjoint();
      for (int c = n; c >= 1; --c) {
        const auto& t = wire.site(c);
        envs[c] = t.a[0].adjoint() * envs[c + 1] * t.a[0] +
                  t.a[1].adjoint() * envs[c + 1] * t.a[1];
      }
      env_cache_.push_back(std::move(envs));
    }
  }

  static ComplexMatrix lift_single(const ComplexMatrix& op, int m, int slot) {
    ComplexMatrix out = (slot == 0) ? op : ComplexMatrix::Identity(1 << slot, 1 << slot);
    if (slot != 0) out = kron(out, op).eval();
    int rest = m - slot - 1;
    if (rest > 0) out = kron(out, ComplexMatrix::Identity(1 << rest, 1 << rest)).eval();
    return out;
  }

  static ComplexMatrix lift_pair(const ComplexMatrix& op, int m, int a, int b) {
    int dim = 1 << m;
    ComplexMatrix out = ComplexMatrix::Zero(dim, dim);
    std::vector<int> d(m, 2);
    for (int col = 0; col < dim; ++col) {
      StateVector v = StateVector::Zero(dim);
      v(col) = 1;
      apply_factor_op2(v, d, a, b, op);
      out.col(col) = v;
    }
    return out;
  }

  double weight_with(const StateVector& v, const ComplexMatrix& env) const {
    int cd = corr_dim();
    Eigen::Index blocks = v.size() / cd;
    double total = 0;
    for (Eigen::Index b = 0; b < blocks; ++b) {
      auto seg = v.segment(b * cd, cd);
      total += std::real(seg.dot(env * seg));  // seg.dot conjugates seg
    }
    return total;
  }

  ComplexMatrix site_branch(const MeasurementOp& op, int outcome) const {
    const auto& t = web_->wires[op.wire].site(op.column);
    StateVector b = op.basis.col(outcome);
    return std::conj(b(0)) * t.a[0] + std::conj(b(1)) * t.a[1];
  }

  void check_cursor_op(const MeasurementOp& op) const {
    if (op.wire < 0 || op.wire >= wire_count())
      throw std::invalid_argument("measurement wire out of range");
    if (cursor_[op.wire] > web_->wires[op.wire].length())
      throw std::runtime_error(fmt::format("wire {} is exhausted", op.wire));
    if (op.column != cursor_[op.wire])
      throw std::invalid_argument(
          fmt::format("wire {} must consume column {} next, not {}", op.wire,
                      cursor_[op.wire], op.column));
    check_consume_allowed(op.wire, op.column);
  }

  void check_consume_allowed(int wire, int column) const {
    for (size_t i = 0; i < web_->couplings.size(); ++i) {
      const auto& cp = web_->couplings[i];
      if (coupling_applied_[i]) continue;
      if ((cp.wire_a == wire || cp.wire_b == wire) && cp.column < column)
        throw std::runtime_error(fmt::format(
            "wire {} cannot pass column {}: coupling at column {} with wire {} is pending",
            wire, column, cp.column, cp.wire_a == wire ? cp.wire_b : cp.wire_a));
    }
  }

  std::pair<std::vector<double>, double> candidate_weights(const MeasurementOp& op) const {
    std::vector<double> weights;
    if (op.on_retained) {
      int pos = retained_position(op.wire, op.column);
      ComplexMatrix env = environment();
      auto d = dims();
      for (const auto& k : op.kraus) {
        StateVector cand = joint_;
        apply_factor_op(cand, d, pos, k);
        weights.push_back(weight_with(cand, env));
      }
    } else {
      check_cursor_op(op);
      std::vector<int> cands = cursor_;
      cands[op.wire] += 1;
      ComplexMatrix env = environment(cands, coupling_applied_);
      auto d = dims();
      for (int k = 0; k < 2; ++k) {
        StateVector cand = joint_;
        apply_factor_op(cand, d, corr_slot(op.wire), site_branch(op, k));
        weights.push_back(weight_with(cand, env));
      }
    }
    double total = 0;
    for (double w : weights) total += w;
    if (total < 1e-280)
      throw std::runtime_error(
          fmt::format("measurement '{}': branch has zero total weight", op.label));
    return {weights, total};
  }

  void push_measure_record(const MeasurementOp& op, int outcome, double p) {
    TranscriptRecord rec;
    rec.wire = op.wire;
    rec.column = op.column;
    rec.op_label = op.label;
    rec.outcome = outcome;
    rec.outcome_label = op.outcome_name(outcome);
    rec.probability = p;
    transcript_.push_back(rec);
  }

  void fire_couplings() {
    for (size_t i = 0; i < web_->couplings.size(); ++i) {
      if (coupling_applied_[i]) continue;
      const auto& cp = web_->couplings[i];
      if (cursor_[cp.wire_a] > cp.column && cursor_[cp.wire_b] > cp.column) {
        apply_factor_op2(joint_, dims(), corr_slot(cp.wire_a), corr_slot(cp.wire_b), cp.op);
        coupling_applied_[i] = 1;
        TranscriptRecord rec;
        rec.kind = TranscriptRecord::Kind::coupling;
        rec.wire = cp.wire_a;
        rec.wire_b = cp.wire_b;
        rec.column = cp.column;
        rec.op_label = cp.label;
        transcript_.push_back(rec);
      }
    }
  }

  // after a rank-one Kraus outcome the retained site factors out; verify and
  // remove it from the register
  void maybe_drop_factor(int pos, const ComplexMatrix& kraus) {
    Eigen::JacobiSVD<ComplexMatrix> svd(kraus);
    if (svd.singularValues()(1) > 1e-12 * svd.singularValues()(0)) return;
    ComplexMatrix env = environment();
    ComplexMatrix rho = factor_density(pos, env);
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(rho);
    double trace = std::real(rho.trace());
    double top = es.eigenvalues()(1);
    if (trace < 1e-280)
      throw std::runtime_error("measurement branch has zero weight after Kraus update");
    if (top / trace < 1.0 - 1e-10)
      throw std::logic_error(fmt::format(
          "retained site failed to factor out (purity {:.3e})", top / trace));
    StateVector pure = es.eigenvectors().col(1);
    drop_factor(pos, pure);
  }

  ComplexMatrix factor_density(int pos, const ComplexMatrix& env) const {
    auto d = dims();
    int cd = corr_dim();
    Eigen::Index post = cd;
    for (size_t i = pos + 1; i + wire_count() < d.size(); ++i) post *= 2;
    Eigen::Index pre = joint_.size() / (post * 2);
    ComplexMatrix rho = ComplexMatrix::Zero(2, 2);
    for (Eigen::Index pr = 0; pr < pre; ++pr)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (Eigen::Index po = 0; po < post / cd; ++po) {
            auto seg_a = joint_.segment(((pr * 2 + a) * (post / cd) + po) * cd, cd);
            auto seg_b = joint_.segment(((pr * 2 + b) * (post / cd) + po) * cd, cd);
            rho(b, a) += seg_a.dot(env * seg_b);  // dot conjugates seg_a
          }
    return rho;
  }

  void drop_factor(int pos, const StateVector& pure) {
    auto d = dims();
    int cd = corr_dim();
    Eigen::Index post = cd;
    for (size_t i = pos + 1; i + wire_count() < d.size(); ++i) post *= 2;
    Eigen::Index pre = joint_.size() / (post * 2);
    StateVector out(joint_.size() / 2);
    for (Eigen::Index pr = 0; pr < pre; ++pr)
      for (Eigen::Index po = 0; po < post; ++po) {
        Complex amp = 0;
        for (int a = 0; a < 2; ++a)
          amp += std::conj(pure(a)) * joint_((pr * 2 + a) * post + po);
        out(pr * post + po) = amp;
      }
    joint_ = std::move(out);
    retained_.erase(retained_.begin() + pos);
  }

  void renormalize() {
    double w = weight();
    if (w < 1e-280) throw std::runtime_error("simulator state has zero weight");
    joint_ /= std::sqrt(w);
  }
};

// deterministic re-execution of a recorded run
inline SimState replay(std::shared_ptr<const WebResource> web,
                       const std::vector<HistoryEvent>& history) {
  SimState sim(std::move(web), std::mt19937_64(0));
  for (const auto& ev : history) {
    if (ev.kind == HistoryEvent::Kind::retain)
      sim.retain_site(ev.wire);
    else
      sim.apply_measurement(ev.op, ev.outcome);
  }
  return sim;
}

}  // namespace corrspace
