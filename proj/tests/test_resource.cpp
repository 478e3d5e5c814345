#include <catch2/catch_amalgamated.hpp>

#include "corrspace/resource.hpp"
#include "helpers.hpp"

using namespace corrspace;
using namespace testing_helpers;

namespace {

std::vector<std::array<ComplexMatrix, 2>> raw_sites(const WireResource& w) {
  std::vector<std::array<ComplexMatrix, 2>> out;
  for (const auto& s : w.sites) out.push_back(s.a);
  return out;
}

// Brute-force canonical search: scan measurement bases |m_0> = (cos t, e^{ip} sin t)
// for the one that makes branch 0 rank one, refine, and report (r0, r1).
struct BruteCanonical {
  double r0 = 0, r1 = 0, residual = 1e9;
};

BruteCanonical brute_canonical(const ComplexMatrix& a0_in, const ComplexMatrix& a1_in) {
  double scale = std::sqrt((a0_in.squaredNorm() + a1_in.squaredNorm()) / 2.0);
  ComplexMatrix a0 = a0_in / scale, a1 = a1_in / scale;
  // the canonical branch is B = r0 |phi_0><0|, i.e. its |1> column vanishes
  // (minimizing plain rank-oneness also finds the spurious |phi><1| branch:
  //  the |0> columns of this family are parallel by construction)
  auto branch_sigma2 = [&](double t, double p) {
    Complex u0 = std::cos(t);
    Complex u1 = std::polar(1.0, p) * std::sin(t);
    ComplexMatrix b = std::conj(u0) * a0 + std::conj(u1) * a1;
    return b.col(1).norm();
  };
  double best_t = 0, best_p = 0, best = 1e9;
  for (int i = 0; i <= 180; ++i)
    for (int j = 0; j < 360; ++j) {
      double t = i * M_PI / 180.0 / 2.0, p = j * M_PI / 180.0;
      double s = branch_sigma2(t, p);
      if (s < best) best = s, best_t = t, best_p = p;
    }
  double step_t = M_PI / 360.0, step_p = M_PI / 180.0;
  for (int round = 0; round < 40; ++round) {
    bool moved = false;
    for (auto [dt, dp] : {std::pair{step_t, 0.0}, {-step_t, 0.0}, {0.0, step_p}, {0.0, -step_p}}) {
      double s = branch_sigma2(best_t + dt, best_p + dp);
      if (s < best) best = s, best_t += dt, best_p += dp, moved = true;
    }
    if (!moved) step_t /= 2, step_p /= 2;
  }
  BruteCanonical out;
  out.residual = best;
  Complex u0 = std::cos(best_t);
  Complex u1 = std::polar(1.0, best_p) * std::sin(best_t);
  ComplexMatrix b0 = std::conj(u0) * a0 + std::conj(u1) * a1;
  out.r0 = b0.col(0).norm();
  out.r1 = std::sqrt(std::max(0.0, 1.0 - out.r0 * out.r0));
  return out;
}

}  // namespace

TEST_CASE("theta wire carries the expected tensors and canonical data") {
  double theta = M_PI / 8;
  auto w = make_theta_wire(theta, 5);
  REQUIRE(w.length() == 5);
  CHECK((w.site(1).a[0] - std::cos(theta) * gates::H()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((w.site(3).a[1] - std::sin(theta) * gates::H() * gates::Z()).cwiseAbs().maxCoeff() <
        1e-15);
  REQUIRE(w.canonical.has_value());
  const auto& c = *w.canonical;
  CHECK(c.r0 == Catch::Approx(std::sin(2 * theta)).margin(1e-15));
  CHECK(c.r1 == Catch::Approx(std::cos(2 * theta)).margin(1e-15));
  StateVector m0_expect(2), m1_expect(2);
  m0_expect << std::sin(theta), std::cos(theta);
  m1_expect << std::cos(theta), -std::sin(theta);
  CHECK((c.m_basis.col(0) - m0_expect).norm() < 1e-15);
  CHECK((c.m_basis.col(1) - m1_expect).norm() < 1e-15);
  CHECK((c.phi_basis - gates::H()).cwiseAbs().maxCoeff() < 1e-15);
  // default boundaries |0>, |+>
  CHECK(w.left(0) == Complex(1, 0));
  CHECK(std::abs(w.right(0) - Complex(1 / std::sqrt(2.0), 0)) < 1e-15);
}

TEST_CASE("wire constructors reject bad arguments") {
  CHECK_THROWS_AS(make_theta_wire(0.0, 4), std::invalid_argument);
  CHECK_THROWS_AS(make_theta_wire(-0.2, 4), std::invalid_argument);
  CHECK_THROWS_AS(make_theta_wire(M_PI / 4 + 0.01, 4), std::invalid_argument);
  CHECK_THROWS_AS(make_theta_wire(M_PI / 8, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_cluster_wire(0), std::invalid_argument);
  StateVector zero = StateVector::Zero(2);
  CHECK_THROWS_AS(make_theta_wire(M_PI / 8, 4, zero), std::invalid_argument);
  StateVector bad3(3);
  bad3 << 1, 0, 0;
  CHECK_THROWS_AS(make_cluster_wire(3, bad3), std::invalid_argument);
  ComplexMatrix not_unitary = 2.0 * gates::H();
  CHECK_THROWS_AS(make_simple_wire(not_unitary, gates::H(), 3), std::invalid_argument);
  CHECK_THROWS_AS(make_general_wire(not_unitary, 0.3, 0.4, 3), std::invalid_argument);
  CHECK_THROWS(make_theta_wire(M_PI / 8, 4).site(0));
  CHECK_THROWS(make_theta_wire(M_PI / 8, 4).site(5));
}

TEST_CASE("canonical wires satisfy the isometry sum rule") {
  auto rng = fixed_rng(11);
  std::vector<WireResource> wires;
  for (double theta : {0.1, M_PI / 8, 0.5, M_PI / 4}) wires.push_back(make_theta_wire(theta, 2));
  wires.push_back(make_cluster_wire(2));
  for (int i = 0; i < 20; ++i) {
    ComplexMatrix w_op = random_unitary(2, rng);
    std::uniform_real_distribution<double> ang(0.15, M_PI - 0.15);
    std::uniform_real_distribution<double> mix(0.15, M_PI / 2 - 0.15);
    wires.push_back(make_general_wire(w_op, ang(rng), mix(rng), 2));
    wires.push_back(make_simple_wire(random_unitary(2, rng), random_unitary(2, rng), 2));
  }
  for (const auto& w : wires) {
    const auto& a = w.site(1).a;
    ComplexMatrix sum = a[0].adjoint() * a[0] + a[1].adjoint() * a[1];
    CHECK((sum - ComplexMatrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(w.canonical.has_value());
    auto rec = w.canonical->a_raw();
    CHECK((rec[0] - a[0]).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((rec[1] - a[1]).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("cluster point snaps r1 to exactly zero") {
  auto w = make_theta_wire(M_PI / 4, 3);
  REQUIRE(w.canonical.has_value());
  CHECK(w.canonical->r1 == 0.0);
  CHECK(w.canonical->r0 == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("single-wire expansion matches the explicit matrix-product oracle") {
  auto rng = fixed_rng(21);
  for (double theta : {0.3, M_PI / 8, M_PI / 4}) {
    for (int n : {1, 2, 5, 8}) {
      auto w = make_theta_wire(theta, n);
      StateVector got = expand_state(w);
      StateVector want = naive_expand_wire(raw_sites(w), w.left, w.right);
      REQUIRE(got.size() == want.size());
      CHECK(phase_aligned_distance(got, want) < 1e-12);
    }
  }
  // custom boundaries
  StateVector l = random_state(2, rng), r = random_state(2, rng);
  auto w = make_theta_wire(0.42, 6, l, r);
  CHECK(phase_aligned_distance(expand_state(w), naive_expand_wire(raw_sites(w), l, r)) < 1e-12);
}

TEST_CASE("expansion respects per-site ordering for a non-uniform wire") {
  WireResource w;
  w.left = detail::default_left();
  w.right = detail::default_right();
  auto rng = fixed_rng(31);
  for (int c = 0; c < 5; ++c) {
    ComplexMatrix u = random_unitary(2, rng);
    std::uniform_real_distribution<double> mixd(0.2, M_PI / 2 - 0.2);
    double mix = mixd(rng);
    ComplexMatrix a0 = std::cos(mix) * u;
    ComplexMatrix a1 = std::sin(mix) * u * gates::Z();
    w.sites.push_back(SiteTensor(a0, a1));
  }
  StateVector got = expand_state(w);
  StateVector want = naive_expand_wire(raw_sites(w), w.left, w.right);
  CHECK((got - want * (want.dot(got) / std::abs(want.dot(got)))).norm() < 1e-12);
  // reversing the site order must give a different state for this wire
  WireResource rev = w;
  std::reverse(rev.sites.begin(), rev.sites.end());
  CHECK(phase_aligned_distance(expand_state(rev), got) > 1e-3);
}

TEST_CASE("cluster tensors and the pi/4 wire expand to locally equivalent states") {
  int n = 5;
  StateVector cl = expand_state(make_cluster_wire(n));
  StateVector th = expand_state(make_theta_wire(M_PI / 4, n));
  // the pi/4 wire differs by the measurement-basis rotation H on every site
  StateVector rotated = cl;
  std::vector<int> dims(n, 2);
  for (int q = 0; q < n; ++q) apply_factor_op(rotated, dims, q, gates::H());
  rotated.normalize();
  CHECK(phase_aligned_distance(rotated, th) < 1e-12);
}

TEST_CASE("canonical-form solver recovers closed-form branch weights") {
  for (double theta : {0.2, M_PI / 8, 0.6, M_PI / 4}) {
    auto w = make_theta_wire(theta, 1);
    auto canon = to_canonical(w.site(1).a[0], w.site(1).a[1]);
    CHECK(canon.r0 == Catch::Approx(std::sin(2 * theta)).margin(1e-10));
    CHECK(canon.r1 == Catch::Approx(std::abs(std::cos(2 * theta))).margin(1e-10));
    // basis columns agree up to phase
    REQUIRE(w.canonical.has_value());
    for (int col = 0; col < 2; ++col) {
      CHECK(std::abs(std::abs(canon.m_basis.col(col).dot(w.canonical->m_basis.col(col))) - 1.0) <
            1e-9);
      CHECK(std::abs(std::abs(canon.phi_basis.col(col).dot(w.canonical->phi_basis.col(col))) -
                     1.0) < 1e-9);
    }
  }
}

TEST_CASE("canonical-form solver is scale invariant and reconstructs its input") {
  auto rng = fixed_rng(41);
  for (int i = 0; i < 50; ++i) {
    ComplexMatrix w_op = random_unitary(2, rng);
    std::uniform_real_distribution<double> ang(0.1, M_PI - 0.1);
    std::uniform_real_distribution<double> mixd(0.1, M_PI / 2 - 0.1);
    std::uniform_real_distribution<double> scl(0.3, 3.0);
    double alpha = ang(rng), mix = mixd(rng), scale = scl(rng);
    ComplexMatrix phases = ComplexMatrix::Zero(2, 2);
    phases(0, 0) = std::polar(1.0, -alpha);
    phases(1, 1) = std::polar(1.0, alpha);
    ComplexMatrix a0 = scale * std::cos(mix) * w_op;
    ComplexMatrix a1 = scale * std::sin(mix) * w_op * phases;
    auto canon = to_canonical(a0, a1);
    CHECK(canon.r0 > 0.0);
    CHECK(canon.r1 >= 0.0);
    CHECK(canon.r0 * canon.r0 + canon.r1 * canon.r1 == Catch::Approx(1.0).margin(1e-10));
    CHECK(unitarity_residual(canon.m_basis) < 1e-10);
    CHECK(unitarity_residual(canon.phi_basis) < 1e-10);
    auto rec = canon.a_raw();
    CHECK((rec[0] - a0 / scale).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((rec[1] - a1 / scale).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("canonical-form solver agrees with a brute-force basis scan") {
  auto rng = fixed_rng(51);
  for (int i = 0; i < 6; ++i) {
    ComplexMatrix w_op = random_unitary(2, rng);
    std::uniform_real_distribution<double> ang(0.25, M_PI - 0.25);
    std::uniform_real_distribution<double> mixd(0.25, M_PI / 2 - 0.25);
    double alpha = ang(rng), mix = mixd(rng);
    ComplexMatrix phases = ComplexMatrix::Zero(2, 2);
    phases(0, 0) = std::polar(1.0, -alpha);
    phases(1, 1) = std::polar(1.0, alpha);
    ComplexMatrix a0 = std::cos(mix) * w_op;
    ComplexMatrix a1 = std::sin(mix) * w_op * phases;
    auto canon = to_canonical(a0, a1);
    auto brute = brute_canonical(a0, a1);
    REQUIRE(brute.residual < 1e-6);
    CHECK(canon.r0 == Catch::Approx(brute.r0).margin(1e-5));
    CHECK(canon.r1 == Catch::Approx(brute.r1).margin(1e-5));
  }
}

TEST_CASE("canonical-form solver rejects tensors outside the family") {
  auto rng = fixed_rng(61);
  // arbitrary matrices: almost surely not isometric
  CHECK_THROWS_AS(to_canonical(random_unitary(2, rng) * 0.7, random_unitary(2, rng)),
                  std::domain_error);
  // isometric but no rank-one branch: {I, X}/sqrt(2)
  ComplexMatrix a0 = gates::I2() / std::sqrt(2.0);
  ComplexMatrix a1 = gates::X() / std::sqrt(2.0);
  CHECK_THROWS_AS(to_canonical(a0, a1), std::domain_error);
  CHECK_THROWS_AS(to_canonical(ComplexMatrix::Zero(2, 2), ComplexMatrix::Zero(2, 2)),
                  std::domain_error);
  CHECK_THROWS_AS(to_canonical(ComplexMatrix::Zero(3, 3), ComplexMatrix::Zero(3, 3)),
                  std::invalid_argument);
}

TEST_CASE("web construction validates couplings and sorts them by column") {
  auto wa = make_theta_wire(M_PI / 8, 4);
  auto wb = make_cluster_wire(4);
  WebCoupling c1{0, 1, 3, cz_coupling()};
  WebCoupling c2{0, 1, 1, cz_coupling()};
  auto web = make_web({wa, wb}, {c1, c2});
  REQUIRE(web.couplings.size() == 2);
  CHECK(web.couplings[0].column == 1);
  CHECK(web.couplings[1].column == 3);
  CHECK(web.flat_index(0, 1) == 0);
  CHECK(web.flat_index(0, 4) == 3);
  CHECK(web.flat_index(1, 1) == 4);
  CHECK(web.total_sites() == 8);

  CHECK_THROWS_AS(make_web({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(make_web({wa, wb}, {WebCoupling{0, 0, 1, cz_coupling()}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_web({wa, wb}, {WebCoupling{0, 2, 1, cz_coupling()}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_web({wa, wb}, {WebCoupling{0, 1, 0, cz_coupling()}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_web({wa, wb}, {WebCoupling{0, 1, 4, cz_coupling()}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_web({wa, wb}, {WebCoupling{0, 1, 2, 2.0 * cz_coupling()}}),
                  std::invalid_argument);
}

TEST_CASE("web expansion matches the per-bitstring sweep oracle") {
  SECTION("two theta wires with CZ couplings") {
    auto wa = make_theta_wire(M_PI / 8, 3);
    auto wb = make_theta_wire(0.4, 3);
    std::vector<WebCoupling> cps = {{0, 1, 1, cz_coupling()}, {0, 1, 2, cz_coupling()}};
    auto web = make_web({wa, wb}, cps);
    StateVector got = expand_state(web);
    std::vector<NaiveCoupling> ncps;
    for (const auto& c : cps) ncps.push_back({c.wire_a, c.wire_b, c.column, c.op});
    StateVector want = naive_expand_web({raw_sites(wa), raw_sites(wb)}, {wa.left, wb.left},
                                        {wa.right, wb.right}, ncps);
    CHECK(phase_aligned_distance(got, want) < 1e-12);
  }
  SECTION("three cluster wires, generic coupling unitary") {
    auto rng = fixed_rng(71);
    auto wa = make_cluster_wire(2);
    auto wb = make_cluster_wire(2);
    auto wc = make_cluster_wire(2);
    ComplexMatrix u = random_unitary(4, rng);
    std::vector<WebCoupling> cps = {{0, 1, 1, cz_coupling()}, {1, 2, 1, u, "generic"}};
    auto web = make_web({wa, wb, wc}, cps);
    StateVector got = expand_state(web);
    std::vector<NaiveCoupling> ncps;
    for (const auto& c : cps) ncps.push_back({c.wire_a, c.wire_b, c.column, c.op});
    StateVector want =
        naive_expand_web({raw_sites(wa), raw_sites(wb), raw_sites(wc)},
                         {wa.left, wb.left, wc.left}, {wa.right, wb.right, wc.right}, ncps);
    CHECK(phase_aligned_distance(got, want) < 1e-12);
  }
  SECTION("wires of different lengths") {
    auto wa = make_theta_wire(M_PI / 8, 3);
    auto wb = make_theta_wire(M_PI / 8, 2);
    auto web = make_web({wa, wb}, {WebCoupling{0, 1, 1, cz_coupling()}});
    StateVector got = expand_state(web);
    // inline oracle: column sweep skipping exhausted wires
    int total = 5;
    StateVector want(1 << total);
    std::vector<int> dims(2, 2);
    for (Eigen::Index idx = 0; idx < want.size(); ++idx) {
      StateVector v = kron_vec(wa.left, wb.left);
      for (int c = 1; c <= 3; ++c) {
        for (int w = 0; w < 2; ++w) {
          const WireResource& wr = (w == 0) ? wa : wb;
          if (c > wr.length()) continue;
          int flat = (w == 0) ? (c - 1) : (3 + c - 1);
          int bit = (idx >> (total - 1 - flat)) & 1;
          apply_factor_op(v, dims, w, wr.site(c).a[bit]);
        }
        if (c == 1) apply_factor_op2(v, dims, 0, 1, cz_coupling());
      }
      want(idx) = kron_vec(wa.right, wb.right).dot(v);
    }
    want.normalize();
    CHECK(phase_aligned_distance(got, want) < 1e-12);
  }
}

TEST_CASE("expansion refuses oversized systems") {
  CHECK_THROWS_AS(expand_state(make_cluster_wire(21)), std::invalid_argument);
  CHECK_NOTHROW(expand_state(make_cluster_wire(10)));
  auto web = make_web({make_cluster_wire(11), make_cluster_wire(10)}, {});
  CHECK_THROWS_AS(expand_state(web), std::invalid_argument);
}
