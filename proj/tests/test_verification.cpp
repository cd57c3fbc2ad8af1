#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace subgrape;
using namespace subgrape::testing;

namespace {

// Regression pin for the 6-spin propagator checksum below (baseline run).
const Complex kSixSpinChecksum{622.77277031962137, -251.04449088230368};

SpinSystem six_spin() { return bundled_molecule().subset({"C1", "C2", "H4", "C3", "H2", "H3"}); }

/// Position-weighted sum of entries; sensitive to any entry or ordering change.
Complex checksum(const CMatrix& u) {
  Complex s{0.0, 0.0};
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    for (Eigen::Index j = 0; j < u.cols(); ++j) s += u(i, j) * static_cast<double>((i * 31 + j * 7) % 97 + 1);
  }
  return s;
}

}  // namespace

TEST(FullPropagate, ZeroPulseSingleSlice) {
  Rng rng(81);
  const SpinSystem sys = random_system(rng, 2);
  const auto pulse = zero_pulse(default_channel_specs(sys), 1, 1e-7);
  const CMatrix u = full_propagate(sys, pulse);
  EXPECT_LT(max_abs_diff(u, expm_taylor((-kI * 1e-7) * build_full_hamiltonian(sys))), 1e-14);
  EXPECT_LT(max_abs_diff(u, CMatrix::Identity(4, 4)), 1e-2);
}

TEST(FullPropagate, WithoutCouplingFactorsIntoBlocks) {
  Rng rng(82);
  for (int trial = 0; trial < 5; ++trial) {
    SpinSystem sys = random_system(rng, 5);
    const auto part = random_partition(rng, sys, 3, 2);
    const SpinSystem local = without_inter_block(sys, part);
    ControlProblem p(local, part, default_channel_specs(local), identity_targets(part));
    const auto pulse = random_problem_pulse(rng, p, 10, 5e-6);
    const auto ev = p.evaluate(pulse, {});
    const auto& blocks = std::get<SpectralEvaluation>(ev.cache).blocks;
    TargetGate finals;
    for (const auto& b : blocks) finals.blocks.push_back(b.forward.back());
    // Oracle: embed each block's final propagator on its own sites.
    EXPECT_LT(max_abs_diff(full_propagate(local, pulse), embed_targets(finals, part)), 1e-9) << "trial " << trial;
  }
}

TEST(FullPropagate, SixSpinUnitaryDeterministicPinned) {
  const SpinSystem sys = six_spin();
  const auto pulse = random_pulse(default_channel_specs(sys), 20, 5e-6, 6, 2024);
  const CMatrix u = full_propagate(sys, pulse);
  EXPECT_TRUE(is_unitary(u, 1e-9));
  EXPECT_EQ(full_propagate(sys, pulse), u);
  const Complex c = checksum(u);
  std::cout.precision(17);
  std::cout << "six-spin checksum: " << c.real() << " " << c.imag() << "\n";
  EXPECT_LT(std::abs(c - kSixSpinChecksum), 1e-8);
}

TEST(FullPropagate, MatrixFreeMatchesDense) {
  const SpinSystem sys = six_spin();
  const auto pulse = random_pulse(default_channel_specs(sys), 10, 5e-6, 6, 5);
  FullOptions mf;
  mf.matrix_free = true;
  EXPECT_LT(max_abs_diff(full_propagate(sys, pulse, mf), full_propagate(sys, pulse)), 1e-11);
  mf.threads = 3;
  EXPECT_LT(max_abs_diff(full_propagate(sys, pulse, mf), full_propagate(sys, pulse)), 1e-11);
}

TEST(FullPropagate, Gates) {
  const SpinSystem sys = bundled_molecule();
  const auto pulse = zero_pulse(default_channel_specs(sys), 1, 1e-6);
  EXPECT_THROW(full_propagate(sys, pulse), DimensionError);  // needs big
  FullOptions opt;
  opt.big = true;
  opt.cap = 11;
  EXPECT_THROW(full_propagate(sys, pulse, opt), DimensionError);
}

TEST(FullFidelity, EmbeddedTargetsGiveOne) {
  Rng rng(83);
  const SpinSystem sys = random_system(rng, 5);
  const auto part = random_partition(rng, sys, 3, 2);
  const auto t = random_targets(rng, part);
  EXPECT_NEAR(full_fidelity(embed_targets(t, part), t, part), 1.0, 1e-12);
}

TEST(FullFidelity, IdentityTargetHandComputation) {
  Rng rng(84);
  const CMatrix u = rng.unitary(4);
  const SpinSystem sys = parse_molecule("CHANNEL 1H 0\nSPIN A 1H 0\nSPIN B 1H 0\n");
  const auto part = singleton_partition(2);
  EXPECT_NEAR(full_fidelity(u, identity_targets(part), part), std::norm(u.trace()) / 16.0, 1e-14);
}

TEST(FullFidelity, PermutationConsistency) {
  Rng rng(85);
  const CMatrix a = rng.unitary(4), b = rng.unitary(2);
  // Blocks {0, 2} and {1}: interleaved placement.
  const SpinSystem sys = parse_molecule("CHANNEL 1H 0\nSPIN A 1H 0\nSPIN B 1H 0\nSPIN C 1H 0\n");
  const auto inter = make_partition(sys, std::vector<std::vector<std::size_t>>{{0, 2}, {1}});
  const TargetGate t{{a, b}};
  // The same physical operator, built contiguously (sites A, C, B) and permuted into place.
  const CMatrix p = site_permutation({0, 2, 1});
  const CMatrix full = p * kron(a, b) * p.adjoint();
  EXPECT_LT(max_abs_diff(embed_targets(t, inter), full), 1e-14);
  const CMatrix u = rng.unitary(8);
  // Relabelling the register permutes U and the target alike; F is unchanged.
  const auto contiguous = make_partition(sys, std::vector<std::vector<std::size_t>>{{0, 1}, {2}});
  EXPECT_NEAR(full_fidelity(u, t, inter), full_fidelity(p.adjoint() * u * p, t, contiguous), 1e-14);
  EXPECT_NEAR(full_fidelity(u, t, inter), std::norm(trace_product(u, full)) / 64.0, 1e-14);
}

TEST(CheckGap, ZeroWithoutInterBlockCoupling) {
  Rng rng(86);
  SpinSystem sys = without_inter_block(six_spin(), make_partition(six_spin(), *six_spin().partition("S4")));
  auto part = make_partition(sys, *sys.partition("S4"));
  ControlProblem p(sys, part, default_channel_specs(sys), build_targets(sys, part, {"Rx(pi/2) C1"}));
  const auto r = check_gap(p, random_problem_pulse(rng, p, 20, 5e-6));
  EXPECT_NEAR(r.gap(), 0.0, 1e-9);
  EXPECT_TRUE(is_unitary(r.u_full, 1e-9));
}

TEST(CheckGap, StrongCouplingOpensGap) {
  // Zero pulse and identity targets: f = 1, while the inter-block coupling alone
  // drives F below 1 (the unperturbed product is exact only when it vanishes).
  SpinSystem sys = parse_molecule("CHANNEL 1H 0\nSPIN A 1H 0\nSPIN B 1H 0\nJ A B 200\n");
  auto part = singleton_partition(2);
  ControlProblem p(sys, part, default_channel_specs(sys), identity_targets(part));
  const auto pulse = zero_pulse(p.channels(), 10, 1e-4);
  const auto r = check_gap(p, pulse);
  EXPECT_NEAR(r.f, 1.0, 1e-14);
  // Closed form: U = exp(-i pi J T zz), F = cos^2(pi J T).
  const double phase = kPi * 200 * pulse.duration();
  EXPECT_NEAR(r.F, std::pow(std::cos(phase), 2), 1e-12);
}

TEST(FdGradient, FlatObjectiveGivesZero) {
  SpinSystem sys = parse_molecule("CHANNEL 1H 0\nSPIN A 1H 0\n");
  auto part = singleton_partition(1);
  ControlProblem p(sys, part, default_channel_specs(sys), identity_targets(part));
  const RMatrix g = fd_gradient(p, zero_pulse(p.channels(), 5, 1e-5), {}, 1e-6 * kDefaultBound);
  EXPECT_LT(g.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FdGradient, StepSizesAgreeAndLargeStepDiverges) {
  Rng rng(87);
  ControlProblem p = random_problem(rng, 4, 2, 2);
  const auto pulse = random_problem_pulse(rng, p, 8, 5e-6);
  const auto w = p.uniform_weights(1.0);
  const auto ev = p.evaluate(pulse, w);
  const RMatrix analytic = p.gradient(pulse, w, ev);
  const RMatrix g6 = fd_gradient(p, pulse, w, 1e-6 * kDefaultBound);
  const RMatrix g7 = fd_gradient(p, pulse, w, 1e-7 * kDefaultBound);
  const double scale = analytic.cwiseAbs().maxCoeff();
  EXPECT_LT((g6 - g7).cwiseAbs().maxCoeff() / scale, 1e-5);
  EXPECT_LT((g6 - analytic).cwiseAbs().maxCoeff() / scale, 1e-5);
  const RMatrix big = fd_gradient(p, pulse, w, 1e-1 * kDefaultBound);
  EXPECT_GT((big - analytic).cwiseAbs().maxCoeff() / scale, 1e-3);
  EXPECT_THROW(fd_gradient(p, pulse, w, 0.0), std::invalid_argument);
}

TEST(Dyson, NoCouplingGivesZeroRemainder) {
  Rng rng(88);
  const ControlProblem p = random_pair_problem(rng);
  PairSpace ps = pair_space(p, {0, 1});
  ps.h_pair.setZero();
  const auto pulse = random_problem_pulse(rng, p, 10, 5e-6);
  const CMatrix d = CMatrix::Zero(ps.h_pair.rows(), ps.h_pair.cols());
  for (const auto& s : dyson_remainder_check(ps, pulse, d, {1e-3, 1e-4})) EXPECT_EQ(s.remainder, 0.0);
}

TEST(Dyson, SecondOrderRemainderIsStable) {
  Rng rng(89);
  for (int trial = 0; trial < 3; ++trial) {
    const ControlProblem p = random_pair_problem(rng);
    const auto pulse = random_problem_pulse(rng, p, 40, 2.5e-5);
    const auto ev = p.evaluate(pulse, p.uniform_weights(1.0));
    const CMatrix d = std::get<SpectralEvaluation>(ev.cache).pairs.at({0, 1}).d();
    const auto samples = dyson_remainder_check(pair_space(p, {0, 1}), pulse, d, {1e-3, 1e-4, 1e-5});
    double lo = samples[0].ratio(), hi = lo;
    for (const auto& s : samples) {
      lo = std::min(lo, s.ratio());
      hi = std::max(hi, s.ratio());
    }
    EXPECT_LT(hi / lo, 2.0) << "trial " << trial;
  }
}

TEST(Dyson, CommutingClosedForm) {
  SpinSystem sys = parse_molecule("CHANNEL 1H 0\nSPIN A 1H 250\nSPIN B 1H -400\nJ A B 90\n");
  auto part = singleton_partition(2);
  ControlProblem p(sys, part, default_channel_specs(sys), identity_targets(part));
  const auto pulse = zero_pulse(p.channels(), 10, 1e-4);
  const PairSpace ps = pair_space(p, {0, 1});
  const double t = pulse.duration();
  const CMatrix d = (-kI * t) * expm_taylor((-kI * t) * ps.h_static) * ps.h_pair;
  // Every diagonal entry of H_pair is +-pi J; |exp(-i x) - 1 + i x| per entry, x = eps pi J T.
  for (const auto& s : dyson_remainder_check(ps, pulse, d, {1e-1, 1e-2, 1e-3})) {
    const double x = s.eps * kPi * 90 * t;
    const double expected = 2.0 * std::abs(std::polar(1.0, -x) - 1.0 + Complex(0.0, x));
    EXPECT_NEAR(s.remainder, expected, 1e-12 + 1e-6 * expected);
  }
}

TEST(Dyson, RejectsBadEpsilons) {
  Rng rng(90);
  const ControlProblem p = random_pair_problem(rng);
  const PairSpace ps = pair_space(p, {0, 1});
  const auto pulse = random_problem_pulse(rng, p, 3, 5e-6);
  const CMatrix d = CMatrix::Zero(ps.h_pair.rows(), ps.h_pair.cols());
  EXPECT_THROW(dyson_remainder_check(ps, pulse, d, {1e-4, 1e-3}), std::invalid_argument);
  EXPECT_THROW(dyson_remainder_check(ps, pulse, d, {0.0}), std::invalid_argument);
}
