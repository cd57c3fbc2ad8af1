#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace subgrape;
using namespace subgrape::testing;

namespace {

// Baseline for the 2+2 toy below (plain gradient, default config); pinned +-50%.
constexpr std::size_t kToyBaselineIterations = 150;

ControlProblem single_spin_rx() {
  SpinSystem sys = parse_molecule("CHANNEL 1H 0\nSPIN H1 1H 0\n");
  auto part = singleton_partition(1);
  auto t = build_targets(sys, part, {"Rx(pi/2) H1"});
  std::vector<ChannelSpec> ch{{{"1H", Axis::x}, kDefaultBound}};
  return ControlProblem(std::move(sys), std::move(part), std::move(ch), std::move(t));
}

/// Two heteronuclear 2-spin blocks coupled by 5 Hz; Rx(pi/2) on C1 only.
ControlProblem toy_2x2() {
  SpinSystem sys = parse_molecule(
      "CHANNEL 13C 0\nCHANNEL 1H 0\n"
      "SPIN C1 13C 2500\nSPIN H1 1H 900\nSPIN C2 13C -1800\nSPIN H2 1H -1300\n"
      "J C1 H1 140\nJ C2 H2 150\nJ C1 C2 5\nJ H1 H2 5\n");
  auto part = parse_inline_partition(sys, "C1,H1;C2,H2");
  auto t = build_targets(sys, part, {"Rx(pi/2) C1"});
  return ControlProblem(sys, part, default_channel_specs(sys), t);
}

void expect_monotone_within_stages(const RunRecord& rec) {
  for (std::size_t i = 1; i < rec.iterations.size(); ++i) {
    const auto& a = rec.iterations[i - 1];
    const auto& b = rec.iterations[i];
    if (a.stage == b.stage && a.round == b.round) {
      EXPECT_GE(b.phi, a.phi) << "iteration " << b.iter;
    }
  }
}

}  // namespace

TEST(Config, Validation) {
  OptimizerConfig c;
  EXPECT_NO_THROW(validate(c));
  c.c1 = 1.0;
  EXPECT_THROW(validate(c), InputError);
  c = {};
  c.shrink = 0.0;
  EXPECT_THROW(validate(c), InputError);
  c = {};
  c.stage1_threshold = 1.5;
  EXPECT_THROW(validate(c), InputError);
  c = {};
  c.lambda0 = -1;
  EXPECT_THROW(validate(c), InputError);
}

TEST(RunStage, TrivialOptimumStopsImmediately) {
  SpinSystem sys = parse_molecule("CHANNEL 1H 0\nSPIN A 1H 0\nSPIN B 1H 0\n");
  auto part = singleton_partition(2);
  ControlProblem p(sys, part, default_channel_specs(sys), identity_targets(part));
  const OptimizationResult r = two_stage_optimize(p, zero_pulse(p.channels(), 10, 1e-5), {});
  ASSERT_EQ(r.record.iterations.size(), 1u);
  EXPECT_EQ(r.record.iterations[0].phi, 1.0);
  EXPECT_EQ(r.record.stages[0].status, RunStatus::threshold);
  EXPECT_EQ(r.record.stages[0].iterations, 0u);
  EXPECT_EQ(r.record.stages[1].status, RunStatus::skipped);
}

TEST(RunStage, SingleSpinRxConverges) {
  for (Direction d : {Direction::gradient, Direction::lbfgs}) {
    const ControlProblem p = single_spin_rx();
    OptimizerConfig cfg;
    cfg.direction = d;
    cfg.stage1_threshold = 1.0 - 1e-7;
    const auto start = random_pulse(p.channels(), 20, 1e-5, 3, 17);
    const OptimizationResult r = two_stage_optimize(p, start, cfg);
    EXPECT_TRUE(r.stage1_reached) << direction_name(d);
    EXPECT_GE(r.before.f_blocks[0], 1.0 - 1e-6) << direction_name(d);
    expect_monotone_within_stages(r.record);
    EXPECT_TRUE(r.pulse.within_bounds());
  }
}

TEST(RunStage, ToyTwoByTwoReachesThreshold) {
  const ControlProblem p = toy_2x2();
  OptimizerConfig cfg;
  cfg.lambda0 = 0.0;
  const auto start = random_pulse(p.channels(), 100, 5e-6, 8, 5);
  const OptimizationResult r = two_stage_optimize(p, start, cfg);
  const std::size_t iters = r.record.stages[0].iterations;
  std::cout << "toy 2+2 stage-1 iterations: " << iters << "\n";
  EXPECT_TRUE(r.stage1_reached);
  EXPECT_GE(r.before.product, 0.999);
  EXPECT_LE(iters, 500u);
  EXPECT_GE(iters * 2, kToyBaselineIterations);
  EXPECT_LE(iters * 2, kToyBaselineIterations * 3);
  EXPECT_EQ(r.record.stages.back().status, RunStatus::skipped);
  EXPECT_FALSE(r.after.has_value());
  expect_monotone_within_stages(r.record);
}

TEST(TwoStage, StageTwoRespectsFloorAndReducesPairTerms) {
  const ControlProblem p = toy_2x2();
  OptimizerConfig cfg;
  cfg.direction = Direction::lbfgs;
  cfg.lambda0 = 1000.0;  // lambda * pair term must outweigh product gains
  cfg.robust_target = 1e-9;
  cfg.max_lambda_rounds = 2;
  cfg.stage2_max_iters = 40;
  cfg.slack = 0.002;
  const auto start = random_pulse(p.channels(), 100, 5e-6, 8, 3);
  const OptimizationResult r = two_stage_optimize(p, start, cfg);
  ASSERT_TRUE(r.stage1_reached);
  ASSERT_TRUE(r.after.has_value());
  for (const auto& it : r.record.iterations) {
    if (it.stage == 2) {
      EXPECT_GE(it.product, cfg.stage1_threshold - cfg.slack);
    }
  }
  EXPECT_LT(r.after->pair_sum(), r.before.pair_sum());
  EXPECT_GT(r.record.stages.size(), 1u);
  expect_monotone_within_stages(r.record);
  EXPECT_TRUE(r.pulse.within_bounds());
}

TEST(TwoStage, NoInterBlockCouplingSkipsStageTwo) {
  SpinSystem sys = parse_molecule("CHANNEL 13C 0\nCHANNEL 1H 0\nSPIN A 1H 300\nSPIN B 13C -500\n");
  auto part = singleton_partition(2);
  ControlProblem p(sys, part, default_channel_specs(sys), build_targets(sys, part, {"Rx(pi/2) A"}));
  EXPECT_TRUE(p.coupled_pairs().empty());
  OptimizerConfig cfg;
  cfg.lambda0 = 5.0;
  const OptimizationResult r = two_stage_optimize(p, random_pulse(p.channels(), 30, 1e-5, 4, 2), cfg);
  EXPECT_TRUE(r.stage1_reached);
  EXPECT_EQ(r.record.stages.back().status, RunStatus::skipped);
  EXPECT_EQ(r.before.pair_sum(), 0.0);
}

TEST(TwoStage, UnreachableThresholdReportsStatus) {
  SpinSystem sys = parse_molecule("CHANNEL 1H 0\nSPIN H1 1H 0\n");
  auto part = singleton_partition(1);
  // A 2 Hz bound over 0.1 ms cannot rotate the spin by pi/2.
  std::vector<ChannelSpec> ch{{{"1H", Axis::x}, kTwoPi * 2.0}};
  ControlProblem p(sys, part, ch, build_targets(sys, part, {"Rx(pi/2) H1"}));
  OptimizerConfig cfg;
  cfg.max_iters = 50;
  const OptimizationResult r = two_stage_optimize(p, zero_pulse(p.channels(), 10, 1e-5), cfg);
  EXPECT_FALSE(r.stage1_reached);
  EXPECT_NE(r.record.stages[0].status, RunStatus::threshold);
  EXPECT_EQ(r.record.stages.back().status, RunStatus::skipped);
  EXPECT_TRUE(r.pulse.within_bounds());
  // The optimum sits on the bound.
  EXPECT_NEAR(r.pulse.amplitudes.cwiseAbs().minCoeff(), kTwoPi * 2.0, 1e-9);
}

TEST(TwoStage, Deterministic) {
  const ControlProblem p = toy_2x2();
  OptimizerConfig cfg;
  cfg.max_iters = 30;
  cfg.stage2_max_iters = 10;
  cfg.max_lambda_rounds = 1;
  cfg.stage1_threshold = 0.9;
  const auto start = random_pulse(p.channels(), 40, 5e-6, 5, 8);
  const auto a = two_stage_optimize(p, start, cfg);
  const auto b = two_stage_optimize(p, start, cfg);
  EXPECT_EQ(write_record(a.record), write_record(b.record));
  EXPECT_EQ(write_pulse(a.pulse), write_pulse(b.pulse));
}

TEST(Record, RoundTrip) {
  RunRecord rec;
  IterationRecord it;
  it.stage = 2;
  it.round = 1;
  it.iter = 7;
  it.lambda = 2.5;
  it.phi = 0.123456789012345678;
  it.product = 0.99;
  it.f_blocks = {0.995, 0.9949};
  it.f_pairs = {{{0, 1}, 1.5e-5}};
  it.step = 3.0e-3;
  it.grad_norm = 4.0;
  rec.iterations.push_back(it);
  it.iter = 9;
  it.wall_s = 1.25;
  rec.iterations.push_back(it);
  rec.stages.push_back({2, 1, 2.5, RunStatus::max_iters, 2});
  rec.max_matrix_dim = 64;
  const std::string text = write_record(rec);
  const RunRecord back = read_record(text);
  EXPECT_EQ(write_record(back), text);
  ASSERT_EQ(back.iterations.size(), 2u);
  EXPECT_EQ(back.iterations[0].phi, it.phi);
  EXPECT_EQ(back.iterations[0].f_pairs, it.f_pairs);
  EXPECT_FALSE(back.iterations[0].wall_s.has_value());
  EXPECT_EQ(back.iterations[1].wall_s, 1.25);
  EXPECT_EQ(back.max_matrix_dim, 64u);
}

TEST(Record, MalformedStreams) {
  const std::string ok = "iter stage=1 round=0 iter=0 lambda=0 phi=0.5 product=0.5 f0=0.5 step=0 gnorm=1\n";
  EXPECT_NO_THROW(read_record(ok + "run max_dim=2\n"));
  EXPECT_THROW(read_record(ok), ParseError);  // no run line
  EXPECT_THROW(read_record(ok + ok + "run max_dim=2\n"), ParseError);  // non-increasing iter
  EXPECT_THROW(read_record("iter stage=1 round=0 iter=0 phi=1\nrun max_dim=2\n"), ParseError);
  EXPECT_THROW(read_record(ok + "bogus x=1\nrun max_dim=2\n"), ParseError);
  EXPECT_THROW(read_record("iter stage=1 round=0 iter=0 lambda=0 phi=0.5 product=0.5 f0=0.5 step=0 gnorm=1 zz=3\n"
                           "run max_dim=2\n"),
               ParseError);
  EXPECT_THROW(read_record("stage stage=1 round=0 lambda=0 status=weird iterations=1\nrun max_dim=2\n"), ParseError);
}
