// Acceptance checks, one line per criterion. Criterion 7 (12 spins) runs only with
// --extended; --big additionally verifies it on the full 4096-dim register.

#include "test_util.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>

using namespace subgrape;
using namespace subgrape::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. Product of subsystem fidelities equals the full fidelity when inter-block couplings vanish.
Outcome factorization() {
  Rng rng(1001);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(7);
    SpinSystem sys = random_system(rng, n);
    auto part = random_partition(rng, sys, 4);
    auto t = random_targets(rng, part);
    SpinSystem local = without_inter_block(sys, part);
    ControlProblem p(local, part, default_channel_specs(local), t);
    const auto pulse = random_problem_pulse(rng, p, 4 + rng.index(12), 5e-6);
    const double f = p.evaluate(pulse, {}).report.product;
    const double F = full_fidelity(full_propagate(local, pulse), t, part);
    worst = std::max(worst, std::abs(F - f));
  }
  return {worst < 1e-9, "max |F - prod f| = " + num(worst) + " over 50 systems"};
}

// 2. Van Loan D against Dyson quadrature and against perturbed-propagator differences.
Outcome van_loan() {
  Rng rng(1002);
  double worst_quad = 0.0, worst_fd = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    ControlProblem p = random_pair_problem(rng);
    const std::size_t m = 5 + rng.index(46);
    const auto pulse = random_problem_pulse(rng, p, m, 2e-7);
    const auto ev = p.evaluate(pulse, p.uniform_weights(1.0));
    const CMatrix d = std::get<SpectralEvaluation>(ev.cache).pairs.at({0, 1}).d();
    p.engine = Engine::reference;
    const CMatrix d_ref = std::get<ReferenceEvaluation>(p.evaluate(pulse, p.uniform_weights(1.0)).cache).states.at({0, 1}).d;
    const PairSpace ps = pair_space(p, {0, 1});
    const CMatrix quad = directional_derivative_quadrature(ps.h_static, ps.control_ptrs(), ps.h_pair, pulse, 40);
    const double eps = 1e-6 / (ps.h_pair.cwiseAbs().diagonal().maxCoeff() * pulse.duration());
    const CMatrix fd = perturbation_derivative(ps, pulse, eps);
    for (const CMatrix* x : {&d, &d_ref}) {
      worst_quad = std::max(worst_quad, rel_frob_error(*x, quad));
      worst_fd = std::max(worst_fd, rel_frob_error(*x, fd));
    }
  }
  return {worst_quad < 1e-6 && worst_fd < 1e-6,
          "max rel error vs quadrature " + num(worst_quad) + ", vs finite difference " + num(worst_fd)};
}

// 3. ||U(T, eps) - U(T) - eps D|| / eps^2 is stable across eps.
Outcome dyson_remainder() {
  Rng rng(1003);
  double worst = 1.0;
  for (int trial = 0; trial < 10; ++trial) {
    ControlProblem p = random_pair_problem(rng);
    const auto pulse = random_problem_pulse(rng, p, 10 + rng.index(41), 2.5e-5);
    const auto ev = p.evaluate(pulse, p.uniform_weights(1.0));
    const CMatrix d = std::get<SpectralEvaluation>(ev.cache).pairs.at({0, 1}).d();
    const auto samples = dyson_remainder_check(pair_space(p, {0, 1}), pulse, d, {1e-3, 1e-4, 1e-5});
    double lo = samples[0].ratio(), hi = lo;
    for (const auto& s : samples) {
      lo = std::min(lo, s.ratio());
      hi = std::max(hi, s.ratio());
    }
    worst = std::max(worst, hi / lo);
  }
  return {worst < 2.0, "max ratio spread x" + num(worst) + " over 10 instances"};
}

// 4. Exact-mode analytic gradient against central differences, nonzero lambda.
Outcome gradient_vs_fd() {
  Rng rng(1004);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    ControlProblem p = random_problem(rng, 3 + rng.index(4), 3, 2);
    const auto pulse = random_problem_pulse(rng, p, 5 + rng.index(11), 5e-6);
    const auto w = p.uniform_weights(rng.uniform(0.5, 50.0));
    const RMatrix fd = fd_gradient(p, pulse, w, 1e-6 * detail::max_bound(pulse));
    for (Engine e : {Engine::spectral, Engine::reference}) {
      p.engine = e;
      const auto ev = p.evaluate(pulse, w);
      const RMatrix g = p.gradient(pulse, w, ev);
      worst = std::max(worst, (g - fd).cwiseAbs().maxCoeff() / fd.cwiseAbs().maxCoeff());
    }
  }
  return {worst < 1e-5, "max rel error " + num(worst) + " over 10 problems, both engines"};
}

// 5. Constant u_x with u_x T = pi/4 is exactly Rx(pi/2).
Outcome analytic_pulse() {
  SpinSystem sys = parse_molecule("CHANNEL 1H 0\nSPIN H1 1H 0\n");
  auto part = singleton_partition(1);
  std::vector<ChannelSpec> ch{{{"1H", Axis::x}, kDefaultBound}};
  ControlProblem p(sys, part, ch, build_targets(sys, part, {"Rx(pi/2) H1"}));
  auto pulse = zero_pulse(ch, 25, 4e-6);
  pulse.amplitudes.setConstant(kPi / (4 * pulse.duration()));
  double worst = 0.0;
  for (Engine e : {Engine::spectral, Engine::reference}) {
    p.engine = e;
    worst = std::max(worst, std::abs(1.0 - p.evaluate(pulse, {}).report.f_blocks[0]));
  }
  return {worst < 1e-10, "|1 - f| = " + num(worst)};
}

ControlProblem desk_problem(const SpinSystem& full, const std::vector<std::string>& labels) {
  SpinSystem sys = full.subset(labels);
  auto part = make_partition(sys, *sys.partition("S4"));
  auto t = build_targets(sys, part, {"Rx(pi/2) C1"});
  return ControlProblem(sys, part, default_channel_specs(sys), t);
}

OptimizerConfig desk_config() {
  OptimizerConfig cfg;
  cfg.direction = Direction::lbfgs;
  cfg.stage1_threshold = 0.999;
  cfg.lambda0 = 64.0;
  cfg.robust_target = 1e-7;
  cfg.max_lambda_rounds = 3;
  cfg.stage2_max_iters = 100;
  cfg.slack = 0.004;
  return cfg;
}

// 6. Six-spin desk run: robust pulse keeps the full-register gap under 1% and below
//    the gap of the stage-1 pulse.
Outcome desk_six_spin() {
  const auto t0 = std::chrono::steady_clock::now();
  const ControlProblem p = desk_problem(bundled_molecule(), {"C1", "C2", "H4", "C3", "H2", "H3"});
  const auto start = random_pulse(p.channels(), 200, 5e-6, 8, 7);
  const OptimizationResult r = two_stage_optimize(p, start, desk_config());
  const auto robust = check_gap(p, r.pulse);
  const auto plain = check_gap(p, r.stage1_pulse);
  const double secs = since(t0);
  const bool pass = r.stage1_reached && robust.f >= 0.99 && robust.gap() < 0.01 && robust.gap() < plain.gap() &&
                    secs < 900.0;
  return {pass, "f = " + num(robust.f) + ", F = " + num(robust.F) + ", gap " + num(robust.gap()) +
                    " (stage-1 pulse gap " + num(plain.gap()) + "), pair sum " + num(r.before.pair_sum()) + " -> " +
                    num(r.after ? r.after->pair_sum() : r.before.pair_sum()) + ", " + num(secs) + " s"};
}

// 7. Twelve spins, four blocks: no matrix larger than 2 x 2^6 is formed.
Outcome twelve_spin(bool big) {
  const auto t0 = std::chrono::steady_clock::now();
  const SpinSystem sys = bundled_molecule();
  std::vector<std::string> all;
  for (const auto& s : sys.spins) all.push_back(s.label);
  ControlProblem p = desk_problem(sys, all);
  p.threads = default_thread_count();
  const auto start = random_pulse(p.channels(), 200, 5e-6, 8, 7);
  // Six coupled pairs make a stage-2 iteration about six times dearer than at desk scale.
  // Stage 1 stalls just short of 0.999 here (1500 iterations, 22 min), so the run
  // hands over to stage 2 at the 0.99 product floor that criterion 6 asserts.
  OptimizerConfig cfg = desk_config();
  cfg.stage1_threshold = 0.99;
  // Pair terms near 1e-4 need lambda ~ 1e3 before the penalty outweighs the product slope;
  // at 64 stage 2 raised the pair sum.
  cfg.lambda0 = 1000.0;
  cfg.max_lambda_rounds = 2;
  cfg.stage2_max_iters = 60;
  const OptimizationResult r = two_stage_optimize(p, start, cfg);
  bool pass = r.stage1_reached && r.record.max_matrix_dim <= 128 && r.after && r.after->pair_sum() < r.before.pair_sum();
  std::string detail = "max matrix dim " + std::to_string(r.record.max_matrix_dim) + ", product " +
                       num(r.after ? r.after->product : r.before.product) + ", pair sum " + num(r.before.pair_sum()) +
                       " -> " + num(r.after ? r.after->pair_sum() : r.before.pair_sum());
  if (!r.stage1_reached) detail += ", stage 1 threshold not reached";
  if (big) {
    FullOptions opt;
    opt.big = true;
    opt.threads = p.threads;
    const auto g = check_gap(p, r.pulse, opt);
    pass = pass && g.gap() < 0.02;
    detail += ", full F = " + num(g.F) + ", gap " + num(g.gap());
  }
  const double secs = since(t0);
  detail += ", " + num(secs) + " s";
  return {pass && secs < 3600.0, detail};
}

// 8. Identical seeds give byte-identical pulse and record artifacts.
Outcome determinism() {
  auto run = [] {
    const ControlProblem p = desk_problem(bundled_molecule(), {"C1", "C2", "H4", "C3", "H2", "H3"});
    OptimizerConfig cfg = desk_config();
    cfg.max_iters = 15;
    cfg.stage1_threshold = 0.9;
    cfg.stage2_max_iters = 5;
    cfg.max_lambda_rounds = 2;
    const auto r = two_stage_optimize(p, random_pulse(p.channels(), 40, 5e-6, 8, 11), cfg);
    return write_pulse(r.pulse) + "\n" + write_record(r.record);
  };
  const std::string a = run(), b = run();
  return {a == b && !a.empty(), std::to_string(a.size()) + " bytes compared"};
}

}  // namespace

int main(int argc, char** argv) {
  bool extended = false, big = false;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--extended")) extended = true;
    else if (!std::strcmp(argv[i], "--big")) extended = big = true;
    else {
      std::cerr << "usage: acceptance [--extended] [--big]\n";
      return 1;
    }
  }
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, factorization},  {2, van_loan},      {3, dyson_remainder}, {4, gradient_vs_fd},
      {5, analytic_pulse}, {6, desk_six_spin}, {8, determinism},
  };
  int failures = 0;
  auto report = [&](int id, const Outcome& o) {
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    if (!o.pass) ++failures;
  };
  for (const auto& [id, fn] : criteria) {
    try {
      report(id, fn());
    } catch (const std::exception& e) {
      report(id, {false, std::string("exception: ") + e.what()});
    }
  }
  if (extended) {
    try {
      report(7, twelve_spin(big));
    } catch (const std::exception& e) {
      report(7, {false, std::string("exception: ") + e.what()});
    }
  } else {
    std::cout << "criterion 7: SKIP  extended run (pass --extended, add --big for full verification)" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
