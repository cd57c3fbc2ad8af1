#pragma once

#include "subgrape/problem.hpp"

#include <chrono>

namespace subgrape {

enum class Direction {
  gradient,  ///< steepest ascent
  lbfgs,     ///< limited-memory quasi-Newton
};

inline const char* direction_name(Direction d) { return d == Direction::gradient ? "gradient" : "lbfgs"; }

inline Direction parse_direction(std::string_view s) {
  if (s == "gradient") return Direction::gradient;
  if (s == "lbfgs") return Direction::lbfgs;
  throw InputError("unknown search direction '" + std::string(s) + "'");
}

struct OptimizerConfig {
  Direction direction = Direction::gradient;
  std::size_t lbfgs_memory = 10;
  std::size_t max_iters = 500;         ///< per stage-1 run
  std::size_t stage2_max_iters = 300;  ///< per stage-2 round
  double c1 = 1e-4;
  double shrink = 0.5;
  double grow = 2.0;
  /// First trial step moves the largest gradient entry by this fraction of the largest bound.
  double initial_step = 0.1;
  std::size_t max_backtracks = 60;
  /// Stop when max|g| * max bound falls below this.
  double grad_tol = 1e-10;
  /// Stop when an accepted step changes Phi by less than this (relative to max(1, |Phi|)).
  double phi_tol = 1e-12;

  double stage1_threshold = 0.999;
  double lambda0 = 1.0;
  double lambda_growth = 2.0;
  double robust_target = 1e-4;
  std::size_t max_lambda_rounds = 8;
  /// Stage-2 steps may not push the fidelity product below threshold - slack.
  double slack = 1e-3;

  bool record_timing = false;
};

inline void validate(const OptimizerConfig& c) {
  if (!(c.c1 > 0.0 && c.c1 < 1.0)) throw InputError("Armijo c1 must lie in (0, 1)");
  if (!(c.shrink > 0.0 && c.shrink < 1.0)) throw InputError("shrink factor must lie in (0, 1)");
  if (!(c.grow >= 1.0)) throw InputError("step growth factor must be >= 1");
  if (!(c.initial_step > 0.0)) throw InputError("initial step must be positive");
  if (!(c.stage1_threshold > 0.0 && c.stage1_threshold <= 1.0)) throw InputError("stage-1 threshold must lie in (0, 1]");
  if (!(c.lambda0 >= 0.0) || !std::isfinite(c.lambda0)) throw InputError("lambda must be finite and non-negative");
  if (!(c.lambda_growth >= 1.0)) throw InputError("lambda growth must be >= 1");
  if (!(c.robust_target > 0.0 && c.robust_target <= 1.0)) throw InputError("robustness target must lie in (0, 1]");
  if (!(c.slack >= 0.0)) throw InputError("slack must be non-negative");
}

enum class RunStatus { converged, threshold, max_iters, stalled, skipped };

inline const char* status_name(RunStatus s) {
  switch (s) {
    case RunStatus::converged: return "converged";
    case RunStatus::threshold: return "threshold";
    case RunStatus::max_iters: return "max_iters";
    case RunStatus::stalled: return "stalled";
    case RunStatus::skipped: return "skipped";
  }
  return "?";
}

inline RunStatus parse_status(std::string_view s) {
  for (auto v : {RunStatus::converged, RunStatus::threshold, RunStatus::max_iters, RunStatus::stalled, RunStatus::skipped}) {
    if (s == status_name(v)) return v;
  }
  throw InputError("unknown run status '" + std::string(s) + "'");
}

struct IterationRecord {
  int stage = 1;
  int round = 0;
  std::size_t iter = 0;  // global, strictly increasing
  double lambda = 0.0;
  double phi = 0.0;
  double product = 0.0;
  std::vector<double> f_blocks;
  std::map<BlockPair, double> f_pairs;
  double step = 0.0;
  double grad_norm = 0.0;
  std::optional<double> wall_s;

  double pair_sum() const {
    double s = 0.0;
    for (const auto& [_, v] : f_pairs) s += v;
    return s;
  }
};

struct StageSummary {
  int stage = 1;
  int round = 0;
  double lambda = 0.0;
  RunStatus status = RunStatus::converged;
  std::size_t iterations = 0;
};

struct RunRecord {
  std::vector<IterationRecord> iterations;
  std::vector<StageSummary> stages;
  std::size_t max_matrix_dim = 0;
};

struct StageOptions {
  int stage = 1;
  int round = 0;
  /// Stop once the fidelity product reaches this value.
  std::optional<double> stop_at_product;
  /// Reject steps whose fidelity product falls below this value.
  std::optional<double> product_floor;
  std::size_t max_iters = 500;
};

struct StageResult {
  PulseProgram pulse;
  FitnessReport report;
  RunStatus status = RunStatus::converged;
};

namespace detail {

inline double frob_inner(const RMatrix& a, const RMatrix& b) { return a.cwiseProduct(b).sum(); }

inline double max_bound(const PulseProgram& p) {
  double b = 0.0;
  for (const auto& c : p.channels) b = std::max(b, c.bound);
  return b;
}

}  // namespace detail

namespace detail {

/// Limited-memory BFGS ascent direction for a concave model: s = u_{k+1} - u_k,
/// y = g_k - g_{k+1}; pairs with s.y <= 0 are never stored.
class LbfgsMemory {
 public:
  explicit LbfgsMemory(std::size_t capacity) : capacity_(capacity) {}

  void clear() {
    s_.clear();
    y_.clear();
  }
  bool empty() const { return s_.empty(); }

  void push(RMatrix s, RMatrix y) {
    const double sy = frob_inner(s, y);
    if (!(sy > 1e-12 * std::sqrt(frob_inner(s, s) * frob_inner(y, y)))) return;
    if (s_.size() == capacity_) {
      s_.erase(s_.begin());
      y_.erase(y_.begin());
    }
    s_.push_back(std::move(s));
    y_.push_back(std::move(y));
  }

  RMatrix direction(const RMatrix& g) const {
    RMatrix q = g;
    std::vector<double> alpha(s_.size());
    for (std::size_t i = s_.size(); i-- > 0;) {
      alpha[i] = frob_inner(s_[i], q) / frob_inner(y_[i], s_[i]);
      q -= alpha[i] * y_[i];
    }
    const double gamma = frob_inner(s_.back(), y_.back()) / frob_inner(y_.back(), y_.back());
    q *= gamma;
    for (std::size_t i = 0; i < s_.size(); ++i) {
      const double beta = frob_inner(y_[i], q) / frob_inner(y_[i], s_[i]);
      q += (alpha[i] - beta) * s_[i];
    }
    return q;
  }

 private:
  std::size_t capacity_;
  std::vector<RMatrix> s_, y_;
};

}  // namespace detail

/// Projected ascent with Armijo backtracking on Phi. Accepted steps satisfy
/// Phi(new) >= Phi(old) + c1 <g, new - old> with <g, new - old> > 0, so Phi never
/// decreases.
inline StageResult run_stage(const ControlProblem& problem, PulseProgram pulse, const ObjectiveWeights& weights,
                             const OptimizerConfig& cfg, const StageOptions& opt, RunRecord& record) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  problem.check_pulse(pulse);
  pulse = clip(std::move(pulse));
  const double bound = detail::max_bound(pulse);

  Evaluation ev = problem.evaluate(pulse, weights);
  std::size_t dim = ev.largest_dim;
  RMatrix grad = problem.gradient(pulse, weights, ev, &dim);
  record.max_matrix_dim = std::max({record.max_matrix_dim, ev.largest_dim, dim});

  double lambda = 0.0;
  for (const auto& [_, v] : weights.lambda) lambda = std::max(lambda, v);
  std::size_t next_iter = record.iterations.empty() ? 0 : record.iterations.back().iter + 1;
  auto log = [&](double step) {
    IterationRecord it;
    it.stage = opt.stage;
    it.round = opt.round;
    it.iter = next_iter++;
    it.lambda = lambda;
    it.phi = ev.report.phi;
    it.product = ev.report.product;
    it.f_blocks = ev.report.f_blocks;
    it.f_pairs = ev.report.f_pairs;
    it.step = step;
    it.grad_norm = grad.norm();
    if (cfg.record_timing) it.wall_s = std::chrono::duration<double>(clock::now() - t0).count();
    record.iterations.push_back(std::move(it));
  };
  log(0.0);

  detail::LbfgsMemory memory(cfg.lbfgs_memory);
  double step = 0.0;  // gradient-direction step, adapted across iterations
  RunStatus status = RunStatus::max_iters;
  std::size_t iters = 0;
  auto reached = [&] { return opt.stop_at_product && ev.report.product >= *opt.stop_at_product; };
  auto vanished = [&] { return opt.stop_at_product ? RunStatus::stalled : RunStatus::converged; };

  while (true) {
    if (reached()) {
      status = RunStatus::threshold;
      break;
    }
    if (iters >= opt.max_iters) {
      status = RunStatus::max_iters;
      break;
    }
    const double gmax = grad.cwiseAbs().maxCoeff();
    if (!(gmax * bound > cfg.grad_tol)) {
      status = vanished();
      break;
    }

    // Quasi-Newton directions start from a unit step; the gradient direction
    // carries its adapted step. A failed quasi-Newton search falls back to the gradient.
    const bool quasi_newton = cfg.direction == Direction::lbfgs && !memory.empty();
    RMatrix dir = quasi_newton ? memory.direction(grad) : grad;
    double l = 1.0;
    if (!quasi_newton) {
      if (step == 0.0) step = cfg.initial_step * bound / gmax;
      l = step;
    }

    bool accepted = false;
    PulseProgram trial;
    Evaluation trial_ev;
    for (std::size_t bt = 0; bt < cfg.max_backtracks; ++bt, l *= cfg.shrink) {
      trial = pulse;
      trial.amplitudes += l * dir;
      trial = clip(std::move(trial));
      const double predicted = detail::frob_inner(grad, trial.amplitudes - pulse.amplitudes);
      if (!(predicted > 0.0)) break;  // not an ascent direction after projection
      trial_ev = problem.evaluate(trial, weights);
      const bool armijo = trial_ev.report.phi >= ev.report.phi + cfg.c1 * predicted;
      const bool floor_ok = !opt.product_floor || trial_ev.report.product >= *opt.product_floor;
      if (armijo && floor_ok) {
        accepted = true;
        break;
      }
    }
    if (!accepted && quasi_newton) {
      memory.clear();
      continue;
    }
    if (!accepted) {
      status = vanished();
      break;
    }
    const double change = trial_ev.report.phi - ev.report.phi;
    RMatrix s = trial.amplitudes - pulse.amplitudes;
    pulse = std::move(trial);
    ev = std::move(trial_ev);
    dim = ev.largest_dim;
    RMatrix next_grad = problem.gradient(pulse, weights, ev, &dim);
    record.max_matrix_dim = std::max({record.max_matrix_dim, ev.largest_dim, dim});
    RMatrix y = grad - next_grad;
    if (!quasi_newton) {
      // Next trial step: Barzilai-Borwein s.s / s.y when the curvature is concave
      // along s, else grow the accepted step.
      const double sy = detail::frob_inner(s, y);
      step = sy > 0.0 ? detail::frob_inner(s, s) / sy : l * cfg.grow;
    }
    if (cfg.direction == Direction::lbfgs) memory.push(std::move(s), std::move(y));
    grad = std::move(next_grad);
    ++iters;
    log(l);
    if (change <= cfg.phi_tol * std::max(1.0, std::abs(ev.report.phi)) && !reached()) {
      status = vanished();
      break;
    }
  }
  record.stages.push_back({opt.stage, opt.round, lambda, status, iters});
  return {std::move(pulse), std::move(ev.report), status};
}

struct OptimizationResult {
  PulseProgram pulse;
  PulseProgram stage1_pulse;
  RunRecord record;
  FitnessReport before;               ///< after stage 1
  std::optional<FitnessReport> after; ///< after stage 2; empty when skipped
  bool stage1_reached = false;
  bool robust_target_met = false;
};

inline bool robustness_met(const FitnessReport& r, double target) {
  for (const auto& [_, v] : r.f_pairs) {
    if (v > target) return false;
  }
  return true;
}

/// Stage 1 maximizes the fidelity product (lambda = 0) up to the threshold; stage 2
/// adds uniform pair weights lambda0 * growth^r until every pair term meets the
/// robustness target or the rounds run out.
inline OptimizationResult two_stage_optimize(const ControlProblem& problem, PulseProgram initial,
                                             const OptimizerConfig& cfg) {
  validate(cfg);
  OptimizationResult out;
  StageOptions s1;
  s1.stage = 1;
  s1.stop_at_product = cfg.stage1_threshold;
  s1.max_iters = cfg.max_iters;
  StageResult r1 = run_stage(problem, std::move(initial), ObjectiveWeights{}, cfg, s1, out.record);
  out.pulse = std::move(r1.pulse);
  out.stage1_pulse = out.pulse;
  out.before = r1.report;
  out.stage1_reached = r1.report.product >= cfg.stage1_threshold;

  auto skip = [&] { out.record.stages.push_back({2, 0, 0.0, RunStatus::skipped, 0}); };
  if (!out.stage1_reached || cfg.lambda0 == 0.0 || problem.coupled_pairs().empty() ||
      robustness_met(out.before, cfg.robust_target)) {
    out.robust_target_met = robustness_met(out.before, cfg.robust_target);
    skip();
    return out;
  }

  double lambda = cfg.lambda0;
  FitnessReport current = out.before;
  for (std::size_t round = 0; round < cfg.max_lambda_rounds; ++round, lambda *= cfg.lambda_growth) {
    StageOptions s2;
    s2.stage = 2;
    s2.round = static_cast<int>(round);
    s2.product_floor = cfg.stage1_threshold - cfg.slack;
    s2.max_iters = cfg.stage2_max_iters;
    StageResult r2 = run_stage(problem, std::move(out.pulse), problem.uniform_weights(lambda), cfg, s2, out.record);
    out.pulse = std::move(r2.pulse);
    current = r2.report;
    if (robustness_met(current, cfg.robust_target)) break;
  }
  out.robust_target_met = robustness_met(current, cfg.robust_target);
  out.after = current;
  return out;
}

// ---------------------------------------------------------------------------
// Record stream: one `key=value ...` line per record.
//   iter stage=1 round=0 iter=0 lambda=0 phi=.. product=.. f0=.. p0_1=.. step=.. gnorm=.. [wall=..]
//   stage stage=1 round=0 lambda=0 status=threshold iterations=12
//   run max_dim=64

inline std::string write_record(const RunRecord& rec) {
  std::string out;
  for (const auto& it : rec.iterations) {
    out += "iter stage=" + std::to_string(it.stage) + " round=" + std::to_string(it.round) +
           " iter=" + std::to_string(it.iter) + " lambda=" + detail::format_exact(it.lambda) +
           " phi=" + detail::format_exact(it.phi) + " product=" + detail::format_exact(it.product);
    for (std::size_t k = 0; k < it.f_blocks.size(); ++k) {
      out += " f" + std::to_string(k) + "=" + detail::format_exact(it.f_blocks[k]);
    }
    for (const auto& [p, v] : it.f_pairs) {
      out += " p" + std::to_string(p.first) + "_" + std::to_string(p.second) + "=" + detail::format_exact(v);
    }
    out += " step=" + detail::format_exact(it.step) + " gnorm=" + detail::format_exact(it.grad_norm);
    if (it.wall_s) out += " wall=" + detail::format_exact(*it.wall_s);
    out += "\n";
  }
  for (const auto& s : rec.stages) {
    out += "stage stage=" + std::to_string(s.stage) + " round=" + std::to_string(s.round) +
           " lambda=" + detail::format_exact(s.lambda) + " status=" + status_name(s.status) +
           " iterations=" + std::to_string(s.iterations) + "\n";
  }
  out += "run max_dim=" + std::to_string(rec.max_matrix_dim) + "\n";
  return out;
}

inline RunRecord read_record(std::string_view text) {
  RunRecord rec;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool saw_run = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    std::map<std::string, std::string> kv;
    for (std::size_t i = 1; i < tok.size(); ++i) {
      const auto eq = tok[i].find('=');
      if (eq == std::string::npos || eq == 0) throw ParseError(lineno, "expected key=value, got '" + tok[i] + "'");
      kv[tok[i].substr(0, eq)] = tok[i].substr(eq + 1);
    }
    auto take = [&](const std::string& key) {
      auto it = kv.find(key);
      if (it == kv.end()) throw ParseError(lineno, "missing field '" + key + "'");
      std::string v = it->second;
      kv.erase(it);
      return v;
    };
    auto real = [&](const std::string& key) {
      const std::string v = take(key);
      auto d = detail::parse_double(v);
      if (!d) throw ParseError(lineno, "invalid number '" + v + "' for " + key);
      return *d;
    };
    auto integer = [&](const std::string& key) {
      const std::string v = take(key);
      long long n = 0;
      auto res = std::from_chars(v.data(), v.data() + v.size(), n);
      if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || n < 0) {
        throw ParseError(lineno, "invalid integer '" + v + "' for " + key);
      }
      return static_cast<std::size_t>(n);
    };
    if (tok[0] == "iter") {
      IterationRecord it;
      it.stage = static_cast<int>(integer("stage"));
      it.round = static_cast<int>(integer("round"));
      it.iter = integer("iter");
      it.lambda = real("lambda");
      it.phi = real("phi");
      it.product = real("product");
      it.step = real("step");
      it.grad_norm = real("gnorm");
      if (kv.count("wall")) it.wall_s = real("wall");
      for (std::size_t k = 0; kv.count("f" + std::to_string(k)); ++k) it.f_blocks.push_back(real("f" + std::to_string(k)));
      for (auto i = kv.begin(); i != kv.end();) {
        const std::string& key = i->first;
        const auto us = key.find('_');
        std::size_t a = 0, b = 0;
        const bool ok = key.size() > 1 && key[0] == 'p' && us != std::string::npos &&
                        std::from_chars(key.data() + 1, key.data() + us, a).ptr == key.data() + us &&
                        std::from_chars(key.data() + us + 1, key.data() + key.size(), b).ptr == key.data() + key.size();
        if (!ok) throw ParseError(lineno, "unknown field '" + key + "'");
        auto d = detail::parse_double(i->second);
        if (!d) throw ParseError(lineno, "invalid number for " + key);
        it.f_pairs[{a, b}] = *d;
        i = kv.erase(i);
      }
      if (!rec.iterations.empty() && it.iter <= rec.iterations.back().iter) {
        throw ParseError(lineno, "iteration numbers must increase");
      }
      rec.iterations.push_back(std::move(it));
    } else if (tok[0] == "stage") {
      StageSummary s;
      s.stage = static_cast<int>(integer("stage"));
      s.round = static_cast<int>(integer("round"));
      s.lambda = real("lambda");
      try {
        s.status = parse_status(take("status"));
      } catch (const InputError& e) {
        throw ParseError(lineno, e.what());
      }
      s.iterations = integer("iterations");
      rec.stages.push_back(s);
    } else if (tok[0] == "run") {
      rec.max_matrix_dim = integer("max_dim");
      saw_run = true;
    } else {
      throw ParseError(lineno, "unknown record type '" + tok[0] + "'");
    }
    if (!kv.empty()) throw ParseError(lineno, "unknown field '" + kv.begin()->first + "'");
  }
  if (!saw_run) throw ParseError(lineno, "record stream has no 'run' line");
  return rec;
}

}  // namespace subgrape
