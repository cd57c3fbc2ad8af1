// Command-line front end: optimize, verify, gradcheck, report.
//
// Exit codes: 0 success, 1 input error, 2 optimization stalled or check failed.

#include "subgrape/subgrape.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

using namespace subgrape;

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitFailed = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text, bool append = false) {
  std::ofstream out(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
}

std::string fmt(double v) { return detail::format_exact(v); }

struct JobSpec {
  std::string molecule;
  std::string spins;
  std::string partition;
  std::string drop;
  std::vector<std::string> targets;
  std::vector<std::string> target_matrices;
  std::size_t slices = 200;
  double tau = 5e-6;
  double bound_hz = 20e3;
  std::size_t modes = 8;
  std::uint64_t seed = 1;
  std::string pulse_in;
  std::string engine = "spectral";
  bool grad_approx = false;
  std::size_t threads = 0;

  void add_options(CLI::App& app) {
    app.add_option("--molecule", molecule, "Molecule file")->required();
    app.add_option("--spins", spins, "Comma-separated spin labels to keep (default: all)");
    app.add_option("--partition", partition,
                   "Partition name from the molecule file, or inline blocks 'A,B;C,D' (default: the first one)");
    app.add_option("--drop", drop, "Couplings to ignore entirely, 'L1:L2,L3:L4'");
    app.add_option("--target", targets, "Target gate, e.g. 'Rx(pi/2) C1' (repeatable, applied in order)");
    app.add_option("--target-matrix", target_matrices, "Block target from file, BLOCK=PATH (repeatable)");
    app.add_option("--slices", slices, "Number of slices M")->check(CLI::PositiveNumber);
    app.add_option("--tau", tau, "Slice duration in seconds")->check(CLI::PositiveNumber);
    app.add_option("--bound", bound_hz, "Per-channel amplitude bound in Hz (rad/s = 2*pi*Hz)")->check(CLI::NonNegativeNumber);
    app.add_option("--modes", modes, "Fourier modes of the random initial pulse")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "Random seed");
    app.add_option("--pulse-in", pulse_in, "Initial pulse file (overrides --slices/--tau/--bound/--seed)");
    app.add_option("--engine", engine, "Evaluation engine: spectral | reference");
    app.add_flag("--grad-approx", grad_approx, "First-order slice derivatives -i tau dH U");
    app.add_option("--threads", threads, "Worker threads (default: SUBGRAPE_THREADS or 1)");
  }

  SpinSystem load_system() const {
    SpinSystem sys = parse_molecule(read_file(molecule));
    if (!spins.empty()) {
      std::vector<std::string> labels;
      std::stringstream ss(spins);
      for (std::string l; std::getline(ss, l, ',');) {
        if (!l.empty()) labels.push_back(l);
      }
      sys = sys.subset(labels);
    }
    return sys;
  }

  SubsystemPartition load_partition(const SpinSystem& sys) const {
    SubsystemPartition part;
    if (partition.find_first_of(",;") != std::string::npos) {
      part = parse_inline_partition(sys, partition);
    } else {
      const PartitionSpec* spec = nullptr;
      if (partition.empty()) {
        if (sys.partitions.empty()) throw InputError("molecule defines no partition; pass --partition");
        spec = &sys.partitions.front();
      } else {
        spec = sys.partition(partition);
        if (!spec) throw InputError("molecule has no partition named '" + partition + "'");
      }
      part = make_partition(sys, *spec);
    }
    std::stringstream ss(drop);
    for (std::string item; std::getline(ss, item, ',');) {
      if (item.empty()) continue;
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw InputError("malformed --drop entry '" + item + "'");
      part.dropped.insert(ordered_pair(sys.require_index(item.substr(0, colon)), sys.require_index(item.substr(colon + 1))));
    }
    return part;
  }

  TargetGate load_targets(const SpinSystem& sys, const SubsystemPartition& part) const {
    TargetGate t = build_targets(sys, part, targets);
    for (const auto& spec : target_matrices) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos) throw InputError("--target-matrix expects BLOCK=PATH, got '" + spec + "'");
      const std::string name = spec.substr(0, eq);
      auto it = std::find(part.names.begin(), part.names.end(), name);
      if (it == part.names.end()) throw InputError("unknown block '" + name + "' in --target-matrix");
      const CMatrix m = parse_matrix(read_file(spec.substr(eq + 1)));
      const auto k = static_cast<std::size_t>(it - part.names.begin());
      if (static_cast<std::size_t>(m.rows()) != part.block_dim(k)) {
        throw InputError("target matrix for block '" + name + "' has dimension " + std::to_string(m.rows()) +
                         ", expected " + std::to_string(part.block_dim(k)));
      }
      t.blocks[k] = m * t.blocks[k];
    }
    return t;
  }

  ControlProblem build_problem() const {
    SpinSystem sys = load_system();
    SubsystemPartition part = load_partition(sys);
    TargetGate t = load_targets(sys, part);
    std::vector<ChannelSpec> channels;
    if (!pulse_in.empty()) channels = read_pulse(read_file(pulse_in)).channels;
    else channels = default_channel_specs(sys, kTwoPi * bound_hz);
    ControlProblem problem(std::move(sys), std::move(part), std::move(channels), std::move(t));
    problem.engine = parse_engine(engine);
    problem.mode = grad_approx ? GradientMode::first_order : GradientMode::exact;
    problem.threads = threads ? threads : default_thread_count();
    return problem;
  }

  PulseProgram initial_pulse(const ControlProblem& problem) const {
    if (!pulse_in.empty()) return read_pulse(read_file(pulse_in));
    return random_pulse(problem.channels(), slices, tau, modes, seed);
  }
};

std::string report_lines(const std::string& label, const FitnessReport& r) {
  std::string out = "report stage=" + label + " phi=" + fmt(r.phi) + " product=" + fmt(r.product);
  for (std::size_t k = 0; k < r.f_blocks.size(); ++k) out += " f" + std::to_string(k) + "=" + fmt(r.f_blocks[k]);
  for (const auto& [p, v] : r.f_pairs) {
    out += " p" + std::to_string(p.first) + "_" + std::to_string(p.second) + "=" + fmt(v);
  }
  return out + "\n";
}

// ---------------------------------------------------------------------------

struct OptimizeCmd {
  JobSpec job;
  OptimizerConfig cfg;
  std::string direction = "gradient";
  std::string out_pulse = "pulse.txt";
  std::string out_record = "record.txt";
  std::string out_report = "report.txt";

  void add(CLI::App& app) {
    job.add_options(app);
    app.add_option("--lambda", cfg.lambda0, "Initial uniform pair weight; 0 skips the robustness stage");
    app.add_option("--lambda-growth", cfg.lambda_growth, "Weight growth factor between stage-2 rounds");
    app.add_option("--lambda-rounds", cfg.max_lambda_rounds, "Maximum stage-2 rounds");
    app.add_option("--robust-target", cfg.robust_target, "Per-pair robustness target");
    app.add_option("--stage1-threshold", cfg.stage1_threshold, "Fidelity product ending stage 1");
    app.add_option("--slack", cfg.slack, "Allowed product loss below the threshold in stage 2");
    app.add_option("--max-iters", cfg.max_iters, "Stage-1 iteration budget");
    app.add_option("--stage2-iters", cfg.stage2_max_iters, "Iteration budget per stage-2 round");
    app.add_option("--direction", direction, "Search direction: gradient | lbfgs");
    app.add_option("--out-pulse", out_pulse, "Optimized pulse file");
    app.add_option("--out-record", out_record, "Iteration record stream");
    app.add_option("--out-report", out_report, "Fitness report");
    app.add_flag("--timing", cfg.record_timing, "Include wall time in the record (breaks byte-determinism)");
  }

  int run() {
    cfg.direction = parse_direction(direction);
    const ControlProblem problem = job.build_problem();
    const OptimizationResult res = two_stage_optimize(problem, job.initial_pulse(problem), cfg);
    write_file(out_pulse, write_pulse(res.pulse));
    write_file(out_record, write_record(res.record));
    std::string rep = report_lines("before", res.before);
    if (res.after) rep += report_lines("after", *res.after);
    else rep += "report stage=after status=skipped\n";
    rep += "result stage1_reached=" + std::string(res.stage1_reached ? "1" : "0") +
           " robust_target_met=" + std::string(res.robust_target_met ? "1" : "0") +
           " max_dim=" + std::to_string(res.record.max_matrix_dim) + "\n";
    write_file(out_report, rep);
    std::cout << rep;
    return res.stage1_reached ? kExitOk : kExitFailed;
  }
};

struct VerifyCmd {
  JobSpec job;
  std::string pulse;
  double gap_bound = 0.01;
  bool big = false;
  std::string report;

  void add(CLI::App& app) {
    job.add_options(app);
    app.add_option("--pulse", pulse, "Pulse file to verify")->required();
    app.add_option("--gap-bound", gap_bound, "Maximum accepted f - F");
    app.add_flag("--big", big, "Allow full propagation of 10 or more spins");
    app.add_option("--report", report, "Append the verification line to this file");
  }

  int run() {
    job.pulse_in = pulse;
    const ControlProblem problem = job.build_problem();
    const PulseProgram p = read_pulse(read_file(pulse));
    problem.check_pulse(p);
    FullOptions opt;
    opt.big = big;
    opt.threads = problem.threads;
    const FullSystemResult r = check_gap(problem, p, opt);
    const std::string line = "verify F=" + fmt(r.F) + " f=" + fmt(r.f) + " gap=" + fmt(r.gap()) +
                             " bound=" + fmt(gap_bound) + " pass=" + (r.gap() < gap_bound ? "1" : "0") + "\n";
    if (!report.empty()) write_file(report, line, true);
    std::cout << line;
    return r.gap() < gap_bound ? kExitOk : kExitFailed;
  }
};

struct GradcheckCmd {
  JobSpec job;
  double lambda = 1.0;
  double fd_step = 1e-6;
  double tolerance = -1.0;

  void add(CLI::App& app) {
    job.add_options(app);
    app.add_option("--lambda", lambda, "Uniform pair weight in the checked objective");
    app.add_option("--fd-step", fd_step, "Central-difference step as a fraction of the largest bound");
    app.add_option("--tolerance", tolerance, "Pass threshold (default 1e-5 exact, 1e-2 approximate)");
  }

  int run() {
    const ControlProblem problem = job.build_problem();
    for (std::size_t k = 0; k < problem.partition().size(); ++k) {
      if (problem.partition().blocks[k].size() > 3) {
        throw InputError("gradcheck is limited to blocks of at most 3 spins; block '" + problem.partition().names[k] +
                         "' has " + std::to_string(problem.partition().blocks[k].size()));
      }
    }
    const PulseProgram p = job.initial_pulse(problem);
    const ObjectiveWeights w = problem.uniform_weights(lambda);
    const Evaluation ev = problem.evaluate(p, w);
    const RMatrix analytic = problem.gradient(p, w, ev);
    const double h = fd_step * detail::max_bound(p);
    const RMatrix numeric = fd_gradient(problem, p, w, h, problem.threads);
    const double scale = numeric.cwiseAbs().maxCoeff();
    const double abs_err = (analytic - numeric).cwiseAbs().maxCoeff();
    // Relative error is undefined at a vanishing gradient; fall back to absolute.
    const bool relative = scale > 1e-12;
    const double err = relative ? abs_err / scale : abs_err;
    const double tol = tolerance > 0.0 ? tolerance : (job.grad_approx ? 1e-2 : 1e-5);

    std::cout << "slice,channel,analytic,finite_difference,abs_error\n";
    for (Eigen::Index m = 0; m < analytic.rows(); ++m) {
      for (Eigen::Index c = 0; c < analytic.cols(); ++c) {
        std::cout << m << "," << c << "," << fmt(analytic(m, c)) << "," << fmt(numeric(m, c)) << ","
                  << fmt(std::abs(analytic(m, c) - numeric(m, c))) << "\n";
      }
    }
    std::cout << "gradcheck mode=" << (job.grad_approx ? "approx" : "exact") << " metric=" << (relative ? "relative" : "absolute")
              << " error=" << fmt(err) << " tolerance=" << fmt(tol) << " pass=" << (err <= tol ? 1 : 0) << "\n";
    return err <= tol ? kExitOk : kExitFailed;
  }
};

struct ReportCmd {
  std::string record;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--record", record, "Record stream written by optimize")->required();
    app.add_option("--out", out, "CSV output (default: stdout)");
  }

  static std::string row(const std::string& kind, const IterationRecord& it) {
    std::string s = kind + "," + std::to_string(it.iter) + "," + std::to_string(it.stage) + "," +
                    std::to_string(it.round) + "," + fmt(it.lambda) + "," + fmt(it.phi) + "," + fmt(it.product);
    for (double f : it.f_blocks) s += "," + fmt(f);
    for (const auto& [_, v] : it.f_pairs) s += "," + fmt(v);
    s += "," + fmt(it.pair_sum()) + "," + fmt(it.step) + "," + fmt(it.grad_norm);
    return s + "\n";
  }

  int run() {
    const RunRecord rec = read_record(read_file(record));
    if (rec.iterations.empty()) throw InputError("record stream has no iterations");
    const auto& first = rec.iterations.front();
    std::string csv = "row,iter,stage,round,lambda,phi,product";
    for (std::size_t k = 0; k < first.f_blocks.size(); ++k) csv += ",f" + std::to_string(k);
    for (const auto& [p, _] : first.f_pairs) csv += ",p" + std::to_string(p.first) + "_" + std::to_string(p.second);
    csv += ",pair_sum,step,gnorm\n";
    for (const auto& it : rec.iterations) {
      if (it.f_blocks.size() != first.f_blocks.size() || it.f_pairs.size() != first.f_pairs.size()) {
        throw InputError("record iterations have inconsistent columns");
      }
      csv += row("iter", it);
    }
    const IterationRecord* before = nullptr;
    const IterationRecord* after = nullptr;
    for (const auto& it : rec.iterations) {
      if (it.stage == 1) before = &it;
      else after = &it;
    }
    if (before) csv += row("before robustness stage", *before);
    if (after) csv += row("after", *after);
    if (out.empty()) std::cout << csv;
    else write_file(out, csv);
    return kExitOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subsystem-based robust pulse optimization for coupled spin registers"};
  app.require_subcommand(1);
  OptimizeCmd optimize;
  VerifyCmd verify;
  GradcheckCmd gradcheck;
  ReportCmd report;
  optimize.add(*app.add_subcommand("optimize", "Two-stage pulse optimization"));
  verify.add(*app.add_subcommand("verify", "Full-register fidelity and subsystem gap"));
  gradcheck.add(*app.add_subcommand("gradcheck", "Analytic gradient against central differences"));
  report.add(*app.add_subcommand("report", "CSV tables from a record stream"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitInput;
  }
  try {
    if (app.got_subcommand("optimize")) return optimize.run();
    if (app.got_subcommand("verify")) return verify.run();
    if (app.got_subcommand("gradcheck")) return gradcheck.run();
    return report.run();
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
}
