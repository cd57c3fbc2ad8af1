#pragma once

#include "subgrape/spectral.hpp"
#include "subgrape/targets.hpp"

#include <variant>

namespace subgrape {

enum class Engine {
  spectral,   ///< eigenbasis evaluation, pair-space matrices only
  reference,  ///< explicit Van Loan and augmented exponentials
};

inline const char* engine_name(Engine e) { return e == Engine::spectral ? "spectral" : "reference"; }

inline Engine parse_engine(std::string_view s) {
  if (s == "spectral") return Engine::spectral;
  if (s == "reference") return Engine::reference;
  throw InputError("unknown engine '" + std::string(s) + "'");
}

struct ReferenceEvaluation {
  std::vector<SubsystemTrajectory> trajectories;
  std::map<BlockPair, VanLoanState> states;
};

struct Evaluation {
  FitnessReport report;
  std::variant<SpectralEvaluation, ReferenceEvaluation> cache;
  /// Largest square matrix formed during evaluation.
  std::size_t largest_dim = 0;
};

/// Everything needed to evaluate Phi and its gradient for one partitioned system.
class ControlProblem {
 public:
  ControlProblem(SpinSystem sys, SubsystemPartition part, std::vector<ChannelSpec> channels, TargetGate targets)
      : system_(std::move(sys)), partition_(std::move(part)), channels_(std::move(channels)) {
    validate(system_);
    hamiltonians_ = build_hamiltonians(system_, partition_);
    validate(targets, hamiltonians_.block_dims);
    const auto ctl = control_operators(system_, partition_);

    model_.h_blocks = hamiltonians_.intra;
    model_.pair_couplings = hamiltonians_.pair_couplings;
    model_.targets = std::move(targets);
    model_.block_controls.assign(partition_.size(), {});
    for (const auto& spec : channels_) {
      auto it = std::find(ctl.channels.begin(), ctl.channels.end(), spec.channel);
      if (it == ctl.channels.end()) {
        throw InputError("pulse channel " + spec.channel.species + "," + axis_name(spec.channel.axis) +
                         " has no CHANNEL in the molecule");
      }
      const auto c = static_cast<std::size_t>(it - ctl.channels.begin());
      for (std::size_t k = 0; k < partition_.size(); ++k) {
        model_.block_controls[k].push_back(ctl.present[c][k] ? ctl.ops[c][k] : CMatrix());
      }
    }
    for (const auto& p : partition_.pairs()) {
      if (model_.pair_is_coupled(p)) coupled_.push_back(p);
    }
  }

  const SpinSystem& system() const { return system_; }
  const SubsystemPartition& partition() const { return partition_; }
  const HamiltonianSet& hamiltonians() const { return hamiltonians_; }
  const std::vector<ChannelSpec>& channels() const { return channels_; }
  const TargetGate& targets() const { return model_.targets; }
  const EngineModel& model() const { return model_; }
  /// Pairs with a nonzero coupling; other pairs have D = 0 identically.
  const std::vector<BlockPair>& coupled_pairs() const { return coupled_; }

  Engine engine = Engine::spectral;
  GradientMode mode = GradientMode::exact;
  std::size_t threads = 1;

  void check_pulse(const PulseProgram& pulse) const {
    if (pulse.channel_count() != channels_.size()) throw InputError("pulse channel count does not match the problem");
    for (std::size_t c = 0; c < channels_.size(); ++c) {
      if (!(pulse.channels[c].channel == channels_[c].channel)) {
        throw InputError("pulse channel " + std::to_string(c) + " (" + pulse.channels[c].channel.species + "," +
                         axis_name(pulse.channels[c].channel.axis) + ") is incompatible with the problem");
      }
    }
  }

  /// Uniform weights over coupled pairs.
  ObjectiveWeights uniform_weights(double lambda) const { return ObjectiveWeights::uniform(coupled_, lambda); }

  Evaluation evaluate(const PulseProgram& pulse, const ObjectiveWeights& weights) const {
    check_pulse(pulse);
    Evaluation ev;
    FitnessReport& r = ev.report;
    if (engine == Engine::spectral) {
      SpectralEvaluation se = spectral_evaluate(model_, pulse, coupled_, threads);
      for (const auto& b : se.blocks) r.f_blocks.push_back(b.fidelity);
      for (const auto& [p, pc] : se.pairs) r.f_pairs[p] = pc.robustness;
      ev.largest_dim = se.largest_dim;
      ev.cache = std::move(se);
    } else {
      ReferenceEvaluation re;
      const auto ops = block_control_pointers();
      re.trajectories.resize(partition_.size());
      parallel_for(partition_.size(), threads, [&](std::size_t k) {
        re.trajectories[k] = propagate_subsystem(model_.h_blocks[k], ops[k], pulse, k);
      });
      std::vector<VanLoanState> states(coupled_.size());
      parallel_for(coupled_.size(), threads, [&](std::size_t i) {
        states[i] = propagate_pair(generators(coupled_[i], ops), pulse, coupled_[i]);
      });
      for (std::size_t k = 0; k < partition_.size(); ++k) {
        r.f_blocks.push_back(subsystem_fidelity(re.trajectories[k].final(), model_.targets.blocks[k]));
        ev.largest_dim = std::max(ev.largest_dim, re.trajectories[k].dim());
      }
      for (std::size_t i = 0; i < coupled_.size(); ++i) {
        r.f_pairs[coupled_[i]] = robustness_term(states[i].d);
        ev.largest_dim = std::max(ev.largest_dim, 2 * states[i].pair_dim);
        re.states[coupled_[i]] = std::move(states[i]);
      }
      ev.cache = std::move(re);
    }
    for (const auto& p : partition_.pairs()) r.f_pairs.try_emplace(p, 0.0);
    const FitnessValue v = fitness(r.f_blocks, r.f_pairs, weights);
    r.product = v.product;
    r.phi = v.phi;
    return ev;
  }

  RMatrix gradient(const PulseProgram& pulse, const ObjectiveWeights& weights, const Evaluation& ev,
                   std::size_t* largest_dim = nullptr) const {
    ObjectiveWeights active;
    for (const auto& [p, lam] : weights.lambda) {
      if (lam != 0.0 && model_.pair_is_coupled(p)) active.lambda[p] = lam;
    }
    if (const auto* se = std::get_if<SpectralEvaluation>(&ev.cache)) {
      if (largest_dim) *largest_dim = se->largest_dim;
      return spectral_gradient(model_, *se, pulse, active, mode, threads);
    }
    const auto& re = std::get<ReferenceEvaluation>(ev.cache);
    ReferenceModel rm;
    rm.h_blocks = model_.h_blocks;
    rm.block_controls = block_control_pointers();
    std::size_t dim = 0;
    for (const auto& t : re.trajectories) dim = std::max(dim, (mode == GradientMode::exact ? 2 : 1) * t.dim());
    for (const auto& [p, _] : active.lambda) {
      rm.generators[p] = generators(p, rm.block_controls);
      dim = std::max(dim, (mode == GradientMode::exact ? 4 : 2) * rm.generators[p].pair_dim);
    }
    if (largest_dim) *largest_dim = dim;
    return subgrape::gradient(rm, re.trajectories, re.states, model_.targets, active, pulse, mode);
  }

  double phi(const PulseProgram& pulse, const ObjectiveWeights& weights) const {
    return evaluate(pulse, weights).report.phi;
  }

 private:
  std::vector<std::vector<const CMatrix*>> block_control_pointers() const {
    std::vector<std::vector<const CMatrix*>> out(partition_.size());
    for (std::size_t k = 0; k < partition_.size(); ++k) {
      for (std::size_t c = 0; c < channels_.size(); ++c) out[k].push_back(model_.control(k, c));
    }
    return out;
  }

  VanLoanGenerators generators(BlockPair p, const std::vector<std::vector<const CMatrix*>>& ops) const {
    return van_loan_generators(model_.h_blocks[p.first], model_.h_blocks[p.second], model_.pair_couplings.at(p),
                               ops[p.first], ops[p.second]);
  }

  SpinSystem system_;
  SubsystemPartition partition_;
  std::vector<ChannelSpec> channels_;
  HamiltonianSet hamiltonians_;
  EngineModel model_;
  std::vector<BlockPair> coupled_;
};

}  // namespace subgrape
