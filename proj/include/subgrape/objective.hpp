#pragma once

#include "subgrape/propagation.hpp"

#include <map>
#include <optional>

namespace subgrape {

using BlockPair = std::pair<std::size_t, std::size_t>;

/// Per-block target unitaries; the full target is their tensor product.
struct TargetGate {
  std::vector<CMatrix> blocks;
};

inline void validate(const TargetGate& t, const std::vector<std::size_t>& block_dims) {
  if (t.blocks.size() != block_dims.size()) throw DimensionError("target block count does not match partition");
  for (std::size_t k = 0; k < t.blocks.size(); ++k) {
    if (static_cast<std::size_t>(t.blocks[k].rows()) != block_dims[k] || !is_square(t.blocks[k])) {
      throw DimensionError("target for block " + std::to_string(k) + " has the wrong dimension");
    }
    if (!is_unitary(t.blocks[k])) throw InputError("target for block " + std::to_string(k) + " is not unitary");
  }
}

/// lambda_kj >= 0 for k < j; absent pairs have weight zero.
struct ObjectiveWeights {
  std::map<BlockPair, double> lambda;

  static ObjectiveWeights uniform(const std::vector<BlockPair>& pairs, double value) {
    ObjectiveWeights w;
    for (const auto& p : pairs) w.lambda[p] = value;
    return w;
  }

  double operator()(BlockPair p) const {
    auto it = lambda.find(p);
    return it == lambda.end() ? 0.0 : it->second;
  }

  bool all_zero() const {
    for (const auto& [_, v] : lambda) {
      if (v != 0.0) return false;
    }
    return true;
  }

  ObjectiveWeights scaled(double factor) const {
    ObjectiveWeights w = *this;
    for (auto& [_, v] : w.lambda) v *= factor;
    return w;
  }
};

inline void validate(const ObjectiveWeights& w, std::size_t n_blocks) {
  for (const auto& [p, v] : w.lambda) {
    if (!(p.first < p.second && p.second < n_blocks)) throw InputError("weight refers to an invalid block pair");
    if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("weights must be finite and non-negative");
  }
}

struct FitnessReport {
  std::vector<double> f_blocks;
  std::map<BlockPair, double> f_pairs;
  double product = 0.0;
  double phi = 0.0;
  std::optional<double> full_F;

  double pair_sum() const {
    double s = 0.0;
    for (const auto& [_, v] : f_pairs) s += v;
    return s;
  }
  double pair_max() const {
    double s = 0.0;
    for (const auto& [_, v] : f_pairs) s = std::max(s, v);
    return s;
  }
};

/// |Tr(U Ubar^dagger)|^2 / d^2.
inline double subsystem_fidelity(const CMatrix& u_end, const CMatrix& target) {
  if (u_end.rows() != target.rows() || u_end.cols() != target.cols()) {
    throw DimensionError("subsystem_fidelity: dimension mismatch");
  }
  const double d = static_cast<double>(u_end.rows());
  return std::norm(trace_inner(u_end, target)) / (d * d);
}

/// ||D||_F^2 / d_pair^2.
inline double robustness_term(const CMatrix& d) {
  const double n = static_cast<double>(d.rows());
  return frob_norm_sq(d) / (n * n);
}

struct FitnessValue {
  double phi = 0.0;
  double product = 0.0;
};

/// Phi = prod_k f_k - sum_{k<j} lambda_kj f_kj.
inline FitnessValue fitness(const std::vector<double>& f_blocks, const std::map<BlockPair, double>& f_pairs,
                            const ObjectiveWeights& weights) {
  FitnessValue v;
  v.product = 1.0;
  for (double f : f_blocks) v.product *= f;
  v.phi = v.product;
  for (const auto& [p, lam] : weights.lambda) {
    if (lam == 0.0) continue;
    auto it = f_pairs.find(p);
    if (it == f_pairs.end()) {
      throw std::invalid_argument("fitness: missing robustness term for pair (" + std::to_string(p.first) + "," +
                                  std::to_string(p.second) + ")");
    }
    v.phi -= lam * it->second;
  }
  return v;
}

enum class GradientMode {
  exact,         ///< augmented-exponential slice derivatives
  first_order,   ///< -i tau dH U[m]
};

/// Per-block factor prod_{l != k} f_l, computed without division.
inline std::vector<double> leave_one_out_products(const std::vector<double>& f) {
  std::vector<double> out(f.size(), 1.0);
  double prefix = 1.0;
  for (std::size_t k = 0; k < f.size(); ++k) {
    out[k] = prefix;
    prefix *= f[k];
  }
  double suffix = 1.0;
  for (std::size_t k = f.size(); k-- > 0;) {
    out[k] *= suffix;
    suffix *= f[k];
  }
  return out;
}

namespace detail {

/// after[m] = S[M-1] ... S[m+1] (identity for the last slice).
inline std::vector<CMatrix> suffix_products(const std::vector<CMatrix>& slices) {
  std::vector<CMatrix> after(slices.size());
  const Eigen::Index d = slices.front().rows();
  CMatrix acc = CMatrix::Identity(d, d);
  for (std::size_t m = slices.size(); m-- > 0;) {
    after[m] = acc;
    acc = acc * slices[m];
  }
  return after;
}

}  // namespace detail

/// Inputs of the direct gradient evaluation; pointers index pulse columns.
struct ReferenceModel {
  std::vector<CMatrix> h_blocks;
  std::vector<std::vector<const CMatrix*>> block_controls;  // [k][c]
  std::map<BlockPair, VanLoanGenerators> generators;
};

/// dPhi/du[m, c] assembled slice by slice from cached trajectories and Van Loan states.
inline RMatrix gradient(const ReferenceModel& model, const std::vector<SubsystemTrajectory>& trajectories,
                        const std::map<BlockPair, VanLoanState>& states, const TargetGate& targets,
                        const ObjectiveWeights& weights, const PulseProgram& pulse,
                        GradientMode mode = GradientMode::exact) {
  const std::size_t n_slices = pulse.slices();
  const std::size_t n_ch = pulse.channel_count();
  if (trajectories.size() != targets.blocks.size()) throw std::invalid_argument("gradient: trajectory count mismatch");
  for (const auto& t : trajectories) {
    if (t.slices.size() != n_slices) throw std::invalid_argument("gradient: trajectory does not match pulse");
  }
  RMatrix grad = RMatrix::Zero(static_cast<Eigen::Index>(n_slices), static_cast<Eigen::Index>(n_ch));

  std::vector<double> f;
  std::vector<Complex> overlaps;
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    overlaps.push_back(trajectories[k].final().cwiseProduct(targets.blocks[k].conjugate()).sum());
    f.push_back(subsystem_fidelity(trajectories[k].final(), targets.blocks[k]));
  }
  const auto others = leave_one_out_products(f);

  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const auto& traj = trajectories[k];
    const double d = static_cast<double>(traj.dim());
    const auto after = detail::suffix_products(traj.slices);
    for (std::size_t m = 0; m < n_slices; ++m) {
      const auto terms = slice_controls(model.block_controls[k], pulse, m);
      const CMatrix hm = slice_hamiltonian(model.h_blocks[k], terms);
      for (std::size_t c = 0; c < n_ch; ++c) {
        const CMatrix* op = model.block_controls[k][c];
        if (!op) continue;
        const CMatrix du = mode == GradientMode::exact ? slice_derivative_exact(hm, *op, pulse.tau_s)
                                                       : slice_derivative_approx(traj.slices[m], *op, pulse.tau_s);
        CMatrix dut = after[m] * du;
        if (m > 0) dut = dut * traj.forward[m - 1];
        const Complex tr = dut.cwiseProduct(targets.blocks[k].conjugate()).sum();
        const double df = 2.0 * std::real(tr * std::conj(overlaps[k])) / (d * d);
        grad(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(c)) += others[k] * df;
      }
    }
  }

  for (const auto& [pair, lam] : weights.lambda) {
    if (lam == 0.0) continue;
    auto st_it = states.find(pair);
    auto gen_it = model.generators.find(pair);
    if (st_it == states.end() || gen_it == model.generators.end()) {
      throw std::invalid_argument("gradient: missing Van Loan state for a weighted pair");
    }
    const auto& st = st_it->second;
    const auto& gen = gen_it->second;
    const auto n = static_cast<Eigen::Index>(st.pair_dim);
    const double dp = static_cast<double>(st.pair_dim);
    const auto after = detail::suffix_products(st.slices);
    const auto ops = generator_controls(gen);
    for (std::size_t m = 0; m < n_slices; ++m) {
      const CMatrix lm = slice_hamiltonian(gen.l_static, slice_controls(ops, pulse, m));
      for (std::size_t c = 0; c < n_ch; ++c) {
        if (!ops[c]) continue;
        const CMatrix dv = mode == GradientMode::exact ? slice_derivative_exact(lm, *ops[c], pulse.tau_s)
                                                       : slice_derivative_approx(st.slices[m], *ops[c], pulse.tau_s);
        CMatrix dvt = after[m] * dv;
        if (m > 0) dvt = dvt * st.forward[m - 1];
        const Complex tr = trace_inner(dvt.topRightCorner(n, n), st.d);
        grad(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(c)) -= lam * 2.0 * std::real(tr) / (dp * dp);
      }
    }
  }
  return grad;
}

}  // namespace subgrape
