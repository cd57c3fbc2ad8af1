#pragma once

#include "subgrape/pulse.hpp"

namespace subgrape {

/// One control operator with its amplitude for the current slice.
struct ControlTerm {
  const CMatrix* op = nullptr;
  double amplitude = 0.0;
};

/// H_static + sum_c u_c B_c.
inline CMatrix slice_hamiltonian(const CMatrix& h_static, std::span<const ControlTerm> controls) {
  CMatrix h = h_static;
  for (const auto& t : controls) {
    if (t.op->rows() != h.rows() || t.op->cols() != h.cols()) {
      throw DimensionError("control operator dimension does not match the Hamiltonian");
    }
    if (t.amplitude != 0.0) h += t.amplitude * (*t.op);
  }
  return h;
}

/// expm(-i (H_static + sum_c u_c B_c) tau).
inline CMatrix slice_propagator(const CMatrix& h_static, std::span<const ControlTerm> controls, double tau_s) {
  if (!is_square(h_static)) throw DimensionError("slice_propagator: Hamiltonian must be square");
  return expm((-kI * tau_s) * slice_hamiltonian(h_static, controls));
}

/// Control terms for slice m; ops[c] pairs with pulse column c (null entries skipped).
inline std::vector<ControlTerm> slice_controls(const std::vector<const CMatrix*>& ops, const PulseProgram& pulse,
                                               std::size_t m) {
  std::vector<ControlTerm> terms;
  for (std::size_t c = 0; c < ops.size(); ++c) {
    if (ops[c]) terms.push_back({ops[c], pulse.amplitudes(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(c))});
  }
  return terms;
}

/// Slice propagators U[m] and forward products P[m] = U[m] ... U[1] (0-based storage).
struct SubsystemTrajectory {
  std::size_t block = 0;
  std::vector<CMatrix> slices;
  std::vector<CMatrix> forward;

  const CMatrix& final() const { return forward.back(); }
  std::size_t dim() const { return static_cast<std::size_t>(slices.front().rows()); }
};

/// `ops[c]` is the block operator for pulse column c, or null when the channel
/// does not address this block.
inline SubsystemTrajectory propagate_subsystem(const CMatrix& h_block, const std::vector<const CMatrix*>& ops,
                                               const PulseProgram& pulse, std::size_t block = 0) {
  if (ops.size() != pulse.channel_count()) throw DimensionError("control list does not match pulse channels");
  SubsystemTrajectory traj;
  traj.block = block;
  traj.slices.reserve(pulse.slices());
  traj.forward.reserve(pulse.slices());
  for (std::size_t m = 0; m < pulse.slices(); ++m) {
    const auto terms = slice_controls(ops, pulse, m);
    traj.slices.push_back(slice_propagator(h_block, terms, pulse.tau_s));
    traj.forward.push_back(m == 0 ? traj.slices.back() : CMatrix(traj.slices.back() * traj.forward.back()));
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Van Loan generators

/// Operator on H_k (x) H_j: a (x) I + I (x) b.
inline CMatrix pair_sum(const CMatrix& a, const CMatrix& b) {
  return kron(a, CMatrix::Identity(b.rows(), b.cols())) + kron(CMatrix::Identity(a.rows(), a.cols()), b);
}

/// [[a, b], [0, a]].
inline CMatrix upper_block(const CMatrix& diag, const CMatrix& upper) {
  const Eigen::Index d = diag.rows();
  CMatrix out = CMatrix::Zero(2 * d, 2 * d);
  out.topLeftCorner(d, d) = diag;
  out.bottomRightCorner(d, d) = diag;
  out.topRightCorner(d, d) = upper;
  return out;
}

struct VanLoanGenerators {
  CMatrix l_static;
  /// Per pulse column; empty matrix when neither block is addressed.
  std::vector<CMatrix> l_controls;
  std::size_t pair_dim = 0;
};

/// ctrl_k[c] / ctrl_j[c] may be null for channels that do not address the block.
inline VanLoanGenerators van_loan_generators(const CMatrix& h_k, const CMatrix& h_j, const CMatrix& h_pair,
                                             const std::vector<const CMatrix*>& ctrl_k,
                                             const std::vector<const CMatrix*>& ctrl_j) {
  const Eigen::Index d = h_k.rows() * h_j.rows();
  if (h_pair.rows() != d || h_pair.cols() != d) throw DimensionError("pair coupling dimension mismatch");
  if (ctrl_k.size() != ctrl_j.size()) throw DimensionError("control lists differ in length");
  VanLoanGenerators g;
  g.pair_dim = static_cast<std::size_t>(d);
  g.l_static = upper_block(pair_sum(h_k, h_j), h_pair);
  const CMatrix zk = CMatrix::Zero(h_k.rows(), h_k.cols());
  const CMatrix zj = CMatrix::Zero(h_j.rows(), h_j.cols());
  for (std::size_t c = 0; c < ctrl_k.size(); ++c) {
    if (!ctrl_k[c] && !ctrl_j[c]) {
      g.l_controls.emplace_back();
      continue;
    }
    const CMatrix b = pair_sum(ctrl_k[c] ? *ctrl_k[c] : zk, ctrl_j[c] ? *ctrl_j[c] : zj);
    g.l_controls.push_back(upper_block(b, CMatrix::Zero(d, d)));
  }
  return g;
}

/// Accumulated Van Loan propagator V(T) = V[M] ... V[1] with D = V^(1,2)(T).
struct VanLoanState {
  std::pair<std::size_t, std::size_t> pair{0, 1};
  std::size_t pair_dim = 0;
  std::vector<CMatrix> slices;
  std::vector<CMatrix> forward;
  CMatrix d;

  const CMatrix& final() const { return forward.back(); }
  CMatrix u_final() const {
    const auto n = static_cast<Eigen::Index>(pair_dim);
    return forward.back().topLeftCorner(n, n);
  }
};

inline std::vector<const CMatrix*> generator_controls(const VanLoanGenerators& g) {
  std::vector<const CMatrix*> out;
  for (const auto& l : g.l_controls) out.push_back(l.size() ? &l : nullptr);
  return out;
}

inline VanLoanState propagate_pair(const VanLoanGenerators& gen, const PulseProgram& pulse,
                                   std::pair<std::size_t, std::size_t> pair = {0, 1}) {
  if (gen.l_controls.size() != pulse.channel_count()) throw DimensionError("generator list does not match pulse");
  VanLoanState st;
  st.pair = pair;
  st.pair_dim = gen.pair_dim;
  const auto ops = generator_controls(gen);
  for (std::size_t m = 0; m < pulse.slices(); ++m) {
    st.slices.push_back(slice_propagator(gen.l_static, slice_controls(ops, pulse, m), pulse.tau_s));
    st.forward.push_back(m == 0 ? st.slices.back() : CMatrix(st.slices.back() * st.forward.back()));
  }
  const auto n = static_cast<Eigen::Index>(gen.pair_dim);
  st.d = st.forward.back().topRightCorner(n, n);
  return st;
}

/// -i U(T) int_0^T U^dagger(t) H_pair U(t) dt by the midpoint rule with `subdivisions`
/// points per slice; U(t) uses exact within-slice sub-propagators of the pair-space
/// Hamiltonian `h_static` plus controls.
inline CMatrix directional_derivative_quadrature(const CMatrix& h_static, const std::vector<const CMatrix*>& ops,
                                                 const CMatrix& h_pair, const PulseProgram& pulse,
                                                 std::size_t subdivisions) {
  if (subdivisions < 1) throw std::invalid_argument("subdivisions must be >= 1");
  const Eigen::Index d = h_static.rows();
  if (h_pair.rows() != d) throw DimensionError("pair coupling dimension mismatch");
  CMatrix integral = CMatrix::Zero(d, d);
  CMatrix u = CMatrix::Identity(d, d);
  const double h = pulse.tau_s / static_cast<double>(subdivisions);
  for (std::size_t m = 0; m < pulse.slices(); ++m) {
    const CMatrix hm = slice_hamiltonian(h_static, slice_controls(ops, pulse, m));
    const CMatrix half = expm((-kI * (0.5 * h)) * hm);
    const CMatrix step = expm((-kI * h) * hm);
    CMatrix ut = half * u;
    for (std::size_t q = 0; q < subdivisions; ++q) {
      if (q) ut = step * ut;
      integral += h * (ut.adjoint() * h_pair * ut);
    }
    u = expm((-kI * pulse.tau_s) * hm) * u;
  }
  return -kI * (u * integral);
}

/// d/du expm(-i (H + u dH) tau) at the current H, as the (1,2) block of
/// expm(-i [[H, dH], [0, H]] tau).
inline CMatrix slice_derivative_exact(const CMatrix& h_slice, const CMatrix& dh, double tau_s) {
  if (!is_square(h_slice) || dh.rows() != h_slice.rows() || dh.cols() != h_slice.cols()) {
    throw DimensionError("slice_derivative_exact: dimension mismatch");
  }
  const Eigen::Index d = h_slice.rows();
  const CMatrix aug = expm((-kI * tau_s) * upper_block(h_slice, dh));
  return aug.topRightCorner(d, d);
}

/// First-order approximation -i tau dH U[m].
inline CMatrix slice_derivative_approx(const CMatrix& slice_prop, const CMatrix& dh, double tau_s) {
  return (-kI * tau_s) * (dh * slice_prop);
}

}  // namespace subgrape
