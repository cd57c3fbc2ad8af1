#pragma once

// Eigenbasis evaluation of subsystem and Van Loan propagators.
//
// Every slice Hamiltonian on a block is Hermitian, H = Q diag(lambda) Q^dagger, and
// the pair-space Hamiltonian H_k (x) I + I (x) H_j diagonalizes with Q_k (x) Q_j.
// With f(x) = exp(-i tau x):
//   slice propagator       U   = Q diag(f(lambda)) Q^dagger
//   Van Loan (1,2) block   D_m = Q (Hp' o F1) Q^dagger,        F1_ab = f[l_a, l_b]
//   dU/du                       = Q (dH' o F1) Q^dagger
//   dD_m/du                     = Q [sum_c (Hp'_ac dH'_cb + dH'_ac Hp'_cb) f[l_a, l_c, l_b]] Q^dagger
// where primes denote the eigenbasis and f[...] are divided differences. These
// are the exact blocks of expm(-i tau [[H, Hp], [0, H]]) and its parameter
// derivatives; no augmented exponentials are formed.

#include "subgrape/objective.hpp"
#include "subgrape/parallel.hpp"

#include <Eigen/Eigenvalues>

namespace subgrape {

struct SliceSpectrum {
  RVector evals;
  CMatrix evecs;
  CVector phases;  // exp(-i tau lambda)
};

inline SliceSpectrum slice_spectrum(const CMatrix& h, double tau_s) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(h);
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  SliceSpectrum s{es.eigenvalues(), es.eigenvectors(), CVector(h.rows())};
  for (Eigen::Index a = 0; a < h.rows(); ++a) s.phases(a) = std::polar(1.0, -tau_s * s.evals(a));
  return s;
}

inline CMatrix propagator(const SliceSpectrum& s) {
  return s.evecs * s.phases.asDiagonal() * s.evecs.adjoint();
}

/// Spectrum of a (x) I + I (x) b from the spectra of a and b.
inline SliceSpectrum pair_spectrum(const SliceSpectrum& a, const SliceSpectrum& b) {
  const Eigen::Index da = a.evals.size();
  const Eigen::Index db = b.evals.size();
  SliceSpectrum s{RVector(da * db), kron(a.evecs, b.evecs), CVector(da * db)};
  for (Eigen::Index p = 0; p < da; ++p) {
    for (Eigen::Index r = 0; r < db; ++r) {
      s.evals(p * db + r) = a.evals(p) + b.evals(r);
      s.phases(p * db + r) = a.phases(p) * b.phases(r);
    }
  }
  return s;
}

/// a (x) b held in factored form; products with it cost O(n^2 (da + db)) instead of O(n^3).
struct KronOp {
  CMatrix a, b;

  KronOp adjoint() const { return {a.adjoint(), b.adjoint()}; }
  KronOp transpose() const { return {a.transpose(), b.transpose()}; }
  KronOp conjugate() const { return {a.conjugate(), b.conjugate()}; }
};

/// x * (a (x) b): apply b within each column group, then a across groups.
inline CMatrix operator*(const CMatrix& x, const KronOp& k) {
  const Eigen::Index da = k.a.rows(), db = k.b.rows(), rows = x.rows();
  if (x.cols() != da * db || k.a.cols() != da || k.b.cols() != db) {
    throw DimensionError("KronOp product: dimension mismatch");
  }
  CMatrix y(rows, da * db);
  for (Eigen::Index p = 0; p < da; ++p) y.middleCols(p * db, db).noalias() = x.middleCols(p * db, db) * k.b;
  CMatrix out(rows, da * db);
  using Stride = Eigen::OuterStride<>;
  for (Eigen::Index r = 0; r < db; ++r) {
    // Columns r, r + db, r + 2 db, ... as a rows x da matrix.
    Eigen::Map<const CMatrix, 0, Stride> yr(y.data() + r * rows, rows, da, Stride(db * rows));
    Eigen::Map<CMatrix, 0, Stride> outr(out.data() + r * rows, rows, da, Stride(db * rows));
    outr.noalias() = yr * k.a;
  }
  return out;
}

inline CMatrix operator*(const KronOp& k, const CMatrix& x) {
  return CMatrix((CMatrix(x.transpose()) * k.transpose()).transpose());
}

/// q^dagger x q for q = a (x) b.
inline CMatrix to_eigenbasis(const KronOp& q, const KronOp& q_adj, const CMatrix& x) { return q_adj * (x * q); }

namespace divided {

/// Gaps below this (in units of 1/tau) use series expansions.
inline constexpr double kCluster = 1e-3;

inline double sinc(double x) {
  if (std::abs(x) < 1e-4) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

/// f[x, y] for f(x) = exp(-i tau x).
inline Complex first(double x, double y, double tau) {
  return std::polar(1.0, -0.5 * tau * (x + y)) * Complex(0.0, -tau) * sinc(0.5 * tau * (x - y));
}

inline CMatrix first_matrix(const RVector& evals, double tau) {
  const Eigen::Index d = evals.size();
  CMatrix g(d, d);
  for (Eigen::Index b = 0; b < d; ++b) {
    for (Eigen::Index a = b; a < d; ++a) {
      g(a, b) = first(evals(a), evals(b), tau);
      g(b, a) = g(a, b);
    }
  }
  return g;
}

/// f[x, y, z] by power series about the mean; valid when the points are clustered.
inline Complex second_series(double x, double y, double z, double tau) {
  const double mean = (x + y + z) / 3.0;
  const double v[3] = {tau * (x - mean), tau * (y - mean), tau * (z - mean)};
  // Complete homogeneous symmetric polynomials h_0..h_4 of the scaled deviations.
  double h[5] = {1.0, 0.0, 0.0, 0.0, 0.0};
  for (int k = 1; k <= 4; ++k) {
    double acc = 0.0;
    for (int i = 0; i <= k; ++i) {
      for (int j = 0; j <= k - i; ++j) {
        acc += std::pow(v[0], i) * std::pow(v[1], j) * std::pow(v[2], k - i - j);
      }
    }
    h[k] = acc;
  }
  // sum_k (-i)^(k+2) h_k / (k+2)!, times tau^2 exp(-i tau mean).
  static constexpr double inv_fact[] = {1.0 / 2, 1.0 / 6, 1.0 / 24, 1.0 / 120, 1.0 / 720};
  Complex series{0.0, 0.0};
  Complex ipow{-1.0, 0.0};  // (-i)^2
  for (int k = 0; k <= 4; ++k) {
    series += ipow * (h[k] * inv_fact[k]);
    ipow *= Complex(0.0, -1.0);
  }
  return std::polar(1.0, -tau * mean) * (tau * tau) * series;
}

/// f[l_a, l_c, l_b] given the first-difference matrix g.
inline Complex second(const RVector& l, const CMatrix& g, Eigen::Index a, Eigen::Index c, Eigen::Index b,
                      double tau) {
  if (std::abs(l(a) - l(b)) * tau >= kCluster) return (g(a, c) - g(c, b)) / (l(a) - l(b));
  if (std::abs(l(a) - l(c)) * tau >= kCluster) return (g(a, b) - g(b, c)) / (l(a) - l(c));
  if (std::abs(l(c) - l(b)) * tau >= kCluster) return (g(c, a) - g(a, b)) / (l(c) - l(b));
  return second_series(l(a), l(c), l(b), tau);
}

}  // namespace divided

/// Weights w (eigenbasis, indexed like dH') such that
///   Tr(dU Y) + Tr(dD Z) = sum_ab dH'_ab w_ab
/// for dU, dD the slice derivatives above; y and z are given in the eigenbasis.
inline CMatrix eigenbasis_weights(const RVector& l, const CMatrix& g1, const CMatrix* hp, const CMatrix& y,
                                  const CMatrix* z, double tau) {
  const Eigen::Index d = l.size();
  CMatrix w = g1.cwiseProduct(y.transpose());
  if (!hp || !z) return w;

  // Pairs (a, b) with separated eigenvalues: f[a,c,b] = (g(a,c) - g(c,b)) / (l_a - l_b),
  // which turns both sums over c into matrix products with r_ba = z_ba / (l_a - l_b).
  CMatrix r = CMatrix::Zero(d, d);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> clustered;
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = 0; b < d; ++b) {
      const double gap = l(a) - l(b);
      if (std::abs(gap) * tau >= divided::kCluster) r(b, a) = (*z)(b, a) / gap;
      else if ((*z)(b, a) != Complex{0.0, 0.0}) clustered.emplace_back(a, b);
    }
  }
  const CMatrix hg = hp->cwiseProduct(g1);
  w += (r * hg).transpose() - g1.cwiseProduct((r * (*hp)).transpose());
  w += g1.cwiseProduct(((*hp) * r).transpose()) - (hg * r).transpose();

  for (const auto& [a, b] : clustered) {
    const Complex zba = (*z)(b, a);
    for (Eigen::Index c = 0; c < d; ++c) {
      const Complex t = zba * divided::second(l, g1, a, c, b, tau);
      w(c, b) += (*hp)(a, c) * t;
      w(a, c) += (*hp)(c, b) * t;
    }
  }
  return w;
}

/// Maps eigenbasis weights back: sum_ab dH'_ab w_ab = sum_ij dH_ij n_ij.
inline CMatrix to_operator_basis(const CMatrix& q, const CMatrix& w) {
  return q.conjugate() * w * q.transpose();
}

/// Block of the pair Hamiltonian's Van Loan slice propagator: D_m.
inline CMatrix van_loan_slice_block(const SliceSpectrum& s, const CMatrix& hp_eig, const CMatrix& g1) {
  return s.evecs * hp_eig.cwiseProduct(g1) * s.evecs.adjoint();
}

/// Tr over the second factor of an operator on H_k (x) H_j.
inline CMatrix partial_trace_second(const CMatrix& n, Eigen::Index dk, Eigen::Index dj) {
  CMatrix out = CMatrix::Zero(dk, dk);
  for (Eigen::Index p = 0; p < dk; ++p) {
    for (Eigen::Index q = 0; q < dk; ++q) {
      Complex acc{0.0, 0.0};
      for (Eigen::Index r = 0; r < dj; ++r) acc += n(p * dj + r, q * dj + r);
      out(p, q) = acc;
    }
  }
  return out;
}

/// Tr over the first factor of an operator on H_k (x) H_j.
inline CMatrix partial_trace_first(const CMatrix& n, Eigen::Index dk, Eigen::Index dj) {
  CMatrix out = CMatrix::Zero(dj, dj);
  for (Eigen::Index p = 0; p < dk; ++p) out += n.block(p * dj, p * dj, dj, dj);
  return out;
}

// ---------------------------------------------------------------------------

/// Owning problem data shared by the evaluation engines.
struct EngineModel {
  std::vector<CMatrix> h_blocks;
  /// [k][c]: operator of pulse column c on block k; size-0 when not addressed.
  std::vector<std::vector<CMatrix>> block_controls;
  std::map<BlockPair, CMatrix> pair_couplings;
  TargetGate targets;

  std::size_t block_count() const { return h_blocks.size(); }
  std::size_t channel_count() const { return block_controls.empty() ? 0 : block_controls.front().size(); }
  const CMatrix* control(std::size_t k, std::size_t c) const {
    const CMatrix& m = block_controls[k][c];
    return m.size() ? &m : nullptr;
  }
  bool pair_is_coupled(BlockPair p) const {
    auto it = pair_couplings.find(p);
    return it != pair_couplings.end() && it->second.cwiseAbs().maxCoeff() > 0.0;
  }
};

struct SpectralBlockCache {
  std::vector<SliceSpectrum> spectra;
  std::vector<CMatrix> slices;
  std::vector<CMatrix> forward;
  Complex overlap{0.0, 0.0};  // Tr(U(T) Ubar^dagger)
  double fidelity = 0.0;
};

struct SpectralPairCache {
  std::vector<CMatrix> d_forward;  // (1,2) blocks of V[m] ... V[1]
  double robustness = 0.0;
  const CMatrix& d() const { return d_forward.back(); }
};

struct SpectralEvaluation {
  std::vector<SpectralBlockCache> blocks;
  std::map<BlockPair, SpectralPairCache> pairs;
  std::size_t largest_dim = 0;
};

inline CMatrix block_slice_hamiltonian(const EngineModel& model, std::size_t k, const PulseProgram& pulse,
                                       std::size_t m) {
  CMatrix h = model.h_blocks[k];
  for (std::size_t c = 0; c < pulse.channel_count(); ++c) {
    if (const CMatrix* op = model.control(k, c)) {
      h += pulse.amplitudes(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(c)) * (*op);
    }
  }
  return h;
}

inline SpectralBlockCache evaluate_block(const EngineModel& model, std::size_t k, const PulseProgram& pulse) {
  SpectralBlockCache bc;
  const std::size_t n = pulse.slices();
  bc.spectra.reserve(n);
  bc.slices.reserve(n);
  bc.forward.reserve(n);
  for (std::size_t m = 0; m < n; ++m) {
    bc.spectra.push_back(slice_spectrum(block_slice_hamiltonian(model, k, pulse, m), pulse.tau_s));
    bc.slices.push_back(propagator(bc.spectra.back()));
    bc.forward.push_back(m == 0 ? bc.slices.back() : CMatrix(bc.slices.back() * bc.forward.back()));
  }
  bc.overlap = trace_inner(bc.forward.back(), model.targets.blocks[k]);
  const double d = static_cast<double>(model.h_blocks[k].rows());
  bc.fidelity = std::norm(bc.overlap) / (d * d);
  return bc;
}

inline SpectralPairCache evaluate_pair(const EngineModel& model, BlockPair pair, const SpectralBlockCache& bk,
                                       const SpectralBlockCache& bj, double tau_s) {
  SpectralPairCache pc;
  const CMatrix& hp = model.pair_couplings.at(pair);
  const std::size_t n = bk.slices.size();
  pc.d_forward.reserve(n);
  for (std::size_t m = 0; m < n; ++m) {
    const KronOp q{bk.spectra[m].evecs, bj.spectra[m].evecs};
    const KronOp q_adj = q.adjoint();
    const RVector evals = pair_spectrum(bk.spectra[m], bj.spectra[m]).evals;
    const CMatrix hp_eig = to_eigenbasis(q, q_adj, hp);
    const CMatrix dm = q * (CMatrix(hp_eig.cwiseProduct(divided::first_matrix(evals, tau_s))) * q_adj);
    if (m == 0) {
      pc.d_forward.push_back(dm);
    } else {
      const KronOp um{bk.slices[m], bj.slices[m]};
      const KronOp ub{bk.forward[m - 1], bj.forward[m - 1]};
      pc.d_forward.push_back(um * pc.d_forward.back() + dm * ub);
    }
  }
  pc.robustness = robustness_term(pc.d());
  return pc;
}

/// Forward pass for all blocks and the requested pairs.
inline SpectralEvaluation spectral_evaluate(const EngineModel& model, const PulseProgram& pulse,
                                            const std::vector<BlockPair>& pairs, std::size_t threads = 1) {
  SpectralEvaluation ev;
  ev.blocks.resize(model.block_count());
  parallel_for(model.block_count(), threads, [&](std::size_t k) { ev.blocks[k] = evaluate_block(model, k, pulse); });
  std::vector<SpectralPairCache> pair_out(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    const auto [k, j] = pairs[i];
    pair_out[i] = evaluate_pair(model, pairs[i], ev.blocks[k], ev.blocks[j], pulse.tau_s);
  });
  for (std::size_t i = 0; i < pairs.size(); ++i) ev.pairs[pairs[i]] = std::move(pair_out[i]);
  for (const auto& h : model.h_blocks) ev.largest_dim = std::max(ev.largest_dim, static_cast<std::size_t>(h.rows()));
  for (const auto& p : pairs) {
    ev.largest_dim = std::max(ev.largest_dim, static_cast<std::size_t>(model.pair_couplings.at(p).rows()));
  }
  return ev;
}

namespace detail {

/// Per-slice sensitivities S[m] of one block fidelity, scaled by `scale`.
inline void block_sensitivities(const EngineModel& model, std::size_t k, const SpectralBlockCache& bc, double tau_s,
                                Complex scale, GradientMode mode, std::vector<CMatrix>& out) {
  const std::size_t n = bc.slices.size();
  const Eigen::Index d = model.h_blocks[k].rows();
  const CMatrix target_adj = model.targets.blocks[k].adjoint();
  CMatrix after = CMatrix::Identity(d, d);
  for (std::size_t m = n; m-- > 0;) {
    CMatrix y = target_adj * after;
    if (m > 0) y = bc.forward[m - 1] * y;
    CMatrix nmat;
    if (mode == GradientMode::exact) {
      const auto& s = bc.spectra[m];
      const CMatrix w = eigenbasis_weights(s.evals, divided::first_matrix(s.evals, tau_s), nullptr,
                                           s.evecs.adjoint() * y * s.evecs, nullptr, tau_s);
      nmat = to_operator_basis(s.evecs, w);
    } else {
      nmat = ((-kI * tau_s) * (bc.slices[m] * y)).transpose();
    }
    out[m] += scale * nmat;
    after = after * bc.slices[m];
  }
}

/// Per-slice sensitivities of one pair term, split into block-local parts.
inline void pair_sensitivities(const EngineModel& model, BlockPair pair, const SpectralBlockCache& bk,
                               const SpectralBlockCache& bj, const SpectralPairCache& pc, double tau_s,
                               Complex scale, GradientMode mode, std::vector<CMatrix>& out_k,
                               std::vector<CMatrix>& out_j) {
  const std::size_t n = bk.slices.size();
  const Eigen::Index dk = model.h_blocks[pair.first].rows();
  const Eigen::Index dj = model.h_blocks[pair.second].rows();
  const Eigen::Index dp = dk * dj;
  const CMatrix& hp = model.pair_couplings.at(pair);
  const CMatrix d_adj = pc.d().adjoint();
  CMatrix ua = CMatrix::Identity(dp, dp);
  CMatrix da = CMatrix::Zero(dp, dp);
  for (std::size_t m = n; m-- > 0;) {
    const CMatrix s1 = d_adj * ua;
    CMatrix y, z;
    if (m > 0) {
      const KronOp ub{bk.forward[m - 1], bj.forward[m - 1]};
      const CMatrix& db = pc.d_forward[m - 1];
      z = ub * s1;
      y = db * s1 + ub * CMatrix(d_adj * da);
    } else {
      z = s1;
      y = d_adj * da;
    }
    const KronOp q{bk.spectra[m].evecs, bj.spectra[m].evecs};
    const KronOp q_adj = q.adjoint();
    const RVector evals = pair_spectrum(bk.spectra[m], bj.spectra[m]).evals;
    const CMatrix g1 = divided::first_matrix(evals, tau_s);
    const CMatrix hp_eig = to_eigenbasis(q, q_adj, hp);
    const CMatrix dm = q * (CMatrix(hp_eig.cwiseProduct(g1)) * q_adj);
    const KronOp um{bk.slices[m], bj.slices[m]};
    CMatrix nmat;
    if (mode == GradientMode::exact) {
      const CMatrix z_eig = to_eigenbasis(q, q_adj, z);
      const CMatrix w = eigenbasis_weights(evals, g1, &hp_eig, to_eigenbasis(q, q_adj, y), &z_eig, tau_s);
      nmat = q.conjugate() * (w * q.transpose());
    } else {
      nmat = ((-kI * tau_s) * (um * y + dm * z)).transpose();
    }
    out_k[m] += scale * partial_trace_second(nmat, dk, dj);
    out_j[m] += scale * partial_trace_first(nmat, dk, dj);
    da = ua * dm + da * um;
    ua = ua * um;
  }
}

}  // namespace detail

/// dPhi/du[m, c] from a forward evaluation. Pairs with nonzero weight must be present.
inline RMatrix spectral_gradient(const EngineModel& model, const SpectralEvaluation& ev, const PulseProgram& pulse,
                                 const ObjectiveWeights& weights, GradientMode mode = GradientMode::exact,
                                 std::size_t threads = 1) {
  const std::size_t nb = model.block_count();
  const std::size_t n = pulse.slices();
  std::vector<double> f(nb);
  for (std::size_t k = 0; k < nb; ++k) f[k] = ev.blocks[k].fidelity;
  const auto others = leave_one_out_products(f);

  std::vector<BlockPair> active;
  for (const auto& [p, lam] : weights.lambda) {
    if (lam == 0.0) continue;
    if (!ev.pairs.count(p)) throw std::invalid_argument("spectral_gradient: missing pair evaluation");
    active.push_back(p);
  }

  // Task t < nb: block fidelity t; otherwise active pair t - nb. Each task owns its
  // output slots; contributions are summed afterwards in fixed order.
  const std::size_t tasks = nb + active.size();
  std::vector<std::vector<std::vector<CMatrix>>> partial(tasks);
  auto zeros = [&](std::size_t k) {
    const Eigen::Index d = model.h_blocks[k].rows();
    return std::vector<CMatrix>(n, CMatrix::Zero(d, d));
  };
  parallel_for(tasks, threads, [&](std::size_t t) {
    if (t < nb) {
      const double d = static_cast<double>(model.h_blocks[t].rows());
      partial[t].push_back(zeros(t));
      const Complex scale = others[t] * 2.0 * std::conj(ev.blocks[t].overlap) / (d * d);
      detail::block_sensitivities(model, t, ev.blocks[t], pulse.tau_s, scale, mode, partial[t][0]);
    } else {
      const BlockPair p = active[t - nb];
      const double dp = static_cast<double>(model.h_blocks[p.first].rows() * model.h_blocks[p.second].rows());
      partial[t].push_back(zeros(p.first));
      partial[t].push_back(zeros(p.second));
      const Complex scale = -weights(p) * 2.0 / (dp * dp);
      detail::pair_sensitivities(model, p, ev.blocks[p.first], ev.blocks[p.second], ev.pairs.at(p), pulse.tau_s,
                                 scale, mode, partial[t][0], partial[t][1]);
    }
  });

  std::vector<std::vector<CMatrix>> sens;
  for (std::size_t k = 0; k < nb; ++k) sens.push_back(zeros(k));
  for (std::size_t t = 0; t < tasks; ++t) {
    if (t < nb) {
      for (std::size_t m = 0; m < n; ++m) sens[t][m] += partial[t][0][m];
    } else {
      const BlockPair p = active[t - nb];
      for (std::size_t m = 0; m < n; ++m) {
        sens[p.first][m] += partial[t][0][m];
        sens[p.second][m] += partial[t][1][m];
      }
    }
  }

  RMatrix grad = RMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pulse.channel_count()));
  for (std::size_t k = 0; k < nb; ++k) {
    for (std::size_t c = 0; c < pulse.channel_count(); ++c) {
      const CMatrix* op = model.control(k, c);
      if (!op) continue;
      for (std::size_t m = 0; m < n; ++m) {
        grad(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(c)) += std::real(op->cwiseProduct(sens[k][m]).sum());
      }
    }
  }
  return grad;
}

}  // namespace subgrape
