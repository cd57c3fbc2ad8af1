#pragma once

#include "subgrape/problem.hpp"

#include <cmath>

namespace subgrape {

struct FullOptions {
  std::size_t cap = kDefaultSpinCap;
  /// Required for n >= kBigThreshold.
  bool big = false;
  /// Force the matrix-free route regardless of size (testing).
  bool matrix_free = false;
  std::size_t threads = 1;
};

inline constexpr std::size_t kBigThreshold = 10;

namespace detail {

/// exp(-i tau (diag(e) + sum_s (a_s sigma_x^s + b_s sigma_y^s))) applied to the
/// columns of x by a Chebyshev expansion; never forms the 2^n operator.
inline void apply_slice_action(const RVector& e, const std::vector<double>& a, const std::vector<double>& b,
                               double tau, CMatrix& x, std::size_t threads) {
  const std::size_t n = a.size();
  const Eigen::Index dim = e.size();
  // Spectrum of H lies in mid +- radius (triangle inequality over the terms).
  const double mid = 0.5 * (e.maxCoeff() + e.minCoeff());
  double radius = 0.5 * (e.maxCoeff() - e.minCoeff());
  for (std::size_t s = 0; s < n; ++s) radius += std::hypot(a[s], b[s]);
  if (radius == 0.0) {
    x *= std::polar(1.0, -mid * tau);
    return;
  }
  const RVector diag = (e.array() - mid) / radius;

  // exp(-i z t) = sum_k (2 - delta_k0) (-i)^k J_k(z) T_k(t) for t in [-1, 1], z = tau * radius.
  const double z = tau * radius;
  std::vector<Complex> coef;
  for (int k = 0;; ++k) {
    const double jk = std::cyl_bessel_j(static_cast<double>(k), z);
    Complex c = (k == 0 ? 1.0 : 2.0) * jk * std::pow(Complex(0.0, -1.0), k);
    coef.push_back(c);
    if (k > z && std::abs(jk) < 1e-17) break;
  }

  // out = scale * H_scaled * in - prev (prev may be null). Spin s flips bit (n - 1 - s):
  // rows come in runs of 2 bit, the first half with that bit clear. Arithmetic is on
  // interleaved (re, im) doubles so the inner loop vectorizes for every bit.
  auto apply_h = [&](const CMatrix& in, CMatrix& out, double scale, const CMatrix* prev) {
    if (prev) {
      out.noalias() = (scale * diag).asDiagonal() * in - *prev;
    } else {
      out.noalias() = (scale * diag).asDiagonal() * in;
    }
    const Eigen::Index total = in.size();
    const double* src = reinterpret_cast<const double*>(in.data());
    double* dst = reinterpret_cast<double*>(out.data());
    for (std::size_t s = 0; s < n; ++s) {
      if (a[s] == 0.0 && b[s] == 0.0) continue;
      const Eigen::Index bit = Eigen::Index{1} << (n - 1 - s);
      // <0| (a x + b y) |1> = a - i b and <1| ... |0> = a + i b, scaled
      const double re = scale * a[s] / radius;
      const double im = scale * b[s] / radius;
      for (Eigen::Index g = 0; g < total; g += 2 * bit) {
        const double* lo_in = src + 2 * g;
        const double* hi_in = lo_in + 2 * bit;
        double* lo = dst + 2 * g;
        double* hi = lo + 2 * bit;
        for (Eigen::Index i = 0; i < 2 * bit; i += 2) {
          lo[i] += re * hi_in[i] + im * hi_in[i + 1];
          lo[i + 1] += re * hi_in[i + 1] - im * hi_in[i];
          hi[i] += re * lo_in[i] - im * lo_in[i + 1];
          hi[i + 1] += re * lo_in[i + 1] + im * lo_in[i];
        }
      }
    }
  };

  // Narrow chunks keep the four recurrence buffers in cache.
  constexpr Eigen::Index kChunk = 4;
  const Eigen::Index chunks = (x.cols() + kChunk - 1) / kChunk;
  const Complex phase = std::polar(1.0, -mid * tau);
  parallel_for(static_cast<std::size_t>(chunks), threads, [&](std::size_t ci) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(ci) * kChunk;
    const Eigen::Index w = std::min(kChunk, x.cols() - c0);
    CMatrix prev = x.middleCols(c0, w);
    CMatrix acc = coef[0] * prev;
    CMatrix cur(dim, w), next(dim, w);
    apply_h(prev, cur, 1.0, nullptr);
    acc += coef[1] * cur;
    for (std::size_t k = 2; k < coef.size(); ++k) {
      apply_h(cur, next, 2.0, &prev);
      acc += coef[k] * next;
      std::swap(prev, cur);
      std::swap(cur, next);
    }
    x.middleCols(c0, w) = phase * acc;
  });
}

}  // namespace detail

/// U(T) of the full register with all couplings and full control operators.
inline CMatrix full_propagate(const SpinSystem& sys, const PulseProgram& pulse, const FullOptions& opt = {}) {
  const std::size_t n = sys.size();
  if (n > opt.cap) {
    throw DimensionError("system has " + std::to_string(n) + " spins; cap is " + std::to_string(opt.cap));
  }
  if (n >= kBigThreshold && !opt.big) {
    throw DimensionError("full propagation of " + std::to_string(n) + " spins requires the big flag");
  }
  const auto all = control_channels(sys);
  for (const auto& c : pulse.channels) {
    if (std::find(all.begin(), all.end(), c.channel) == all.end()) {
      throw InputError("pulse channel " + c.channel.species + " has no CHANNEL in the molecule");
    }
  }
  const auto dim = static_cast<Eigen::Index>(std::size_t{1} << n);
  const CMatrix h0 = build_full_hamiltonian(sys, opt.cap);

  if (n >= kBigThreshold || opt.matrix_free) {
    const RVector e = h0.diagonal().real();
    CMatrix u = CMatrix::Identity(dim, dim);
    for (std::size_t m = 0; m < pulse.slices(); ++m) {
      std::vector<double> a(n, 0.0), b(n, 0.0);
      for (std::size_t c = 0; c < pulse.channel_count(); ++c) {
        const double amp = pulse.amplitudes(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(c));
        for (std::size_t s = 0; s < n; ++s) {
          if (sys.spins[s].species != pulse.channels[c].channel.species) continue;
          (pulse.channels[c].channel.axis == Axis::x ? a : b)[s] += amp;
        }
      }
      detail::apply_slice_action(e, a, b, pulse.tau_s, u, opt.threads);
    }
    return u;
  }

  std::vector<CMatrix> ops;
  for (const auto& c : pulse.channels) ops.push_back(full_control_operator(sys, c.channel, opt.cap));
  std::vector<const CMatrix*> ptrs;
  for (const auto& o : ops) ptrs.push_back(&o);
  CMatrix u = CMatrix::Identity(dim, dim);
  for (std::size_t m = 0; m < pulse.slices(); ++m) {
    u = slice_propagator(h0, slice_controls(ptrs, pulse, m), pulse.tau_s) * u;
  }
  return u;
}

/// Sub-index of global basis state `g` on block k (block sites in ascending order).
inline std::size_t block_index(std::size_t g, const std::vector<std::size_t>& sites, std::size_t n) {
  std::size_t out = 0;
  for (std::size_t s : sites) out = (out << 1) | ((g >> (n - 1 - s)) & 1U);
  return out;
}

/// (x)_k Ubar_k with every block placed on its own (possibly interleaved) sites.
inline CMatrix embed_targets(const TargetGate& t, const SubsystemPartition& part) {
  std::size_t n = 0;
  for (const auto& b : part.blocks) n += b.size();
  const auto dim = static_cast<Eigen::Index>(std::size_t{1} << n);
  CMatrix out = CMatrix::Identity(dim, dim);
  for (std::size_t k = 0; k < part.size(); ++k) out = embed_local(t.blocks[k], part.blocks[k], n) * out;
  return out;
}

/// |Tr(U Ubar^dagger)|^2 / d^2 with Ubar = (x)_k Ubar_k, evaluated entrywise.
inline double full_fidelity(const CMatrix& u_full, const TargetGate& t, const SubsystemPartition& part) {
  std::size_t n = 0;
  for (const auto& b : part.blocks) n += b.size();
  const std::size_t dim = std::size_t{1} << n;
  if (static_cast<std::size_t>(u_full.rows()) != dim || !is_square(u_full)) {
    throw DimensionError("full_fidelity: propagator dimension does not match the partition");
  }
  if (t.blocks.size() != part.size()) throw DimensionError("full_fidelity: target block count mismatch");
  std::vector<std::vector<std::size_t>> sub(part.size(), std::vector<std::size_t>(dim));
  for (std::size_t k = 0; k < part.size(); ++k) {
    for (std::size_t g = 0; g < dim; ++g) sub[k][g] = block_index(g, part.blocks[k], n);
  }
  Complex tr{0.0, 0.0};
  for (std::size_t j = 0; j < dim; ++j) {
    for (std::size_t i = 0; i < dim; ++i) {
      Complex entry{1.0, 0.0};
      for (std::size_t k = 0; k < part.size() && entry != Complex{0.0, 0.0}; ++k) {
        entry *= t.blocks[k](static_cast<Eigen::Index>(sub[k][i]), static_cast<Eigen::Index>(sub[k][j]));
      }
      if (entry != Complex{0.0, 0.0}) {
        tr += u_full(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * std::conj(entry);
      }
    }
  }
  const double d = static_cast<double>(dim);
  return std::norm(tr) / (d * d);
}

struct FullSystemResult {
  CMatrix u_full;
  double F = 0.0;
  double f = 0.0;  ///< product of subsystem fidelities
  double gap() const { return f - F; }
};

inline FullSystemResult check_gap(const ControlProblem& problem, const PulseProgram& pulse, const FullOptions& opt = {}) {
  FullSystemResult r;
  r.f = problem.evaluate(pulse, ObjectiveWeights{}).report.product;
  r.u_full = full_propagate(problem.system(), pulse, opt);
  r.F = full_fidelity(r.u_full, problem.targets(), problem.partition());
  return r;
}

/// Central differences of Phi, one pulse entry at a time.
inline RMatrix fd_gradient(const ControlProblem& problem, const PulseProgram& pulse, const ObjectiveWeights& weights,
                           double step, std::size_t threads = 1) {
  if (!(step > 0.0)) throw std::invalid_argument("fd_gradient: step must be positive");
  const auto rows = static_cast<Eigen::Index>(pulse.slices());
  const auto cols = static_cast<Eigen::Index>(pulse.channel_count());
  RMatrix g(rows, cols);
  parallel_for(static_cast<std::size_t>(rows * cols), threads, [&](std::size_t idx) {
    const auto m = static_cast<Eigen::Index>(idx) / cols;
    const auto c = static_cast<Eigen::Index>(idx) % cols;
    PulseProgram plus = pulse, minus = pulse;
    plus.amplitudes(m, c) += step;
    minus.amplitudes(m, c) -= step;
    g(m, c) = (problem.phi(plus, weights) - problem.phi(minus, weights)) / (2.0 * step);
  });
  return g;
}

/// A pair of blocks lifted to H_k (x) H_j: static part, per-channel controls (null when
/// unaddressed) and the coupling.
struct PairSpace {
  CMatrix h_static;
  std::vector<CMatrix> controls;
  CMatrix h_pair;

  std::vector<const CMatrix*> control_ptrs() const {
    std::vector<const CMatrix*> out;
    for (const auto& c : controls) out.push_back(c.size() ? &c : nullptr);
    return out;
  }
};

inline PairSpace pair_space(const ControlProblem& problem, BlockPair p) {
  const auto& m = problem.model();
  PairSpace ps;
  ps.h_static = pair_sum(m.h_blocks[p.first], m.h_blocks[p.second]);
  ps.h_pair = m.pair_couplings.at(p);
  const Eigen::Index dk = m.h_blocks[p.first].rows();
  const Eigen::Index dj = m.h_blocks[p.second].rows();
  for (std::size_t c = 0; c < m.channel_count(); ++c) {
    const CMatrix* a = m.control(p.first, c);
    const CMatrix* b = m.control(p.second, c);
    if (!a && !b) {
      ps.controls.emplace_back();
      continue;
    }
    ps.controls.push_back(pair_sum(a ? *a : CMatrix::Zero(dk, dk), b ? *b : CMatrix::Zero(dj, dj)));
  }
  return ps;
}

/// U(T) under h_static + eps * h_pair plus controls.
inline CMatrix perturbed_propagator(const PairSpace& ps, const PulseProgram& pulse, double eps) {
  const CMatrix h = ps.h_static + eps * ps.h_pair;
  const auto ptrs = ps.control_ptrs();
  CMatrix u = CMatrix::Identity(h.rows(), h.cols());
  for (std::size_t m = 0; m < pulse.slices(); ++m) u = slice_propagator(h, slice_controls(ptrs, pulse, m), pulse.tau_s) * u;
  return u;
}

/// (U(T, +eps) - U(T, -eps)) / (2 eps).
inline CMatrix perturbation_derivative(const PairSpace& ps, const PulseProgram& pulse, double eps) {
  return (perturbed_propagator(ps, pulse, eps) - perturbed_propagator(ps, pulse, -eps)) / (2.0 * eps);
}

struct RemainderSample {
  double eps = 0.0;
  double remainder = 0.0;  ///< ||U(T, eps) - U(T) - eps D||_F
  double ratio() const { return remainder / (eps * eps); }
};

inline std::vector<RemainderSample> dyson_remainder_check(const PairSpace& ps, const PulseProgram& pulse,
                                                          const CMatrix& d, const std::vector<double>& epsilons) {
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    if (!(epsilons[i] > 0.0)) throw std::invalid_argument("dyson_remainder_check: epsilons must be positive");
    if (i && !(epsilons[i] < epsilons[i - 1])) throw std::invalid_argument("dyson_remainder_check: epsilons must decrease");
  }
  const CMatrix u0 = perturbed_propagator(ps, pulse, 0.0);
  std::vector<RemainderSample> out;
  for (double eps : epsilons) {
    const CMatrix r = perturbed_propagator(ps, pulse, eps) - u0 - eps * d;
    out.push_back({eps, std::sqrt(frob_norm_sq(r))});
  }
  return out;
}

}  // namespace subgrape
