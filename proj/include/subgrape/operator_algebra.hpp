#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace subgrape {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

inline constexpr Complex kI{0.0, 1.0};
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace pauli {

inline CMatrix identity() { return CMatrix::Identity(2, 2); }

inline CMatrix x() {
  CMatrix m(2, 2);
  m << 0.0, 1.0, 1.0, 0.0;
  return m;
}

inline CMatrix y() {
  CMatrix m(2, 2);
  m << 0.0, -kI, kI, 0.0;
  return m;
}

inline CMatrix z() {
  CMatrix m(2, 2);
  m << 1.0, 0.0, 0.0, -1.0;
  return m;
}

}  // namespace pauli

inline CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

/// Tr(a b^dagger) = sum_ij a_ij conj(b_ij).
inline Complex trace_inner(const CMatrix& a, const CMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("trace_inner: dimension mismatch");
  }
  Complex acc{0.0, 0.0};
  const Complex* pa = a.data();
  const Complex* pb = b.data();
  for (Eigen::Index k = 0; k < a.size(); ++k) acc += pa[k] * std::conj(pb[k]);
  return acc;
}

/// Squared Frobenius norm, accumulated in the same order as trace_inner(a, a).
inline double frob_norm_sq(const CMatrix& a) {
  double acc = 0.0;
  const Complex* pa = a.data();
  for (Eigen::Index k = 0; k < a.size(); ++k) acc += std::norm(pa[k]);
  return acc;
}

inline bool is_square(const CMatrix& a) { return a.rows() == a.cols(); }

inline bool is_hermitian(const CMatrix& a, double tol = 1e-12) {
  if (!is_square(a)) return false;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - a.adjoint()).cwiseAbs().maxCoeff() <= tol * scale;
}

/// ||a a^dagger - I||_F < tol * rows.
inline bool is_unitary(const CMatrix& a, double tol = 1e-10) {
  if (!is_square(a)) return false;
  const CMatrix resid = a * a.adjoint() - CMatrix::Identity(a.rows(), a.cols());
  return resid.norm() < tol * static_cast<double>(a.rows());
}

namespace detail {

inline double one_norm(const CMatrix& a) {
  return a.cwiseAbs().colwise().sum().maxCoeff();
}

}  // namespace detail

/// Matrix exponential: degree-13 Pade approximant with scaling and squaring.
inline CMatrix expm(const CMatrix& a) {
  if (!is_square(a)) throw DimensionError("expm: matrix must be square");
  const Eigen::Index n = a.rows();
  if (n == 0) return a;

  static constexpr double b[] = {64764752532480000.0, 32382376266240000.0,
                                 7771770303897600.0,  1187353796428800.0,
                                 129060195264000.0,   10559470521600.0,
                                 670442572800.0,      33522128640.0,
                                 1323241920.0,        40840800.0,
                                 960960.0,            16380.0,
                                 182.0,               1.0};
  static constexpr double theta13 = 5.371920351148152;

  const double norm = detail::one_norm(a);
  int squarings = 0;
  if (norm > theta13) {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm / theta13))));
  }
  const CMatrix as = a * std::ldexp(1.0, -squarings);

  const CMatrix ident = CMatrix::Identity(n, n);
  const CMatrix a2 = as * as;
  const CMatrix a4 = a2 * a2;
  const CMatrix a6 = a4 * a2;

  CMatrix tmp = b[13] * a6 + b[11] * a4 + b[9] * a2;
  CMatrix u = as * (a6 * tmp + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident);
  tmp = b[12] * a6 + b[10] * a4 + b[8] * a2;
  CMatrix v = a6 * tmp + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;

  CMatrix r = (v - u).partialPivLu().solve(v + u);
  for (int k = 0; k < squarings; ++k) r = r * r;
  return r;
}

/// Places `op` on the listed qubit sites of an n_sites register, identity elsewhere.
/// Tensor factor i of `op` acts on sites[i]; site 0 is the most significant qubit.
inline CMatrix embed_local(const CMatrix& op, std::span<const std::size_t> sites,
                           std::size_t n_sites) {
  const std::size_t k = sites.size();
  if (n_sites >= 8 * sizeof(std::size_t) - 1) throw DimensionError("embed_local: too many sites");
  if (!is_square(op) || static_cast<std::size_t>(op.rows()) != (std::size_t{1} << k)) {
    throw DimensionError("embed_local: operator dimension must equal 2^|sites|");
  }
  std::vector<bool> used(n_sites, false);
  for (std::size_t s : sites) {
    if (s >= n_sites) throw DimensionError("embed_local: site out of range");
    if (used[s]) throw std::invalid_argument("embed_local: duplicate site");
    used[s] = true;
  }
  std::vector<std::size_t> rest;
  for (std::size_t s = 0; s < n_sites; ++s) {
    if (!used[s]) rest.push_back(s);
  }

  const std::size_t dim = std::size_t{1} << n_sites;
  const std::size_t local_dim = std::size_t{1} << k;
  auto bit_of = [n_sites](std::size_t site) { return std::size_t{1} << (n_sites - 1 - site); };

  // Full-register offset for each local basis index.
  std::vector<std::size_t> local_offset(local_dim, 0);
  for (std::size_t l = 0; l < local_dim; ++l) {
    for (std::size_t f = 0; f < k; ++f) {
      if (l & (std::size_t{1} << (k - 1 - f))) local_offset[l] |= bit_of(sites[f]);
    }
  }

  CMatrix out = CMatrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  const std::size_t rest_count = std::size_t{1} << rest.size();
  for (std::size_t r = 0; r < rest_count; ++r) {
    std::size_t base = 0;
    for (std::size_t f = 0; f < rest.size(); ++f) {
      if (r & (std::size_t{1} << (rest.size() - 1 - f))) base |= bit_of(rest[f]);
    }
    for (std::size_t i = 0; i < local_dim; ++i) {
      for (std::size_t j = 0; j < local_dim; ++j) {
        const Complex v = op(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (v != Complex{0.0, 0.0}) {
          out(static_cast<Eigen::Index>(base | local_offset[i]),
              static_cast<Eigen::Index>(base | local_offset[j])) = v;
        }
      }
    }
  }
  return out;
}

inline CMatrix embed_local(const CMatrix& op, std::initializer_list<std::size_t> sites,
                           std::size_t n_sites) {
  return embed_local(op, std::span<const std::size_t>(sites.begin(), sites.size()), n_sites);
}

/// Largest absolute entry of a - b.
inline double max_abs_diff(const CMatrix& a, const CMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("max_abs_diff: dimension mismatch");
  }
  return (a - b).cwiseAbs().maxCoeff();
}

/// ||a - b||_F / max(||b||_F, floor).
inline double rel_frob_error(const CMatrix& a, const CMatrix& b, double floor = 1e-300) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

}  // namespace subgrape
