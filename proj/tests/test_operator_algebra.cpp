#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace subgrape;
using namespace subgrape::testing;

TEST(Kron, IdentityTimesIdentity) {
  EXPECT_EQ(kron(CMatrix::Identity(2, 2), CMatrix::Identity(2, 2)), CMatrix(CMatrix::Identity(4, 4)));
}

TEST(Kron, PauliZZ) {
  CMatrix expected = CMatrix::Zero(4, 4);
  expected.diagonal() << 1, -1, -1, 1;
  EXPECT_EQ(kron(pauli::z(), pauli::z()), expected);
}

TEST(Kron, MatchesLoopDefinition) {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const CMatrix a = rng.gaussian(2, 2), b = rng.gaussian(2, 2);
    EXPECT_EQ(kron(a, b), kron_loops(a, b));
  }
  const CMatrix a = rng.gaussian(3, 2), b = rng.gaussian(2, 4);
  EXPECT_EQ(kron(a, b), kron_loops(a, b));
}

TEST(Kron, Associative) {
  Rng rng(12);
  const CMatrix a = rng.gaussian(2, 2), b = rng.gaussian(2, 2), c = rng.gaussian(2, 2);
  // Each entry is a product of three scalars; only the rounding of the grouping differs.
  EXPECT_LT(max_abs_diff(kron(kron(a, b), c), kron(a, kron(b, c))), 1e-13);
}

TEST(Expm, ZeroGivesIdentity) {
  EXPECT_LT(max_abs_diff(expm(CMatrix::Zero(5, 5)), CMatrix::Identity(5, 5)), 1e-15);
}

TEST(Expm, PauliRotation) {
  const CMatrix r = expm((-kI * (kPi / 2)) * pauli::x());
  EXPECT_LT(max_abs_diff(r, -kI * pauli::x()), 1e-12);
}

TEST(Expm, MatchesTaylorOracleOnAntiHermitian) {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const CMatrix a = -kI * rng.hermitian(6, 1.5);
    const CMatrix oracle = expm_taylor(a, 40);
    EXPECT_LT(max_abs_diff(expm(a), oracle), 1e-10) << "trial " << trial;
  }
}

TEST(Expm, RelativeErrorOnGeneralMatrices) {
  Rng rng(14);
  for (double scale : {0.01, 1.0, 3.0}) {
    const CMatrix a = scale * rng.gaussian(5, 5);
    ASSERT_LE(a.norm(), 10.0 * std::sqrt(50.0));
    EXPECT_LT(rel_frob_error(expm(a), expm_taylor(a, 60)), 1e-12) << "scale " << scale;
  }
}

TEST(Expm, AntiHermitianIsUnitary) {
  Rng rng(15);
  const CMatrix u = expm(-kI * rng.hermitian(16, 20.0));
  EXPECT_TRUE(is_unitary(u, 1e-10));
}

TEST(Expm, RejectsNonSquare) { EXPECT_THROW(expm(CMatrix::Zero(2, 3)), DimensionError); }

TEST(TraceInner, Basics) {
  EXPECT_EQ(trace_inner(CMatrix::Identity(3, 3), CMatrix::Identity(3, 3)), Complex(3.0, 0.0));
  EXPECT_EQ(trace_inner(pauli::x(), pauli::y()), Complex(0.0, 0.0));
  EXPECT_THROW(trace_inner(CMatrix::Identity(2, 2), CMatrix::Identity(3, 3)), DimensionError);
}

TEST(TraceInner, MatchesExplicitTrace) {
  Rng rng(16);
  const CMatrix a = rng.gaussian(4, 4), b = rng.gaussian(4, 4);
  EXPECT_LT(std::abs(trace_inner(a, b) - trace_product(a, b)), 1e-12);
}

TEST(TraceInner, SelfInnerEqualsFrobeniusExactly) {
  Rng rng(17);
  const CMatrix a = rng.gaussian(5, 5);
  EXPECT_EQ(trace_inner(a, a).real(), frob_norm_sq(a));
  EXPECT_EQ(trace_inner(a, a).imag(), 0.0);
}

TEST(FrobNormSq, Basics) {
  EXPECT_EQ(frob_norm_sq(CMatrix::Zero(3, 3)), 0.0);
  EXPECT_EQ(frob_norm_sq(CMatrix::Identity(7, 7)), 7.0);
}

TEST(FrobNormSq, UnitaryHasNormD) {
  Rng rng(18);
  for (Eigen::Index d : {2, 5, 8}) EXPECT_NEAR(frob_norm_sq(rng.unitary(d)), static_cast<double>(d), 1e-12);
}

TEST(EmbedLocal, SingleSiteIsKron) {
  EXPECT_EQ(embed_local(pauli::z(), {0}, 2), kron(pauli::z(), pauli::identity()));
  EXPECT_EQ(embed_local(pauli::x(), {1}, 2), kron(pauli::identity(), pauli::x()));
}

TEST(EmbedLocal, ZZOnSitesZeroAndTwo) {
  const CMatrix e = embed_local(kron(pauli::z(), pauli::z()), {0, 2}, 3);
  CMatrix expected = CMatrix::Zero(8, 8);
  for (std::size_t b = 0; b < 8; ++b) expected(b, b) = zval(b, 0, 3) * zval(b, 2, 3);
  EXPECT_EQ(e, expected);
  RVector signs(8);
  signs << 1, -1, 1, -1, -1, 1, -1, 1;
  EXPECT_EQ(e.diagonal().real(), signs);
}

TEST(EmbedLocal, IdentityStaysIdentity) {
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(embed_local(pauli::identity(), {k}, 4), CMatrix(CMatrix::Identity(16, 16)));
}

TEST(EmbedLocal, SiteOrderFollowsList) {
  Rng rng(19);
  const CMatrix a = rng.gaussian(2, 2), b = rng.gaussian(2, 2);
  // Factor i acts on sites[i]: reversing the list swaps the factors.
  EXPECT_LT(max_abs_diff(embed_local(kron(a, b), {1, 0}, 2), kron(b, a)), 1e-15);
}

TEST(EmbedLocal, DisjointEmbeddingsMultiply) {
  Rng rng(20);
  const CMatrix a = rng.gaussian(2, 2), b = rng.gaussian(4, 4);
  const CMatrix lhs = embed_local(a, {1}, 4) * embed_local(b, {0, 3}, 4);
  // Oracle: place everything in order (0, 3, 1, 2) and permute back.
  const CMatrix ordered = kron(kron(b, a), CMatrix::Identity(2, 2));
  const CMatrix p = site_permutation({0, 3, 1, 2});
  EXPECT_LT(max_abs_diff(lhs, p * ordered * p.adjoint()), 1e-12);
}

TEST(EmbedLocal, Errors) {
  EXPECT_THROW(embed_local(pauli::z(), {0, 1}, 3), DimensionError);
  EXPECT_THROW(embed_local(kron(pauli::z(), pauli::z()), {1, 1}, 3), std::invalid_argument);
  EXPECT_THROW(embed_local(pauli::z(), {3}, 3), DimensionError);
}
