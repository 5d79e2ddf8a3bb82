#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "eptomo/constructions.hpp"
#include "oracles.hpp"

using namespace eptomo;

namespace {

std::vector<EpPovm> construction_suite() {
  std::vector<EpPovm> out;
  for (Index d : {2, 3, 4, 6}) out.push_back(flammia_povm(d));
  for (Index d : {2, 4, 6, 8}) out.push_back(goyeneche_bases(d).ep);
  for (Index d : {3, 4, 6})
    for (Index r = 1; r <= d; ++r) out.push_back(example1_povm(d, r));
  for (Index d : {4, 6})
    for (Index k = 0; k < d; ++k) out.push_back(example1_slice(d, k));
  for (Index d : {2, 4, 8, 16})
    for (Index r = 1; r <= d / 2; ++r) out.push_back(example2_bases(d, r).ep);
  return out;
}

/// Basis vectors with the global phase fixed (first nonzero entry real and
/// positive), sorted lexicographically.
std::vector<std::vector<std::pair<long, long>>> canonical_vectors(const CMatrix& basis) {
  std::vector<std::vector<std::pair<long, long>>> out;
  for (Index k = 0; k < basis.rows(); ++k) {
    CVector v = basis.row(k).transpose();
    Index first = 0;
    while (std::abs(v(first)) < 1e-12) ++first;
    v *= std::abs(v(first)) / v(first);
    std::vector<std::pair<long, long>> key;
    for (Index i = 0; i < v.size(); ++i) {
      key.emplace_back(std::lround(v(i).real() * 1e9), std::lround(v(i).imag() * 1e9));
    }
    out.push_back(key);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::set<Index> diagonals_of(const ElementPattern& p) {
  std::set<Index> out;
  for (Index i = 0; i < p.dim(); ++i)
    for (Index j = i; j < p.dim(); ++j)
      if (p.contains(i, j)) out.insert(j - i);
  return out;
}

}  // namespace

TEST(RowProbe, EffectCountAndPattern) {
  EXPECT_EQ(flammia_povm(2).n_outcomes(), 4u);
  const auto p4 = flammia_povm(4).pattern;
  ElementPattern expected(4);
  for (Index j = 0; j < 4; ++j) expected.insert(0, j);
  EXPECT_EQ(p4, expected);
}

TEST(RowProbe, PatternSizeD3) {
  const auto p = pattern_of(flammia_povm(3));
  EXPECT_EQ(p.size(), 5u);
  EXPECT_EQ(p.lower_entries().size(), 3u);
}

TEST(RowProbe, RoundTripOnPlus) {
  const auto ep = flammia_povm(2);
  CVector psi(2);
  psi << 1.0, 1.0;
  const auto rho = DensityMatrix::pure(psi);
  const auto part = extract_elements(ep, born_probabilities(ep, rho));
  for (const auto& [i, j] : ep.pattern.lower_entries()) {
    EXPECT_NEAR(std::abs(part(i, j) - rho.matrix()(i, j)), 0.0, 1e-14);
  }
}

TEST(RowProbe, RejectsNonPsdResidual) {
  EXPECT_THROW(flammia_povm(4, 0.5, 0.5), std::invalid_argument);
}

TEST(RowProbe, NominalCoefficientKeptWhereValid) {
  // For a single row the nominal 1/(2(2d-1)) leaves a PSD residual.
  for (Index d : {2, 3, 4, 8, 16}) {
    EXPECT_DOUBLE_EQ(default_row_coefficient(d, 1), 1.0 / (2.0 * double(2 * d - 1)));
  }
}

TEST(RowProbe, NominalMultiRowCoefficientIsNotAPovm) {
  // a_k = b_k = 1/(2(2d-r)) at d=4, r=2 leaves a negative residual.
  const double c = 1.0 / (2.0 * (2 * 4 - 2));
  EXPECT_THROW(example1_povm(4, 2, {{c, c}, {c, c}}), std::invalid_argument);
  EXPECT_LT(default_row_coefficient(4, 2), c);
}

TEST(Example1, EffectCountAndPattern) {
  const auto ep = example1_povm(4, 2);
  EXPECT_EQ(ep.n_outcomes(), std::size_t((2 * 4 - 2) * 2 + 1));
  EXPECT_EQ(ep.pattern, ElementPattern::rows_cols(4, 2));
}

TEST(Example1, RankOneMatchesRowProbe) {
  const double c = default_row_coefficient(5, 1);
  const auto a = example1_povm(5, 1, {{c}, {c}});
  const auto b = flammia_povm(5, c, c);
  ASSERT_EQ(a.n_outcomes(), b.n_outcomes());
  for (std::size_t mu = 0; mu < a.n_outcomes(); ++mu) {
    EXPECT_EQ(a.povms[0][mu].matrix(), b.povms[0][mu].matrix());
  }
}

TEST(Example1, RoundTripRankTwoD6) {
  const auto ep = example1_povm(6, 2);
  const auto rho = random_rank_r_state(6, 2, 31);
  const auto part = extract_elements(ep, born_probabilities(ep, rho));
  for (const auto& [i, j] : ep.pattern.lower_entries()) {
    EXPECT_NEAR(std::abs(part(i, j) - rho.matrix()(i, j)), 0.0, 1e-10);
  }
}

TEST(Example1Slice, SliceZeroIsRowProbe) {
  const auto s = example1_slice(4, 0);
  const auto f = flammia_povm(4);
  ASSERT_EQ(s.n_outcomes(), f.n_outcomes());
  for (std::size_t mu = 0; mu < s.n_outcomes(); ++mu) {
    EXPECT_EQ(s.povms[0][mu].matrix(), f.povms[0][mu].matrix());
  }
  EXPECT_EQ(s.pattern, f.pattern);
}

TEST(Example1Slice, SizesAndUnion) {
  // Diagonal probe, two per remaining column, residual.
  EXPECT_EQ(example1_slice(4, 1).n_outcomes(), 6u);
  EXPECT_EQ(example1_slice(4, 0).pattern | example1_slice(4, 1).pattern,
            example1_povm(4, 2).pattern);
  const auto p = example1_slice(5, 2).pattern;
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j)
      EXPECT_EQ(p.contains(i, j), (i == 2 && j >= 2) || (j == 2 && i >= 2));
}

TEST(FourBases, FirstVectorAndOrthonormality) {
  const auto g = goyeneche_bases(4);
  ASSERT_EQ(g.bases.size(), 4u);
  const CMatrix& b1 = g.bases.bases[0];
  EXPECT_NEAR(std::abs(b1(0, 0) - 1.0 / std::sqrt(2.0)), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(b1(0, 1) - 1.0 / std::sqrt(2.0)), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(b1(0, 2)), 0.0, 1e-15);
  EXPECT_LE(g.bases.max_unitarity_error(), 1e-10);
}

TEST(FourBases, PatternIsCyclicFirstDiagonal) {
  const auto p = pattern_of(goyeneche_bases(4).ep);
  ElementPattern expected(4);
  for (Index j = 0; j < 4; ++j) expected.insert(j, (j + 1) % 4);
  EXPECT_EQ(p, expected);
  EXPECT_EQ(p.size(), 8u);
}

TEST(FourBases, OddDimensionRejected) { EXPECT_THROW(goyeneche_bases(5), std::invalid_argument); }

TEST(Example2, MatchesFourBasesAtD4) {
  const auto alg = example2_bases(4, 1);
  const auto g = goyeneche_bases(4);
  ASSERT_EQ(alg.bases.size(), 5u);
  EXPECT_EQ(alg.bases.bases[0], CMatrix(CMatrix::Identity(4, 4)));
  std::vector<decltype(canonical_vectors(g.bases.bases[0]))> lhs, rhs;
  for (std::size_t b = 1; b < 5; ++b) lhs.push_back(canonical_vectors(alg.bases.bases[b]));
  for (const auto& b : g.bases.bases) rhs.push_back(canonical_vectors(b));
  std::sort(lhs.begin(), lhs.end());
  std::sort(rhs.begin(), rhs.end());
  EXPECT_EQ(lhs, rhs);
}

TEST(Example2, GroupsAtK1) {
  const auto [g1, g2] = diagonal_pair_groups(4, 1);
  using P = std::vector<std::pair<Index, Index>>;
  EXPECT_EQ(g1, (P{{0, 1}, {2, 3}}));
  EXPECT_EQ(g2, (P{{0, 3}, {1, 2}}));
}

TEST(Example2, GroupsPartitionDiagonalsAndMatchIndices) {
  for (Index d : {4, 8, 16, 32}) {
    for (Index k = 1; k <= d / 2; ++k) {
      const auto [g1, g2] = diagonal_pair_groups(d, k);
      std::multiset<std::pair<Index, Index>> all(g1.begin(), g1.end());
      all.insert(g2.begin(), g2.end());
      std::multiset<std::pair<Index, Index>> v;
      for (Index m = 0; m + k < d; ++m) v.insert({m, m + k});
      for (Index m = 0; m < k; ++m) v.insert({m, m + d - k});
      EXPECT_EQ(all, v) << "d=" << d << " k=" << k;
      for (const auto* g : {&g1, &g2}) {
        std::vector<int> seen(std::size_t(d), 0);
        for (const auto& [m, n] : *g) {
          ++seen[std::size_t(m)];
          ++seen[std::size_t(n)];
        }
        EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }))
            << "d=" << d << " k=" << k;
      }
    }
  }
}

TEST(Example2, OrthonormalAcrossSizes) {
  for (Index d : {4, 8, 16}) {
    for (Index r = 1; r <= d / 2; ++r) {
      const auto c = example2_bases(d, r);
      EXPECT_EQ(c.bases.size(), std::size_t(4 * r + 1));
      EXPECT_LE(c.bases.max_unitarity_error(), 1e-10) << "d=" << d << " r=" << r;
      for (const auto& b : c.bases.bases) EXPECT_EQ(b.rows(), d);
    }
  }
}

TEST(Example2, PatternFromProjectorExpansion) {
  const auto c = example2_bases(8, 2);
  EXPECT_EQ(c.bases.size(), 9u);
  std::vector<oracle::Mat> effects;
  for (const auto& p : c.ep.povms)
    for (const auto& e : p.effects()) effects.push_back(e.matrix());
  std::set<Index> diags;
  for (const auto& [i, j] : oracle::touched_entries(effects, 8)) {
    if (j >= i) diags.insert(j - i);
  }
  EXPECT_EQ(diags, (std::set<Index>{0, 1, 2, 6, 7}));
  EXPECT_EQ(diagonals_of(pattern_of(c.ep)), diags);
  EXPECT_EQ(pattern_of(c.ep), ElementPattern::band(8, 2, true));
}

TEST(Example2, Nesting) {
  for (Index d : {8, 16}) {
    for (Index r = 2; r <= d / 2; ++r) {
      const auto big = example2_bases(d, r);
      const auto small = example2_bases(d, r - 1);
      for (std::size_t b = 0; b < small.bases.size(); ++b) {
        EXPECT_EQ(big.bases.bases[b], small.bases.bases[b]);
      }
    }
  }
}

TEST(Example2, WarnsForLargeRank) {
  EXPECT_TRUE(example2_bases(16, 3).ep.warnings.empty());
  EXPECT_FALSE(example2_bases(16, 4).ep.warnings.empty());
}

TEST(Example2, Preconditions) {
  EXPECT_THROW(example2_bases(6, 1), std::invalid_argument);
  EXPECT_THROW(example2_bases(8, 5), std::invalid_argument);
}

TEST(Suite, AllValidAndExactOnFullRankStates) {
  for (const auto& ep : construction_suite()) {
    for (const auto& p : ep.povms) {
      const auto v = validate_povm(p, 1e-10);
      EXPECT_TRUE(v.valid()) << to_string(ep.kind) << " d=" << ep.dim
                             << " residual=" << v.identity_residual;
    }
    for (std::uint64_t s = 0; s < 50; ++s) {
      const auto rho = random_rank_r_state(ep.dim, ep.dim, 4000 + s);
      const auto part = extract_elements(ep, born_probabilities(ep, rho));
      double err = 0.0;
      for (const auto& [i, j] : ep.pattern.lower_entries()) {
        err = std::max(err, std::abs(part(i, j) - rho.matrix()(i, j)));
      }
      EXPECT_LE(err, 1e-10) << to_string(ep.kind) << " d=" << ep.dim;
    }
  }
}
