#include <gtest/gtest.h>

#include "hopmeta/disorder.hpp"

using namespace hopmeta;

TEST(PatternDistribution, SortsSupportAndRejectsBadInput) {
  PatternDistribution d({1.0, -1.0}, {0.55, 0.45});
  EXPECT_EQ(d.support(), (std::vector<double>{-1.0, 1.0}));
  EXPECT_EQ(d.probabilities(), (std::vector<double>{0.45, 0.55}));
  EXPECT_EQ(d.draw(0.0), 0u);
  EXPECT_EQ(d.draw(0.4499), 0u);
  EXPECT_EQ(d.draw(0.45), 1u);
  EXPECT_EQ(d.draw(0.999999), 1u);
  EXPECT_THROW(PatternDistribution({1.0, 1.0}, {0.5, 0.5}), ValidationError);
  EXPECT_THROW(PatternDistribution({2.0}, {1.0}), ValidationError);
  EXPECT_THROW(PatternDistribution({0.0, 1.0}, {0.5, 0.6}), ValidationError);
  EXPECT_THROW(PatternDistribution({0.0, 1.0}, {1.0, 0.0}), ValidationError);
  EXPECT_THROW(PatternDistribution({}, {}), ValidationError);
}

TEST(TypeDecomposition, CountsSumToNAndSitesMapBack) {
  auto e = sample_patterns({PatternDistribution::uniform({-1.0, 1.0}), PatternDistribution({-0.5, 0.0, 1.0}, {0.2, 0.3, 0.5})}, 500, 7);
  TypeTable t = type_decomposition(e);
  EXPECT_EQ(t.n(), 500);
  EXPECT_LE(t.size(), 6u);
  long total = 0;
  for (long c : t.counts()) total += c;
  EXPECT_EQ(total, 500);
  for (std::size_t i = 0; i < e.n; ++i)
    for (std::size_t j = 0; j < e.p(); ++j) EXPECT_EQ(t.type(t.site_types()[i])[j], e.value(i, j));
  for (std::size_t a = 1; a < t.size(); ++a) EXPECT_LT(t.type(a - 1), t.type(a));
}

TEST(TypeDecomposition, SampleIsDeterministicInSeed) {
  std::vector<PatternDistribution> d{PatternDistribution({-1.0, 1.0}, {0.45, 0.55})};
  EXPECT_EQ(sample_patterns(d, 300, 3).columns, sample_patterns(d, 300, 3).columns);
  EXPECT_NE(sample_patterns(d, 300, 3).columns, sample_patterns(d, 300, 4).columns);
}

TEST(ExpectedPatterns, LargestRemainderCounts) {
  TypeTable t = type_decomposition(expected_patterns({PatternDistribution({-1.0, 1.0}, {0.45, 0.55})}, 101));
  ASSERT_EQ(t.size(), 2u);
  // 45.45 and 55.55: the larger remainder gets the spare site
  EXPECT_EQ(t.count(0), 45);
  EXPECT_EQ(t.count(1), 56);
  TypeTable u = type_decomposition(expected_patterns({PatternDistribution::uniform({-1.0, 1.0}), PatternDistribution::uniform({-1.0, 1.0})}, 12));
  EXPECT_EQ(u.counts(), (std::vector<long>{3, 3, 3, 3}));
}

TEST(TypeTable, DiracPatternGivesOneType) {
  TypeTable t = type_decomposition(sample_patterns({PatternDistribution::dirac(1.0)}, 10, 1));
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(t.count(0), 10);
}

TEST(TypeTable, FixedTableSortsAndValidates) {
  TypeTable t({{1.0, -1.0}, {1.0, 1.0}, {-1.0, 0.5}}, {2, 3, 4});
  EXPECT_EQ(t.type(0), (std::vector<double>{-1.0, 0.5}));
  EXPECT_EQ(t.counts(), (std::vector<long>{4, 2, 3}));
  EXPECT_EQ(t.n(), 9);
  EXPECT_THROW(TypeTable({{1.0}, {1.0}}, {1, 1}), ValidationError);
  EXPECT_THROW(TypeTable({{1.0}}, {0}), ValidationError);
  EXPECT_THROW(TypeTable({{1.0}, {1.0, 0.0}}, {1, 1}), ValidationError);
}
