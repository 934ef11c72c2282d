#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "hmexpr/errors.hpp"
#include "hmexpr/metrics.hpp"
#include "support.hpp"

using namespace hmexpr;
using hmexpr::testing::pairwise_auroc;

TEST(Auroc, PerfectSeparation) {
  EXPECT_DOUBLE_EQ(auroc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{1, 1, -1, -1}), 1.0);
}

TEST(Auroc, AllTies) {
  EXPECT_DOUBLE_EQ(auroc(std::vector<double>(6, 0.3), std::vector<int>{1, -1, 1, -1, 1, 1}), 0.5);
}

TEST(Auroc, HandCountedExample) {
  EXPECT_DOUBLE_EQ(auroc(std::vector<double>{0.8, 0.6, 0.7, 0.2}, std::vector<int>{1, -1, -1, 1}), 0.5);
}

TEST(Auroc, SingleClassRejected) {
  EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ConfigError);
  EXPECT_THROW(auroc(std::vector<double>{0.1}, std::vector<int>{1, -1}), ConfigError);
}

TEST(Auroc, MatchesPairwiseOracleWithTies) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 50)(rng);
    const int levels = std::uniform_int_distribution<int>(2, 12)(rng);
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::uniform_int_distribution<int>(0, levels)(rng) / static_cast<double>(levels);
      l[i] = (rng() & 1) ? 1 : -1;
    }
    l[0] = 1;
    l[1] = -1;
    EXPECT_EQ(auroc(s, l), pairwise_auroc(s, l));
  }
}

TEST(Auroc, FlipComplementsAndMonotoneInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(30);
    std::vector<int> l(30), flipped(30);
    for (std::size_t i = 0; i < 30; ++i) {
      s[i] = std::round(u(rng) * 10) / 10;
      l[i] = i % 3 == 0 ? 1 : -1;
      flipped[i] = -l[i];
    }
    EXPECT_EQ(auroc(s, l) + auroc(s, flipped), 1.0);
    std::vector<double> t(30);
    for (std::size_t i = 0; i < 30; ++i) t[i] = std::exp(3 * s[i]) - 7;
    EXPECT_EQ(auroc(t, l), auroc(s, l));
  }
}

namespace {

RpkmTable table_of(std::vector<std::vector<double>> cols) {
  RpkmTable t;
  for (std::size_t c = 0; c < cols.size(); ++c) t.cell_ids.push_back("C" + std::to_string(c + 1));
  for (std::size_t g = 0; g < cols[0].size(); ++g) {
    t.gene_ids.push_back("G" + std::to_string(g));
    std::vector<double> row;
    for (const auto& col : cols) row.push_back(col[g]);
    t.values.push_back(row);
  }
  return t;
}

}  // namespace

TEST(Correlation, IdenticalCellsAllOnes) {
  const auto m = correlation_matrix(table_of({{1, 5, 2, 9}, {1, 5, 2, 9}}), {});
  for (double v : m.values) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_TRUE(m.normalized);
}

TEST(Correlation, AntiCorrelatedEndpoints) {
  // log1p(b) = -log1p(a) + const  ->  b = e^c / (1 + a) - 1.
  const std::vector<double> a{0.5, 2, 7, 20, 3};
  std::vector<double> b;
  for (double v : a) b.push_back(std::exp(4.0) / (1 + v) - 1);
  const auto m = correlation_matrix(table_of({a, b}), {});
  EXPECT_NEAR(m.raw[1], -1.0, 1e-12);
  EXPECT_NEAR(m.at(0, 1), 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(m.at(0, 0), 1.0);
}

TEST(Correlation, SymmetricDiagonalMaxAndIdempotent) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 50);
  std::vector<std::vector<double>> cols(4, std::vector<double>(40));
  for (auto& c : cols)
    for (double& v : c) v = u(rng);
  const auto m = correlation_matrix(table_of(cols), {});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(m.at(i, j), m.at(j, i), 1e-12);
      EXPECT_GE(m.at(i, j), 0.0);
      EXPECT_LE(m.at(i, j), m.at(i, i));
    }
  EXPECT_EQ(normalize_correlation(m).values, m.values);
}

TEST(Correlation, DegenerateCellFlagged) {
  const auto m = correlation_matrix(table_of({{1, 2, 3}, {4, 4, 4}}), {}, {true, false});
  EXPECT_EQ(m.degenerate_cells, std::vector<std::string>{"C2"});
  EXPECT_DOUBLE_EQ(m.raw[1], 0.0);
}

TEST(Correlation, GeneFilterAndErrors) {
  const RpkmTable t = table_of({{1, 2, 3, 100}, {1, 2, 3, 0}});
  const std::vector<std::string> first3{"G0", "G1", "G2"};
  EXPECT_NEAR(correlation_matrix(t, first3, {true, false}).raw[1], 1.0, 1e-12);
  const std::vector<std::string> one{"G0"};
  EXPECT_THROW(correlation_matrix(t, one), ConfigError);
  EXPECT_THROW(correlation_matrix(table_of({{1, 2, 3}}), {}), ConfigError);
}

TEST(Correlation, PerturbationOrdersCorrelation) {
  SyntheticSpec spec;
  spec.cells = 3;
  spec.genes_per_cell = 1500;
  spec.cell_perturbations = {0.0, 0.15, 0.6};
  const auto cells = generate_synthetic_corpus(spec, 31);
  const auto m = correlation_matrix(rpkm_table(cells), {}, {true, false});
  EXPECT_GT(m.at("C1", "C2"), m.at("C1", "C3"));
}

TEST(Correlation, CsvHasHeaderRowAndColumn) {
  const auto m = correlation_matrix(table_of({{1, 2, 3}, {3, 1, 2}}), {});
  std::ostringstream os;
  write_correlation_csv(os, m);
  EXPECT_EQ(os.str().substr(0, 9), "cell,C1,C");
}

TEST(ClassMeans, SymmetricInitIsHalf) {
  std::mt19937_64 rng(4);
  const Classifier m = build_classifier(ArchSpec::of(ArchKind::Original), 0, InitMode::Zeros);
  const auto means = mean_class_prob(m, hmexpr::testing::random_tensor({10, 5, 100}, rng, 0, 2));
  EXPECT_DOUBLE_EQ(means.positive, 0.5);
  EXPECT_DOUBLE_EQ(means.negative, 0.5);
}

TEST(ClassMeans, SumToOne) {
  std::mt19937_64 rng(4);
  const Classifier m = build_classifier(ArchSpec::of(ArchKind::Strided), 3);
  const auto means = mean_class_prob(m, hmexpr::testing::random_tensor({700, 5, 100}, rng, 0, 2));
  EXPECT_NEAR(means.positive + means.negative, 1.0, 1e-9);
}
