#include <gtest/gtest.h>

#include <cmath>

#include "enlfcn/metrics.hpp"
#include "enlfcn/random.hpp"
#include "oracles.hpp"

using namespace enlfcn;

TEST(Metrics, DiagonalIsPerfect) {
  ConfusionMatrix cm(3, {5, 0, 0, 0, 7, 0, 0, 0, 2});
  EXPECT_EQ(overall_accuracy(cm), 1.0);
  EXPECT_EQ(average_accuracy(cm), 1.0);
  EXPECT_EQ(kappa(cm), 1.0);
}

TEST(Metrics, ChanceLevelKappaIsZero) {
  ConfusionMatrix cm(2, {25, 25, 25, 25});
  EXPECT_EQ(overall_accuracy(cm), 0.5);
  EXPECT_EQ(kappa(cm), 0.0);
}

TEST(Metrics, KappaUndefinedWhenChanceIsOne) {
  ConfusionMatrix cm(2, {10, 0, 0, 0});
  EXPECT_THROW(kappa(cm), UndefinedValueError);
}

TEST(Metrics, EmptyClassSkippedInAverage) {
  ConfusionMatrix cm(3, {3, 1, 0, 0, 0, 0, 1, 0, 4});
  EXPECT_DOUBLE_EQ(average_accuracy(cm), (0.75 + 0.8) / 2);
  EXPECT_TRUE(std::isnan(per_class_accuracy(cm)[1]));
}

TEST(Metrics, RandomMatricesAgreeWithOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 2 + rng.below(8);
    std::vector<std::uint64_t> counts(c * c);
    std::vector<std::vector<double>> dense(c, std::vector<double>(c));
    for (std::size_t i = 0; i < c * c; ++i) {
      counts[i] = rng.below(50);
      dense[i / c][i % c] = static_cast<double>(counts[i]);
    }
    const ConfusionMatrix cm(c, counts);
    const auto want = oracle::scores(dense);
    EXPECT_NEAR(overall_accuracy(cm), want.oa, 1e-12);
    EXPECT_NEAR(average_accuracy(cm), want.aa, 1e-12);
    EXPECT_NEAR(kappa(cm), want.kappa, 1e-12);
  }
}

TEST(Confusion, TalliesMaskedLabeledPixels) {
  LabelMap truth(1, 4, std::vector<std::int32_t>{1, 2, 0, 2});
  LabelMap pred(1, 4, std::vector<std::int32_t>{1, 1, 2, 2});
  std::vector<std::uint8_t> region{1, 1, 1, 0};
  const auto cm = confusion(pred, truth, region, 2);
  EXPECT_EQ(cm.total(), 2u);
  EXPECT_EQ(cm.at(0, 0), 1u);
  EXPECT_EQ(cm.at(1, 0), 1u);
}

TEST(Report, CsvLayout) {
  ConfusionMatrix cm(2, {3, 1, 0, 4});
  const std::string csv = metrics_csv(summarize(cm));
  EXPECT_EQ(csv.rfind("class,accuracy\n", 0), 0u);
  EXPECT_NE(csv.find("\nOA,"), std::string::npos);
  EXPECT_NE(csv.find("\nKappa,"), std::string::npos);
}
