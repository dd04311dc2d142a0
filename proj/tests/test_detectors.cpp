#include <gtest/gtest.h>

#include <bit>
#include <cmath>

#include <qdt/detectors.hpp>

using namespace qdt;

namespace {

// Every photon independently picks a leaf of the splitter tree; the leaf
// probability is the product of the stage reflectivities/transmittivities on
// its path. A bin clicks iff it is occupied.
std::vector<double> brute_force_clicks(const SplitterTree& tree, int k) {
  const int bins = tree.bins();
  std::vector<double> leaf(static_cast<std::size_t>(bins), 1.0);
  for (int b = 0; b < bins; ++b)
    for (int s = 1; s <= tree.depth(); ++s)
      leaf[b] *= ((b >> (s - 1)) & 1) ? tree.reflectivity(s) : tree.transmittivity(s);

  std::vector<double> clicks(static_cast<std::size_t>(bins) + 1, 0.0);
  std::vector<int> choice(static_cast<std::size_t>(k), 0);
  for (;;) {
    double prob = 1.0;
    unsigned occupied = 0;
    for (int c : choice) {
      prob *= leaf[c];
      occupied |= 1u << c;
    }
    clicks[std::popcount(occupied)] += prob;
    int i = 0;
    while (i < k && ++choice[i] == bins) choice[i++] = 0;
    if (i == k) break;
  }
  return clicks;
}

} // namespace

TEST(Apd, ClosedForms) {
  const auto ideal = apd_povm(1.0, 10);
  EXPECT_EQ(ideal(0, 0), 1.0);
  for (int k = 1; k <= 10; ++k) {
    EXPECT_EQ(ideal(k, 0), 0.0);
    EXPECT_EQ(ideal(k, 1), 1.0);
  }
  const auto blind = apd_povm(0.0, 10);
  for (int k = 0; k <= 10; ++k) EXPECT_EQ(blind(k, 0), 1.0);
  EXPECT_NEAR(apd_povm(0.568, 10)(2, 0), 0.186624, 1e-15);
  EXPECT_THROW(apd_povm(1.2, 10), ValidationError);
}

TEST(SplitterTree, Validation) {
  EXPECT_THROW(SplitterTree({}), ValidationError);
  EXPECT_THROW(SplitterTree({0.5, 1.0}), ValidationError);
  EXPECT_EQ(SplitterTree::measured_8bin().bins(), 8);
  EXPECT_DOUBLE_EQ(SplitterTree::measured_8bin().reflectivity(3), 0.4192);
}

TEST(Binning, BaseCaseAndVacuum) {
  const auto b = binning_recursion(SplitterTree::balanced(1), 10);
  EXPECT_EQ(b(0, 0), 1.0);
  EXPECT_EQ(b(0, 1), 0.0);
  EXPECT_EQ(b(0, 2), 0.0);
  EXPECT_NEAR(b(2, 1), 0.5, 1e-15);
  const auto b8 = binning_recursion(SplitterTree::balanced(3), 10);
  EXPECT_EQ(b8.row(0).sum(), 1.0);
  EXPECT_EQ(b8(0, 0), 1.0);
  EXPECT_NEAR(b8(2, 1), 0.125, 1e-15);
}

TEST(Binning, RowNormalizationAndClickBound) {
  for (const auto& tree : {SplitterTree::balanced(1), SplitterTree::balanced(2), SplitterTree::balanced(3),
                           SplitterTree::measured_8bin(), SplitterTree({0.3, 0.7, 0.45, 0.52})}) {
    const auto b = binning_recursion(tree, 60);
    ASSERT_EQ(b.cols(), tree.bins() + 1);
    for (int k = 0; k <= 60; ++k) {
      EXPECT_LE(std::abs(b.row(k).sum() - 1.0), 1e-12) << "k=" << k;
      for (int j = k + 1; j <= tree.bins(); ++j) EXPECT_EQ(b(k, j), 0.0);
      EXPECT_GE(b.row(k).minCoeff(), 0.0);
    }
  }
}

TEST(Binning, MatchesBruteForceBinAssignment) {
  for (const auto& tree : {SplitterTree::balanced(1), SplitterTree::balanced(2), SplitterTree::balanced(3),
                           SplitterTree::measured_8bin()}) {
    const auto b = binning_recursion(tree, 6);
    for (int k = 0; k <= 6; ++k) {
      const auto oracle = brute_force_clicks(tree, k);
      for (int j = 0; j <= tree.bins(); ++j)
        EXPECT_NEAR(b(k, j), oracle[static_cast<std::size_t>(j)], 1e-12)
            << "depth " << tree.depth() << " k=" << k << " j=" << j;
    }
  }
}

TEST(Loss, Properties) {
  EXPECT_EQ(loss_matrix(1.0, 20), Matrix::Identity(21, 21));
  const auto l = loss_matrix(0.5, 20);
  EXPECT_NEAR(l(0, 2), 0.25, 1e-15);
  EXPECT_NEAR(l(1, 2), 0.5, 1e-15);
  EXPECT_NEAR(l(2, 2), 0.25, 1e-15);
  for (double eta : {0.0, 0.2, 0.479, 0.8, 1.0}) {
    const auto m = loss_matrix(eta, 60);
    for (int k = 0; k <= 60; ++k) {
      EXPECT_LE(std::abs(m.col(k).sum() - 1.0), 1e-12) << eta << " " << k;
      for (int kp = k + 1; kp <= 60; ++kp) EXPECT_EQ(m(kp, k), 0.0);
    }
  }
}

TEST(Loss, LogGammaBinomialsAgreeWithProducts) {
  for (int n : {51, 55, 60})
    for (int r : {0, 1, 7, 25, n})
      EXPECT_NEAR(binomial_coefficient(n, r), std::round(std::exp(log_binomial(n, r))),
                  1e-12 * binomial_coefficient(n, r));
  EXPECT_DOUBLE_EQ(binomial_coefficient(10, 3), 120.0);
}

TEST(LossyTmd, LimitsAndStructure) {
  const auto tree = SplitterTree::measured_8bin();
  EXPECT_LT((lossy_tmd_povm(tree, 1.0, 60).coeffs() - tmd_povm(tree, 60).coeffs()).cwiseAbs().maxCoeff(), 1e-15);
  const auto blind = lossy_tmd_povm(tree, 0.0, 60);
  for (int k = 0; k <= 60; ++k) EXPECT_NEAR(blind(k, 0), 1.0, 1e-15);

  const auto lossy = lossy_tmd_povm(SplitterTree::balanced(3), 0.48, 60);
  for (int k = 0; k <= 60; ++k)
    for (int j = k + 1; j <= 8; ++j) EXPECT_EQ(lossy(k, j), 0.0);
}

TEST(LossyTmd, NonzeroLevelsStayNonzero) {
  for (const auto& povm : {povm_zoo(ZooCase::lossy_tmd_52), povm_zoo(ZooCase::sharp_artificial_loss_20),
                           apd_povm(0.3, 60)})
    for (int n = 0; n < povm.outcomes(); ++n)
      for (int k = 0; k < povm.truncation(); ++k)
        if (povm(k, n) > 0.0) EXPECT_GT(povm(k + 1, n), 0.0) << "n=" << n << " k=" << k;
}

TEST(Zoo, Cases) {
  const auto perfect = povm_zoo(ZooCase::perfect_number);
  for (int n = 0; n < 8; ++n)
    for (int k = 0; k <= 60; ++k) EXPECT_EQ(perfect(k, n), k == n ? 1.0 : 0.0);
  for (int k = 8; k <= 60; ++k) EXPECT_EQ(perfect(k, 8), 1.0);

  for (auto c : kAllZooCases) {
    const auto p = povm_zoo(c);
    EXPECT_EQ(p.truncation(), 60);
    EXPECT_EQ(p.outcomes(), 9);
    for (int k = 0; k <= 60; ++k) EXPECT_NEAR(p.coeffs().row(k).sum(), 1.0, 1e-12) << to_string(c);
    EXPECT_EQ(zoo_case_from_string(to_string(c)), c);
  }
  EXPECT_THROW(zoo_case_from_string("nope"), ValidationError);

  const auto sharp = povm_zoo(ZooCase::sharp_artificial);
  EXPECT_EQ(sharp(0, 0), 1.0);
  EXPECT_EQ(sharp(2, 0), 1.0);
  EXPECT_EQ(sharp(3, 1), 0.5);
  EXPECT_EQ(sharp(8, 8), 0.5);
  for (int k = 9; k <= 60; ++k) EXPECT_EQ(sharp(k, 8), 1.0);

  // loss spreads every populated level upward
  const auto lossy = povm_zoo(ZooCase::sharp_artificial_loss_20);
  for (int n = 0; n < 9; ++n)
    for (int k = 0; k < 60; ++k)
      if (sharp(k, n) > 0.0) EXPECT_GT(lossy(k + 1, n), 0.0);
}
