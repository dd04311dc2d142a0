#include <gtest/gtest.h>

#include <limits>
#include <random>

#include <qdt/simplex.hpp>

using namespace qdt;

namespace {

// Exact projection by enumerating every support set: on a support S the
// projection is v_S shifted to sum 1; keep the closest nonnegative candidate.
Eigen::VectorXd enumerate_projection(const Eigen::VectorXd& v) {
  const int n = static_cast<int>(v.size());
  Eigen::VectorXd best;
  double best_d = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    double sum = 0.0;
    int size = 0;
    for (int i = 0; i < n; ++i)
      if (mask >> i & 1u) {
        sum += v(i);
        ++size;
      }
    const double shift = (sum - 1.0) / size;
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    bool ok = true;
    for (int i = 0; i < n; ++i)
      if (mask >> i & 1u) {
        z(i) = v(i) - shift;
        ok = ok && z(i) >= 0.0;
      }
    if (!ok) continue;
    const double d = (z - v).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = z;
    }
  }
  return best;
}

} // namespace

TEST(Simplex, MatchesSupportEnumeration) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    Eigen::VectorXd v(9);
    const double scale = trial % 3 == 0 ? 0.1 : (trial % 3 == 1 ? 1.0 : 10.0);
    for (int i = 0; i < 9; ++i) v(i) = scale * g(rng);
    const auto z = projected_to_simplex(v);
    EXPECT_LT((z - enumerate_projection(v)).cwiseAbs().maxCoeff(), 1e-10) << "trial " << trial;
  }
}

TEST(Simplex, FixedPointsAndTies) {
  Eigen::VectorXd p(4);
  p << 0.1, 0.2, 0.3, 0.4;
  EXPECT_LT((projected_to_simplex(p) - p).cwiseAbs().maxCoeff(), 1e-15);

  Eigen::VectorXd t = Eigen::VectorXd::Constant(5, 3.0);
  const auto z = projected_to_simplex(t);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(z(i), 0.2, 1e-15);

  Eigen::VectorXd e(3);
  e << 5.0, -1.0, -2.0;
  const auto ze = projected_to_simplex(e);
  EXPECT_EQ(ze(0), 1.0);
  EXPECT_EQ(ze(1), 0.0);
  EXPECT_EQ(ze(2), 0.0);
}

TEST(Simplex, RowsOfMatrix) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Random(20, 7) * 3.0;
  project_rows_to_simplex(m);
  for (int k = 0; k < 20; ++k) {
    EXPECT_NEAR(m.row(k).sum(), 1.0, 1e-14);
    EXPECT_GE(m.row(k).minCoeff(), 0.0);
  }
}
