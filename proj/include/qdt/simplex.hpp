#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace qdt {

/// Euclidean projection of v onto the probability simplex {z >= 0, sum z = 1}.
///
/// Sort-based threshold search. Equal entries are ordered by index so the
/// result is bit-reproducible.
template <class Derived>
void project_to_simplex(Eigen::MatrixBase<Derived>& v) {
  const Eigen::Index n = v.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return v(a) > v(b); });

  double cumulative = 0.0;
  double tau = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    cumulative += v(order[static_cast<std::size_t>(j)]);
    const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (v(order[static_cast<std::size_t>(j)]) - t > 0.0) tau = t;
  }
  for (Eigen::Index j = 0; j < n; ++j) v(j) = std::max(v(j) - tau, 0.0);
}

template <class Derived>
void project_to_simplex(Eigen::MatrixBase<Derived>&& v) {
  project_to_simplex(v);
}

inline Eigen::VectorXd projected_to_simplex(Eigen::VectorXd v) {
  project_to_simplex(v);
  return v;
}

/// Projects every row of m onto the simplex.
inline void project_rows_to_simplex(Eigen::MatrixXd& m) {
  for (Eigen::Index k = 0; k < m.rows(); ++k) project_to_simplex(m.row(k));
}

} // namespace qdt
