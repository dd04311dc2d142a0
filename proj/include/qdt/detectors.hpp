#pragma once

// Forward models of photon counters: APD click/no-click, the time-multiplexed
// detector (TMD) binning recursion, binomial loss, and the benchmark POVMs.

#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "fock.hpp"

namespace qdt {

/// Binary splitter tree of a TMD. reflectivities[s] is used at recursion
/// level s + 1; level 1 is the base two-bin detector.
class SplitterTree {
public:
  explicit SplitterTree(std::vector<double> reflectivities) : r_(std::move(reflectivities)) {
    if (r_.empty()) throw ValidationError("splitter tree needs depth >= 1");
    for (double r : r_)
      if (!(r > 0.0 && r < 1.0))
        throw ValidationError("splitter reflectivity " + std::to_string(r) + " outside (0, 1)");
  }

  static SplitterTree balanced(int depth) {
    if (depth < 1) throw ValidationError("splitter tree needs depth >= 1");
    return SplitterTree(std::vector<double>(static_cast<std::size_t>(depth), 0.5));
  }

  /// The three measured stage reflectivities of the 8-bin device.
  static SplitterTree measured_8bin() { return SplitterTree({0.5018, 0.5060, 0.4192}); }

  int depth() const { return static_cast<int>(r_.size()); }
  int bins() const { return 1 << depth(); }
  double reflectivity(int level) const { return r_.at(static_cast<std::size_t>(level - 1)); }
  double transmittivity(int level) const { return 1.0 - reflectivity(level); }
  const std::vector<double>& reflectivities() const { return r_; }

private:
  std::vector<double> r_;
};

/// B(k, j) = probability of j clicks given k incident photons.
using BinningMatrix = Matrix;

/// L(k', k) = probability that k' of k photons survive.
using LossMatrix = Matrix;

/// log C(n, r).
inline double log_binomial(int n, int r) {
  return std::lgamma(n + 1.0) - std::lgamma(r + 1.0) - std::lgamma(n - r + 1.0);
}

inline double binomial_coefficient(int n, int r) {
  if (r < 0 || r > n) return 0.0;
  if (n > 50) return std::exp(log_binomial(n, r));
  double c = 1.0;
  for (int i = 1; i <= r; ++i) c = c * (n - r + i) / i;
  return c;
}

/// Click/no-click detector behind a splitter of transmittivity eta.
inline FockDiagonalPOVM apd_povm(double eta, int truncation) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ValidationError("APD efficiency must lie in [0, 1]");
  if (truncation < 1) throw ValidationError("Fock truncation M must be >= 1");
  Matrix theta(truncation + 1, 2);
  for (int k = 0; k <= truncation; ++k) {
    theta(k, 0) = std::pow(1.0 - eta, k);
    theta(k, 1) = 1.0 - theta(k, 0);
  }
  return FockDiagonalPOVM(std::move(theta));
}

/// Click statistics of a 2^depth-bin TMD by repeated doubling.
///
/// The two-bin base case is p(0|0) = 1, p(1|k) = T^k + R^k and
/// p(2|k) = 1 - T^k - R^k for k >= 1. Each further level splits k photons
/// binomially between two copies of the previous detector and convolves
/// their click distributions.
inline BinningMatrix binning_recursion(const SplitterTree& tree, int truncation) {
  if (truncation < 1) throw ValidationError("Fock truncation M must be >= 1");
  const int m = truncation;

  // table(k, j) at the current level
  Matrix table = Matrix::Zero(m + 1, 3);
  {
    const double r = tree.reflectivity(1), t = tree.transmittivity(1);
    table(0, 0) = 1.0;
    for (int k = 1; k <= m; ++k) {
      const double one = std::pow(t, k) + std::pow(r, k);
      table(k, 1) = one;
      table(k, 2) = 1.0 - one;
    }
  }

  for (int level = 2; level <= tree.depth(); ++level) {
    const double r = tree.reflectivity(level), t = tree.transmittivity(level);
    const Eigen::Index prev_clicks = table.cols();
    Matrix next = Matrix::Zero(m + 1, 2 * (prev_clicks - 1) + 1);
    for (int k = 0; k <= m; ++k) {
      for (int x = 0; x <= k; ++x) {
        const double split =
            std::exp(log_binomial(k, x) + (k - x) * std::log(t) + x * std::log(r));
        for (Eigen::Index s = 0; s < prev_clicks; ++s) {
          const double ps = table(x, s);
          if (ps == 0.0) continue;
          for (Eigen::Index q = 0; q < prev_clicks; ++q)
            next(k, s + q) += split * ps * table(k - x, q);
        }
      }
    }
    table = std::move(next);
  }
  return table;
}

inline LossMatrix loss_matrix(double eta, int truncation) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ValidationError("efficiency must lie in [0, 1]");
  if (truncation < 1) throw ValidationError("Fock truncation M must be >= 1");
  LossMatrix l = LossMatrix::Zero(truncation + 1, truncation + 1);
  for (int k = 0; k <= truncation; ++k)
    for (int kp = 0; kp <= k; ++kp)
      l(kp, k) = binomial_coefficient(k, kp) * std::pow(eta, kp) * std::pow(1.0 - eta, k - kp);
  return l;
}

/// theta_k^(n) -> sum_k' L(k', k) theta_k'^(n): loss in front of any detector.
inline FockDiagonalPOVM apply_loss(const FockDiagonalPOVM& povm, double eta) {
  return FockDiagonalPOVM(loss_matrix(eta, povm.truncation()).transpose() * povm.coeffs());
}

inline FockDiagonalPOVM tmd_povm(const SplitterTree& tree, int truncation) {
  return FockDiagonalPOVM(binning_recursion(tree, truncation));
}

/// Loss (efficiency eta) followed by the binning of the splitter tree.
inline FockDiagonalPOVM lossy_tmd_povm(const SplitterTree& tree, double eta, int truncation) {
  const BinningMatrix b = binning_recursion(tree, truncation);
  return FockDiagonalPOVM(loss_matrix(eta, truncation).transpose() * b);
}

enum class ZooCase { lossless_tmd, lossy_tmd_52, perfect_number, sharp_artificial, sharp_artificial_loss_20 };

inline constexpr std::array<ZooCase, 5> kAllZooCases{
    ZooCase::lossless_tmd, ZooCase::lossy_tmd_52, ZooCase::perfect_number,
    ZooCase::sharp_artificial, ZooCase::sharp_artificial_loss_20};

/// Overall efficiency of the lossy benchmark TMD (52.1% loss).
inline constexpr double kLossyTmdEfficiency = 1.0 - 0.521;

inline std::string to_string(ZooCase c) {
  switch (c) {
    case ZooCase::lossless_tmd: return "lossless_tmd";
    case ZooCase::lossy_tmd_52: return "lossy_tmd_52";
    case ZooCase::perfect_number: return "perfect_number";
    case ZooCase::sharp_artificial: return "sharp_artificial";
    case ZooCase::sharp_artificial_loss_20: return "sharp_artificial_loss_20";
  }
  return "?";
}

inline ZooCase zoo_case_from_string(std::string_view s) {
  for (ZooCase c : kAllZooCases)
    if (to_string(c) == s) return c;
  throw ValidationError("unknown model case '" + std::string(s) + "'");
}

/// Number-resolving detector with `outcomes` outcomes; the last outcome
/// collects every level >= outcomes - 1.
inline FockDiagonalPOVM perfect_number_povm(int outcomes, int truncation) {
  if (outcomes < 2 || truncation < outcomes - 1)
    throw ValidationError("perfect counter needs 2 <= outcomes <= M + 1");
  Matrix theta = Matrix::Zero(truncation + 1, outcomes);
  for (int k = 0; k <= truncation; ++k) theta(k, std::min(k, outcomes - 1)) = 1.0;
  return FockDiagonalPOVM(std::move(theta));
}

/// Nine-outcome POVM with sharp, non-monotone features in k.
inline FockDiagonalPOVM sharp_artificial_povm(int truncation = kDefaultTruncation) {
  if (truncation < 9) throw ValidationError("sharp artificial POVM needs M >= 9");
  Matrix t = Matrix::Zero(truncation + 1, 9);
  t(0, 0) = 1.0;
  t(2, 0) = 1.0;
  t(1, 1) = 1.0;
  t(3, 1) = 0.5;
  t(3, 2) = 0.5;
  t(4, 2) = 1.0;
  t(5, 2) = 1.0;
  // Level 7 is split evenly between outcomes 3 and 7 so the set stays complete.
  t(7, 3) = 0.5;
  t(6, 4) = 0.25;
  t(8, 4) = 0.25;
  t(6, 5) = 0.25;
  t(8, 5) = 0.25;
  t(6, 6) = 0.5;
  t(7, 7) = 0.5;
  t(8, 8) = 0.5;
  for (int k = 9; k <= truncation; ++k) t(k, 8) = 1.0;
  return FockDiagonalPOVM(std::move(t));
}

/// The benchmark detectors of the smoothing study, truncated at M = 60.
inline FockDiagonalPOVM povm_zoo(ZooCase c, int truncation = kDefaultTruncation) {
  switch (c) {
    case ZooCase::lossless_tmd: return tmd_povm(SplitterTree::measured_8bin(), truncation);
    case ZooCase::lossy_tmd_52:
      return lossy_tmd_povm(SplitterTree::measured_8bin(), kLossyTmdEfficiency, truncation);
    case ZooCase::perfect_number: return perfect_number_povm(9, truncation);
    case ZooCase::sharp_artificial: return sharp_artificial_povm(truncation);
    case ZooCase::sharp_artificial_loss_20: return apply_loss(sharp_artificial_povm(truncation), 0.8);
  }
  throw ValidationError("unknown zoo case");
}

} // namespace qdt
