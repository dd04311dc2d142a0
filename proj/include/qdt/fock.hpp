#pragma once

// Truncated Fock-space primitives: probe ensembles, response matrices for pure
// and Gaussian-mixed coherent probes, and the Born-rule forward model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "errors.hpp"
#include "random.hpp"

namespace qdt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kPositivitySlack = 1e-9;
inline constexpr double kCompletenessTol = 1e-6;
inline constexpr double kDefaultTailTol = 1e-6;
inline constexpr int kDefaultTruncation = 60;
inline constexpr double kDefaultSigmaRel = 0.02;

/// POVM whose elements are diagonal in the number basis.
///
/// Coefficients are stored with one row per Fock level k = 0..M and one
/// column per outcome n, so each row is a probability distribution over
/// outcomes.
class FockDiagonalPOVM {
public:
  FockDiagonalPOVM() = default;

  explicit FockDiagonalPOVM(Matrix coeffs) : coeffs_(std::move(coeffs)) {
    if (coeffs_.rows() < 2 || coeffs_.cols() < 1)
      throw ValidationError("POVM needs at least two Fock levels and one outcome, got " +
                            dims_string(coeffs_.rows(), coeffs_.cols()));
    for (Eigen::Index k = 0; k < coeffs_.rows(); ++k) {
      for (Eigen::Index n = 0; n < coeffs_.cols(); ++n) {
        const double v = coeffs_(k, n);
        if (!std::isfinite(v) || v < -kPositivitySlack)
          throw ValidationError("POVM coefficient theta_" + std::to_string(k) + "^(" +
                                std::to_string(n) + ") = " + std::to_string(v) +
                                " is negative or not finite");
      }
      const double sum = coeffs_.row(k).sum();
      if (std::abs(sum - 1.0) > kCompletenessTol)
        throw ValidationError("POVM level " + std::to_string(k) + " sums to " +
                              std::to_string(sum) + ", expected 1");
    }
  }

  int outcomes() const { return static_cast<int>(coeffs_.cols()); }
  int truncation() const { return static_cast<int>(coeffs_.rows()) - 1; }
  const Matrix& coeffs() const { return coeffs_; }
  double operator()(int k, int n) const { return coeffs_(k, n); }
  Vector element(int n) const { return coeffs_.col(n); }

private:
  Matrix coeffs_;
};

enum class ProbeKind { pure, mixed };

inline std::string to_string(ProbeKind kind) { return kind == ProbeKind::pure ? "pure" : "mixed"; }

inline ProbeKind probe_kind_from_string(const std::string& s) {
  if (s == "pure") return ProbeKind::pure;
  if (s == "mixed") return ProbeKind::mixed;
  throw ValidationError("unknown probe kind '" + s + "' (expected pure or mixed)");
}

namespace detail {
inline void check_intensities(std::span<const double> xs) {
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (!std::isfinite(xs[i]) || xs[i] < 0.0)
      throw ValidationError("probe intensity #" + std::to_string(i) + " = " +
                            std::to_string(xs[i]) + " must be finite and nonnegative");
}
} // namespace detail

/// Coherent-state probes parametrized by intensity x = |alpha|^2 only.
class ProbeEnsemble {
public:
  ProbeEnsemble() = default;

  explicit ProbeEnsemble(std::vector<double> intensities, ProbeKind kind = ProbeKind::pure,
                         double sigma_rel = kDefaultSigmaRel)
      : xs_(std::move(intensities)), kind_(kind), sigma_rel_(sigma_rel) {
    if (xs_.empty()) throw ValidationError("probe ensemble is empty");
    detail::check_intensities(xs_);
    for (std::size_t i = 1; i < xs_.size(); ++i)
      if (!(xs_[i] > xs_[i - 1]))
        throw ValidationError("probe intensities must be strictly increasing (entry #" +
                              std::to_string(i) + ")");
    if (!std::isfinite(sigma_rel_) || sigma_rel_ < 0.0)
      throw ValidationError("sigma_rel must be finite and nonnegative");
    if (kind_ == ProbeKind::mixed && !(sigma_rel_ > 0.0))
      throw ValidationError("mixed probes need sigma_rel > 0");
  }

  /// count points evenly spaced on [xmin, xmax].
  static ProbeEnsemble linear(double xmin, double xmax, int count,
                              ProbeKind kind = ProbeKind::pure,
                              double sigma_rel = kDefaultSigmaRel) {
    if (count < 2 || !(xmax > xmin))
      throw ValidationError("linear probe grid needs count >= 2 and xmax > xmin");
    std::vector<double> xs(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) xs[i] = xmin + (xmax - xmin) * i / (count - 1);
    return ProbeEnsemble(std::move(xs), kind, sigma_rel);
  }

  /// count points evenly spaced in log x on [xmin, xmax]; xmin must be positive.
  static ProbeEnsemble logarithmic(double xmin, double xmax, int count,
                                   ProbeKind kind = ProbeKind::pure,
                                   double sigma_rel = kDefaultSigmaRel) {
    if (count < 2 || !(xmin > 0.0) || !(xmax > xmin))
      throw ValidationError("log probe grid needs count >= 2 and 0 < xmin < xmax");
    std::vector<double> xs(static_cast<std::size_t>(count));
    const double a = std::log(xmin), b = std::log(xmax);
    for (int i = 0; i < count; ++i) xs[i] = std::exp(a + (b - a) * i / (count - 1));
    xs.front() = xmin;
    xs.back() = xmax;
    return ProbeEnsemble(std::move(xs), kind, sigma_rel);
  }

  std::span<const double> intensities() const { return xs_; }
  std::size_t size() const { return xs_.size(); }
  ProbeKind kind() const { return kind_; }
  double sigma_rel() const { return sigma_rel_; }
  double max_intensity() const { return xs_.back(); }

  ProbeEnsemble with_kind(ProbeKind kind, double sigma_rel) const {
    return ProbeEnsemble(xs_, kind, sigma_rel);
  }

private:
  std::vector<double> xs_;
  ProbeKind kind_ = ProbeKind::pure;
  double sigma_rel_ = kDefaultSigmaRel;
};

/// Map from Fock coefficients to outcome probabilities, one row per probe.
struct ResponseMatrix {
  Matrix entries;
  Vector tail_mass;

  int truncation() const { return static_cast<int>(entries.cols()) - 1; }
  Eigen::Index probes() const { return entries.rows(); }
};

/// Outcome probabilities, one row per probe; trials is empty for exact data.
struct StatisticsMatrix {
  Matrix probs;
  std::vector<std::int64_t> trials;

  Eigen::Index probes() const { return probs.rows(); }
  int outcomes() const { return static_cast<int>(probs.cols()); }
};

/// Gaussian amplitude mixture around sqrt(x). The width is fixed by first-order
/// moment matching so the intensity |beta|^2 has standard deviation sigma_rel * x.
struct MixedProbeDescriptor {
  double center = 0.0;
  double width = 0.0;

  static MixedProbeDescriptor from_intensity(double x, double sigma_rel) {
    return {std::sqrt(x), sigma_rel * std::sqrt(x) / 2.0};
  }

  double weight(double beta) const {
    const double d = (beta - center) / width;
    return std::exp(-0.5 * d * d);
  }

  double lower() const { return std::max(0.0, center - 6.0 * width); }
  double upper() const { return center + 6.0 * width; }

  /// Integral of weight() over [lower(), upper()].
  double normalization() const {
    const double s = std::numbers::sqrt2 * width;
    return width * std::sqrt(std::numbers::pi / 2.0) *
           (std::erf((upper() - center) / s) - std::erf((lower() - center) / s));
  }
};

/// e^{-x} x^k / k!, evaluated in log space.
inline double poisson_pmf(double x, int k) {
  if (x == 0.0) return k == 0 ? 1.0 : 0.0;
  return std::exp(-x + k * std::log(x) - std::lgamma(k + 1.0));
}

/// P(K > M) for K ~ Poisson(x).
inline double poisson_tail(double x, int truncation) {
  if (x == 0.0) return 0.0;
  return boost::math::gamma_p(truncation + 1.0, x);
}

namespace detail {

inline void check_truncation(int truncation) {
  if (truncation < 1) throw ValidationError("Fock truncation M must be >= 1");
}

inline void check_tail(const Vector& tail, std::span<const double> xs, double tail_tol,
                       int truncation) {
  for (Eigen::Index i = 0; i < tail.size(); ++i)
    if (tail(i) > tail_tol)
      throw TruncationInsufficient("probe x=" + std::to_string(xs[i]) + " leaves mass " +
                                   std::to_string(tail(i)) + " beyond |" +
                                   std::to_string(truncation) + "> (tolerance " +
                                   std::to_string(tail_tol) + ")");
}

inline void pure_row(double x, int truncation, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row, double& tail) {
  for (int k = 0; k <= truncation; ++k) row(k) = poisson_pmf(x, k);
  tail = poisson_tail(x, truncation);
}

inline void mixed_row(double x, double sigma_rel, int truncation,
                      Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row, double& tail) {
  const auto g = MixedProbeDescriptor::from_intensity(x, sigma_rel);
  if (!(g.width > 0.0)) {
    pure_row(x, truncation, row, tail);
    return;
  }
  constexpr double kAbsTol = 1e-9;
  // Integrate in u = (beta - center) / width so the result is O(1) even when
  // the window is narrow.
  const double norm = g.normalization() / g.width;
  const double a = (g.lower() - g.center) / g.width, b = (g.upper() - g.center) / g.width;
  using Quad = boost::math::quadrature::gauss_kronrod<double, 31>;

  auto integrate = [&](auto&& kernel, const char* what) {
    double err = 0.0;
    const double v = Quad::integrate(
        [&](double u) {
          const double beta = g.center + g.width * u;
          return std::exp(-0.5 * u * u) * kernel(beta * beta);
        },
        a, b, 15, 1e-13, &err);
    if (!(err / norm <= kAbsTol) || !std::isfinite(v))
      throw QuadratureFailure(std::string("mixed-probe quadrature for ") + what + " at x=" +
                              std::to_string(x) + " reached error " + std::to_string(err / norm));
    return v / norm;
  };
  for (int k = 0; k <= truncation; ++k)
    row(k) = integrate([k](double s) { return poisson_pmf(s, k); }, "Fock level");
  tail = integrate([truncation](double s) { return poisson_tail(s, truncation); }, "tail mass");
}

} // namespace detail

/// Poisson response rows for arbitrary (possibly unsorted) intensities.
inline ResponseMatrix pure_response(std::span<const double> xs, int truncation,
                                    double tail_tol = kDefaultTailTol) {
  detail::check_truncation(truncation);
  detail::check_intensities(xs);
  const auto d = static_cast<Eigen::Index>(xs.size());
  ResponseMatrix f{Matrix(d, truncation + 1), Vector(d)};
  for (Eigen::Index i = 0; i < d; ++i) detail::pure_row(xs[i], truncation, f.entries.row(i), f.tail_mass(i));
  detail::check_tail(f.tail_mass, xs, tail_tol, truncation);
  return f;
}

/// Response rows of phase-averaged Gaussian mixtures centred on sqrt(x_i).
inline ResponseMatrix mixed_response(std::span<const double> xs, double sigma_rel, int truncation,
                                     double tail_tol = kDefaultTailTol) {
  detail::check_truncation(truncation);
  detail::check_intensities(xs);
  if (!(sigma_rel > 0.0)) throw ValidationError("mixed response needs sigma_rel > 0");
  const auto d = static_cast<Eigen::Index>(xs.size());
  ResponseMatrix f{Matrix(d, truncation + 1), Vector(d)};
  for (Eigen::Index i = 0; i < d; ++i)
    detail::mixed_row(xs[i], sigma_rel, truncation, f.entries.row(i), f.tail_mass(i));
  detail::check_tail(f.tail_mass, xs, tail_tol, truncation);
  return f;
}

inline ResponseMatrix build_pure_response(const ProbeEnsemble& probes, int truncation,
                                          double tail_tol = kDefaultTailTol) {
  return pure_response(probes.intensities(), truncation, tail_tol);
}

inline ResponseMatrix build_mixed_response(const ProbeEnsemble& probes, int truncation,
                                           double tail_tol = kDefaultTailTol) {
  if (probes.kind() != ProbeKind::mixed)
    throw ValidationError("build_mixed_response needs a mixed probe ensemble");
  return mixed_response(probes.intensities(), probes.sigma_rel(), truncation, tail_tol);
}

/// Dispatches on the ensemble's kind.
inline ResponseMatrix build_response(const ProbeEnsemble& probes, int truncation,
                                     double tail_tol = kDefaultTailTol) {
  return probes.kind() == ProbeKind::mixed ? build_mixed_response(probes, truncation, tail_tol)
                                           : build_pure_response(probes, truncation, tail_tol);
}

inline ResponseMatrix build_response(std::span<const double> xs, ProbeKind kind, double sigma_rel,
                                     int truncation, double tail_tol = kDefaultTailTol) {
  return kind == ProbeKind::mixed ? mixed_response(xs, sigma_rel, truncation, tail_tol)
                                  : pure_response(xs, truncation, tail_tol);
}

/// P = F * Theta.
inline StatisticsMatrix predict_statistics(const FockDiagonalPOVM& povm, const ResponseMatrix& f) {
  if (f.entries.cols() != povm.coeffs().rows())
    throw DimensionMismatch("response has " + std::to_string(f.entries.cols()) +
                            " Fock columns but POVM has " +
                            std::to_string(povm.coeffs().rows()) + " levels");
  return {f.entries * povm.coeffs(), {}};
}

/// Multinomial frequencies over `shots` draws per probe. Each row is
/// renormalized by its sum first, so truncated tail mass is redistributed.
inline StatisticsMatrix sample_statistics(const StatisticsMatrix& p, std::int64_t shots,
                                          std::uint64_t seed) {
  if (shots < 1) throw ValidationError("shot count J must be >= 1");
  StatisticsMatrix out{Matrix::Zero(p.probs.rows(), p.probs.cols()),
                       std::vector<std::int64_t>(static_cast<std::size_t>(p.probs.rows()), shots)};
  const Eigen::Index n_out = p.probs.cols();
  for (Eigen::Index i = 0; i < p.probs.rows(); ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const double total = p.probs.row(i).sum();
    if (!(total > 0.0)) throw ValidationError("statistics row " + std::to_string(i) + " has no mass");
    std::int64_t remaining = shots;
    double rest = 1.0;
    for (Eigen::Index j = 0; j + 1 < n_out && remaining > 0; ++j) {
      const double pj = std::max(0.0, p.probs(i, j)) / total;
      const double q = rest > 0.0 ? std::clamp(pj / rest, 0.0, 1.0) : 1.0;
      std::int64_t c = remaining;
      if (q < 1.0) c = std::binomial_distribution<std::int64_t>(remaining, q)(rng);
      out.probs(i, j) = static_cast<double>(c) / static_cast<double>(shots);
      remaining -= c;
      rest -= pj;
    }
    out.probs(i, n_out - 1) += static_cast<double>(remaining) / static_cast<double>(shots);
  }
  return out;
}

/// x_i -> max(0, x_i (1 + delta_i)) with delta_i ~ N(0, sigma_rel), drawn from
/// the stream (seed, stream).
inline std::vector<double> jitter_intensities(std::span<const double> xs, double sigma_rel,
                                              std::uint64_t seed, std::uint64_t stream = 0) {
  std::vector<double> out(xs.begin(), xs.end());
  if (sigma_rel == 0.0) return out;
  Rng rng(derive_seed(seed, stream));
  std::normal_distribution<double> normal(0.0, sigma_rel);
  for (auto& x : out) x = std::max(0.0, x * (1.0 + normal(rng)));
  return out;
}

} // namespace qdt
