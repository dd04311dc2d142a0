#pragma once

// Detector reconstruction as a constrained convex quadratic program:
//
//   min  sum_n w_n^2 |P_n - F theta_n|^2 + g(Theta)
//   s.t. Theta >= 0, every Fock-level row of Theta sums to 1
//
// The diagonal parametrization turns operator positivity and completeness
// into a product of probability simplices (one per Fock level), so the
// feasible set has an exact, cheap projection. The solver is ADMM with a
// per-level penalty, followed by an optional active-set polish.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fock.hpp"
#include "parallel.hpp"
#include "simplex.hpp"

namespace qdt {

enum class Regularizer { none, smoothing, damping, weighting };

inline std::string to_string(Regularizer r) {
  switch (r) {
    case Regularizer::none: return "none";
    case Regularizer::smoothing: return "smoothing";
    case Regularizer::damping: return "damping";
    case Regularizer::weighting: return "weighting";
  }
  return "?";
}

inline Regularizer regularizer_from_string(const std::string& s) {
  for (auto r : {Regularizer::none, Regularizer::smoothing, Regularizer::damping, Regularizer::weighting})
    if (to_string(r) == s) return r;
  throw ValidationError("unknown regularizer '" + s + "'");
}

struct SolverConfig {
  Regularizer regularizer = Regularizer::smoothing;
  double y = 0.1;
  double damping_c = 0.03;
  /// Diagonal of the column weighting matrix, one entry per outcome.
  std::vector<double> weights;
  double eps_primal = 1e-8;
  double eps_dual = 1e-6;
  int max_iterations = 50'000;
  int noise_runs = 0;
  double noise_sigma_rel = 0.02;
  std::uint64_t seed = 0;
  /// Worker threads for noise averaging; 0 = hardware concurrency.
  unsigned jobs = 1;
  bool polish = true;

  void validate() const {
    if (!(y >= 0.0) || !std::isfinite(y)) throw ValidationError("smoothing weight y must be >= 0");
    if (!(damping_c >= 0.0) || !std::isfinite(damping_c))
      throw ValidationError("damping coefficient must be >= 0");
    if (!(eps_primal > 0.0) || !(eps_dual > 0.0)) throw ValidationError("tolerances must be > 0");
    if (max_iterations < 1) throw ValidationError("max_iterations must be >= 1");
    if (noise_runs < 0) throw ValidationError("noise_runs must be >= 0");
    if (!(noise_sigma_rel >= 0.0)) throw ValidationError("noise_sigma_rel must be >= 0");
    for (double w : weights)
      if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("weights must be positive");
  }

  static SolverConfig unregularized() {
    SolverConfig c;
    c.regularizer = Regularizer::none;
    c.y = 0.0;
    return c;
  }

  static SolverConfig smoothing(double y) {
    SolverConfig c;
    c.regularizer = Regularizer::smoothing;
    c.y = y;
    return c;
  }
};

struct ReconstructionReport {
  FockDiagonalPOVM povm;
  /// Frobenius norm of P - F Theta (unweighted).
  double residual = 0.0;
  /// Value of the regularizing term g(Theta).
  double penalty = 0.0;
  /// Full objective value the solver minimized.
  double objective = 0.0;
  int iterations = 0;
  double kkt_residual = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  bool converged = false;
  bool polished = false;
  /// ADMM fixed-point residual per iteration.
  std::vector<double> residual_history;
  /// Per-run POVMs when noise averaging.
  std::vector<FockDiagonalPOVM> runs;
  int failed_runs = 0;
};

/// S = sum_{k,n} (theta_k^(n) - theta_{k+1}^(n))^2.
inline double smoothing_penalty(const Matrix& theta) {
  if (theta.rows() < 2) return 0.0;
  return (theta.topRows(theta.rows() - 1) - theta.bottomRows(theta.rows() - 1)).squaredNorm();
}

inline double smoothing_penalty(const FockDiagonalPOVM& povm) { return smoothing_penalty(povm.coeffs()); }

/// Diagonal of the damping matrix: 0 at the vacuum level, 1/j above.
inline Vector damping_diagonal(int truncation) {
  Vector d(truncation + 1);
  d(0) = 0.0;
  for (int j = 1; j <= truncation; ++j) d(j) = 1.0 / j;
  return d;
}

/// c |M Theta|_F^2.
inline double damping_penalty(const Matrix& theta, double c) {
  const Vector d = damping_diagonal(static_cast<int>(theta.rows()) - 1);
  return c * (d.asDiagonal() * theta).squaredNorm();
}

namespace detail {

/// The quadratic program behind every reconstruction variant.
struct QuadraticProblem {
  Matrix f;        // D x (M+1)
  Matrix p;        // D x N
  Vector weights;  // N column weights
  Matrix q;        // (M+1) x (M+1) regularizer Hessian / 2

  int levels() const { return static_cast<int>(f.cols()); }
  int outcomes() const { return static_cast<int>(p.cols()); }

  double data_term(const Matrix& theta) const {
    return ((p - f * theta) * weights.asDiagonal()).squaredNorm();
  }
  double penalty(const Matrix& theta) const { return (theta.transpose() * q * theta).trace(); }
  double objective(const Matrix& theta) const { return data_term(theta) + penalty(theta); }

  Matrix gradient(const Matrix& theta) const {
    Matrix g = 2.0 * (f.transpose() * (f * theta - p)) * weights.cwiseAbs2().asDiagonal();
    g.noalias() += 2.0 * q * theta;
    return g;
  }
};

/// Natural-map residual max|Theta - Pi(Theta - grad f(Theta))|; zero exactly
/// at a minimizer over the feasible set.
inline double kkt_residual(const QuadraticProblem& qp, const Matrix& theta) {
  Matrix step = theta - qp.gradient(theta);
  project_rows_to_simplex(step);
  return (theta - step).cwiseAbs().maxCoeff();
}

inline Matrix first_difference(int levels) {
  Matrix d = Matrix::Zero(levels - 1, levels);
  for (int k = 0; k + 1 < levels; ++k) {
    d(k, k) = 1.0;
    d(k, k + 1) = -1.0;
  }
  return d;
}

/// Equality-constrained QP on the support of `theta`: entries at zero stay
/// zero, rows sum to one. Entries that come out negative are fixed at zero and
/// the system is re-solved. Returns nothing if no feasible point is found.
inline std::optional<Matrix> polish(const QuadraticProblem& qp, const Matrix& theta,
                                    double zero_threshold) {
  const int levels = qp.levels(), outcomes = qp.outcomes();
  std::vector<std::vector<char>> free_(levels, std::vector<char>(outcomes, 0));
  for (int k = 0; k < levels; ++k) {
    Eigen::Index best = 0;
    theta.row(k).maxCoeff(&best);
    for (int n = 0; n < outcomes; ++n) free_[k][n] = theta(k, n) > zero_threshold;
    free_[k][best] = 1;
  }

  const Matrix gram = qp.f.transpose() * qp.f;
  const Matrix ftp = qp.f.transpose() * qp.p;

  for (int round = 0; round < 8; ++round) {
    // index free entries column by column
    std::vector<std::pair<int, int>> vars;
    for (int n = 0; n < outcomes; ++n)
      for (int k = 0; k < levels; ++k)
        if (free_[k][n]) vars.emplace_back(k, n);
    const auto nv = static_cast<Eigen::Index>(vars.size());
    Matrix kkt = Matrix::Zero(nv + levels, nv + levels);
    Vector rhs = Vector::Zero(nv + levels);
    for (Eigen::Index a = 0; a < nv; ++a) {
      const auto [ka, na] = vars[a];
      const double w2 = qp.weights(na) * qp.weights(na);
      for (Eigen::Index b = 0; b < nv; ++b) {
        const auto [kb, nb] = vars[b];
        if (nb != na) continue;
        kkt(a, b) = 2.0 * (w2 * gram(ka, kb) + qp.q(ka, kb));
      }
      rhs(a) = 2.0 * w2 * ftp(ka, na);
      kkt(a, nv + ka) = 1.0;
      kkt(nv + ka, a) = 1.0;
    }
    rhs.tail(levels).setOnes();
    const Vector sol = kkt.fullPivLu().solve(rhs);
    if (!sol.allFinite()) return std::nullopt;

    Matrix out = Matrix::Zero(levels, outcomes);
    bool negative = false;
    for (Eigen::Index a = 0; a < nv; ++a) {
      const auto [k, n] = vars[a];
      out(k, n) = sol(a);
      if (sol(a) < 0.0) negative = true;
    }
    if (!negative) return out;
    int fixed = 0;
    for (Eigen::Index a = 0; a < nv; ++a) {
      const auto [k, n] = vars[a];
      if (sol(a) < 0.0) {
        int row_free = 0;
        for (int m = 0; m < outcomes; ++m) row_free += free_[k][m];
        if (row_free > 1) {
          free_[k][n] = 0;
          ++fixed;
        }
      }
    }
    if (fixed == 0) return std::nullopt;
  }
  return std::nullopt;
}

inline ReconstructionReport solve_admm(const QuadraticProblem& qp, const SolverConfig& cfg) {
  const int levels = qp.levels(), outcomes = qp.outcomes();
  constexpr double kRelaxation = 1.6;
  constexpr int kWarmup = 100;
  constexpr int kCheckEvery = 10;

  const Matrix gram = qp.f.transpose() * qp.f;
  const Matrix ftp = qp.f.transpose() * qp.p;

  // Per-level penalty follows the diagonal of the mean Hessian so weakly
  // determined Fock levels are not frozen by a uniform proximal term.
  const double mean_w2 = qp.weights.cwiseAbs2().mean();
  Vector scale = (2.0 * (mean_w2 * gram + qp.q)).diagonal();
  // Levels the data barely constrain still need a penalty, but a large floor
  // freezes them and the solve stalls on a wrong vertex.
  const double floor = 1e-10 * scale.maxCoeff();
  for (Eigen::Index k = 0; k < scale.size(); ++k) scale(k) = std::max(scale(k), floor);
  double rho = 0.1;

  // Columns with equal weights share a factorization.
  std::map<double, Eigen::LLT<Matrix>> factors;
  auto refactor = [&] {
    factors.clear();
    for (int n = 0; n < outcomes; ++n) {
      const double w2 = qp.weights(n) * qp.weights(n);
      if (factors.count(w2)) continue;
      Matrix h = 2.0 * (w2 * gram + qp.q);
      h.diagonal() += rho * scale;
      factors.emplace(w2, Eigen::LLT<Matrix>(h));
    }
  };
  refactor();

  Matrix x = Matrix::Constant(levels, outcomes, 1.0 / outcomes);
  Matrix z = x, u = Matrix::Zero(levels, outcomes);
  Matrix rhs(levels, outcomes), v(levels, outcomes), z_prev, v_prev = z;

  ReconstructionReport rep;
  rep.residual_history.reserve(static_cast<std::size_t>(std::min(cfg.max_iterations, 200'000)));

  int it = 0;
  for (it = 1; it <= cfg.max_iterations; ++it) {
    rhs = ftp * 2.0 * qp.weights.cwiseAbs2().asDiagonal();
    rhs.noalias() += (rho * scale).asDiagonal() * (z - u);
    for (int n = 0; n < outcomes; ++n)
      x.col(n) = factors.at(qp.weights(n) * qp.weights(n)).solve(rhs.col(n));

    z_prev = z;
    v = kRelaxation * x + (1.0 - kRelaxation) * z_prev + u;
    z = v;
    project_rows_to_simplex(z);
    u = v - z;

    const double r_p = (x - z).cwiseAbs().maxCoeff();
    const double r_d = ((rho * scale).asDiagonal() * (z - z_prev)).cwiseAbs().maxCoeff();
    rep.residual_history.push_back(
        std::sqrt(((v - v_prev).rowwise().squaredNorm().array() * scale.array()).sum() * rho));
    v_prev = v;
    rep.primal_residual = r_p;
    rep.dual_residual = r_d;

    if (it <= kWarmup && it % kCheckEvery == 0) {
      const double p_scale = std::max({x.cwiseAbs().maxCoeff(), z.cwiseAbs().maxCoeff(), 1e-12});
      const double d_scale =
          std::max(((rho * scale).asDiagonal() * u).cwiseAbs().maxCoeff(), 1e-12);
      const double ratio = std::sqrt((r_p / p_scale) / std::max(r_d / d_scale, 1e-300));
      if (std::isfinite(ratio) && (ratio > 10.0 || ratio < 0.1)) {
        const double next = std::clamp(rho * ratio, 1e-8, 1e8);
        u *= rho / next;
        rho = next;
        refactor();
      }
    }

    if (r_p <= cfg.eps_primal && r_d <= cfg.eps_dual && it % kCheckEvery == 0 &&
        kkt_residual(qp, z) <= cfg.eps_dual) {
      rep.converged = true;
      break;
    }
  }
  rep.iterations = std::min(it, cfg.max_iterations);

  Matrix theta = z;
  double best_obj = qp.objective(theta);
  double best_kkt = kkt_residual(qp, theta);
  if (cfg.polish) {
    for (double threshold : {1e-7, 1e-5, 1e-3}) {
      auto polished = polish(qp, z, threshold);
      if (!polished) continue;
      const double obj = qp.objective(*polished);
      const double kkt = kkt_residual(qp, *polished);
      if (obj <= best_obj + 1e-12 * std::max(1.0, std::abs(best_obj)) && kkt <= best_kkt) {
        theta = *polished;
        best_obj = obj;
        best_kkt = kkt;
        rep.polished = true;
        break;
      }
    }
  }
  // rows are exact simplex points up to rounding; clean the rounding
  project_rows_to_simplex(theta);

  rep.kkt_residual = kkt_residual(qp, theta);
  rep.converged = (rep.converged || rep.polished) && rep.kkt_residual <= cfg.eps_dual;
  rep.objective = qp.objective(theta);
  rep.penalty = qp.penalty(theta);
  rep.residual = (qp.p - qp.f * theta).norm();
  rep.povm = FockDiagonalPOVM(std::move(theta));
  return rep;
}

inline void check_inputs(const StatisticsMatrix& p, const ResponseMatrix& f) {
  if (p.probs.rows() != f.entries.rows())
    throw DimensionMismatch("statistics have " + std::to_string(p.probs.rows()) +
                            " probes but response has " + std::to_string(f.entries.rows()));
  if (p.probs.cols() < 1) throw DimensionMismatch("statistics have no outcomes");
  for (Eigen::Index i = 0; i < p.probs.rows(); ++i)
    for (Eigen::Index n = 0; n < p.probs.cols(); ++n) {
      const double v = p.probs(i, n);
      if (!std::isfinite(v) || v < -1e-9 || v > 1.0 + 1e-9)
        throw InfeasibleInput("probability P(" + std::to_string(i) + "," + std::to_string(n) +
                              ") = " + std::to_string(v) + " outside [0, 1]");
    }
}

inline QuadraticProblem make_problem(const StatisticsMatrix& p, const ResponseMatrix& f,
                                     const SolverConfig& cfg, const Vector* weights) {
  QuadraticProblem qp;
  qp.f = f.entries;
  qp.p = p.probs;
  const int levels = static_cast<int>(f.entries.cols());
  qp.weights = weights ? *weights : Vector::Ones(p.probs.cols());
  if (qp.weights.size() != p.probs.cols())
    throw DimensionMismatch("weighting has " + std::to_string(qp.weights.size()) +
                            " entries for " + std::to_string(p.probs.cols()) + " outcomes");
  qp.q = Matrix::Zero(levels, levels);
  switch (cfg.regularizer) {
    case Regularizer::smoothing: {
      const Matrix d = first_difference(levels);
      qp.q = cfg.y * d.transpose() * d;
      break;
    }
    case Regularizer::damping: {
      const Vector m = damping_diagonal(levels - 1);
      qp.q = (cfg.damping_c * m.cwiseAbs2()).asDiagonal();
      break;
    }
    case Regularizer::none:
    case Regularizer::weighting: break;
  }
  return qp;
}

} // namespace detail

/// Minimizes |P - F Theta|^2 + g(Theta) over physical Fock-diagonal POVMs.
/// With the weighting regularizer, cfg.weights supplies the column weights.
/// Non-convergence is reported through `converged`, not thrown.
inline ReconstructionReport reconstruct(const StatisticsMatrix& p, const ResponseMatrix& f,
                                        const SolverConfig& cfg = {}) {
  cfg.validate();
  detail::check_inputs(p, f);
  std::optional<Vector> w;
  if (cfg.regularizer == Regularizer::weighting) {
    if (cfg.weights.empty()) throw ValidationError("weighting regularizer needs weights");
    w = Eigen::Map<const Vector>(cfg.weights.data(), static_cast<Eigen::Index>(cfg.weights.size()));
  }
  return detail::solve_admm(detail::make_problem(p, f, cfg, w ? &*w : nullptr), cfg);
}

/// min |(P - F Theta) D|^2 with D = diag(weights), plus cfg's smoothing or
/// damping term if selected.
inline ReconstructionReport weighted_reconstruct(const StatisticsMatrix& p, const ResponseMatrix& f,
                                                 const Vector& weights, const SolverConfig& cfg = {}) {
  cfg.validate();
  detail::check_inputs(p, f);
  for (Eigen::Index n = 0; n < weights.size(); ++n)
    if (!(weights(n) > 0.0) || !std::isfinite(weights(n)))
      throw ValidationError("weighting matrix must be positive diagonal");
  return detail::solve_admm(detail::make_problem(p, f, cfg, &weights), cfg);
}

/// Solves once per jittered copy of the probe intensities and averages the
/// resulting coefficient matrices. Runs are seeded by (cfg.seed, run index).
inline ReconstructionReport noise_average_reconstruct(const StatisticsMatrix& p,
                                                      const ProbeEnsemble& probes,
                                                      const SolverConfig& cfg,
                                                      int truncation = kDefaultTruncation,
                                                      double tail_tol = kDefaultTailTol) {
  cfg.validate();
  if (cfg.noise_runs < 2) throw ValidationError("noise averaging needs noise_runs >= 2");
  if (static_cast<std::size_t>(p.probs.rows()) != probes.size())
    throw DimensionMismatch("statistics and probe ensemble disagree on probe count");

  // The nominal ensemble must pass the truncation check; jittered copies are
  // perturbations of it and are not rejected for a slightly larger tail.
  const auto f = build_response(probes, truncation, tail_tol);

  SolverConfig single = cfg;
  single.noise_runs = 0;
  auto runs = parallel_map(static_cast<std::size_t>(cfg.noise_runs), cfg.jobs,
                           [&](std::size_t j) -> std::optional<ReconstructionReport> {
                             try {
                               const auto xs = jitter_intensities(
                                   probes.intensities(), cfg.noise_sigma_rel, cfg.seed, j);
                               const auto fj = build_response(xs, probes.kind(), probes.sigma_rel(),
                                                              truncation, 1.0);
                               return reconstruct(p, fj, single);
                             } catch (const Error&) {
                               return std::nullopt;
                             }
                           });

  ReconstructionReport rep;
  Matrix sum;
  int ok = 0;
  bool all_converged = true;
  for (auto& r : runs) {
    if (!r) {
      ++rep.failed_runs;
      continue;
    }
    if (ok == 0) sum = Matrix::Zero(r->povm.coeffs().rows(), r->povm.coeffs().cols());
    sum += r->povm.coeffs();
    rep.iterations += r->iterations;
    rep.kkt_residual = std::max(rep.kkt_residual, r->kkt_residual);
    all_converged = all_converged && r->converged;
    rep.runs.push_back(r->povm);
    ++ok;
  }
  if (ok == 0) throw NotConverged("every noise-averaging run failed");

  Matrix avg = sum / static_cast<double>(ok);
  project_rows_to_simplex(avg);

  const auto qp = detail::make_problem(p, f, single, nullptr);
  // The average is not the optimum of any single problem; its certificate is
  // the worst per-run KKT residual.
  rep.converged = all_converged;
  rep.objective = qp.objective(avg);
  rep.penalty = qp.penalty(avg);
  rep.residual = (qp.p - qp.f * avg).norm();
  rep.povm = FockDiagonalPOVM(std::move(avg));
  return rep;
}

} // namespace qdt
