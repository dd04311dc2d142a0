#pragma once

// Detector Wigner functions, fidelity, relative error, and the two sweep
// harnesses (smoothing weight and probe-intensity noise).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "detectors.hpp"
#include "fock.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "solver.hpp"

namespace qdt {

struct WignerRadialProfile {
  int element = 0;
  std::vector<double> radii;
  std::vector<double> values;
};

/// e^{-x/2} L_k(x) for k = 0..kmax by the upward three-term recurrence.
/// Carrying the exponential from the start keeps large k finite.
inline std::vector<double> laguerre_functions(int kmax, double x) {
  std::vector<double> l(static_cast<std::size_t>(kmax) + 1);
  l[0] = std::exp(-0.5 * x);
  if (kmax >= 1) l[1] = (1.0 - x) * l[0];
  for (int k = 1; k < kmax; ++k)
    l[k + 1] = ((2.0 * k + 1.0 - x) * l[k] - k * l[k - 1]) / (k + 1.0);
  return l;
}

/// Wigner function of |k><k| at radius r (hbar = 1, integrates to 1).
inline double fock_wigner(int k, double r) {
  const auto l = laguerre_functions(k, 2.0 * r * r);
  return (k % 2 ? -1.0 : 1.0) * l[static_cast<std::size_t>(k)] / std::numbers::pi;
}

inline std::vector<double> default_wigner_radii() {
  std::vector<double> r(400);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = 6.0 * static_cast<double>(i) / 399.0;
  return r;
}

inline WignerRadialProfile wigner_radial(const FockDiagonalPOVM& povm, int n,
                                         std::vector<double> radii = default_wigner_radii()) {
  if (n < 0 || n >= povm.outcomes())
    throw ValidationError("outcome " + std::to_string(n) + " out of range for " +
                          std::to_string(povm.outcomes()) + " outcomes");
  const int m = povm.truncation();
  WignerRadialProfile w{n, std::move(radii), {}};
  w.values.reserve(w.radii.size());
  for (double r : w.radii) {
    if (!(r >= 0.0)) throw ValidationError("Wigner radii must be >= 0");
    const auto l = laguerre_functions(m, 2.0 * r * r);
    double s = 0.0;
    for (int k = 0; k <= m; ++k) s += (k % 2 ? -1.0 : 1.0) * povm(k, n) * l[static_cast<std::size_t>(k)];
    w.values.push_back(s / std::numbers::pi);
  }
  return w;
}

/// Uhlmann fidelity of the trace-normalized elements. For diagonal elements
/// this is the squared Bhattacharyya coefficient.
inline double fidelity(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionMismatch("fidelity of elements " + std::to_string(a.size()) +
                                                    " vs " + std::to_string(b.size()));
  const double ta = a.sum(), tb = b.sum();
  if (!(ta >= 1e-12) || !(tb >= 1e-12)) throw ZeroElement("fidelity needs nonzero POVM elements");
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k)
    s += std::sqrt(std::max(a(k), 0.0) / ta * std::max(b(k), 0.0) / tb);
  return std::min(1.0, s * s);
}

inline std::vector<double> element_fidelities(const FockDiagonalPOVM& a, const FockDiagonalPOVM& b) {
  if (a.outcomes() != b.outcomes() || a.truncation() != b.truncation())
    throw DimensionMismatch("POVMs " + dims_string(a.coeffs().rows(), a.coeffs().cols()) + " vs " +
                            dims_string(b.coeffs().rows(), b.coeffs().cols()));
  std::vector<double> f;
  for (int n = 0; n < a.outcomes(); ++n) f.push_back(fidelity(a.element(n), b.element(n)));
  return f;
}

/// 100 |A - B|_F / |B|_F.
inline double relative_error(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionMismatch("relative error of " + dims_string(a.rows(), a.cols()) + " vs " +
                            dims_string(b.rows(), b.cols()));
  const double nb = b.norm();
  if (nb == 0.0) throw ValidationError("relative error against a zero matrix");
  return 100.0 * (a - b).norm() / nb;
}

inline double relative_error(const FockDiagonalPOVM& a, const FockDiagonalPOVM& b) {
  return relative_error(a.coeffs(), b.coeffs());
}

// ---------------------------------------------------------------------------
// sweeps

/// How synthetic statistics are produced for a sweep.
struct SweepSetup {
  ProbeEnsemble probes = ProbeEnsemble::linear(0.0, 30.0, 60, ProbeKind::mixed, kDefaultSigmaRel);
  int truncation = kDefaultTruncation;
  double tail_tol = kDefaultTailTol;
  /// Shots per probe; 0 keeps the exact probabilities.
  std::int64_t shots = 38'084;
  std::uint64_t seed = 1;
  SolverConfig solver;
  unsigned jobs = 1;
};

struct SweepCell {
  double axis = 0.0;
  int repeat = 0;
  double metric = 0.0;
  std::uint64_t seed = 0;
  /// Smoothing weight the cell was solved with.
  double y = 0.0;
  bool converged = false;
  int iterations = 0;
  std::vector<double> fidelities;
  Matrix estimate;
};

struct SweepTable {
  std::string kind;        // "smoothing" or "noise"
  std::string model;
  std::string metric;      // what SweepCell::metric holds
  SweepSetup setup;
  std::vector<SweepCell> cells;

  /// Cells whose axis equals `a` and whose y equals `y` (exact match).
  std::vector<const SweepCell*> select(double a, double y) const {
    std::vector<const SweepCell*> out;
    for (const auto& c : cells)
      if (c.axis == a && c.y == y) out.push_back(&c);
    return out;
  }
};

namespace detail {

inline SolverConfig with_y(SolverConfig cfg, double y) {
  cfg.regularizer = y > 0.0 ? Regularizer::smoothing : Regularizer::none;
  cfg.y = y;
  return cfg;
}

inline StatisticsMatrix simulate(const FockDiagonalPOVM& truth, const ResponseMatrix& f,
                                 std::int64_t shots, std::uint64_t seed) {
  auto p = predict_statistics(truth, f);
  return shots > 0 ? sample_statistics(p, shots, seed) : p;
}

} // namespace detail

/// Reconstructs the zoo POVM from one synthetic data set at every y, plus
/// the y = 0 baseline. metric = relative error (%) against the true POVM.
inline SweepTable smoothing_sweep(ZooCase model, std::vector<double> ys, const SweepSetup& setup) {
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (!(ys[i] > 0.0) || !std::isfinite(ys[i])) throw ValidationError("sweep y values must be > 0");
    if (i && !(ys[i] > ys[i - 1])) throw ValidationError("sweep y values must be strictly increasing");
  }
  if (ys.empty()) throw ValidationError("empty y grid");
  setup.solver.validate();
  ys.insert(ys.begin(), 0.0);

  const auto truth = povm_zoo(model, setup.truncation);
  const auto probes = setup.probes.with_kind(ProbeKind::mixed, setup.probes.sigma_rel() > 0.0 ? setup.probes.sigma_rel() : kDefaultSigmaRel);
  const auto f = build_response(probes, setup.truncation, setup.tail_tol);
  const auto p = detail::simulate(truth, f, setup.shots, setup.seed);

  SweepTable t{"smoothing", to_string(model), "relative_error_percent", setup, {}};
  t.cells = parallel_map(ys.size(), setup.jobs, [&](std::size_t i) {
    const auto rep = reconstruct(p, f, detail::with_y(setup.solver, ys[i]));
    SweepCell c;
    c.axis = ys[i];
    c.y = ys[i];
    c.seed = setup.seed;
    c.metric = relative_error(rep.povm, truth);
    c.converged = rep.converged;
    c.iterations = rep.iterations;
    c.fidelities = element_fidelities(rep.povm, truth);
    c.estimate = rep.povm.coeffs();
    return c;
  });
  return t;
}

/// For each noise level delta and each y, regenerates the data with
/// x_i -> x_i (1 + delta_i), reconstructs against the nominal intensities and
/// records |Pi_delta - Pi_{delta=0}|_F. Data is generated at truncation + 40. Repeat r of level j uses seed
/// derive_seed(setup.seed, j * repeats + r).
inline SweepTable noise_resilience_sweep(ZooCase model, const std::vector<double>& deltas,
                                         const std::vector<double>& ys, int repeats,
                                         const SweepSetup& setup) {
  if (repeats < 2) throw ValidationError("noise sweep needs repeats >= 2");
  if (deltas.empty() || ys.empty()) throw ValidationError("empty noise sweep grid");
  for (double d : deltas)
    if (!(d >= 0.0) || !std::isfinite(d)) throw ValidationError("noise levels must be >= 0");
  for (double y : ys)
    if (!(y >= 0.0) || !std::isfinite(y)) throw ValidationError("sweep y values must be >= 0");
  setup.solver.validate();

  const auto truth = povm_zoo(model, setup.truncation);
  const auto& probes = setup.probes;
  const auto f = build_response(probes, setup.truncation, setup.tail_tol);
  // jitter pushes intensities past the reconstruction cutoff, so the data
  // itself is generated with extra Fock levels
  const int m_gen = setup.truncation + 40;
  const auto truth_gen = povm_zoo(model, m_gen);
  const auto p0 = detail::simulate(truth_gen, build_response(probes, m_gen, setup.tail_tol), setup.shots, setup.seed);

  auto baselines = parallel_map(ys.size(), setup.jobs, [&](std::size_t i) {
    return reconstruct(p0, f, detail::with_y(setup.solver, ys[i])).povm.coeffs();
  });

  struct Job {
    std::size_t delta, y;
    int repeat;
  };
  std::vector<Job> jobs;
  for (std::size_t j = 0; j < deltas.size(); ++j)
    for (std::size_t i = 0; i < ys.size(); ++i)
      for (int r = 0; r < repeats; ++r) jobs.push_back({j, i, r});

  SweepTable t{"noise", to_string(model), "frobenius_distance", setup, {}};
  t.cells = parallel_map(jobs.size(), setup.jobs, [&](std::size_t q) {
    const Job& job = jobs[q];
    const double delta = deltas[job.delta];
    const std::uint64_t seed =
        derive_seed(setup.seed, job.delta * static_cast<std::size_t>(repeats) + static_cast<std::size_t>(job.repeat));
    SweepCell c;
    c.axis = delta;
    c.repeat = job.repeat;
    c.seed = seed;
    c.y = ys[job.y];
    if (delta == 0.0) {
      c.estimate = baselines[job.y];
      c.converged = true;
      c.fidelities = element_fidelities(FockDiagonalPOVM(c.estimate), truth);
      return c;
    }
    const auto xs = jitter_intensities(probes.intensities(), delta, seed, 0);
    const auto fd = build_response(xs, probes.kind(), probes.sigma_rel(), m_gen, setup.tail_tol);
    const auto p = detail::simulate(truth_gen, fd, setup.shots, setup.seed);
    const auto rep = reconstruct(p, f, detail::with_y(setup.solver, c.y));
    c.metric = (rep.povm.coeffs() - baselines[job.y]).norm();
    c.converged = rep.converged;
    c.iterations = rep.iterations;
    c.fidelities = element_fidelities(rep.povm, truth);
    c.estimate = rep.povm.coeffs();
    return c;
  });
  return t;
}

} // namespace qdt
