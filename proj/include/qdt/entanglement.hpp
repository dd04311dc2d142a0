#pragma once

// Certified lower bounds on the negativity E_N = |rho^Gamma|_1 - 1 from joint
// click statistics of characterized local detectors.
//
// For any Hermitian W with -1 <= W <= 1, Tr(rho^Gamma W) <= |rho^Gamma|_1. With
// W = sum a_j pi_n^(k) (x) (pi_m^(l))^T + b 1 the left side only involves the
// observed d, so every feasible (a, b) gives E_N >= sum a d + b - 1. The best
// such witness is the dual SDP solved below.

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "errors.hpp"
#include "fock.hpp"

namespace qdt {

using CMatrix = Eigen::MatrixXcd;
using Complex = std::complex<double>;

/// Largest bipartite dimension d_A d_B accepted.
inline constexpr int kMaxJointDimension = 64;

/// One measurement setting: the POVM elements of one local device.
using PovmSet = std::vector<CMatrix>;

struct JointData {
  int dim_a = 0;
  int dim_b = 0;
  std::vector<PovmSet> settings_a;
  std::vector<PovmSet> settings_b;
  /// data[{k, l}](n, m) = Tr((pi_n^(k) (x) pi_m^(l)) rho).
  std::map<std::pair<int, int>, Matrix> data;
  /// Set for measurements with unbounded outcomes (homodyne quadratures),
  /// which this bound does not cover.
  bool unbounded = false;
};

struct NegativityBound {
  double bound = 0.0;
  /// Dual weights in the order of data, row-major within each setting pair.
  std::vector<double> alpha;
  double beta = 0.0;
  CMatrix witness;
  /// Spectrum of the returned witness, recomputed independently of the solver.
  Vector witness_eigenvalues;
  /// 1 - max |eigenvalue|; nonnegative for a valid certificate.
  double certificate_margin = 0.0;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
};

/// Largest |eigenvalue| of a Hermitian matrix.
inline double spectral_norm_hermitian(const CMatrix& m) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Transpose of the second factor of a (dA dB)-dimensional operator.
inline CMatrix partial_transpose_b(const CMatrix& m, int dim_a, int dim_b) {
  CMatrix out(m.rows(), m.cols());
  for (int i = 0; i < dim_a; ++i)
    for (int j = 0; j < dim_a; ++j)
      out.block(i * dim_b, j * dim_b, dim_b, dim_b) = m.block(i * dim_b, j * dim_b, dim_b, dim_b).transpose();
  return out;
}

/// |rho^Gamma|_1 - 1.
inline double negativity(const CMatrix& rho, int dim_a, int dim_b) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(partial_transpose_b(rho, dim_a, dim_b), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().sum() - 1.0;
}

namespace detail {

inline void check_povm_set(const PovmSet& set, int dim, const std::string& where) {
  if (set.empty()) throw ValidationError(where + " has no elements");
  CMatrix sum = CMatrix::Zero(dim, dim);
  for (std::size_t n = 0; n < set.size(); ++n) {
    const auto& e = set[n];
    if (e.rows() != dim || e.cols() != dim)
      throw DimensionMismatch(where + " element " + std::to_string(n) + " is " +
                              dims_string(e.rows(), e.cols()) + ", expected " + dims_string(dim, dim));
    if ((e - e.adjoint()).cwiseAbs().maxCoeff() > 1e-9)
      throw ValidationError(where + " element " + std::to_string(n) + " is not Hermitian");
    Eigen::SelfAdjointEigenSolver<CMatrix> es(e, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-9)
      throw ValidationError(where + " element " + std::to_string(n) + " is not positive");
    sum += e;
  }
  if ((sum - CMatrix::Identity(dim, dim)).cwiseAbs().maxCoeff() > 1e-9)
    throw ValidationError(where + " does not sum to the identity");
}

} // namespace detail

/// Checks the structural invariants; `tol` bounds |sum_{n,m} d - 1| per pair.
inline void validate(const JointData& j, double tol = 1e-6) {
  if (j.unbounded)
    throw ValidationError("negativity bounds need bounded measurement operators; "
                          "unbounded quadrature data is not supported");
  if (j.dim_a < 1 || j.dim_b < 1) throw ValidationError("joint data dimensions must be >= 1");
  if (j.dim_a * j.dim_b > kMaxJointDimension)
    throw DimensionCap("d_A d_B = " + std::to_string(j.dim_a * j.dim_b) + " exceeds the cap " +
                       std::to_string(kMaxJointDimension));
  for (std::size_t k = 0; k < j.settings_a.size(); ++k)
    detail::check_povm_set(j.settings_a[k], j.dim_a, "setting A" + std::to_string(k));
  for (std::size_t l = 0; l < j.settings_b.size(); ++l)
    detail::check_povm_set(j.settings_b[l], j.dim_b, "setting B" + std::to_string(l));
  if (j.data.empty()) throw ValidationError("joint data has no setting pairs");
  for (const auto& [kl, d] : j.data) {
    const auto [k, l] = kl;
    const std::string name = "data[" + std::to_string(k) + "," + std::to_string(l) + "]";
    if (k < 0 || l < 0 || k >= static_cast<int>(j.settings_a.size()) ||
        l >= static_cast<int>(j.settings_b.size()))
      throw ValidationError(name + " refers to a missing setting");
    const auto na = static_cast<Eigen::Index>(j.settings_a[k].size());
    const auto nb = static_cast<Eigen::Index>(j.settings_b[l].size());
    if (d.rows() != na || d.cols() != nb)
      throw DimensionMismatch(name + " is " + dims_string(d.rows(), d.cols()) + ", expected " +
                              dims_string(na, nb));
    if (!d.allFinite() || d.minCoeff() < -tol || d.maxCoeff() > 1.0 + tol)
      throw ValidationError(name + " has values outside [0, 1]");
    if (std::abs(d.sum() - 1.0) > tol) throw ValidationError(name + " does not sum to 1");
  }
}

struct NegativityOptions {
  double tol = 1e-6;
  double rho = 1.0;
  int max_iterations = 20'000;
  /// Stop when primal and dual residuals fall below this.
  double eps = 1e-8;
};

/// Maximizes sum a d + b subject to -1 <= sum a_j Q_j + b 1 <= 1 by ADMM on
/// the splitting Z = A(a), Z in the operator interval. The returned witness is
/// rescaled into the interval, so the bound is valid whatever the residuals.
inline NegativityBound negativity_lower_bound(const JointData& data, const NegativityOptions& opt = {}) {
  validate(data, opt.tol);
  const int dim = data.dim_a * data.dim_b;

  // Q_0 = identity carries b; the rest are pi (x) pi^T per observed cell.
  std::vector<CMatrix> q{CMatrix::Identity(dim, dim)};
  std::vector<double> c{1.0};
  for (const auto& [kl, d] : data.data) {
    const auto& sa = data.settings_a[static_cast<std::size_t>(kl.first)];
    const auto& sb = data.settings_b[static_cast<std::size_t>(kl.second)];
    for (std::size_t n = 0; n < sa.size(); ++n)
      for (std::size_t m = 0; m < sb.size(); ++m) {
        q.push_back(kron(sa[n], sb[m].transpose()));
        c.push_back(d(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m)));
      }
  }
  const auto p = static_cast<Eigen::Index>(q.size());
  const Eigen::Map<const Vector> cv(c.data(), p);

  Matrix gram(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = i; j < p; ++j)
      gram(i, j) = gram(j, i) = q[i].conjugate().cwiseProduct(q[j]).sum().real();

  // The constraint only sees a modulo null(gram); a component of c there
  // makes the dual unbounded, which no state can produce.
  Eigen::SelfAdjointEigenSolver<Matrix> ges(gram);
  const double gmax = ges.eigenvalues().cwiseAbs().maxCoeff();
  const double cut = 1e-10 * std::max(gmax, 1.0);
  Matrix gram_pinv = Matrix::Zero(p, p);
  Vector c_null = cv;
  for (Eigen::Index i = 0; i < p; ++i) {
    const double ev = ges.eigenvalues()(i);
    if (ev <= cut) continue;
    const Vector u = ges.eigenvectors().col(i);
    gram_pinv += u * u.transpose() / ev;
    c_null -= u * u.dot(cv);
  }
  if (c_null.norm() > opt.tol * std::max(1.0, cv.norm()))
    throw InconsistentData("observed values are not Born-rule probabilities of any operator "
                           "(null-space component " + std::to_string(c_null.norm()) + ")");

  auto apply = [&](const Vector& a) {
    CMatrix z = CMatrix::Zero(dim, dim);
    for (Eigen::Index j = 0; j < p; ++j) z += a(j) * q[j];
    return z;
  };
  auto adjoint = [&](const CMatrix& z) {
    Vector v(p);
    for (Eigen::Index j = 0; j < p; ++j) v(j) = q[j].conjugate().cwiseProduct(z).sum().real();
    return v;
  };
  auto clip = [&](const CMatrix& m) {
    const CMatrix h = 0.5 * (m + m.adjoint());
    Eigen::SelfAdjointEigenSolver<CMatrix> es(h);
    const Vector ev = es.eigenvalues().cwiseMax(-1.0).cwiseMin(1.0);
    return CMatrix(es.eigenvectors() * ev.cast<Complex>().asDiagonal() * es.eigenvectors().adjoint());
  };

  const double rho = opt.rho;
  Vector a = Vector::Zero(p);
  a(0) = 1.0;
  CMatrix z = CMatrix::Identity(dim, dim), u = CMatrix::Zero(dim, dim);
  NegativityBound out;
  int it = 0;
  for (it = 1; it <= opt.max_iterations; ++it) {
    a = gram_pinv * (adjoint(z - u) + cv / rho);
    const CMatrix az = apply(a);
    const CMatrix z_prev = z;
    z = clip(az + u);
    u += az - z;
    out.primal_residual = (az - z).norm();
    out.dual_residual = rho * (z - z_prev).norm();
    if (out.primal_residual < opt.eps && out.dual_residual < opt.eps) break;
  }
  out.iterations = std::min(it, opt.max_iterations);
  if (out.primal_residual > 1e-4 || out.dual_residual > 1e-4)
    throw NotConverged("negativity dual stalled after " + std::to_string(out.iterations) +
                       " iterations (primal " + std::to_string(out.primal_residual) + ", dual " +
                       std::to_string(out.dual_residual) + ")");

  // Certificate from scratch on the witness the weights actually define.
  CMatrix w = apply(a);
  w = 0.5 * (w + w.adjoint());
  const double s = std::max(1.0, spectral_norm_hermitian(w));
  a /= s;
  w /= s;
  Eigen::SelfAdjointEigenSolver<CMatrix> es(w, Eigen::EigenvaluesOnly);
  out.witness = w;
  out.witness_eigenvalues = es.eigenvalues();
  out.certificate_margin = 1.0 - es.eigenvalues().cwiseAbs().maxCoeff();
  out.beta = a(0);
  out.alpha.assign(a.data() + 1, a.data() + p);
  out.bound = cv.dot(a) - 1.0;

  const double cap = static_cast<double>(std::min(data.dim_a, data.dim_b)) - 1.0;
  if (out.bound > cap + opt.tol)
    throw InconsistentData("bound " + std::to_string(out.bound) + " exceeds the largest possible negativity " +
                           std::to_string(cap));
  return out;
}

/// Diagonal operator diag(theta^(n)) of a Fock-diagonal element.
inline CMatrix diagonal_element(const FockDiagonalPOVM& povm, int n) {
  return povm.element(n).cast<Complex>().asDiagonal();
}

/// Born-rule statistics of rho for one setting per side built from two
/// characterized detectors.
inline JointData click_data_from_povms(const FockDiagonalPOVM& a, const FockDiagonalPOVM& b,
                                       const CMatrix& rho, int dimension_cap = kMaxJointDimension) {
  const int da = a.truncation() + 1, db = b.truncation() + 1;
  if (da * db > dimension_cap)
    throw DimensionCap("d_A d_B = " + std::to_string(da * db) + " exceeds the cap " +
                       std::to_string(dimension_cap));
  if (rho.rows() != da * db || rho.cols() != da * db)
    throw DimensionMismatch("state is " + dims_string(rho.rows(), rho.cols()) + ", POVMs need " +
                            dims_string(da * db, da * db));
  JointData j;
  j.dim_a = da;
  j.dim_b = db;
  j.settings_a.emplace_back();
  j.settings_b.emplace_back();
  for (int n = 0; n < a.outcomes(); ++n) j.settings_a[0].push_back(diagonal_element(a, n));
  for (int m = 0; m < b.outcomes(); ++m) j.settings_b[0].push_back(diagonal_element(b, m));
  Matrix d(a.outcomes(), b.outcomes());
  for (int n = 0; n < a.outcomes(); ++n)
    for (int m = 0; m < b.outcomes(); ++m)
      d(n, m) = (kron(j.settings_a[0][n], j.settings_b[0][m]) * rho).trace().real();
  j.data[{0, 0}] = std::move(d);
  return j;
}

} // namespace qdt
