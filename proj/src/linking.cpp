#include "fabcor/linking.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fabcor {

namespace {

constexpr double kPsiFloor = 1e-8;
constexpr double kPsiMax = 10.0;
constexpr double kSearchTol = 1e-8;
constexpr int kEvalCap = 200;
constexpr int kGridPoints = 40;

void check_basis_shapes(const Eigen::VectorXd& indirect,
                        const DecorrelationBasis& basis,
                        const Eigen::MatrixXd& w,
                        const Eigen::MatrixXd& omega, int n_eff) {
  const long p_k = basis.g.rows();
  const long k = basis.g.cols();
  if (p_k < 2)
    throw ConfigError("linking: group must have at least 2 members");
  if (k != p_k - 1)
    throw ConfigError("linking: basis must have p_k - 1 columns");
  if (indirect.size() != k)
    throw ConfigError("linking: indirect length " +
                      std::to_string(indirect.size()) + " != basis columns " +
                      std::to_string(k));
  if (w.rows() != p_k)
    throw ConfigError("linking: design rows " + std::to_string(w.rows()) +
                      " != group size " + std::to_string(p_k));
  if (omega.rows() != p_k || omega.cols() != p_k)
    throw ConfigError("linking: omega must be p_k x p_k");
  if (n_eff < 4) throw ConfigError("linking: need n_eff >= 4");
}

// Rotated profile problem: after diagonalizing M = Q Lambda Q', every
// psi_sq candidate t costs O(k d + d^3) instead of a fresh factorization.
struct ProfileProblem {
  Eigen::VectorXd lambda;  // eigenvalues of M, clipped at zero
  Eigen::MatrixXd x;       // Q' (G' W)
  Eigen::VectorXd y;       // Q' indirect
  double ridge = 0.0;
};

// Ridge-weighted least squares for eta at fixed t, plus the profile
// objective (up to an additive constant).
double profile_objective(const ProfileProblem& prob, double t,
                         Eigen::VectorXd* eta_out) {
  const long k = prob.lambda.size();
  const long d = prob.x.cols();
  Eigen::VectorXd denom(k);
  for (long i = 0; i < k; ++i)
    denom[i] = std::max(prob.lambda[i] + t, 1e-14);
  const Eigen::VectorXd inv = denom.cwiseInverse();

  Eigen::MatrixXd normal = prob.x.transpose() * inv.asDiagonal() * prob.x;
  normal.diagonal().array() += 2.0 * prob.ridge;
  const Eigen::VectorXd rhs = prob.x.transpose() * inv.cwiseProduct(prob.y);
  Eigen::VectorXd eta = normal.ldlt().solve(rhs);
  if (!eta.allFinite() ||
      (normal * eta - rhs).norm() > 1e-8 * (rhs.norm() + 1.0)) {
    // Rank-deficient normal equations (possible at ridge 0): fall back to
    // the minimum-norm least-squares solution of the scaled system.
    const Eigen::VectorXd root = inv.cwiseSqrt();
    const Eigen::MatrixXd xs = root.asDiagonal() * prob.x;
    const Eigen::VectorXd ys = root.cwiseProduct(prob.y);
    eta = xs.completeOrthogonalDecomposition().solve(ys);
    if (!eta.allFinite())
      throw NumericalError("linking: eta solve failed (d = " +
                           std::to_string(d) + ")");
  }

  const Eigen::VectorXd resid = prob.y - prob.x * eta;
  double value = prob.ridge * eta.squaredNorm();
  for (long i = 0; i < k; ++i)
    value += 0.5 * (std::log(denom[i]) + resid[i] * resid[i] * inv[i]);
  if (eta_out) *eta_out = std::move(eta);
  return value;
}

}  // namespace

Eigen::MatrixXd build_design(const LinkingDesign& design, int group_size,
                             const Eigen::VectorXd* external_stats) {
  if (group_size < 1) throw ConfigError("build_design: empty group");
  const bool needs_external = design.kind == DesignKind::kExternalLinear ||
                              design.kind == DesignKind::kExternalPoly;
  if (needs_external) {
    if (!external_stats)
      throw ConfigError("build_design: design requires external statistics");
    if (external_stats->size() != group_size)
      throw ConfigError("build_design: external statistic length " +
                        std::to_string(external_stats->size()) +
                        " != group size " + std::to_string(group_size));
  }
  switch (design.kind) {
    case DesignKind::kOnes:
      return Eigen::MatrixXd::Ones(group_size, 1);
    case DesignKind::kExternalLinear: {
      if (!design.include_intercept) return *external_stats;
      Eigen::MatrixXd w(group_size, 2);
      w.col(0).setOnes();
      w.col(1) = *external_stats;
      return w;
    }
    case DesignKind::kExternalPoly: {
      if (design.poly_degree < 1)
        throw ConfigError("build_design: polynomial degree must be >= 1");
      Eigen::MatrixXd w(group_size, design.poly_degree + 1);
      w.col(0).setOnes();
      for (int c = 1; c <= design.poly_degree; ++c)
        w.col(c) = w.col(c - 1).cwiseProduct(*external_stats);
      return w;
    }
    case DesignKind::kCustom:
      throw ConfigError(
          "build_design: custom designs supply their own matrix");
  }
  throw ConfigError("build_design: unknown design kind");
}

EtaPsiEstimate estimate_eta_psi(const Eigen::VectorXd& indirect,
                                const DecorrelationBasis& basis,
                                const Eigen::MatrixXd& w,
                                const Eigen::MatrixXd& omega, int n_eff,
                                double ridge_lambda) {
  check_basis_shapes(indirect, basis, w, omega, n_eff);
  if (ridge_lambda < 0.0)
    throw ConfigError("estimate_eta_psi: ridge_lambda must be >= 0");

  Eigen::MatrixXd m =
      basis.g.transpose() * (omega / (n_eff - 3.0)) * basis.g;
  m = 0.5 * (m + m.transpose()).eval();

  ProfileProblem prob;
  prob.ridge = ridge_lambda;
  const Eigen::MatrixXd x = basis.g.transpose() * w;
  const double diag_scale = m.diagonal().cwiseAbs().maxCoeff();
  double off_scale = 0.0;
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j)
      if (i != j) off_scale = std::max(off_scale, std::abs(m(i, j)));
  if (off_scale <= 1e-13 * std::max(diag_scale, 1e-300)) {
    prob.lambda = m.diagonal().cwiseMax(0.0);
    prob.x = x;
    prob.y = indirect;
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    if (eig.info() != Eigen::Success)
      throw NumericalError("estimate_eta_psi: eigendecomposition failed");
    prob.lambda = eig.eigenvalues().cwiseMax(0.0);
    prob.x = eig.eigenvectors().transpose() * x;
    prob.y = eig.eigenvectors().transpose() * indirect;
  }

  int evals = 0;
  double best_t = 0.0;
  double best_value = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_eta;
  auto probe = [&](double t) {
    Eigen::VectorXd eta;
    const double value = profile_objective(prob, t, &eta);
    ++evals;
    if (value < best_value) {
      best_value = value;
      best_t = t;
      best_eta = std::move(eta);
    }
    return value;
  };

  std::vector<double> grid;
  grid.push_back(0.0);
  const double ratio = std::pow(kPsiMax / kPsiFloor, 1.0 / (kGridPoints - 1));
  for (int i = 0; i < kGridPoints; ++i)
    grid.push_back(kPsiFloor * std::pow(ratio, i));
  int best_index = 0;
  for (int i = 0; i < static_cast<int>(grid.size()); ++i) {
    const double value = probe(grid[i]);
    if (value <= best_value) best_index = i;
  }

  double lo = grid[std::max(best_index - 1, 0)];
  double hi = grid[std::min(best_index + 1, static_cast<int>(grid.size()) - 1)];
  const double golden = 0.61803398874989485;
  double a = lo, b = hi;
  double c1 = b - golden * (b - a);
  double c2 = a + golden * (b - a);
  double f1 = probe(c1);
  double f2 = probe(c2);
  while (b - a > kSearchTol && evals < kEvalCap) {
    if (f1 < f2) {
      b = c2;
      c2 = c1;
      f2 = f1;
      c1 = b - golden * (b - a);
      f1 = probe(c1);
    } else {
      a = c1;
      c1 = c2;
      f1 = f2;
      c2 = a + golden * (b - a);
      f2 = probe(c2);
    }
  }
  if (b - a > kSearchTol)
    throw NumericalError(
        "estimate_eta_psi: profile search did not converge (evals = " +
        std::to_string(evals) + ", bracket [" + std::to_string(a) + ", " +
        std::to_string(b) + "], objective " + std::to_string(best_value) + ")");

  EtaPsiEstimate out;
  out.eta = best_eta;
  out.psi_sq = best_t;
  out.iterations = evals;
  out.nll = best_value;
  return out;
}

namespace {

PosteriorSummary posterior_core(const Eigen::VectorXd& z_hat,
                                const DecorrelationBasis& basis,
                                const Eigen::VectorXd& eta,
                                const Eigen::MatrixXd& psi_inverse,
                                const Eigen::MatrixXd& w,
                                const Eigen::MatrixXd& omega, int n_eff) {
  check_basis_shapes(Eigen::VectorXd::Zero(basis.g.cols()), basis, w, omega,
                     n_eff);
  const long p_k = basis.g.rows();
  if (z_hat.size() != p_k)
    throw ConfigError("posterior: z_hat length != group size");
  if (eta.size() != w.cols())
    throw ConfigError("posterior: eta length != design columns");
  if (basis.tested_index < 0 || basis.tested_index >= p_k)
    throw ConfigError("posterior: tested index out of range");

  Eigen::MatrixXd m_inner =
      basis.g.transpose() * (omega / (n_eff - 3.0)) * basis.g;
  m_inner = 0.5 * (m_inner + m_inner.transpose()).eval();
  Eigen::LDLT<Eigen::MatrixXd> inner(m_inner);
  Eigen::MatrixXd solved = inner.solve(basis.g.transpose());
  if (inner.info() != Eigen::Success || !solved.allFinite() ||
      (m_inner * solved - basis.g.transpose()).cwiseAbs().maxCoeff() >
          1e-6 * (1.0 + m_inner.cwiseAbs().maxCoeff()))
    throw NumericalError(
        "posterior: indirect covariance numerically singular; regularize "
        "the correlation estimate");

  Eigen::MatrixXd data_precision = basis.g * solved;  // G M^-1 G'
  data_precision = 0.5 * (data_precision + data_precision.transpose()).eval();

  Eigen::MatrixXd full_precision = psi_inverse + data_precision;
  Eigen::LDLT<Eigen::MatrixXd> post(full_precision);
  Eigen::MatrixXd v = post.solve(Eigen::MatrixXd::Identity(p_k, p_k));
  const Eigen::VectorXd mean =
      post.solve(psi_inverse * (w * eta) + data_precision * z_hat);
  if (post.info() != Eigen::Success || !v.allFinite() || !mean.allFinite())
    throw NumericalError("posterior: covariance inversion failed");
  v = 0.5 * (v + v.transpose()).eval();

  PosteriorSummary out;
  out.m = mean;
  out.v = std::move(v);
  out.m_j = out.m[basis.tested_index];
  out.v_j = out.v(basis.tested_index, basis.tested_index);
  if (!(out.v_j > 0.0) || !std::isfinite(out.v_j))
    throw NumericalError("posterior: nonpositive tested-coordinate variance");
  return out;
}

}  // namespace

PosteriorSummary posterior_given_indirect(const Eigen::VectorXd& z_hat,
                                          const DecorrelationBasis& basis,
                                          const Eigen::VectorXd& eta,
                                          double psi_sq,
                                          const Eigen::MatrixXd& w,
                                          const Eigen::MatrixXd& omega,
                                          int n_eff) {
  const long p_k = basis.g.rows();
  const double floored = std::max(psi_sq, kPsiFloor);
  const Eigen::MatrixXd psi_inverse =
      Eigen::MatrixXd::Identity(p_k, p_k) / floored;
  return posterior_core(z_hat, basis, eta, psi_inverse, w, omega, n_eff);
}

PosteriorSummary posterior_given_indirect(const Eigen::VectorXd& z_hat,
                                          const DecorrelationBasis& basis,
                                          const Eigen::VectorXd& eta,
                                          const Eigen::MatrixXd& psi,
                                          const Eigen::MatrixXd& w,
                                          const Eigen::MatrixXd& omega,
                                          int n_eff) {
  if (psi.rows() != basis.g.rows() || psi.cols() != basis.g.rows())
    throw ConfigError("posterior: psi must be p_k x p_k");
  Eigen::LDLT<Eigen::MatrixXd> prior(0.5 * (psi + psi.transpose()));
  Eigen::MatrixXd psi_inverse =
      prior.solve(Eigen::MatrixXd::Identity(psi.rows(), psi.cols()));
  if (prior.info() != Eigen::Success || !psi_inverse.allFinite())
    throw NumericalError("posterior: prior covariance not invertible");
  psi_inverse = 0.5 * (psi_inverse + psi_inverse.transpose()).eval();
  return posterior_core(z_hat, basis, eta, psi_inverse, w, omega, n_eff);
}

LinkingModel fit_linking_model(const Eigen::VectorXd& indirect,
                               const DecorrelationBasis& basis,
                               const Eigen::MatrixXd& w,
                               const Eigen::MatrixXd& omega, int n_eff,
                               double ridge_lambda) {
  const EtaPsiEstimate est =
      estimate_eta_psi(indirect, basis, w, omega, n_eff, ridge_lambda);
  LinkingModel model;
  model.w = w;
  model.eta = est.eta;
  model.group_size = static_cast<int>(basis.g.rows());
  model.psi = Eigen::MatrixXd::Identity(model.group_size, model.group_size) *
              est.psi_sq;
  return model;
}

}  // namespace fabcor
