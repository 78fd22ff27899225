#pragma once

#include <Eigen/Dense>

#include "fabcor/types.hpp"

namespace fabcor {

// Builds the group design matrix W (group_size x d).
//   ones            -> single column of 1s
//   external_linear -> [x] (or [1, x] with include_intercept)
//   external_poly   -> [x^0, x^1, ..., x^degree]
// external_* kinds require the per-member covariate vector.
Eigen::MatrixXd build_design(const LinkingDesign& design, int group_size,
                             const Eigen::VectorXd* external_stats);

struct EtaPsiEstimate {
  Eigen::VectorXd eta;
  double psi_sq = 0.0;
  int iterations = 0;  // objective evaluations in the profile search
  double nll = 0.0;    // penalized profile objective at the optimum
};

// Empirical-Bayes fit of (eta, psi_sq) from the indirect projection.
// The indirect vector G' z_hat is modeled as Gaussian with mean G' W eta
// and covariance G' (Omega/(n_eff - 3) + psi_sq I) G; psi_sq is profiled
// over [0, 10] (log grid plus golden-section refinement, tolerance 1e-8)
// and eta solves the ridge-penalized weighted least squares at each step.
EtaPsiEstimate estimate_eta_psi(const Eigen::VectorXd& indirect,
                                const DecorrelationBasis& basis,
                                const Eigen::MatrixXd& w,
                                const Eigen::MatrixXd& omega, int n_eff,
                                double ridge_lambda);

// Conditional posterior of the group z vector given the indirect
// projection of z_hat:
//   V = [Psi^-1 + G M^-1 G']^-1,  M = G' (Omega/(n_eff-3)) G
//   m = V [Psi^-1 W eta + G M^-1 G' z_hat]
// with isotropic Psi = psi_sq I floored at 1e-8 before inversion.
PosteriorSummary posterior_given_indirect(const Eigen::VectorXd& z_hat,
                                          const DecorrelationBasis& basis,
                                          const Eigen::VectorXd& eta,
                                          double psi_sq,
                                          const Eigen::MatrixXd& w,
                                          const Eigen::MatrixXd& omega,
                                          int n_eff);

// Full prior-covariance overload for custom designs; Psi must be
// symmetric positive definite. Never produced by estimation.
PosteriorSummary posterior_given_indirect(const Eigen::VectorXd& z_hat,
                                          const DecorrelationBasis& basis,
                                          const Eigen::VectorXd& eta,
                                          const Eigen::MatrixXd& psi,
                                          const Eigen::MatrixXd& w,
                                          const Eigen::MatrixXd& omega,
                                          int n_eff);

// Convenience wrapper bundling the fitted pieces for one group.
LinkingModel fit_linking_model(const Eigen::VectorXd& indirect,
                               const DecorrelationBasis& basis,
                               const Eigen::MatrixXd& w,
                               const Eigen::MatrixXd& omega, int n_eff,
                               double ridge_lambda);

}  // namespace fabcor
