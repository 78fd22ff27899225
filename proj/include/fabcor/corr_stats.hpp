#pragma once

#include <Eigen/Dense>

#include "fabcor/types.hpp"

namespace fabcor {

// Standard normal CDF, absolute error below 1e-12.
double standard_normal_cdf(double x);

// Clamps a correlation into [-1 + 1e-12, 1 - 1e-12] so the Fisher
// transform stays finite under degenerate (duplicated-column) inputs.
double clamp_correlation(double rho);

// F(rho) = (1/2) log((1 + rho)/(1 - rho)); odd, strictly increasing.
// Requires |rho| < 1; NaN input raises DataError.
double fisher_transform(double rho);

// rho * sqrt((n-2)/(1-rho^2)); baseline diagnostic only, n >= 3.
double t_statistic(double rho_hat, int n);

// Two-sided p-value 1 - |Phi(s) - Phi(-s)| with s = z_hat * sqrt(n-3).
double umpu_p_value(double z_hat, int n);

// Sample Pearson correlation matrix, two-pass centered computation.
// Exactly symmetric with unit diagonal; throws DataError naming any
// zero-variance column.
Eigen::MatrixXd pearson_correlation_matrix(const DataMatrix& data);

// Fisher-transformed statistics for every upper-triangle pair.
ZStatistics compute_z_statistics(const DataMatrix& data);

}  // namespace fabcor
