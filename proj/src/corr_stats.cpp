#include "fabcor/corr_stats.hpp"

#include <cmath>
#include <string>

namespace fabcor {

double standard_normal_cdf(double x) {
  // erfc-based form keeps full relative accuracy in the lower tail.
  return 0.5 * std::erfc(-x * 0.70710678118654752440);
}

double clamp_correlation(double rho) {
  constexpr double kLimit = 1.0 - 1e-12;
  if (rho > kLimit) return kLimit;
  if (rho < -kLimit) return -kLimit;
  return rho;
}

double fisher_transform(double rho) {
  if (std::isnan(rho)) throw DataError("fisher_transform: NaN correlation");
  if (rho <= -1.0 || rho >= 1.0)
    throw DataError("fisher_transform: correlation " + std::to_string(rho) +
                    " outside (-1, 1); clamp first");
  return std::atanh(rho);
}

double t_statistic(double rho_hat, int n) {
  if (n < 3) throw ConfigError("t_statistic: need n >= 3");
  if (std::isnan(rho_hat)) throw DataError("t_statistic: NaN correlation");
  if (rho_hat <= -1.0 || rho_hat >= 1.0)
    throw NumericalError("t_statistic: |rho| >= 1 gives an infinite statistic");
  return rho_hat * std::sqrt((n - 2.0) / (1.0 - rho_hat * rho_hat));
}

double umpu_p_value(double z_hat, int n) {
  if (n < 4) throw ConfigError("umpu_p_value: need n >= 4");
  const double s = z_hat * std::sqrt(n - 3.0);
  // 1 - |Phi(s) - Phi(-s)| = 2 Phi(-|s|), evaluated tail-first so large
  // statistics keep a nonzero p-value; bitwise-consistent with the FAB
  // p-value at offset zero.
  double p = 2.0 * standard_normal_cdf(-std::abs(s));
  if (p > 1.0) p = 1.0;
  return p;
}

Eigen::MatrixXd pearson_correlation_matrix(const DataMatrix& data) {
  validate_data_matrix(data);
  const int q = static_cast<int>(data.values.cols());
  Eigen::MatrixXd centered =
      data.values.rowwise() - data.values.colwise().mean();
  Eigen::VectorXd norms = centered.colwise().norm();
  for (int i = 0; i < q; ++i) {
    if (norms[i] <= 0.0)
      throw DataError("zero-variance column '" + data.labels[i] + "' (index " +
                      std::to_string(i) + ")");
  }
  Eigen::MatrixXd corr(q, q);
  for (int i = 0; i < q; ++i) {
    corr(i, i) = 1.0;
    for (int j = i + 1; j < q; ++j) {
      double value = centered.col(i).dot(centered.col(j)) / (norms[i] * norms[j]);
      if (value > 1.0) value = 1.0;
      if (value < -1.0) value = -1.0;
      corr(i, j) = value;
      corr(j, i) = value;
    }
  }
  return corr;
}

ZStatistics compute_z_statistics(const DataMatrix& data) {
  const Eigen::MatrixXd corr = pearson_correlation_matrix(data);
  const int q = static_cast<int>(corr.rows());
  const int p = pair_count(q);
  ZStatistics stats;
  stats.q = q;
  stats.n_eff = static_cast<int>(data.values.rows());
  stats.z_hat.resize(p);
  stats.pairs.reserve(p);
  for (int j = 0; j < p; ++j) {
    const PairIndex pair = flat_to_pair(j, q);
    stats.pairs.push_back(pair);
    stats.z_hat[j] = fisher_transform(clamp_correlation(corr(pair.w, pair.v)));
  }
  return stats;
}

}  // namespace fabcor
