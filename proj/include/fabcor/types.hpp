#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fabcor {

// Invalid configuration: bad flag values, impossible sizes, missing inputs.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or degenerate input data.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failure inside a numerical routine (decomposition, optimisation).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Upper-triangular pair (w, v) with w < v of a q x q correlation matrix.
struct PairIndex {
  int w = 0;
  int v = 0;
};

// Number of distinct off-diagonal pairs, p = q(q-1)/2.
int pair_count(int q);

// Row-major upper-triangle enumeration:
// (0,1) -> 0, (0,2) -> 1, ..., (0,q-1) -> q-2, (1,2) -> q-1, ...
int pair_to_flat(const PairIndex& pair, int q);
PairIndex flat_to_pair(int j, int q);

// Observation matrix; rows are observations, columns are labeled variables.
struct DataMatrix {
  Eigen::MatrixXd values;  // n x q
  std::vector<std::string> labels;
};

// Shape and finiteness checks: n >= 4, q >= 2, unique nonempty labels
// matching the column count, all entries finite. Throws DataError.
void validate_data_matrix(const DataMatrix& data);

// Fisher-transformed pairwise correlation statistics of one dataset.
struct ZStatistics {
  Eigen::VectorXd z_hat;          // flat pair order, length q(q-1)/2
  std::vector<PairIndex> pairs;
  int n_eff = 0;                  // rows of the originating dataset
  int q = 0;
};

enum class DesignKind { kOnes, kExternalLinear, kExternalPoly, kCustom };

// Regression design for the linking model within a group.
struct LinkingDesign {
  DesignKind kind = DesignKind::kOnes;
  bool include_intercept = false;  // external_linear only
  int poly_degree = 0;             // external_poly only, >= 1
  double ridge_lambda = 0.0;
};

// Fitted linking model for one group of statistics.
struct LinkingModel {
  Eigen::MatrixXd w;    // group_size x d design
  Eigen::VectorXd eta;  // d coefficients
  Eigen::MatrixXd psi;  // group_size x group_size prior covariance
  int group_size = 0;
};

// Posterior of the group z vector given the indirect projection.
struct PosteriorSummary {
  Eigen::VectorXd m;
  Eigen::MatrixXd v;
  double m_j = 0.0;  // tested coordinate
  double v_j = 0.0;
};

enum class OmegaSource { kIdentityBlock, kBootstrap };

// Correlation matrix estimate for a group of z statistics.
struct OmegaEstimate {
  Eigen::MatrixXd matrix;
  OmegaSource source = OmegaSource::kIdentityBlock;
  int resamples = 0;  // kBootstrap only
};

// Orthonormal columns orthogonal to the tested statistic's column of Omega.
struct DecorrelationBasis {
  Eigen::MatrixXd g;  // p_k x (p_k - 1)
  int tested_index = 0;
};

// Internal ordering reuses the statistics under test and voids the
// independence premise of the offset; callers must opt in explicitly.
enum class OrderingSource { kExternalStats, kInternalZ };

struct GroupAssignment {
  std::vector<std::vector<int>> groups;  // flat indices, rank order inside
  int group_size_target = 0;
  OrderingSource source = OrderingSource::kExternalStats;
};

struct TestResult {
  PairIndex pair;
  double z_hat = 0.0;
  double p_umpu = 1.0;
  double p_fab = 1.0;
  double offset_b = 0.0;
  double m_j = 0.0;
  double v_j = std::numeric_limits<double>::infinity();
  int group_id = -1;
};

enum class DecisionRule { kFixedAlpha, kBenjaminiHochberg };

struct DecisionSet {
  DecisionRule rule = DecisionRule::kFixedAlpha;
  double level = 0.05;           // alpha or FDR target
  double threshold_used = 0.0;   // realized p-value cutoff
  std::vector<char> rejected;    // 1 = reject, aligned with the p vector
  int rejection_count = 0;
};

struct EvaluationReport {
  // Conditional rates by truth row; NaN when the row is empty.
  double null_reject_rate = 0.0;
  double null_accept_rate = 0.0;
  double alt_reject_rate = 0.0;
  double alt_accept_rate = 0.0;
  int null_count = 0;
  int alt_count = 0;
  int rejection_count = 0;
  int false_positives = 0;
  int true_positives = 0;
  double power = 0.0;         // NaN when no alternatives present
  double type1 = 0.0;         // NaN when no nulls present
  double observed_fdr = 0.0;  // 0 when nothing is rejected
};

}  // namespace fabcor
