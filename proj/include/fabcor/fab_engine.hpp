#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fabcor/linking.hpp"
#include "fabcor/types.hpp"

namespace fabcor {

struct EngineOptions {
  // Scale external blocks by the test sample size instead of the external
  // sample size (the single-n convention); off by default.
  bool strict_external_scaling = false;
  // Required to run with GroupAssignment built from the test statistics
  // themselves; such p-values lose their exact validity guarantee.
  bool allow_internal_ordering = false;
  int threads = 0;  // 0 = library default
};

struct EngineRun {
  std::vector<TestResult> results;  // ascending flat pair index
  std::vector<std::string> warnings;
};

// p = 1 - |Phi(s + b) - Phi(-s)|, clamped to [0, 1]. Null-uniform for any
// offset b independent of s. b = 0 reduces to the two-sided p-value.
double fab_p_value(double s, double b);

// Offset b = 2 m_j / (v_j sqrt(n - 3)); kept as the single definition
// point so the convention can be amended in one place.
double fab_offset(double m_j, double v_j, int n);

// Orthonormal basis of the complement of Omega's column j. Identity
// source: identity matrix minus column j. Otherwise a Householder
// reflector of the column, with each basis column's first nonzero entry
// made positive for reproducibility.
DecorrelationBasis build_decorrelation(const OmegaEstimate& omega, int j);

// Correlation matrix of the z statistics for the given pairs, estimated
// from B row resamples. A resample with a zero-variance needed column is
// redrawn (at most 10 times per index). If the smallest eigenvalue falls
// below 1e-8 the estimate is shrunk toward identity by the smallest
// gamma in {1e-6, 1e-4, 1e-2} restoring positive definiteness.
OmegaEstimate bootstrap_omega(const DataMatrix& data,
                              const std::vector<PairIndex>& pairs, int B,
                              std::uint64_t seed, int threads = 0);

// Default resample count: 100 x group size, capped at 5000.
int default_bootstrap_b(int group_size);

// Sorts indices by ordering statistic descending (stable, ties by
// ascending index) and chunks into contiguous groups of group_size; the
// last group may be smaller.
GroupAssignment assign_groups(const Eigen::VectorXd& ordering_stats,
                              int group_size, OrderingSource source);

// External-data mode: per test, the indirect information is the external
// z vector of its group without the tested pair's own external twin; the
// design row for the tested pair still participates in the prior mean.
// External blocks scale by 1/(n_ext - 3) unless strict scaling is set.
EngineRun run_fab_external(const DataMatrix& test_data,
                           const DataMatrix& external_data,
                           const LinkingDesign& design,
                           const GroupAssignment& groups,
                           const EngineOptions& opts = {});

// Bootstrap mode: per group, Omega is bootstrap-estimated from the test
// data, the basis comes from its tested column, and the indirect vector
// is the projection of the group's own z statistics. B <= 0 selects the
// default resample count. external_stats, when present, supplies the
// covariate for external_* designs (full-length flat vector).
EngineRun run_fab_bootstrap(const DataMatrix& test_data,
                            const LinkingDesign& design,
                            const GroupAssignment& groups, int B,
                            std::uint64_t seed,
                            const Eigen::VectorXd* external_stats = nullptr,
                            const EngineOptions& opts = {});

namespace reference {

// Serial reference drivers: plain loops over the same per-test kernels,
// kept for equivalence testing and benchmarking against the parallel
// drivers above. Output must match bitwise.
EngineRun run_fab_external(const DataMatrix& test_data,
                           const DataMatrix& external_data,
                           const LinkingDesign& design,
                           const GroupAssignment& groups,
                           const EngineOptions& opts = {});
EngineRun run_fab_bootstrap(const DataMatrix& test_data,
                            const LinkingDesign& design,
                            const GroupAssignment& groups, int B,
                            std::uint64_t seed,
                            const Eigen::VectorXd* external_stats = nullptr,
                            const EngineOptions& opts = {});

}  // namespace reference

}  // namespace fabcor
