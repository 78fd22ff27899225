#include "fabcor/fab_engine.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <string>
#include <unordered_map>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fabcor/corr_stats.hpp"
#include "fabcor/rng.hpp"

namespace fabcor {

namespace {

int resolve_threads(int requested) {
#ifdef _OPENMP
  if (requested > 0) return requested;
  return omp_get_max_threads();
#else
  (void)requested;
  return 1;
#endif
}

void validate_groups(const GroupAssignment& groups, int p) {
  std::vector<char> seen(p, 0);
  int total = 0;
  for (const auto& group : groups.groups) {
    for (int j : group) {
      if (j < 0 || j >= p)
        throw ConfigError("group assignment references test index " +
                          std::to_string(j) + " outside [0, " +
                          std::to_string(p) + ")");
      if (seen[j]) throw ConfigError("group assignment repeats test index " +
                                     std::to_string(j));
      seen[j] = 1;
      ++total;
    }
  }
  if (total != p)
    throw ConfigError("group assignment covers " + std::to_string(total) +
                      " of " + std::to_string(p) + " tests");
}

void check_ordering_gate(const GroupAssignment& groups,
                         const EngineOptions& opts) {
  if (groups.source == OrderingSource::kInternalZ &&
      !opts.allow_internal_ordering)
    throw ConfigError(
        "groups were ordered by the statistics under test; this voids the "
        "offset's independence guarantee and requires the explicit "
        "internal-ordering override");
}

TestResult umpu_only_result(double z_test, int n_test, PairIndex pair,
                            int group_id) {
  TestResult result;
  result.pair = pair;
  result.z_hat = z_test;
  result.p_umpu = umpu_p_value(z_test, n_test);
  result.offset_b = 0.0;
  result.m_j = 0.0;
  result.v_j = std::numeric_limits<double>::infinity();
  result.p_fab = fab_p_value(z_test * std::sqrt(n_test - 3.0), 0.0);
  result.group_id = group_id;
  return result;
}

// One complete FAB test: basis from the tested coordinate, empirical-Bayes
// fit on the indirect projection, posterior, offset, p-values.
TestResult fab_single_test(const Eigen::VectorXd& z_joint, double z_test,
                           int n_test, const OmegaEstimate& omega, int n_eff,
                           const Eigen::MatrixXd& w, double ridge,
                           int position, PairIndex pair, int group_id) {
  const DecorrelationBasis basis = build_decorrelation(omega, position);
  const Eigen::VectorXd indirect = basis.g.transpose() * z_joint;
  const EtaPsiEstimate fit =
      estimate_eta_psi(indirect, basis, w, omega.matrix, n_eff, ridge);
  const PosteriorSummary post = posterior_given_indirect(
      z_joint, basis, fit.eta, fit.psi_sq, w, omega.matrix, n_eff);

  TestResult result;
  result.pair = pair;
  result.z_hat = z_test;
  result.p_umpu = umpu_p_value(z_test, n_test);
  result.m_j = post.m_j;
  result.v_j = post.v_j;
  result.offset_b = fab_offset(post.m_j, post.v_j, n_test);
  result.p_fab =
      fab_p_value(z_test * std::sqrt(n_test - 3.0), result.offset_b);
  result.group_id = group_id;
  return result;
}

struct GroupPlan {
  const std::vector<int>* members = nullptr;
  Eigen::MatrixXd w;
  bool umpu_only = false;  // singleton, or design too wide for the group
};

// Per-group designs; a group that cannot support the design (d >= p_k)
// degrades to the zero-offset test instead of aborting the run.
std::vector<GroupPlan> plan_groups(const GroupAssignment& groups,
                                   const LinkingDesign& design,
                                   const Eigen::VectorXd* covariate, int p,
                                   std::vector<std::string>* warnings) {
  const bool needs_external = design.kind == DesignKind::kExternalLinear ||
                              design.kind == DesignKind::kExternalPoly;
  if (needs_external && !covariate)
    throw ConfigError("design requires external statistics but none supplied");
  if (needs_external && covariate->size() != p)
    throw ConfigError("external statistic vector length " +
                      std::to_string(covariate->size()) +
                      " != test count " + std::to_string(p));

  std::vector<GroupPlan> plans(groups.groups.size());
  int degraded = 0;
  for (std::size_t g = 0; g < groups.groups.size(); ++g) {
    const auto& members = groups.groups[g];
    plans[g].members = &members;
    const int p_k = static_cast<int>(members.size());
    if (p_k < 2) {
      plans[g].umpu_only = true;
      continue;
    }
    Eigen::VectorXd group_cov;
    const Eigen::VectorXd* cov_ptr = nullptr;
    if (needs_external) {
      group_cov.resize(p_k);
      for (int t = 0; t < p_k; ++t) group_cov[t] = (*covariate)[members[t]];
      cov_ptr = &group_cov;
    }
    Eigen::MatrixXd w = build_design(design, p_k, cov_ptr);
    if (w.cols() >= p_k) {
      plans[g].umpu_only = true;
      ++degraded;
      continue;
    }
    plans[g].w = std::move(w);
  }
  if (degraded > 0)
    warnings->push_back(std::to_string(degraded) +
                        " group(s) smaller than the design dimension ran "
                        "with zero offset");
  return plans;
}

// Rethrows the first captured failure in task order so error behavior
// does not depend on the schedule.
void rethrow_first(const std::vector<std::exception_ptr>& failures) {
  for (const auto& failure : failures)
    if (failure) std::rethrow_exception(failure);
}

// Reorders external columns to the test dataset's label order.
DataMatrix align_external_columns(const DataMatrix& test_data,
                                  const DataMatrix& external_data) {
  if (test_data.labels.size() != external_data.labels.size())
    throw ConfigError("external dataset has a different column count");
  std::unordered_map<std::string, int> position;
  for (std::size_t i = 0; i < external_data.labels.size(); ++i)
    position[external_data.labels[i]] = static_cast<int>(i);
  DataMatrix aligned;
  aligned.labels = test_data.labels;
  aligned.values.resize(external_data.values.rows(),
                        external_data.values.cols());
  for (std::size_t i = 0; i < test_data.labels.size(); ++i) {
    auto found = position.find(test_data.labels[i]);
    if (found == position.end())
      throw ConfigError("external dataset lacks column '" +
                        test_data.labels[i] + "'");
    aligned.values.col(static_cast<long>(i)) =
        external_data.values.col(found->second);
  }
  return aligned;
}

// Shared setup of the external-mode run; orchestration differs between
// the parallel and reference drivers.
struct ExternalPrep {
  ZStatistics z_test;
  ZStatistics z_ext;
  int n_eff = 0;
  std::vector<GroupPlan> plans;
  std::unordered_map<int, OmegaEstimate> identity_blocks;
  std::vector<std::string> warnings;
};

ExternalPrep prepare_external(const DataMatrix& test_data,
                              const DataMatrix& external_data,
                              const LinkingDesign& design,
                              const GroupAssignment& groups,
                              const EngineOptions& opts) {
  check_ordering_gate(groups, opts);
  validate_data_matrix(test_data);
  validate_data_matrix(external_data);
  const DataMatrix aligned = align_external_columns(test_data, external_data);

  ExternalPrep prep;
  prep.z_test = compute_z_statistics(test_data);
  prep.z_ext = compute_z_statistics(aligned);
  const int p = static_cast<int>(prep.z_test.z_hat.size());
  validate_groups(groups, p);
  prep.n_eff =
      opts.strict_external_scaling ? prep.z_test.n_eff : prep.z_ext.n_eff;
  prep.plans = plan_groups(groups, design, &prep.z_ext.z_hat, p,
                           &prep.warnings);
  for (const auto& plan : prep.plans) {
    const int p_k = static_cast<int>(plan.members->size());
    if (!plan.umpu_only && !prep.identity_blocks.count(p_k))
      prep.identity_blocks[p_k] =
          OmegaEstimate{Eigen::MatrixXd::Identity(p_k, p_k),
                        OmegaSource::kIdentityBlock, 0};
  }
  return prep;
}

// Joint vector for an external-mode test: the group's external statistics
// with the tested slot replaced by the test statistic, so the projection
// drops the tested pair's own external twin.
Eigen::VectorXd external_joint_vector(const ZStatistics& z_test,
                                      const ZStatistics& z_ext,
                                      const std::vector<int>& members,
                                      int position) {
  const int p_k = static_cast<int>(members.size());
  Eigen::VectorXd joint(p_k);
  for (int t = 0; t < p_k; ++t) joint[t] = z_ext.z_hat[members[t]];
  joint[position] = z_test.z_hat[members[position]];
  return joint;
}

TestResult external_test(const ExternalPrep& prep, const LinkingDesign& design,
                         int group_id, int position) {
  const GroupPlan& plan = prep.plans[group_id];
  const int j = (*plan.members)[position];
  if (plan.umpu_only)
    return umpu_only_result(prep.z_test.z_hat[j], prep.z_test.n_eff,
                            prep.z_test.pairs[j], group_id);
  const Eigen::VectorXd joint =
      external_joint_vector(prep.z_test, prep.z_ext, *plan.members, position);
  return fab_single_test(
      joint, prep.z_test.z_hat[j], prep.z_test.n_eff,
      prep.identity_blocks.at(static_cast<int>(plan.members->size())),
      prep.n_eff, plan.w, design.ridge_lambda, position,
      prep.z_test.pairs[j], group_id);
}

// Shared setup of the bootstrap-mode run.
struct BootstrapPrep {
  ZStatistics z_test;
  std::vector<GroupPlan> plans;
  int b = 0;
  std::vector<std::string> warnings;
};

BootstrapPrep prepare_bootstrap(const DataMatrix& test_data,
                                const LinkingDesign& design,
                                const GroupAssignment& groups, int B,
                                const Eigen::VectorXd* external_stats,
                                const EngineOptions& opts) {
  check_ordering_gate(groups, opts);
  validate_data_matrix(test_data);

  BootstrapPrep prep;
  prep.z_test = compute_z_statistics(test_data);
  const int p = static_cast<int>(prep.z_test.z_hat.size());
  validate_groups(groups, p);
  prep.b = B > 0 ? B : default_bootstrap_b(groups.group_size_target);
  prep.plans =
      plan_groups(groups, design, external_stats, p, &prep.warnings);

  int undersized = 0;
  for (const auto& plan : prep.plans)
    if (!plan.umpu_only &&
        prep.b < 10 * static_cast<int>(plan.members->size()))
      ++undersized;
  if (undersized > 0)
    prep.warnings.push_back(
        "B = " + std::to_string(prep.b) +
        " resamples is below 10x the group size for " +
        std::to_string(undersized) +
        " group(s); the correlation estimate may be unstable");
  return prep;
}

std::vector<PairIndex> group_pairs(const ZStatistics& z_test,
                                   const std::vector<int>& members) {
  std::vector<PairIndex> pairs;
  pairs.reserve(members.size());
  for (int j : members) pairs.push_back(z_test.pairs[j]);
  return pairs;
}

TestResult bootstrap_test(const BootstrapPrep& prep,
                          const LinkingDesign& design,
                          const OmegaEstimate& omega, int group_id,
                          int position) {
  const GroupPlan& plan = prep.plans[group_id];
  const int j = (*plan.members)[position];
  if (plan.umpu_only)
    return umpu_only_result(prep.z_test.z_hat[j], prep.z_test.n_eff,
                            prep.z_test.pairs[j], group_id);
  const int p_k = static_cast<int>(plan.members->size());
  Eigen::VectorXd joint(p_k);
  for (int t = 0; t < p_k; ++t)
    joint[t] = prep.z_test.z_hat[(*plan.members)[t]];
  return fab_single_test(joint, prep.z_test.z_hat[j], prep.z_test.n_eff,
                         omega, prep.z_test.n_eff, plan.w,
                         design.ridge_lambda, position, prep.z_test.pairs[j],
                         group_id);
}

struct TestTask {
  int group = 0;
  int position = 0;
};

std::vector<TestTask> flatten_tasks(const GroupAssignment& groups) {
  std::vector<TestTask> tasks;
  for (std::size_t g = 0; g < groups.groups.size(); ++g)
    for (std::size_t t = 0; t < groups.groups[g].size(); ++t)
      tasks.push_back({static_cast<int>(g), static_cast<int>(t)});
  return tasks;
}

}  // namespace

double fab_p_value(double s, double b) {
  const double a = s + b;
  const double c = -s;
  const double hi = std::max(a, c);
  const double lo = std::min(a, c);
  // 1 - |Phi(a) - Phi(c)| rearranged as Phi(-hi) + Phi(lo): two lower
  // tails, so the value stays positive and accurate where the direct
  // difference would round to zero.
  double p = standard_normal_cdf(-hi) + standard_normal_cdf(lo);
  if (p > 1.0) p = 1.0;
  return p;
}

double fab_offset(double m_j, double v_j, int n) {
  if (n < 4) throw ConfigError("fab_offset: need n >= 4");
  if (!(v_j > 0.0)) throw NumericalError("fab_offset: v_j must be positive");
  return 2.0 * m_j / (v_j * std::sqrt(n - 3.0));
}

DecorrelationBasis build_decorrelation(const OmegaEstimate& omega, int j) {
  const long p_k = omega.matrix.rows();
  if (omega.matrix.cols() != p_k || p_k < 2)
    throw ConfigError("build_decorrelation: omega must be square, size >= 2");
  if (j < 0 || j >= p_k)
    throw ConfigError("build_decorrelation: tested index out of range");

  DecorrelationBasis basis;
  basis.tested_index = j;

  if (omega.source == OmegaSource::kIdentityBlock &&
      (omega.matrix - Eigen::MatrixXd::Identity(p_k, p_k))
              .cwiseAbs()
              .maxCoeff() <= 1e-12) {
    // Identity minus column j.
    basis.g = Eigen::MatrixXd::Zero(p_k, p_k - 1);
    int col = 0;
    for (long r = 0; r < p_k; ++r) {
      if (r == j) continue;
      basis.g(r, col++) = 1.0;
    }
    return basis;
  }

  const Eigen::VectorXd column = omega.matrix.col(j);
  const double norm = column.norm();
  if (!(norm > 1e-300) || !column.allFinite())
    throw NumericalError(
        "build_decorrelation: degenerate column, no complement basis");

  // Householder reflector mapping the column onto the first axis; the
  // remaining reflector columns are an orthonormal basis of its
  // complement. The sign choice keeps the pivot well away from zero.
  Eigen::VectorXd u = column;
  u[0] += (column[0] >= 0.0 ? norm : -norm);
  const double uu = u.squaredNorm();
  basis.g.resize(p_k, p_k - 1);
  for (long c = 1; c < p_k; ++c) {
    const double scale = 2.0 * u[c] / uu;
    basis.g.col(c - 1) = -scale * u;
    basis.g(c, c - 1) += 1.0;
  }
  // Deterministic orientation: first nonzero entry of each column positive.
  for (long c = 0; c < p_k - 1; ++c) {
    for (long r = 0; r < p_k; ++r) {
      const double entry = basis.g(r, c);
      if (std::abs(entry) > 1e-12) {
        if (entry < 0.0) basis.g.col(c) = -basis.g.col(c);
        break;
      }
    }
  }

  if ((basis.g.transpose() * column).cwiseAbs().maxCoeff() >
      1e-8 * std::max(1.0, norm))
    throw NumericalError(
        "build_decorrelation: basis failed the orthogonality check");
  return basis;
}

int default_bootstrap_b(int group_size) {
  if (group_size < 1) throw ConfigError("default_bootstrap_b: empty group");
  return std::min(100 * group_size, 5000);
}

OmegaEstimate bootstrap_omega(const DataMatrix& data,
                              const std::vector<PairIndex>& pairs, int B,
                              std::uint64_t seed, int threads) {
  validate_data_matrix(data);
  if (B < 50) throw ConfigError("bootstrap_omega: need B >= 50");
  if (pairs.size() < 2)
    throw ConfigError("bootstrap_omega: need at least 2 pairs");
  const int n = static_cast<int>(data.values.rows());
  const int q = static_cast<int>(data.values.cols());
  const int t_count = static_cast<int>(pairs.size());

  // Distinct columns touched by the pairs.
  std::vector<int> columns;
  std::vector<int> slot_of(q, -1);
  for (const auto& pair : pairs) {
    if (pair.w < 0 || pair.v >= q || pair.w >= pair.v)
      throw ConfigError("bootstrap_omega: invalid pair (" +
                        std::to_string(pair.w) + ", " +
                        std::to_string(pair.v) + ")");
    for (int c : {pair.w, pair.v}) {
      if (slot_of[c] < 0) {
        slot_of[c] = static_cast<int>(columns.size());
        columns.push_back(c);
      }
    }
  }
  const int c_count = static_cast<int>(columns.size());

  Eigen::MatrixXd draws(B, t_count);  // z per (resample, pair)
  std::vector<std::exception_ptr> failures(B);
  const int use_threads = resolve_threads(threads);

#pragma omp parallel for schedule(static) num_threads(use_threads) \
    if (use_threads > 1)
  for (int b = 0; b < B; ++b) {
    try {
      std::vector<int> rows(n);
      Eigen::VectorXd mean(c_count), ssd(c_count);
      Eigen::VectorXd zs(t_count);
      bool ok = false;
      for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b), attempt));
        for (int r = 0; r < n; ++r) rows[r] = rng.below(n);
        mean.setZero();
        for (int r : rows)
          for (int c = 0; c < c_count; ++c)
            mean[c] += data.values(r, columns[c]);
        mean /= n;
        ssd.setZero();
        for (int r : rows)
          for (int c = 0; c < c_count; ++c) {
            const double centered = data.values(r, columns[c]) - mean[c];
            ssd[c] += centered * centered;
          }
        if ((ssd.array() <= 0.0).any()) continue;  // degenerate, redraw
        for (int t = 0; t < t_count; ++t) {
          const int cw = slot_of[pairs[t].w];
          const int cv = slot_of[pairs[t].v];
          double cross = 0.0;
          for (int r : rows)
            cross += (data.values(r, pairs[t].w) - mean[cw]) *
                     (data.values(r, pairs[t].v) - mean[cv]);
          const double rho =
              clamp_correlation(cross / std::sqrt(ssd[cw] * ssd[cv]));
          zs[t] = std::atanh(rho);
        }
        ok = true;
      }
      if (!ok)
        throw DataError(
            "bootstrap_omega: resample " + std::to_string(b) +
            " hit a zero-variance column 10 times; data too degenerate");
      draws.row(b) = zs.transpose();
    } catch (...) {
      failures[b] = std::current_exception();
    }
  }
  rethrow_first(failures);

  // Correlation of the B draws, then eigenvalue-floor regularization.
  Eigen::RowVectorXd col_mean = draws.colwise().mean();
  Eigen::MatrixXd centered = draws.rowwise() - col_mean;
  Eigen::VectorXd norms = centered.colwise().norm();
  Eigen::MatrixXd omega(t_count, t_count);
  for (int a = 0; a < t_count; ++a) {
    omega(a, a) = 1.0;
    for (int b2 = a + 1; b2 < t_count; ++b2) {
      double value = 0.0;
      if (norms[a] > 0.0 && norms[b2] > 0.0)
        value = centered.col(a).dot(centered.col(b2)) / (norms[a] * norms[b2]);
      if (value > 1.0) value = 1.0;
      if (value < -1.0) value = -1.0;
      omega(a, b2) = value;
      omega(b2, a) = value;
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(omega);
  if (eig.info() != Eigen::Success)
    throw NumericalError("bootstrap_omega: eigendecomposition failed");
  const double min_eig = eig.eigenvalues().minCoeff();
  if (min_eig < 1e-8) {
    double gamma = -1.0;
    for (double candidate : {1e-6, 1e-4, 1e-2}) {
      if ((1.0 - candidate) * min_eig + candidate >= 1e-8) {
        gamma = candidate;
        break;
      }
    }
    if (gamma < 0.0)
      throw NumericalError(
          "bootstrap_omega: estimate is too ill-conditioned to regularize "
          "(min eigenvalue " + std::to_string(min_eig) + ")");
    omega = (1.0 - gamma) * omega;
    omega.diagonal().array() += gamma;
  }

  return OmegaEstimate{std::move(omega), OmegaSource::kBootstrap, B};
}

GroupAssignment assign_groups(const Eigen::VectorXd& ordering_stats,
                              int group_size, OrderingSource source) {
  const int p = static_cast<int>(ordering_stats.size());
  if (p < 1) throw ConfigError("assign_groups: empty ordering statistics");
  if (group_size < 1 || group_size > p)
    throw ConfigError("assign_groups: group size " +
                      std::to_string(group_size) + " outside [1, " +
                      std::to_string(p) + "]");
  if (!ordering_stats.allFinite())
    throw ConfigError("assign_groups: non-finite ordering statistic");

  std::vector<int> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (ordering_stats[a] != ordering_stats[b])
      return ordering_stats[a] > ordering_stats[b];
    return a < b;  // ties by ascending index
  });

  GroupAssignment assignment;
  assignment.group_size_target = group_size;
  assignment.source = source;
  for (int start = 0; start < p; start += group_size) {
    const int end = std::min(start + group_size, p);
    assignment.groups.emplace_back(order.begin() + start, order.begin() + end);
  }
  return assignment;
}

EngineRun run_fab_external(const DataMatrix& test_data,
                           const DataMatrix& external_data,
                           const LinkingDesign& design,
                           const GroupAssignment& groups,
                           const EngineOptions& opts) {
  const ExternalPrep prep =
      prepare_external(test_data, external_data, design, groups, opts);
  const std::vector<TestTask> tasks = flatten_tasks(groups);
  const int threads = resolve_threads(opts.threads);

  EngineRun run;
  run.warnings = prep.warnings;
  run.results.resize(prep.z_test.z_hat.size());
  std::vector<std::exception_ptr> failures(tasks.size());

#pragma omp parallel for schedule(dynamic) num_threads(threads) \
    if (threads > 1)
  for (long i = 0; i < static_cast<long>(tasks.size()); ++i) {
    try {
      const TestTask task = tasks[i];
      const int j = (*prep.plans[task.group].members)[task.position];
      run.results[j] = external_test(prep, design, task.group, task.position);
    } catch (...) {
      failures[i] = std::current_exception();
    }
  }
  rethrow_first(failures);
  return run;
}

EngineRun run_fab_bootstrap(const DataMatrix& test_data,
                            const LinkingDesign& design,
                            const GroupAssignment& groups, int B,
                            std::uint64_t seed,
                            const Eigen::VectorXd* external_stats,
                            const EngineOptions& opts) {
  BootstrapPrep prep = prepare_bootstrap(test_data, design, groups, B,
                                         external_stats, opts);
  const int threads = resolve_threads(opts.threads);
  const int m = static_cast<int>(prep.plans.size());

  // Phase 1: per-group bootstrap correlation estimates. Parallel across
  // groups when there are several, otherwise inside the resampling loop;
  // per-group seeds make the result identical either way.
  int multi = 0;
  for (const auto& plan : prep.plans)
    if (!plan.umpu_only) ++multi;
  const bool across_groups = threads > 1 && multi >= 2;

  std::vector<OmegaEstimate> omegas(m);
  std::vector<std::exception_ptr> omega_failures(m);
#pragma omp parallel for schedule(dynamic) num_threads(threads) \
    if (across_groups)
  for (int g = 0; g < m; ++g) {
    try {
      const GroupPlan& plan = prep.plans[g];
      if (plan.umpu_only) continue;
      omegas[g] = bootstrap_omega(test_data,
                                  group_pairs(prep.z_test, *plan.members),
                                  prep.b, derive_seed(seed, g),
                                  across_groups ? 1 : threads);
    } catch (...) {
      omega_failures[g] = std::current_exception();
    }
  }
  rethrow_first(omega_failures);

  // Phase 2: the tests.
  const std::vector<TestTask> tasks = flatten_tasks(groups);
  EngineRun run;
  run.warnings = std::move(prep.warnings);
  run.results.resize(prep.z_test.z_hat.size());
  std::vector<std::exception_ptr> failures(tasks.size());

#pragma omp parallel for schedule(dynamic) num_threads(threads) \
    if (threads > 1)
  for (long i = 0; i < static_cast<long>(tasks.size()); ++i) {
    try {
      const TestTask task = tasks[i];
      const int j = (*prep.plans[task.group].members)[task.position];
      run.results[j] = bootstrap_test(prep, design, omegas[task.group],
                                      task.group, task.position);
    } catch (...) {
      failures[i] = std::current_exception();
    }
  }
  rethrow_first(failures);
  return run;
}

namespace reference {

// Straight-line serial statements of the two run modes; used to check
// that the parallel orchestration above changes nothing.

EngineRun run_fab_external(const DataMatrix& test_data,
                           const DataMatrix& external_data,
                           const LinkingDesign& design,
                           const GroupAssignment& groups,
                           const EngineOptions& opts) {
  const ExternalPrep prep =
      prepare_external(test_data, external_data, design, groups, opts);
  EngineRun run;
  run.warnings = prep.warnings;
  run.results.resize(prep.z_test.z_hat.size());
  for (std::size_t g = 0; g < groups.groups.size(); ++g) {
    for (std::size_t t = 0; t < groups.groups[g].size(); ++t) {
      const int j = groups.groups[g][t];
      run.results[j] = external_test(prep, design, static_cast<int>(g),
                                     static_cast<int>(t));
    }
  }
  return run;
}

EngineRun run_fab_bootstrap(const DataMatrix& test_data,
                            const LinkingDesign& design,
                            const GroupAssignment& groups, int B,
                            std::uint64_t seed,
                            const Eigen::VectorXd* external_stats,
                            const EngineOptions& opts) {
  BootstrapPrep prep = prepare_bootstrap(test_data, design, groups, B,
                                         external_stats, opts);
  EngineRun run;
  run.warnings = std::move(prep.warnings);
  run.results.resize(prep.z_test.z_hat.size());
  for (std::size_t g = 0; g < groups.groups.size(); ++g) {
    const GroupPlan& plan = prep.plans[g];
    OmegaEstimate omega;
    if (!plan.umpu_only)
      omega = bootstrap_omega(test_data,
                              group_pairs(prep.z_test, *plan.members),
                              prep.b, derive_seed(seed, g), 1);
    for (std::size_t t = 0; t < groups.groups[g].size(); ++t) {
      const int j = groups.groups[g][t];
      run.results[j] = bootstrap_test(prep, design, omega,
                                      static_cast<int>(g),
                                      static_cast<int>(t));
    }
  }
  return run;
}

}  // namespace reference

}  // namespace fabcor
