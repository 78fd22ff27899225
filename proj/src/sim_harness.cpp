#include "fabcor/sim_harness.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fabcor/corr_stats.hpp"
#include "fabcor/multiple_testing.hpp"
#include "fabcor/rng.hpp"

namespace fabcor {

namespace {

// Stream tags for the independent substreams of one replicate.
enum : std::uint64_t {
  kTagFactor = 1,
  kTagMask = 2,
  kTagMean = 3,
  kTagTest = 4,
  kTagExternal = 5,
  kTagBootstrap = 7,
};

void validate_dgp(const DgpConfig& config) {
  if (config.q < 2) throw ConfigError("dgp: need q >= 2");
  if (config.l < 1 || config.l >= config.q)
    throw ConfigError("dgp: factor rows must satisfy 1 <= l < q");
  if (!(config.mask_target > 0.0 && config.mask_target < 1.0))
    throw ConfigError("dgp: mask_target must lie in (0, 1)");
  if (config.n < 4 || config.n_ext < 4)
    throw ConfigError("dgp: sample sizes must be >= 4");
  if (config.external_noise_sd < 0.0)
    throw ConfigError("dgp: external noise sd must be >= 0");
}

int resolve_threads(int requested) {
#ifdef _OPENMP
  if (requested > 0) return requested;
  return omp_get_max_threads();
#else
  (void)requested;
  return 1;
#endif
}

}  // namespace

std::string sim_mode_name(SimMode mode) {
  switch (mode) {
    case SimMode::kExternal: return "external";
    case SimMode::kBootstrap: return "bootstrap";
    case SimMode::kUmpuOnly: return "umpu-only";
  }
  return "unknown";
}

SigmaTruth build_masked_sigma(const Eigen::MatrixXd& factor,
                              const Eigen::MatrixXd& mask_uniforms,
                              double mask_proportion) {
  if (factor.rows() != mask_uniforms.rows() ||
      factor.cols() != mask_uniforms.cols())
    throw ConfigError("masked sigma: factor and mask shapes differ");
  const int q = static_cast<int>(factor.cols());
  Eigen::MatrixXd masked = factor;
  for (long i = 0; i < masked.rows(); ++i)
    for (long j = 0; j < masked.cols(); ++j)
      if (mask_uniforms(i, j) < mask_proportion) masked(i, j) = 0.0;

  SigmaTruth out;
  out.sigma = masked.transpose() * masked;
  out.sigma.diagonal().array() += 1.0;
  out.mask_used = mask_proportion;

  const int p = pair_count(q);
  out.alternative.resize(p);
  int zeros = 0;
  for (int j = 0; j < p; ++j) {
    const PairIndex pair = flat_to_pair(j, q);
    // A masked factor column pair multiplies to exactly 0.0, so support
    // is decided by exact comparison, not a tolerance.
    const bool nonzero = out.sigma(pair.w, pair.v) != 0.0;
    out.alternative[j] = nonzero ? 1 : 0;
    zeros += nonzero ? 0 : 1;
  }
  out.zero_fraction = static_cast<double>(zeros) / p;
  return out;
}

SigmaTruth generate_sigma(const DgpConfig& config) {
  validate_dgp(config);
  Eigen::MatrixXd factor(config.l, config.q);
  {
    Rng rng(derive_seed(config.seed, kTagFactor));
    for (long i = 0; i < factor.rows(); ++i)
      for (long j = 0; j < factor.cols(); ++j) factor(i, j) = rng.normal();
  }
  Eigen::MatrixXd mask_uniforms(config.l, config.q);
  {
    Rng rng(derive_seed(config.seed, kTagMask));
    for (long i = 0; i < mask_uniforms.rows(); ++i)
      for (long j = 0; j < mask_uniforms.cols(); ++j)
        mask_uniforms(i, j) = rng.uniform();
  }

  // The zero fraction grows monotonically with the masking proportion, so
  // bisection over [0, 1] converges to the +-0.05 window when one exists.
  double lo = 0.0, hi = 1.0;
  for (int iter = 0; iter < 50; ++iter) {
    const double mid = 0.5 * (lo + hi);
    SigmaTruth candidate = build_masked_sigma(factor, mask_uniforms, mid);
    if (std::abs(candidate.zero_fraction - config.mask_target) <= 0.05)
      return candidate;
    if (candidate.zero_fraction < config.mask_target)
      lo = mid;
    else
      hi = mid;
  }
  throw ConfigError(
      "generate_sigma: masking bisection did not reach the target zero "
      "fraction " + std::to_string(config.mask_target) + " within 50 "
      "iterations (q = " + std::to_string(config.q) + ", l = " +
      std::to_string(config.l) + ")");
}

std::pair<DataMatrix, DataMatrix> generate_datasets(
    const Eigen::MatrixXd& sigma, const DgpConfig& config) {
  validate_dgp(config);
  if (sigma.rows() != config.q || sigma.cols() != config.q)
    throw ConfigError("generate_datasets: sigma shape mismatch");
  Eigen::LLT<Eigen::MatrixXd> chol(sigma);
  if (chol.info() != Eigen::Success)
    throw NumericalError("generate_datasets: sigma is not positive definite");
  const Eigen::MatrixXd root = chol.matrixL();

  Eigen::VectorXd mu(config.q);
  {
    Rng rng(derive_seed(config.seed, kTagMean));
    for (int i = 0; i < config.q; ++i) mu[i] = rng.normal();
  }

  std::vector<std::string> labels(config.q);
  for (int i = 0; i < config.q; ++i) labels[i] = "v" + std::to_string(i);

  DataMatrix test;
  test.labels = labels;
  test.values.resize(config.n, config.q);
  {
    Rng rng(derive_seed(config.seed, kTagTest));
    Eigen::VectorXd g(config.q);
    for (int r = 0; r < config.n; ++r) {
      for (int i = 0; i < config.q; ++i) g[i] = rng.normal();
      test.values.row(r) = (mu + root * g).transpose();
    }
  }

  DataMatrix external;
  external.labels = labels;
  external.values.resize(config.n_ext, config.q);
  {
    Rng rng(derive_seed(config.seed, kTagExternal));
    Eigen::VectorXd g(config.q);
    for (int r = 0; r < config.n_ext; ++r) {
      for (int i = 0; i < config.q; ++i) g[i] = rng.normal();
      Eigen::VectorXd row = mu + root * g;
      for (int i = 0; i < config.q; ++i)
        row[i] += config.external_noise_sd * rng.normal();
      external.values.row(r) = row.transpose();
    }
  }
  return {std::move(test), std::move(external)};
}

ReplicateOutcome run_replicate(const DgpConfig& dgp, SimMode mode,
                               const LinkingDesign& design, int group_size,
                               int bootstrap_b, double alpha,
                               const EngineOptions& opts) {
  const SigmaTruth truth = generate_sigma(dgp);
  auto [test, external] = generate_datasets(truth.sigma, dgp);
  const int p = pair_count(dgp.q);

  std::vector<TestResult> results;
  if (mode == SimMode::kUmpuOnly) {
    const ZStatistics z_test = compute_z_statistics(test);
    results.reserve(p);
    for (int j = 0; j < p; ++j) {
      TestResult r;
      r.pair = z_test.pairs[j];
      r.z_hat = z_test.z_hat[j];
      r.p_umpu = umpu_p_value(r.z_hat, z_test.n_eff);
      r.p_fab = r.p_umpu;
      r.group_id = j;
      results.push_back(r);
    }
  } else {
    const ZStatistics z_ext = compute_z_statistics(external);
    const int gs = std::min(group_size, p);
    const GroupAssignment groups =
        assign_groups(z_ext.z_hat, gs, OrderingSource::kExternalStats);
    EngineRun run;
    if (mode == SimMode::kExternal) {
      run = run_fab_external(test, external, design, groups, opts);
    } else {
      run = run_fab_bootstrap(test, design, groups, bootstrap_b,
                              derive_seed(dgp.seed, kTagBootstrap),
                              &z_ext.z_hat, opts);
    }
    results = std::move(run.results);
  }

  ReplicateOutcome outcome;
  outcome.truth = truth.alternative;
  outcome.p_fab.reserve(p);
  outcome.p_umpu.reserve(p);
  for (const auto& r : results) {
    outcome.p_fab.push_back(r.p_fab);
    outcome.p_umpu.push_back(r.p_umpu);
  }
  for (int j = 0; j < p; ++j) {
    if (truth.alternative[j]) {
      outcome.alt_p_fab.push_back(outcome.p_fab[j]);
      outcome.alt_p_umpu.push_back(outcome.p_umpu[j]);
    } else {
      outcome.null_p_fab.push_back(outcome.p_fab[j]);
      outcome.null_p_umpu.push_back(outcome.p_umpu[j]);
    }
  }
  outcome.fab = evaluate(reject_fixed(outcome.p_fab, alpha),
                         truth.alternative);
  outcome.umpu = evaluate(reject_fixed(outcome.p_umpu, alpha),
                          truth.alternative);
  return outcome;
}

Histogram make_histogram(const std::vector<double>& values, int bins) {
  if (bins < 1) throw ConfigError("make_histogram: need at least one bin");
  Histogram hist;
  hist.counts.assign(bins, 0);
  for (double v : values) {
    int bin = static_cast<int>(v * bins);
    if (bin < 0) bin = 0;
    if (bin >= bins) bin = bins - 1;  // v = 1 lands in the last bin
    ++hist.counts[bin];
  }
  return hist;
}

std::vector<CellSummary> run_grid(const GridConfig& config) {
  if (config.modes.empty() || config.n_list.empty() || config.q_list.empty())
    throw ConfigError("run_grid: empty mode or size lists");
  if (config.replicates < 1)
    throw ConfigError("run_grid: need at least one replicate");

  struct Cell {
    SimMode mode;
    int n, q, index;
  };
  std::vector<Cell> cells;
  for (const SimMode mode : config.modes)
    for (const int n : config.n_list)
      for (const int q : config.q_list)
        cells.push_back({mode, n, q, static_cast<int>(cells.size())});

  const int threads = resolve_threads(config.threads);
  std::vector<CellSummary> summaries(cells.size());

  for (const Cell& cell : cells) {
    CellSummary summary;
    summary.mode = cell.mode;
    summary.n = cell.n;
    summary.q = cell.q;
    summary.replicates = config.replicates;
    summary.group_size = config.group_size;
    summary.alpha = config.alpha;

    std::vector<ReplicateOutcome> outcomes(config.replicates);
    std::vector<std::string> failures(config.replicates);
    EngineOptions engine_opts;
    engine_opts.threads = 1;  // replicates are the parallel unit

#pragma omp parallel for schedule(dynamic) num_threads(threads) \
    if (threads > 1)
    for (int rep = 0; rep < config.replicates; ++rep) {
      try {
        DgpConfig dgp;
        dgp.q = cell.q;
        dgp.l = config.factor_rows > 0 ? config.factor_rows
                                       : std::max(1, cell.q / 2);
        dgp.mask_target = config.mask_target;
        dgp.n = cell.n;
        dgp.n_ext = cell.n;
        dgp.external_noise_sd = config.external_noise_sd;
        dgp.seed = derive_seed(config.seed, cell.index, rep + 1);
        outcomes[rep] = run_replicate(dgp, cell.mode, config.design,
                                      config.group_size, config.bootstrap_b,
                                      config.alpha, engine_opts);
      } catch (const std::exception& e) {
        failures[rep] = e.what();
      } catch (...) {
        failures[rep] = "unknown failure";
      }
    }

    std::vector<double> pooled_null_fab, pooled_alt_fab;
    std::vector<double> pooled_null_umpu, pooled_alt_umpu;
    double fab_type1 = 0.0, fab_power = 0.0;
    double umpu_type1 = 0.0, umpu_power = 0.0;
    int type1_reps = 0, power_reps = 0;
    for (int rep = 0; rep < config.replicates; ++rep) {
      if (!failures[rep].empty()) {
        summary.failures.push_back("replicate " + std::to_string(rep) + ": " +
                                   failures[rep]);
        continue;
      }
      const ReplicateOutcome& outcome = outcomes[rep];
      ++summary.completed;
      summary.rep_fab_power.push_back(outcome.fab.power);
      summary.rep_fab_type1.push_back(outcome.fab.type1);
      summary.rep_umpu_power.push_back(outcome.umpu.power);
      summary.rep_umpu_type1.push_back(outcome.umpu.type1);
      if (!std::isnan(outcome.fab.type1)) {
        fab_type1 += outcome.fab.type1;
        umpu_type1 += outcome.umpu.type1;
        ++type1_reps;
      }
      if (!std::isnan(outcome.fab.power)) {
        fab_power += outcome.fab.power;
        umpu_power += outcome.umpu.power;
        ++power_reps;
      }
      pooled_null_fab.insert(pooled_null_fab.end(),
                             outcome.null_p_fab.begin(),
                             outcome.null_p_fab.end());
      pooled_alt_fab.insert(pooled_alt_fab.end(), outcome.alt_p_fab.begin(),
                            outcome.alt_p_fab.end());
      pooled_null_umpu.insert(pooled_null_umpu.end(),
                              outcome.null_p_umpu.begin(),
                              outcome.null_p_umpu.end());
      pooled_alt_umpu.insert(pooled_alt_umpu.end(),
                             outcome.alt_p_umpu.begin(),
                             outcome.alt_p_umpu.end());
    }
    summary.partial = !summary.failures.empty();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    summary.fab_null_reject = type1_reps ? fab_type1 / type1_reps : nan;
    summary.umpu_null_reject = type1_reps ? umpu_type1 / type1_reps : nan;
    summary.fab_alt_reject = power_reps ? fab_power / power_reps : nan;
    summary.umpu_alt_reject = power_reps ? umpu_power / power_reps : nan;
    summary.relative_power_gain =
        (power_reps && summary.umpu_alt_reject > 0.0)
            ? (summary.fab_alt_reject - summary.umpu_alt_reject) /
                  summary.umpu_alt_reject
            : nan;
    summary.null_hist_fab = make_histogram(pooled_null_fab);
    summary.alt_hist_fab = make_histogram(pooled_alt_fab);
    summary.null_hist_umpu = make_histogram(pooled_null_umpu);
    summary.alt_hist_umpu = make_histogram(pooled_alt_umpu);
    summaries[cell.index] = std::move(summary);
  }
  return summaries;
}

std::vector<CalibrationPoint> fdr_calibration(const CalibrationConfig& config) {
  if (config.targets.empty())
    throw ConfigError("fdr_calibration: no targets supplied");
  for (double target : config.targets)
    if (!(target > 0.0 && target < 1.0))
      throw ConfigError("fdr_calibration: targets must lie in (0, 1)");
  if (config.replicates < 1)
    throw ConfigError("fdr_calibration: need at least one replicate");

  const std::size_t t_count = config.targets.size();
  Eigen::MatrixXd fdr(config.replicates, t_count);
  Eigen::MatrixXd discoveries(config.replicates, t_count);
  std::vector<std::exception_ptr> failures(config.replicates);
  const int threads = resolve_threads(config.threads);
  EngineOptions engine_opts;
  engine_opts.threads = 1;

#pragma omp parallel for schedule(dynamic) num_threads(threads) \
    if (threads > 1)
  for (int rep = 0; rep < config.replicates; ++rep) {
    try {
      DgpConfig dgp = config.dgp;
      dgp.seed = derive_seed(config.seed, rep + 1);
      // alpha only routes the fixed-level decision inside the replicate;
      // the BH sweep below is what this function reports.
      const ReplicateOutcome outcome =
          run_replicate(dgp, config.mode, config.design, config.group_size,
                        config.bootstrap_b, 0.05, engine_opts);
      for (std::size_t t = 0; t < t_count; ++t) {
        const DecisionSet bh = reject_bh(outcome.p_fab, config.targets[t]);
        const EvaluationReport report = evaluate(bh, outcome.truth);
        fdr(rep, t) = report.observed_fdr;
        discoveries(rep, t) = report.rejection_count;
      }
    } catch (...) {
      failures[rep] = std::current_exception();
    }
  }
  for (const auto& failure : failures)
    if (failure) std::rethrow_exception(failure);

  std::vector<CalibrationPoint> curve(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    curve[t].target = config.targets[t];
    curve[t].mean_observed_fdr = fdr.col(t).mean();
    curve[t].mean_discoveries = discoveries.col(t).mean();
    curve[t].replicates = config.replicates;
  }
  return curve;
}

double ks_distance_uniform(std::vector<double> p_values) {
  if (p_values.empty())
    throw ConfigError("ks_distance_uniform: empty sample");
  std::sort(p_values.begin(), p_values.end());
  const double n = static_cast<double>(p_values.size());
  double distance = 0.0;
  for (std::size_t i = 0; i < p_values.size(); ++i) {
    const double value = std::min(std::max(p_values[i], 0.0), 1.0);
    distance = std::max(distance, (i + 1.0) / n - value);
    distance = std::max(distance, value - static_cast<double>(i) / n);
  }
  return distance;
}

double ks_uniform_pvalue(double distance, std::size_t sample_size) {
  if (sample_size == 0) throw ConfigError("ks_uniform_pvalue: empty sample");
  if (distance <= 0.0) return 1.0;
  const double root = std::sqrt(static_cast<double>(sample_size));
  const double lambda = distance * (root + 0.12 + 0.11 / root);
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 101; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += sign * term;
    sign = -sign;
    if (term < 1e-16) break;
  }
  double p = 2.0 * sum;
  if (p < 0.0) p = 0.0;
  if (p > 1.0) p = 1.0;
  return p;
}

}  // namespace fabcor
