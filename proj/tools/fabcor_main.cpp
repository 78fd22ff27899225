// Command-line front end: test-external, test-bootstrap, test-umpu,
// simulate, fdr-calibrate. Exit 0 on success, 2 on configuration
// errors, 1 on runtime errors.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fabcor/corr_stats.hpp"
#include "fabcor/fab_engine.hpp"
#include "fabcor/io.hpp"
#include "fabcor/multiple_testing.hpp"
#include "fabcor/sim_harness.hpp"
#include "fabcor/types.hpp"

namespace {

using nlohmann::json;

struct CommonOptions {
  std::string input;
  std::string external;
  std::string design = "ones";
  double ridge = 0.0;
  int group_size = 50;
  int bootstrap_b = 0;
  double alpha = 0.05;
  double fdr = -1.0;  // < 0 = fixed-level decisions
  std::uint64_t seed = 0;
  bool strict_scaling = false;
  bool allow_internal_ordering = false;
  int threads = 0;
  std::string output;
};

struct SimOptions {
  std::string mode;
  std::vector<int> n_list{100};
  std::vector<int> q_list{50};
  int replicates = 10;
  int group_size = 50;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  int bootstrap_b = 0;
  std::string design = "ones";
  double ridge = 0.0;
  double mask_target = 0.5;
  double noise_sd = 0.5;
  int factor_rows = 0;
  int threads = 0;
  std::string output;
};

struct CalibrateOptions {
  std::string mode = "external";
  int n = 107;
  int n_ext = 519;
  int q = 69;
  int group_size = 120;
  int replicates = 10;
  std::vector<double> targets{0.01, 0.05, 0.1, 0.2, 0.3};
  int bootstrap_b = 0;
  std::string design = "linear";
  double ridge = 0.0;
  double mask_target = 0.5;
  double noise_sd = 0.5;
  int factor_rows = 0;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string output;
};

fabcor::LinkingDesign parse_design(const std::string& text, double ridge) {
  fabcor::LinkingDesign design;
  design.ridge_lambda = ridge;
  if (text == "ones") {
    design.kind = fabcor::DesignKind::kOnes;
  } else if (text == "linear") {
    design.kind = fabcor::DesignKind::kExternalLinear;
  } else if (text == "linear-intercept") {
    design.kind = fabcor::DesignKind::kExternalLinear;
    design.include_intercept = true;
  } else if (text.rfind("poly:", 0) == 0) {
    design.kind = fabcor::DesignKind::kExternalPoly;
    try {
      design.poly_degree = std::stoi(text.substr(5));
    } catch (const std::exception&) {
      throw fabcor::ConfigError("--design poly:D needs an integer degree, got '" +
                                text + "'");
    }
    if (design.poly_degree < 1)
      throw fabcor::ConfigError("--design poly:D needs degree >= 1, got '" +
                                text + "'");
  } else {
    throw fabcor::ConfigError(
        "--design must be ones, linear, linear-intercept, or poly:D; got '" +
        text + "'");
  }
  return design;
}

fabcor::SimMode parse_mode(const std::string& text) {
  if (text == "external") return fabcor::SimMode::kExternal;
  if (text == "bootstrap") return fabcor::SimMode::kBootstrap;
  if (text == "umpu-only" || text == "umpu") return fabcor::SimMode::kUmpuOnly;
  throw fabcor::ConfigError(
      "--mode must be external, bootstrap, or umpu-only; got '" + text + "'");
}

// Reorders external columns to the test column order by label.
fabcor::DataMatrix align_columns(const std::vector<std::string>& labels,
                                 const fabcor::DataMatrix& external) {
  fabcor::DataMatrix aligned;
  aligned.labels = labels;
  aligned.values.resize(external.values.rows(),
                        static_cast<long>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto it =
        std::find(external.labels.begin(), external.labels.end(), labels[i]);
    if (it == external.labels.end())
      throw fabcor::ConfigError("external dataset lacks column '" + labels[i] +
                                "'");
    const long src = it - external.labels.begin();
    aligned.values.col(static_cast<long>(i)) = external.values.col(src);
  }
  return aligned;
}

json ingest_json(const fabcor::IngestReport& report) {
  return json{{"rows_read", report.rows_read},
              {"rows_dropped", report.rows_dropped},
              {"dropped_columns", report.dropped_columns}};
}

json common_config_json(const std::string& command, const CommonOptions& o) {
  json config{{"command", command},
              {"input", o.input},
              {"design", o.design},
              {"ridge", o.ridge},
              {"group_size", o.group_size},
              {"alpha", o.alpha},
              {"seed", o.seed},
              {"strict_paper_scaling", o.strict_scaling},
              {"allow_internal_ordering", o.allow_internal_ordering},
              {"threads", o.threads},
              {"output", o.output}};
  if (!o.external.empty()) config["external"] = o.external;
  if (o.bootstrap_b > 0) config["bootstrap_b"] = o.bootstrap_b;
  if (o.fdr >= 0.0)
    config["fdr"] = o.fdr;
  else
    config["fdr"] = nullptr;
  return config;
}

enum class TestCommand { kExternal, kBootstrap, kUmpu };

int run_test_command(TestCommand command, const CommonOptions& o) {
  const auto start = std::chrono::steady_clock::now();
  const char* name = command == TestCommand::kExternal    ? "test-external"
                     : command == TestCommand::kBootstrap ? "test-bootstrap"
                                                          : "test-umpu";
  json meta;
  meta["config"] = common_config_json(name, o);

  const fabcor::IngestResult test = fabcor::ingest_csv(o.input);
  meta["ingest"]["input"] = ingest_json(test.report);
  const int q = static_cast<int>(test.data.values.cols());
  const int p = fabcor::pair_count(q);
  const int group_size = std::min(o.group_size, p);

  fabcor::EngineOptions opts;
  opts.strict_external_scaling = o.strict_scaling;
  opts.allow_internal_ordering = o.allow_internal_ordering;
  opts.threads = o.threads;

  fabcor::EngineRun run;
  int n_ext = 0;
  if (command == TestCommand::kUmpu) {
    const fabcor::ZStatistics z = fabcor::compute_z_statistics(test.data);
    run.results.reserve(p);
    for (int j = 0; j < p; ++j) {
      fabcor::TestResult r;
      r.pair = z.pairs[j];
      r.z_hat = z.z_hat[j];
      r.p_umpu = fabcor::umpu_p_value(r.z_hat, z.n_eff);
      r.p_fab = r.p_umpu;
      r.group_id = j;
      run.results.push_back(r);
    }
  } else if (command == TestCommand::kExternal) {
    const fabcor::IngestResult external = fabcor::ingest_csv(o.external);
    meta["ingest"]["external"] = ingest_json(external.report);
    const fabcor::DataMatrix aligned =
        align_columns(test.data.labels, external.data);
    n_ext = static_cast<int>(aligned.values.rows());
    const fabcor::ZStatistics z_ext = fabcor::compute_z_statistics(aligned);
    const fabcor::GroupAssignment groups = fabcor::assign_groups(
        z_ext.z_hat, group_size, fabcor::OrderingSource::kExternalStats);
    const fabcor::LinkingDesign design = parse_design(o.design, o.ridge);
    run = fabcor::run_fab_external(test.data, aligned, design, groups, opts);
  } else {
    const fabcor::LinkingDesign design = parse_design(o.design, o.ridge);
    if (!o.external.empty()) {
      const fabcor::IngestResult external = fabcor::ingest_csv(o.external);
      meta["ingest"]["external"] = ingest_json(external.report);
      const fabcor::DataMatrix aligned =
          align_columns(test.data.labels, external.data);
      n_ext = static_cast<int>(aligned.values.rows());
      const fabcor::ZStatistics z_ext = fabcor::compute_z_statistics(aligned);
      const fabcor::GroupAssignment groups = fabcor::assign_groups(
          z_ext.z_hat, group_size, fabcor::OrderingSource::kExternalStats);
      run = fabcor::run_fab_bootstrap(test.data, design, groups, o.bootstrap_b,
                                      o.seed, &z_ext.z_hat, opts);
    } else {
      // No external ordering available; group by the test statistics
      // themselves, which requires the explicit opt-in flag.
      const fabcor::ZStatistics z = fabcor::compute_z_statistics(test.data);
      const fabcor::GroupAssignment groups = fabcor::assign_groups(
          z.z_hat, group_size, fabcor::OrderingSource::kInternalZ);
      run = fabcor::run_fab_bootstrap(test.data, design, groups, o.bootstrap_b,
                                      o.seed, nullptr, opts);
    }
  }

  std::vector<double> p_fab;
  p_fab.reserve(run.results.size());
  for (const auto& r : run.results) p_fab.push_back(r.p_fab);
  const fabcor::DecisionSet decisions =
      o.fdr >= 0.0 ? fabcor::reject_bh(p_fab, o.fdr)
                   : fabcor::reject_fixed(p_fab, o.alpha);
  fabcor::write_results(run.results, decisions, o.output);

  for (const auto& warning : run.warnings)
    std::cerr << name << ": warning: " << warning << '\n';

  const auto elapsed = std::chrono::steady_clock::now() - start;
  meta["warnings"] = run.warnings;
  meta["results"] = {
      {"n", static_cast<int>(test.data.values.rows())},
      {"q", q},
      {"tests", p},
      {"group_size_used", group_size},
      {"rule", o.fdr >= 0.0 ? "benjamini-hochberg" : "fixed-alpha"},
      {"level", o.fdr >= 0.0 ? o.fdr : o.alpha},
      {"threshold_used", decisions.threshold_used},
      {"rejections", decisions.rejection_count}};
  if (n_ext > 0) meta["results"]["n_ext"] = n_ext;
  meta["timing_ms"] =
      std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count();
  fabcor::write_metadata(meta, o.output);

  std::cout << name << ": " << p << " tests, " << decisions.rejection_count
            << " rejections -> " << o.output << '\n';
  return 0;
}

json histogram_json(const fabcor::Histogram& hist) {
  return json(hist.counts);
}

int run_simulate(const SimOptions& o) {
  fabcor::GridConfig grid;
  grid.modes = {parse_mode(o.mode)};
  grid.n_list = o.n_list;
  grid.q_list = o.q_list;
  grid.replicates = o.replicates;
  grid.group_size = o.group_size;
  grid.alpha = o.alpha;
  grid.seed = o.seed;
  grid.bootstrap_b = o.bootstrap_b;
  grid.design = parse_design(o.design, o.ridge);
  grid.mask_target = o.mask_target;
  grid.external_noise_sd = o.noise_sd;
  grid.factor_rows = o.factor_rows;
  grid.threads = o.threads;

  const std::vector<fabcor::CellSummary> cells = fabcor::run_grid(grid);

  std::printf("%-10s %6s %6s %5s %5s %10s %10s %10s %10s %9s\n", "mode", "n",
              "q", "reps", "done", "fab_type1", "fab_power", "umpu_type1",
              "umpu_power", "gain");
  for (const auto& cell : cells) {
    std::printf("%-10s %6d %6d %5d %5d %10.4f %10.4f %10.4f %10.4f %8.2f%%\n",
                fabcor::sim_mode_name(cell.mode).c_str(), cell.n, cell.q,
                cell.replicates, cell.completed, cell.fab_null_reject,
                cell.fab_alt_reject, cell.umpu_null_reject,
                cell.umpu_alt_reject, 100.0 * cell.relative_power_gain);
    for (const auto& failure : cell.failures)
      std::cerr << "simulate: " << fabcor::sim_mode_name(cell.mode) << " n="
                << cell.n << " q=" << cell.q << ": " << failure << '\n';
  }

  if (!o.output.empty()) {
    json doc;
    doc["config"] = {{"command", "simulate"},
                     {"mode", o.mode},
                     {"n", o.n_list},
                     {"q", o.q_list},
                     {"replicates", o.replicates},
                     {"group_size", o.group_size},
                     {"alpha", o.alpha},
                     {"seed", o.seed},
                     {"bootstrap_b", o.bootstrap_b},
                     {"design", o.design},
                     {"ridge", o.ridge},
                     {"mask_target", o.mask_target},
                     {"noise_sd", o.noise_sd},
                     {"factor_rows", o.factor_rows},
                     {"threads", o.threads}};
    json rows = json::array();
    for (const auto& cell : cells) {
      rows.push_back(
          {{"mode", fabcor::sim_mode_name(cell.mode)},
           {"n", cell.n},
           {"q", cell.q},
           {"replicates", cell.replicates},
           {"completed", cell.completed},
           {"partial", cell.partial},
           {"group_size", cell.group_size},
           {"alpha", cell.alpha},
           {"fab_null_reject", cell.fab_null_reject},
           {"fab_alt_reject", cell.fab_alt_reject},
           {"umpu_null_reject", cell.umpu_null_reject},
           {"umpu_alt_reject", cell.umpu_alt_reject},
           {"relative_power_gain", cell.relative_power_gain},
           {"rep_fab_power", cell.rep_fab_power},
           {"rep_fab_type1", cell.rep_fab_type1},
           {"rep_umpu_power", cell.rep_umpu_power},
           {"rep_umpu_type1", cell.rep_umpu_type1},
           {"null_hist_fab", histogram_json(cell.null_hist_fab)},
           {"alt_hist_fab", histogram_json(cell.alt_hist_fab)},
           {"null_hist_umpu", histogram_json(cell.null_hist_umpu)},
           {"alt_hist_umpu", histogram_json(cell.alt_hist_umpu)},
           {"failures", cell.failures}});
    }
    doc["cells"] = rows;
    std::ofstream out(o.output);
    if (!out)
      throw fabcor::DataError("simulate: cannot open '" + o.output + "'");
    out << doc.dump(2) << '\n';
  }
  return 0;
}

int run_calibrate(const CalibrateOptions& o) {
  fabcor::CalibrationConfig config;
  config.dgp.q = o.q;
  config.dgp.l = o.factor_rows > 0 ? o.factor_rows : std::max(1, o.q / 2);
  config.dgp.mask_target = o.mask_target;
  config.dgp.n = o.n;
  config.dgp.n_ext = o.n_ext;
  config.dgp.external_noise_sd = o.noise_sd;
  config.mode = parse_mode(o.mode);
  config.design = parse_design(o.design, o.ridge);
  config.group_size = o.group_size;
  config.bootstrap_b = o.bootstrap_b;
  config.targets = o.targets;
  config.replicates = o.replicates;
  config.seed = o.seed;
  config.threads = o.threads;

  const std::vector<fabcor::CalibrationPoint> curve =
      fabcor::fdr_calibration(config);

  std::printf("%10s %14s %16s %5s\n", "target", "observed_fdr",
              "discoveries", "reps");
  for (const auto& point : curve)
    std::printf("%10.4f %14.4f %16.2f %5d\n", point.target,
                point.mean_observed_fdr, point.mean_discoveries,
                point.replicates);

  if (!o.output.empty()) {
    json doc;
    doc["config"] = {{"command", "fdr-calibrate"},
                     {"mode", o.mode},
                     {"n", o.n},
                     {"n_ext", o.n_ext},
                     {"q", o.q},
                     {"group_size", o.group_size},
                     {"replicates", o.replicates},
                     {"targets", o.targets},
                     {"bootstrap_b", o.bootstrap_b},
                     {"design", o.design},
                     {"ridge", o.ridge},
                     {"mask_target", o.mask_target},
                     {"noise_sd", o.noise_sd},
                     {"factor_rows", o.factor_rows},
                     {"seed", o.seed},
                     {"threads", o.threads}};
    json rows = json::array();
    for (const auto& point : curve)
      rows.push_back({{"target", point.target},
                      {"observed_fdr", point.mean_observed_fdr},
                      {"mean_discoveries", point.mean_discoveries},
                      {"replicates", point.replicates}});
    doc["curve"] = rows;
    std::ofstream out(o.output);
    if (!out)
      throw fabcor::DataError("fdr-calibrate: cannot open '" + o.output + "'");
    out << doc.dump(2) << '\n';
  }
  return 0;
}

void add_common_flags(CLI::App* sub, CommonOptions& o, bool with_external,
                      bool with_bootstrap) {
  sub->add_option("--input", o.input, "Input CSV (header row, numeric data)")
      ->required();
  if (with_external) sub->add_option("--external", o.external, "External CSV");
  sub->add_option("--design", o.design,
                  "Linking design: ones | linear | linear-intercept | poly:D");
  sub->add_option("--ridge", o.ridge, "Ridge penalty on the linking fit");
  sub->add_option("--group-size", o.group_size,
                  "Tests per group (capped at the pair count)");
  if (with_bootstrap)
    sub->add_option("--bootstrap-b", o.bootstrap_b, "Bootstrap resamples")
        ->required();
  sub->add_option("--alpha", o.alpha, "Fixed-level rejection threshold");
  sub->add_option("--fdr", o.fdr,
                  "Use Benjamini-Hochberg at this FDR target instead of "
                  "fixed-level decisions");
  sub->add_option("--seed", o.seed, "Master random seed");
  sub->add_flag("--strict-paper-scaling", o.strict_scaling,
                "Scale external statistic blocks by the test sample size "
                "instead of the external sample size");
  sub->add_flag("--allow-internal-ordering", o.allow_internal_ordering,
                "Permit grouping by the statistics under test (voids the "
                "exact validity guarantee)");
  sub->add_option("--threads", o.threads, "Worker threads (0 = auto)");
  sub->add_option("--output", o.output, "Results TSV path")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Support recovery for correlation matrices: frequentist tests with "
      "Bayes-assisted offsets"};
  app.require_subcommand(1);

  CommonOptions ext_opts, boot_opts, umpu_opts;
  SimOptions sim_opts;
  CalibrateOptions cal_opts;

  CLI::App* test_external = app.add_subcommand(
      "test-external", "Test all pairwise correlations of --input using an "
                       "external dataset for grouping and offsets");
  add_common_flags(test_external, ext_opts, true, false);
  test_external->get_option("--external")->required();

  CLI::App* test_bootstrap = app.add_subcommand(
      "test-bootstrap", "Test all pairwise correlations of --input with "
                        "bootstrap-estimated statistic correlations");
  add_common_flags(test_bootstrap, boot_opts, true, true);

  CLI::App* test_umpu = app.add_subcommand(
      "test-umpu", "Classical two-sided tests only (no offsets)");
  add_common_flags(test_umpu, umpu_opts, false, false);

  CLI::App* simulate = app.add_subcommand(
      "simulate", "Synthetic-data power and level study over an (n, q) grid");
  simulate->add_option("--mode", sim_opts.mode,
                       "external | bootstrap | umpu-only")
      ->required();
  simulate->add_option("--n", sim_opts.n_list, "Sample size(s)")
      ->delimiter(',');
  simulate->add_option("--q", sim_opts.q_list, "Variable count(s)")
      ->delimiter(',');
  simulate->add_option("--replicates", sim_opts.replicates,
                       "Replicates per cell");
  simulate->add_option("--group-size", sim_opts.group_size, "Tests per group");
  simulate->add_option("--alpha", sim_opts.alpha, "Rejection threshold");
  simulate->add_option("--seed", sim_opts.seed, "Master random seed");
  simulate->add_option("--bootstrap-b", sim_opts.bootstrap_b,
                       "Bootstrap resamples (0 = default)");
  simulate->add_option("--design", sim_opts.design,
                       "ones | linear | linear-intercept | poly:D");
  simulate->add_option("--ridge", sim_opts.ridge, "Ridge penalty");
  simulate->add_option("--mask-target", sim_opts.mask_target,
                       "Desired zero fraction of the true correlations");
  simulate->add_option("--noise-sd", sim_opts.noise_sd,
                       "External dataset noise scale");
  simulate->add_option("--factor-rows", sim_opts.factor_rows,
                       "Factor rows of the truth (0 = q/2)");
  simulate->add_option("--threads", sim_opts.threads, "Worker threads");
  simulate->add_option("--output", sim_opts.output,
                       "Optional JSON summary path");

  CLI::App* calibrate = app.add_subcommand(
      "fdr-calibrate",
      "Observed-versus-target FDR curve for BH on FAB p-values");
  calibrate->add_option("--mode", cal_opts.mode, "external | bootstrap");
  calibrate->add_option("--n", cal_opts.n, "Test sample size");
  calibrate->add_option("--n-ext", cal_opts.n_ext, "External sample size");
  calibrate->add_option("--q", cal_opts.q, "Variable count");
  calibrate->add_option("--group-size", cal_opts.group_size,
                        "Tests per group");
  calibrate->add_option("--replicates", cal_opts.replicates, "Replicates");
  calibrate->add_option("--targets", cal_opts.targets, "FDR targets")
      ->delimiter(',');
  calibrate->add_option("--bootstrap-b", cal_opts.bootstrap_b,
                        "Bootstrap resamples (0 = default)");
  calibrate->add_option("--design", cal_opts.design,
                        "ones | linear | linear-intercept | poly:D");
  calibrate->add_option("--ridge", cal_opts.ridge, "Ridge penalty");
  calibrate->add_option("--mask-target", cal_opts.mask_target,
                        "Desired zero fraction of the true correlations");
  calibrate->add_option("--noise-sd", cal_opts.noise_sd,
                        "External dataset noise scale");
  calibrate->add_option("--factor-rows", cal_opts.factor_rows,
                        "Factor rows of the truth (0 = q/2)");
  calibrate->add_option("--seed", cal_opts.seed, "Master random seed");
  calibrate->add_option("--threads", cal_opts.threads, "Worker threads");
  calibrate->add_option("--output", cal_opts.output,
                        "Optional JSON curve path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (test_external->parsed())
      return run_test_command(TestCommand::kExternal, ext_opts);
    if (test_bootstrap->parsed())
      return run_test_command(TestCommand::kBootstrap, boot_opts);
    if (test_umpu->parsed())
      return run_test_command(TestCommand::kUmpu, umpu_opts);
    if (simulate->parsed()) return run_simulate(sim_opts);
    if (calibrate->parsed()) return run_calibrate(cal_opts);
    std::cerr << "no subcommand selected\n";
    return 2;
  } catch (const fabcor::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
