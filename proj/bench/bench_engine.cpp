// Times the parallel engine drivers against the serial reference drivers
// on synthetic data and verifies the outputs match bitwise. Usage:
//   fabcor_bench [threads] [q] [n] [group_size] [repeats]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <vector>

#include "fabcor/corr_stats.hpp"
#include "fabcor/fab_engine.hpp"
#include "fabcor/sim_harness.hpp"
#include "fabcor/types.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start)
      .count();
}

double max_abs_diff(const fabcor::EngineRun& a, const fabcor::EngineRun& b) {
  double worst = 0.0;
  for (std::size_t j = 0; j < a.results.size(); ++j) {
    worst = std::max(worst,
                     std::abs(a.results[j].p_fab - b.results[j].p_fab));
    worst = std::max(worst,
                     std::abs(a.results[j].offset_b - b.results[j].offset_b));
  }
  return worst;
}

}  // namespace

int main(int argc, char** argv) {
  const int threads = argc > 1 ? std::atoi(argv[1]) : 0;
  const int q = argc > 2 ? std::atoi(argv[2]) : 40;
  const int n = argc > 3 ? std::atoi(argv[3]) : 100;
  const int group_size = argc > 4 ? std::atoi(argv[4]) : 10;
  const int repeats = argc > 5 ? std::atoi(argv[5]) : 3;

  fabcor::DgpConfig dgp;
  dgp.q = q;
  dgp.l = q / 2;
  dgp.n = n;
  dgp.n_ext = n;
  dgp.seed = 20240915;
  const fabcor::SigmaTruth truth = fabcor::generate_sigma(dgp);
  const auto [test, external] = fabcor::generate_datasets(truth.sigma, dgp);

  const fabcor::ZStatistics z_ext = fabcor::compute_z_statistics(external);
  const fabcor::GroupAssignment groups = fabcor::assign_groups(
      z_ext.z_hat, group_size, fabcor::OrderingSource::kExternalStats);
  fabcor::LinkingDesign design;
  design.kind = fabcor::DesignKind::kExternalLinear;

  fabcor::EngineOptions parallel_opts;
  parallel_opts.threads = threads;

  std::printf("engine benchmark: q=%d (%d tests), n=%d, group_size=%d, "
              "threads=%d, repeats=%d\n",
              q, fabcor::pair_count(q), n, group_size, threads, repeats);

  {
    double serial_ms = 0.0, parallel_ms = 0.0, worst = 0.0;
    for (int r = 0; r < repeats; ++r) {
      auto t0 = Clock::now();
      const fabcor::EngineRun serial = fabcor::reference::run_fab_external(
          test, external, design, groups);
      serial_ms += ms_since(t0);
      t0 = Clock::now();
      const fabcor::EngineRun parallel = fabcor::run_fab_external(
          test, external, design, groups, parallel_opts);
      parallel_ms += ms_since(t0);
      worst = std::max(worst, max_abs_diff(serial, parallel));
    }
    std::printf("external : serial %8.1f ms  parallel %8.1f ms  "
                "speedup %4.2fx  max|diff| %g\n",
                serial_ms / repeats, parallel_ms / repeats,
                serial_ms / parallel_ms, worst);
  }

  {
    const int b = 300;
    double serial_ms = 0.0, parallel_ms = 0.0, worst = 0.0;
    for (int r = 0; r < repeats; ++r) {
      auto t0 = Clock::now();
      const fabcor::EngineRun serial = fabcor::reference::run_fab_bootstrap(
          test, design, groups, b, 7, &z_ext.z_hat);
      serial_ms += ms_since(t0);
      t0 = Clock::now();
      const fabcor::EngineRun parallel = fabcor::run_fab_bootstrap(
          test, design, groups, b, 7, &z_ext.z_hat, parallel_opts);
      parallel_ms += ms_since(t0);
      worst = std::max(worst, max_abs_diff(serial, parallel));
    }
    std::printf("bootstrap: serial %8.1f ms  parallel %8.1f ms  "
                "speedup %4.2fx  max|diff| %g\n",
                serial_ms / repeats, parallel_ms / repeats,
                serial_ms / parallel_ms, worst);
  }
  return 0;
}
