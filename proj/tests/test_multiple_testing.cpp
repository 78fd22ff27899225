#include <algorithm>
#include <cmath>
#include <vector>

#include <doctest.h>

#include "fabcor/multiple_testing.hpp"
#include "fabcor/rng.hpp"
#include "fabcor/types.hpp"

using namespace fabcor;

TEST_CASE("fixed-level rejection uses strict inequality") {
  SUBCASE("direct comparison") {
    const DecisionSet d = reject_fixed({0.01, 0.2}, 0.05);
    CHECK(d.rejected == std::vector<char>{1, 0});
    CHECK(d.rejection_count == 1);
    CHECK(d.threshold_used == 0.05);
    CHECK(d.rule == DecisionRule::kFixedAlpha);
  }

  SUBCASE("all ones rejects nothing") {
    const DecisionSet d = reject_fixed({1.0, 1.0, 1.0}, 0.5);
    CHECK(d.rejection_count == 0);
  }

  SUBCASE("boundary p-value is kept") {
    const DecisionSet d = reject_fixed({0.05, 0.049999}, 0.05);
    CHECK(d.rejected == std::vector<char>{0, 1});
  }

  SUBCASE("level validation") {
    CHECK_THROWS_AS(reject_fixed({0.5}, 0.0), ConfigError);
    CHECK_THROWS_AS(reject_fixed({0.5}, 1.0), ConfigError);
    CHECK_THROWS_AS(reject_fixed({}, 0.05), ConfigError);
    CHECK_THROWS_AS(reject_fixed({1.5}, 0.05), ConfigError);
  }
}

TEST_CASE("step-up procedure hand example") {
  // k = 2 passes (0.02 <= 2*0.05/4), k = 3 fails (0.04 > 0.0375).
  const DecisionSet d = reject_bh({0.01, 0.02, 0.04, 0.5}, 0.05);
  CHECK(d.rejected == std::vector<char>{1, 1, 0, 0});
  CHECK(d.rejection_count == 2);
  CHECK(d.threshold_used == 0.02);
  CHECK(d.rule == DecisionRule::kBenjaminiHochberg);
}

TEST_CASE("step-up extremes") {
  const DecisionSet all = reject_bh({0.0, 0.0, 0.0}, 0.1);
  CHECK(all.rejection_count == 3);
  const DecisionSet none = reject_bh({1.0, 1.0, 1.0}, 0.1);
  CHECK(none.rejection_count == 0);
  CHECK(none.threshold_used == 0.0);
}

TEST_CASE("step-up rejections form a down-set and nest across targets") {
  Rng rng(2023);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(40);
    for (double& value : p) value = std::pow(rng.uniform(), 2.0);
    const DecisionSet tight = reject_bh(p, 0.03);
    const DecisionSet loose = reject_bh(p, 0.15);

    double max_rejected = -1.0, min_kept = 2.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (tight.rejected[j])
        max_rejected = std::max(max_rejected, p[j]);
      else
        min_kept = std::min(min_kept, p[j]);
      // Nesting: a stricter target never rejects more.
      if (tight.rejected[j]) CHECK(loose.rejected[j] == 1);
    }
    if (tight.rejection_count > 0 &&
        tight.rejection_count < static_cast<int>(p.size()))
      CHECK(max_rejected <= min_kept);
  }
}

TEST_CASE("step-up dominates the single-threshold first step") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> p(25);
    for (double& value : p) value = rng.uniform();
    const double q = 0.1;
    const DecisionSet bh = reject_bh(p, q);
    const double bonferroni = q / p.size();
    for (std::size_t j = 0; j < p.size(); ++j)
      if (p[j] <= bonferroni) CHECK(bh.rejected[j] == 1);
  }
}

TEST_CASE("evaluation counts and rates") {
  SUBCASE("perfect classifier") {
    DecisionSet d;
    d.rejected = {1, 1, 0, 0};
    d.rejection_count = 2;
    const EvaluationReport report = evaluate(d, {1, 1, 0, 0});
    CHECK(report.power == 1.0);
    CHECK(report.type1 == 0.0);
    CHECK(report.observed_fdr == 0.0);
    CHECK(report.true_positives == 2);
    CHECK(report.false_positives == 0);
  }

  SUBCASE("reject nothing") {
    DecisionSet d;
    d.rejected = {0, 0, 0};
    const EvaluationReport report = evaluate(d, {1, 0, 1});
    CHECK(report.power == 0.0);
    CHECK(report.type1 == 0.0);
    CHECK(report.observed_fdr == 0.0);
  }

  SUBCASE("fdr ratio") {
    DecisionSet d;
    d.rejected.assign(20, 0);
    std::vector<char> truth(20, 0);
    for (int j = 0; j < 10; ++j) d.rejected[j] = 1;  // 10 rejections
    for (int j = 2; j < 20; ++j) truth[j] = 1;       // first 2 are nulls
    d.rejection_count = 10;
    const EvaluationReport report = evaluate(d, truth);
    CHECK(report.observed_fdr == doctest::Approx(0.2).epsilon(1e-12));
  }

  SUBCASE("empty strata are NaN, not zero") {
    DecisionSet d;
    d.rejected = {1, 0};
    const EvaluationReport none_alt = evaluate(d, {0, 0});
    CHECK(std::isnan(none_alt.power));
    const EvaluationReport none_null = evaluate(d, {1, 1});
    CHECK(std::isnan(none_null.type1));
  }

  SUBCASE("rates within each truth row sum to one") {
    Rng rng(5);
    DecisionSet d;
    std::vector<char> truth(30);
    d.rejected.resize(30);
    for (int j = 0; j < 30; ++j) {
      d.rejected[j] = rng.uniform() < 0.3 ? 1 : 0;
      truth[j] = rng.uniform() < 0.5 ? 1 : 0;
    }
    const EvaluationReport report = evaluate(d, truth);
    if (report.null_count > 0)
      CHECK(std::abs(report.null_reject_rate + report.null_accept_rate -
                     1.0) < 1e-12);
    if (report.alt_count > 0)
      CHECK(std::abs(report.alt_reject_rate + report.alt_accept_rate - 1.0) <
            1e-12);
  }

  SUBCASE("length mismatch") {
    DecisionSet d;
    d.rejected = {1, 0};
    CHECK_THROWS_AS(evaluate(d, {1, 0, 0}), ConfigError);
  }
}

TEST_CASE("evaluation is jointly permutation-equivariant") {
  Rng rng(321);
  DecisionSet d;
  std::vector<char> truth(25);
  d.rejected.resize(25);
  for (int j = 0; j < 25; ++j) {
    d.rejected[j] = rng.uniform() < 0.4 ? 1 : 0;
    truth[j] = rng.uniform() < 0.5 ? 1 : 0;
    if (d.rejected[j]) ++d.rejection_count;
  }
  const EvaluationReport base = evaluate(d, truth);

  std::vector<int> perm(25);
  for (int j = 0; j < 25; ++j) perm[j] = j;
  for (int j = 24; j > 0; --j)
    std::swap(perm[j], perm[rng.below(static_cast<std::uint64_t>(j + 1))]);
  DecisionSet pd = d;
  std::vector<char> pt(25);
  for (int j = 0; j < 25; ++j) {
    pd.rejected[j] = d.rejected[perm[j]];
    pt[j] = truth[perm[j]];
  }
  const EvaluationReport permuted = evaluate(pd, pt);
  CHECK(base.power == permuted.power);
  CHECK(base.type1 == permuted.type1);
  CHECK(base.observed_fdr == permuted.observed_fdr);
  CHECK(base.rejection_count == permuted.rejection_count);
}
