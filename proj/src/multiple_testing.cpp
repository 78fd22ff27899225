#include "fabcor/multiple_testing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace fabcor {

namespace {

void check_p_values(const std::vector<double>& p_values) {
  if (p_values.empty()) throw ConfigError("decision: empty p-value vector");
  for (double p : p_values)
    if (!(p >= 0.0) || !(p <= 1.0))
      throw ConfigError("decision: p-value outside [0, 1]");
}

}  // namespace

DecisionSet reject_fixed(const std::vector<double>& p_values, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ConfigError("reject_fixed: alpha must lie in (0, 1)");
  check_p_values(p_values);
  DecisionSet out;
  out.rule = DecisionRule::kFixedAlpha;
  out.level = alpha;
  out.threshold_used = alpha;
  out.rejected.resize(p_values.size(), 0);
  for (std::size_t i = 0; i < p_values.size(); ++i) {
    if (p_values[i] < alpha) {
      out.rejected[i] = 1;
      ++out.rejection_count;
    }
  }
  return out;
}

DecisionSet reject_bh(const std::vector<double>& p_values, double q_target) {
  if (!(q_target > 0.0 && q_target < 1.0))
    throw ConfigError("reject_bh: q_target must lie in (0, 1)");
  check_p_values(p_values);
  const std::size_t m = p_values.size();

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (p_values[a] != p_values[b]) return p_values[a] < p_values[b];
    return a < b;
  });

  // Step-up: largest k with p_(k) <= k q / m. At that k the next sorted
  // p-value is strictly larger, so rejecting the k smallest positions is
  // a down-set even under ties.
  std::size_t k = 0;
  for (std::size_t r = m; r >= 1; --r) {
    if (p_values[order[r - 1]] <=
        static_cast<double>(r) * q_target / static_cast<double>(m)) {
      k = r;
      break;
    }
  }

  DecisionSet out;
  out.rule = DecisionRule::kBenjaminiHochberg;
  out.level = q_target;
  out.threshold_used = k > 0 ? p_values[order[k - 1]] : 0.0;
  out.rejected.resize(m, 0);
  for (std::size_t r = 0; r < k; ++r) out.rejected[order[r]] = 1;
  out.rejection_count = static_cast<int>(k);
  return out;
}

EvaluationReport evaluate(const DecisionSet& decisions,
                          const std::vector<char>& truth_alternative) {
  if (decisions.rejected.size() != truth_alternative.size())
    throw ConfigError("evaluate: decision and truth lengths differ (" +
                      std::to_string(decisions.rejected.size()) + " vs " +
                      std::to_string(truth_alternative.size()) + ")");
  EvaluationReport report;
  for (std::size_t i = 0; i < truth_alternative.size(); ++i) {
    const bool alt = truth_alternative[i] != 0;
    const bool rejected = decisions.rejected[i] != 0;
    report.null_count += alt ? 0 : 1;
    report.alt_count += alt ? 1 : 0;
    if (rejected) {
      ++report.rejection_count;
      if (alt)
        ++report.true_positives;
      else
        ++report.false_positives;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (report.null_count > 0) {
    report.null_reject_rate =
        static_cast<double>(report.false_positives) / report.null_count;
    report.null_accept_rate = 1.0 - report.null_reject_rate;
    report.type1 = report.null_reject_rate;
  } else {
    report.null_reject_rate = nan;
    report.null_accept_rate = nan;
    report.type1 = nan;
  }
  if (report.alt_count > 0) {
    report.alt_reject_rate =
        static_cast<double>(report.true_positives) / report.alt_count;
    report.alt_accept_rate = 1.0 - report.alt_reject_rate;
    report.power = report.alt_reject_rate;
  } else {
    report.alt_reject_rate = nan;
    report.alt_accept_rate = nan;
    report.power = nan;  // undefined, deliberately not zero
  }
  report.observed_fdr =
      report.rejection_count > 0
          ? static_cast<double>(report.false_positives) /
                report.rejection_count
          : 0.0;
  return report;
}

}  // namespace fabcor
