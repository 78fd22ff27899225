#pragma once

#include <vector>

#include "fabcor/types.hpp"

namespace fabcor {

// Rejects exactly {j : p_j < alpha} (strict inequality).
DecisionSet reject_fixed(const std::vector<double>& p_values, double alpha);

// Benjamini-Hochberg step-up: largest k with p_(k) <= k q / m rejects the
// k smallest p-values; ties resolved by sorted position so the rejection
// set is always a down-set in the p-value order.
DecisionSet reject_bh(const std::vector<double>& p_values, double q_target);

// Confusion counts and rates against known truth (true = alternative).
// power is NaN when no alternatives exist; observed_fdr is 0 when nothing
// is rejected.
EvaluationReport evaluate(const DecisionSet& decisions,
                          const std::vector<char>& truth_alternative);

}  // namespace fabcor
