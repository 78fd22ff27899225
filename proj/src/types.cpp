#include "fabcor/types.hpp"

#include <set>
#include <string>

namespace fabcor {

int pair_count(int q) {
  if (q < 2) throw ConfigError("pair_count: need q >= 2, got " + std::to_string(q));
  return q * (q - 1) / 2;
}

int pair_to_flat(const PairIndex& pair, int q) {
  if (pair.w < 0 || pair.v >= q || pair.w >= pair.v)
    throw ConfigError("pair_to_flat: invalid pair (" + std::to_string(pair.w) +
                      ", " + std::to_string(pair.v) + ") for q = " + std::to_string(q));
  // Rows above w contribute (q-1) + (q-2) + ... + (q-w) slots.
  return pair.w * q - pair.w * (pair.w + 1) / 2 + (pair.v - pair.w - 1);
}

PairIndex flat_to_pair(int j, int q) {
  int p = pair_count(q);
  if (j < 0 || j >= p)
    throw ConfigError("flat_to_pair: index " + std::to_string(j) +
                      " outside [0, " + std::to_string(p) + ")");
  int w = 0;
  int remaining = j;
  while (remaining >= q - 1 - w) {
    remaining -= q - 1 - w;
    ++w;
  }
  return PairIndex{w, w + 1 + remaining};
}

void validate_data_matrix(const DataMatrix& data) {
  const auto n = data.values.rows();
  const auto q = data.values.cols();
  if (n < 4) throw DataError("data matrix needs at least 4 rows, got " + std::to_string(n));
  if (q < 2) throw DataError("data matrix needs at least 2 columns, got " + std::to_string(q));
  if (static_cast<long>(data.labels.size()) != q)
    throw DataError("label count " + std::to_string(data.labels.size()) +
                    " does not match column count " + std::to_string(q));
  std::set<std::string> seen;
  for (const auto& label : data.labels) {
    if (label.empty()) throw DataError("empty column label");
    if (!seen.insert(label).second)
      throw DataError("duplicate column label '" + label + "'");
  }
  if (!data.values.allFinite())
    throw DataError("data matrix contains non-finite entries");
}

}  // namespace fabcor
