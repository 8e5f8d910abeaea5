#pragma once

#include <cstddef>
#include <vector>

#include "sfdet/numerics/matrix.hpp"

namespace sfdet {

/// Minimum-cost injective assignment of every ground truth (column) to a
/// prediction (row). gt_to_pred[j] is the prediction matched to ground truth j.
struct Assignment {
  std::vector<std::size_t> gt_to_pred;
  double total_cost = 0.0;
};

/// Rectangular Hungarian algorithm (shortest augmenting paths with
/// potentials), O(n_gt²·n_pred). Throws ParameterError if n_gt > n_pred.
Assignment hungarian_match(const Matrix& cost);

}  // namespace sfdet
