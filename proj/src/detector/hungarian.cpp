#include "sfdet/detector/hungarian.hpp"

#include <limits>

#include "sfdet/numerics/errors.hpp"

namespace sfdet {

Assignment hungarian_match(const Matrix& cost) {
  const std::size_t n_pred = cost.rows(), n_gt = cost.cols();
  if (n_gt > n_pred) {
    throw ParameterError("more ground truths (" + std::to_string(n_gt) + ") than predictions (" +
                         std::to_string(n_pred) + ")");
  }
  if (!cost.all_finite()) throw ParameterError("matching cost must be finite");
  Assignment out;
  if (n_gt == 0) return out;

  // Rows of the classical formulation are ground truths (n = n_gt), columns
  // are predictions (m = n_pred); 1-based with index 0 as the virtual source.
  const std::size_t n = n_gt, m = n_pred;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = owner[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(j - 1, i0 - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  out.gt_to_pred.assign(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (owner[j] != 0) out.gt_to_pred[owner[j] - 1] = j - 1;
  for (std::size_t g = 0; g < n; ++g) out.total_cost += cost(out.gt_to_pred[g], g);
  return out;
}

}  // namespace sfdet
