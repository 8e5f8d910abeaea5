#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sfdet/numerics/matrix.hpp"

namespace sfdet {

/// Thin singular value decomposition m = u·diag(sigma)·vt.
/// u is m×p, vt is p×n with p = min(m, n); sigma is non-increasing.
struct SvdResult {
  Matrix u;
  std::vector<double> sigma;
  Matrix vt;
};

struct SvdOptions {
  int max_sweeps = 100;
  // A pair of columns counts as orthogonal once |aᵢ·aⱼ| ≤ tol·‖aᵢ‖‖aⱼ‖.
  double tolerance = 1e-10;
};

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& m);

/// One-sided (Hestenes) Jacobi SVD. Throws NumericError if the sweep cap is hit.
SvdResult svd(const Matrix& m, const SvdOptions& options = {});

/// Best rank-r approximation u'·Σ'·v'ᵀ from the top-r singular triplets.
Matrix truncated_reconstruct(const Matrix& m, std::size_t r);

/// Indices of the k largest scores in descending score order; ties go to the
/// lower index.
std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k);

/// u·v / (‖u‖‖v‖), or 0 when either norm is below 1e-12.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

/// Per-row mean over columns.
std::vector<double> row_means(const Matrix& m);

/// Rows of m at the given indices, in index order.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices);

}  // namespace sfdet
