#include "sfdet/numerics/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sfdet/numerics/errors.hpp"

namespace sfdet {

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto in = m.row(r);
    auto o = out.row(r);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

namespace {

// Jacobi on the columns of `a` (m×n, m ≥ n). On return the columns of `a` are
// mutually orthogonal and `v` (n×n) holds the accumulated rotations.
void jacobi_columns(Matrix& a, Matrix& v, const SvdOptions& options) {
  const std::size_t m = a.rows(), n = a.cols();
  v = Matrix::identity(n);
  double total = 0.0;
  for (double x : a.flat()) total += x * x;
  // Columns below this squared norm are rounding residue of a rank deficiency.
  const double negligible = 1e-30 * total;
  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
          const double x = a(r, i), y = a(r, j);
          alpha += x * x;
          beta += y * y;
          gamma += x * y;
        }
        if (alpha <= negligible || beta <= negligible) continue;
        if (std::abs(gamma) <= options.tolerance * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < m; ++r) {
          const double x = a(r, i), y = a(r, j);
          a(r, i) = c * x - s * y;
          a(r, j) = s * x + c * y;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double x = v(r, i), y = v(r, j);
          v(r, i) = c * x - s * y;
          v(r, j) = s * x + c * y;
        }
      }
    }
    if (!rotated) return;
  }
  throw NumericError("svd did not converge within " + std::to_string(options.max_sweeps) + " sweeps");
}

// Replaces column `col` of q (m×p) with a unit vector orthogonal to columns [0, col).
void complete_column(Matrix& q, std::size_t col) {
  const std::size_t m = q.rows();
  for (std::size_t e = 0; e < m; ++e) {
    std::vector<double> cand(m, 0.0);
    cand[e] = 1.0;
    // Two Gram-Schmidt passes for numerical orthogonality.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t c = 0; c < col; ++c) {
        double d = 0.0;
        for (std::size_t r = 0; r < m; ++r) d += q(r, c) * cand[r];
        for (std::size_t r = 0; r < m; ++r) cand[r] -= d * q(r, c);
      }
    }
    double norm = 0.0;
    for (double x : cand) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 1e-6) {
      for (std::size_t r = 0; r < m; ++r) q(r, col) = cand[r] / norm;
      return;
    }
  }
}

SvdResult svd_tall(const Matrix& m, const SvdOptions& options) {
  Matrix a = m;
  Matrix v;
  jacobi_columns(a, v, options);
  const std::size_t rows = a.rows(), n = a.cols();

  std::vector<double> norms(n);
  for (std::size_t c = 0; c < n; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) s += a(r, c) * a(r, c);
    norms[c] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  SvdResult out{Matrix(rows, n), std::vector<double>(n), Matrix(n, n)};
  const double scale = norms.empty() ? 0.0 : norms[order[0]];
  std::vector<std::size_t> deficient;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t c = order[k];
    out.sigma[k] = norms[c];
    for (std::size_t r = 0; r < n; ++r) out.vt(k, r) = v(r, c);
    if (norms[c] > 1e-13 * std::max(scale, 1e-300) && norms[c] > 0.0) {
      for (std::size_t r = 0; r < rows; ++r) out.u(r, k) = a(r, c) / norms[c];
    } else {
      deficient.push_back(k);
    }
  }
  // Deficient columns sit at the end after sorting, so earlier columns are final.
  for (std::size_t k : deficient) complete_column(out.u, k);
  return out;
}

}  // namespace

SvdResult svd(const Matrix& m, const SvdOptions& options) {
  if (m.rows() == 0 || m.cols() == 0) throw ParameterError("svd of empty matrix " + m.shape_string());
  if (m.rows() >= m.cols()) return svd_tall(m, options);
  SvdResult t = svd_tall(m.transposed(), options);
  return SvdResult{t.vt.transposed(), std::move(t.sigma), t.u.transposed()};
}

Matrix truncated_reconstruct(const Matrix& m, std::size_t r) {
  const std::size_t p = std::min(m.rows(), m.cols());
  if (r < 1 || r > p) {
    throw ParameterError("truncation rank " + std::to_string(r) + " outside [1, " + std::to_string(p) + "]");
  }
  const SvdResult d = svd(m);
  Matrix out(m.rows(), m.cols());
  for (std::size_t k = 0; k < r; ++k) {
    const double s = d.sigma[k];
    for (std::size_t i = 0; i < m.rows(); ++i) {
      const double us = d.u(i, k) * s;
      for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) += us * d.vt(k, j);
    }
  }
  return out;
}

std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k) {
  if (k > scores.size()) {
    throw ParameterError("top-k " + std::to_string(k) + " exceeds length " + std::to_string(scores.size()));
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw ShapeError("cosine_similarity lengths " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  if (nu < 1e-12 || nv < 1e-12) return 0.0;
  return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

std::vector<double> row_means(const Matrix& m) {
  std::vector<double> out(m.rows(), 0.0);
  if (m.cols() == 0) return out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (double x : m.row(r)) s += x;
    out[r] = s / static_cast<double>(m.cols());
  }
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= m.rows()) throw ParameterError("gather index out of range");
    std::copy(m.row(indices[i]).begin(), m.row(indices[i]).end(), out.row(i).begin());
  }
  return out;
}

}  // namespace sfdet
