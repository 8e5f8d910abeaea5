#pragma once

#include "sfdet/numerics/matrix.hpp"

namespace sfdet::kernels {

// OpenMP-parallel dense products. Every output row is computed by exactly one
// thread with a fixed accumulation order, so results are bit-identical for any
// thread count. The *_reference variants are the serial triple loops the
// parallel kernels are tested and benchmarked against.

Matrix matmul(const Matrix& a, const Matrix& b);     // a·b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a·bᵀ
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // aᵀ·b

Matrix matmul_reference(const Matrix& a, const Matrix& b);
Matrix matmul_nt_reference(const Matrix& a, const Matrix& b);
Matrix matmul_tn_reference(const Matrix& a, const Matrix& b);

/// Threads OpenMP will use for the next parallel region (1 without OpenMP).
int max_threads();

}  // namespace sfdet::kernels
