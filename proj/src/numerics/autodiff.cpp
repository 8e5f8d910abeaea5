#include "sfdet/numerics/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sfdet/numerics/errors.hpp"
#include "sfdet/numerics/kernels.hpp"
#include "sfdet/numerics/linalg.hpp"

namespace sfdet::ad {

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw UsageError("operand recorded on a different tape");
    needs = needs || requires_grad(v);
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (!n.requires_grad) return;
  if (!g.same_shape(n.value)) {
    throw ShapeError("gradient " + g.shape_string() + " for node " + n.value.shape_string());
  }
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  auto dst = n.grad.flat();
  auto src = g.flat();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw UsageError("loss belongs to another tape");
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) throw UsageError("backward needs a scalar loss, got " + lv.shape_string());
  for (Node& n : nodes_) n.grad = Matrix();
  visited_ = 0;
  nodes_[static_cast<std::size_t>(loss.id())].grad = Matrix(1, 1, 1.0);
  for (std::size_t i = static_cast<std::size_t>(loss.id()) + 1; i-- > 0;) {
    ++visited_;
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    // The closure may append to nothing but writes into earlier nodes only.
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw UsageError("operands on different tapes");
  return *a.tape();
}

Matrix map(const Matrix& m, auto fn) {
  Matrix out(m.rows(), m.cols());
  auto s = m.flat();
  auto d = out.flat();
  for (std::size_t i = 0; i < s.size(); ++i) d[i] = fn(s[i]);
  return out;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Var in[] = {a, b};
  return t.record(kernels::matmul(a.value(), b.value()), in, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, kernels::matmul_nt(g, b.value()));
    if (tp.requires_grad(b)) tp.accumulate(b, kernels::matmul_tn(a.value(), g));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Var in[] = {a, b};
  return t.record(kernels::matmul_nt(a.value(), b.value()), in, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, kernels::matmul(g, b.value()));
    if (tp.requires_grad(b)) tp.accumulate(b, kernels::matmul_tn(g, a.value()));
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Var in[] = {a, b};
  return t.record(a.value() + b.value(), in, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  Var in[] = {a, b};
  return t.record(a.value() - b.value(), in, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(b)) tp.accumulate(b, -1.0 * g);
  });
}

Var hadamard(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (!av.same_shape(bv)) throw ShapeError("hadamard " + av.shape_string() + " vs " + bv.shape_string());
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.flat()[i] *= bv.flat()[i];
  Var in[] = {a, b};
  return t.record(std::move(out), in, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) {
      Matrix ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga.flat()[i] *= b.value().flat()[i];
      tp.accumulate(a, ga);
    }
    if (tp.requires_grad(b)) {
      Matrix gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb.flat()[i] *= a.value().flat()[i];
      tp.accumulate(b, gb);
    }
  });
}

Var scale(Var a, double s) {
  Var in[] = {a};
  return a.tape()->record(s * a.value(), in, [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a, s * g); });
}

Var scale_by(Var a, Var s) {
  Tape& t = same_tape(a, s);
  require_shape(s.value(), 1, 1, "scale_by factor");
  Var in[] = {a, s};
  return t.record(s.value()(0, 0) * a.value(), in, [a, s](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, s.value()(0, 0) * g);
    if (tp.requires_grad(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g.flat()[i] * a.value().flat()[i];
      Matrix gs(1, 1);
      gs(0, 0) = acc;
      tp.accumulate(s, gs);
    }
  });
}

Var add_row(Var a, Var bias) {
  Tape& t = same_tape(a, bias);
  const Matrix& av = a.value();
  require_shape(bias.value(), 1, av.cols(), "add_row bias");
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bias.value()(0, c);
  Var in[] = {a, bias};
  return t.record(std::move(out), in, [a, bias](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(bias)) {
      Matrix gb(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
      tp.accumulate(bias, gb);
    }
  });
}

Var gelu(Var a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  Var in[] = {a};
  Matrix out = map(a.value(), [&](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return a.tape()->record(std::move(out), in, [a, inv_sqrt_2pi](Tape& tp, const Matrix& g) {
    Matrix ga = g;
    auto x = a.value().flat();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
      ga.flat()[i] *= cdf + x[i] * pdf;
    }
    tp.accumulate(a, ga);
  });
}

Var sigmoid(Var a) {
  Matrix out = map(a.value(), [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  Var in[] = {a};
  Tape& t = *a.tape();
  const int self = static_cast<int>(t.size());
  return t.record(std::move(out), in, [a, self, &t](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(Var(&t, self));
    Matrix ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga.flat()[i] *= y.flat()[i] * (1.0 - y.flat()[i]);
    tp.accumulate(a, ga);
  });
}

Var softmax_rows(Var a) {
  Var in[] = {a};
  Tape& t = *a.tape();
  const int self = static_cast<int>(t.size());
  return t.record(sfdet::softmax_rows(a.value()), in, [a, self, &t](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(Var(&t, self));
    Matrix ga(g.rows(), g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) = y(r, c) * (g(r, c) - dot);
    }
    tp.accumulate(a, ga);
  });
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
  const Matrix& x = a.value();
  const std::size_t n = x.rows(), d = x.cols();
  require_shape(gain.value(), 1, d, "layer_norm gain");
  require_shape(bias.value(), 1, d, "layer_norm bias");
  Matrix xhat(n, d);
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (double v : x.row(r)) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x.row(r)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) xhat(r, c) = (x(r, c) - mean) * inv_std[r];
  }
  Matrix out(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out(r, c) = xhat(r, c) * gain.value()(0, c) + bias.value()(0, c);
  Var in[] = {a, gain, bias};
  return a.tape()->record(std::move(out), in,
                          [a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                              Tape& tp, const Matrix& g) {
    const std::size_t rows = g.rows(), cols = g.cols();
    const Matrix& gv = gain.value();
    if (tp.requires_grad(gain) || tp.requires_grad(bias)) {
      Matrix gg(1, cols), gb(1, cols);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          gg(0, c) += g(r, c) * xhat(r, c);
          gb(0, c) += g(r, c);
        }
      tp.accumulate(gain, gg);
      tp.accumulate(bias, gb);
    }
    if (tp.requires_grad(a)) {
      Matrix ga(rows, cols);
      const double inv_d = 1.0 / static_cast<double>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_dy = 0.0, mean_dy_x = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double dy = g(r, c) * gv(0, c);
          mean_dy += dy;
          mean_dy_x += dy * xhat(r, c);
        }
        mean_dy *= inv_d;
        mean_dy_x *= inv_d;
        for (std::size_t c = 0; c < cols; ++c) {
          const double dy = g(r, c) * gv(0, c);
          ga(r, c) = inv_std[r] * (dy - mean_dy - xhat(r, c) * mean_dy_x);
        }
      }
      tp.accumulate(a, ga);
    }
  });
}

Var vstack(Var top, Var bottom) {
  Tape& t = same_tape(top, bottom);
  const Matrix& a = top.value();
  const Matrix& b = bottom.value();
  if (a.cols() != b.cols()) throw ShapeError("vstack " + a.shape_string() + " over " + b.shape_string());
  Matrix out(a.rows() + b.rows(), a.cols());
  std::copy(a.flat().begin(), a.flat().end(), out.flat().begin());
  std::copy(b.flat().begin(), b.flat().end(), out.flat().begin() + static_cast<std::ptrdiff_t>(a.size()));
  Var in[] = {top, bottom};
  return t.record(std::move(out), in, [top, bottom](Tape& tp, const Matrix& g) {
    const std::size_t split = top.value().rows();
    const std::size_t cols = g.cols();
    auto flat = g.flat();
    if (tp.requires_grad(top)) {
      tp.accumulate(top, Matrix(split, cols, std::vector<double>(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(split * cols))));
    }
    if (tp.requires_grad(bottom)) {
      tp.accumulate(bottom, Matrix(g.rows() - split, cols,
                                   std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(split * cols), flat.end())));
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Var in[] = {a};
  return a.tape()->record(sfdet::gather_rows(a.value(), idx), in, [a, idx](Tape& tp, const Matrix& g) {
    Matrix ga(a.value().rows(), a.value().cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(idx[i], c) += g(i, c);
    tp.accumulate(a, ga);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().flat()) s += v;
  Var in[] = {a};
  return a.tape()->record(Matrix(1, 1, s), in, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, Matrix(a.value().rows(), a.value().cols(), g(0, 0)));
  });
}

Var square(Var a) {
  Var in[] = {a};
  return a.tape()->record(map(a.value(), [](double x) { return x * x; }), in, [a](Tape& tp, const Matrix& g) {
    Matrix ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga.flat()[i] *= 2.0 * a.value().flat()[i];
    tp.accumulate(a, ga);
  });
}

Var log(Var a) {
  for (double v : a.value().flat())
    if (!(v > 0.0)) throw NumericError("log of non-positive value");
  Var in[] = {a};
  return a.tape()->record(map(a.value(), [](double x) { return std::log(x); }), in, [a](Tape& tp, const Matrix& g) {
    Matrix ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga.flat()[i] /= a.value().flat()[i];
    tp.accumulate(a, ga);
  });
}

Var truncated_reconstruct(Var a, std::size_t r) {
  const Matrix& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  const std::size_t p = std::min(m, n);
  if (r < 1 || r > p) {
    throw ParameterError("truncation rank " + std::to_string(r) + " outside [1, " + std::to_string(p) + "]");
  }
  SvdResult d = svd(x);
  Matrix out(m, n);
  for (std::size_t k = 0; k < r; ++k)
    for (std::size_t i = 0; i < m; ++i) {
      const double us = d.u(i, k) * d.sigma[k];
      for (std::size_t j = 0; j < n; ++j) out(i, j) += us * d.vt(k, j);
    }
  Var in[] = {a};
  return a.tape()->record(std::move(out), in, [a, r, d = std::move(d)](Tape& tp, const Matrix& g) {
    // f' = A·P with P the projector onto the top-r right singular vectors.
    // dL/dA = G·P + Σ_{i≤r<j} s_ij/(σᵢ²−σⱼ²)(σⱼ uⱼvᵢᵀ + σᵢ uᵢvⱼᵀ)
    //               + Σ_{i≤r} uᵢ/σᵢ · vᵢᵀ(H+Hᵀ)(I − VVᵀ),
    // with H = AᵀG and s_ij = vᵢᵀ(H+Hᵀ)vⱼ; the last term covers the null space
    // of A when it has more columns than rows.
    const Matrix& A = a.value();
    const std::size_t rows = A.rows(), cols = A.cols();
    const std::size_t p = d.sigma.size();
    Matrix vr(r, cols);
    for (std::size_t k = 0; k < r; ++k)
      for (std::size_t j = 0; j < cols; ++j) vr(k, j) = d.vt(k, j);
    Matrix ga = kernels::matmul(kernels::matmul_nt(g, vr), vr);  // G·Vr·Vrᵀ

    Matrix h = kernels::matmul_tn(A, g);  // n×n
    Matrix hs = h + h.transposed();
    Matrix hv = kernels::matmul_nt(hs, d.vt);  // column j = (H+Hᵀ)vⱼ, n×p
    for (std::size_t i = 0; i < r; ++i) {
      const double si = d.sigma[i];
      if (si <= 0.0) continue;
      for (std::size_t j = r; j < p; ++j) {
        const double sj = d.sigma[j];
        const double gap = si * si - sj * sj;
        if (std::abs(gap) <= 1e-14 * si * si) continue;
        double s_ij = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s_ij += d.vt(i, c) * hv(c, j);
        const double coef = s_ij / gap;
        for (std::size_t row = 0; row < rows; ++row) {
          const double uj = d.u(row, j) * sj * coef;
          const double ui = d.u(row, i) * si * coef;
          for (std::size_t c = 0; c < cols; ++c) ga(row, c) += uj * d.vt(i, c) + ui * d.vt(j, c);
        }
      }
    }
    if (cols > p) {
      // w_i = vᵢᵀ(H+Hᵀ), then remove components inside span(V).
      for (std::size_t i = 0; i < r; ++i) {
        const double si = d.sigma[i];
        if (si <= 0.0) continue;
        std::vector<double> w(cols, 0.0);
        for (std::size_t c = 0; c < cols; ++c) w[c] = hv(c, i);  // (H+Hᵀ) symmetric
        for (std::size_t k = 0; k < p; ++k) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += w[c] * d.vt(k, c);
          for (std::size_t c = 0; c < cols; ++c) w[c] -= dot * d.vt(k, c);
        }
        for (std::size_t row = 0; row < rows; ++row) {
          const double coef = d.u(row, i) / si;
          for (std::size_t c = 0; c < cols; ++c) ga(row, c) += coef * w[c];
        }
      }
    }
    tp.accumulate(a, ga);
  });
}

GradCheckReport grad_check_report(const ScalarFn& f, std::span<const Matrix> params, double h, double floor) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Matrix& p : params) vars.push_back(tape.parameter(p));
    Var loss = f(tape, vars);
    tape.backward(loss);
    for (Var v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&](const std::vector<Matrix>& values) {
    Tape tape;
    std::vector<Var> vars;
    for (const Matrix& p : values) vars.push_back(tape.constant(p));
    return f(tape, vars).value()(0, 0);
  };
  GradCheckReport report;
  std::vector<Matrix> work(params.begin(), params.end());
  for (std::size_t pi = 0; pi < work.size(); ++pi) {
    for (std::size_t i = 0; i < work[pi].size(); ++i) {
      const double orig = work[pi].flat()[i];
      work[pi].flat()[i] = orig + h;
      const double up = eval(work);
      work[pi].flat()[i] = orig - h;
      const double down = eval(work);
      work[pi].flat()[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double an = analytic[pi].flat()[i];
      const double rel = std::abs(an - numeric) / std::max({floor, std::abs(numeric), std::abs(an)});
      if (rel > report.max_relative_error) report = GradCheckReport{rel, pi, i, an, numeric};
    }
  }
  return report;
}

double grad_check(const ScalarFn& f, std::span<const Matrix> params, double h, double floor) {
  return grad_check_report(f, params, h, floor).max_relative_error;
}

}  // namespace sfdet::ad
