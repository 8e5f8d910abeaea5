#include <cmath>

#include "doctest.h"
#include "naive_model.hpp"
#include "sfdet/adapt/adapt.hpp"
#include "sfdet/collab/collab.hpp"
#include "sfdet/numerics/errors.hpp"
#include "sfdet/numerics/linalg.hpp"
#include "support.hpp"

using namespace sfdet;
using namespace sfdet::testing;

namespace {

ModelParams full_params(const DetectorConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams p = init_detector_params(cfg, rng);
  collab::add_collab_params(p, cfg, rng);
  return p;
}

/// Loop oracle of joint cross-domain attention for one query row at a time.
Matrix naive_cda(const ModelParams& p, const std::string& prefix, const Matrix& fs, const Matrix& ft) {
  const Matrix stacked = vstack(fs, ft);
  const Matrix q = naive_matmul(fs, p.at(prefix + ".wq"));
  const Matrix k = naive_matmul(stacked, p.at(prefix + ".wk"));
  const Matrix v = naive_matmul(stacked, p.at(prefix + ".wv"));
  Matrix out(fs.rows(), v.cols());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    std::vector<double> s(k.rows());
    double mx = -INFINITY, z = 0;
    for (std::size_t j = 0; j < k.rows(); ++j) {
      for (std::size_t c = 0; c < q.cols(); ++c) s[j] += q(i, c) * k(j, c);
      s[j] /= std::sqrt(static_cast<double>(q.cols()));
      mx = std::max(mx, s[j]);
    }
    for (double& x : s) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < k.rows(); ++j)
      for (std::size_t c = 0; c < v.cols(); ++c) out(i, c) += s[j] / z * v(j, c);
  }
  return out;
}

Matrix naive_collab_layer(const ModelParams& p, std::size_t index, const Matrix& fs, const Matrix& ft) {
  const std::string pre = "collab." + std::to_string(index);
  const Matrix h = ft + naive_cda(p, pre, fs, ft);
  return h + naive_mlp(p, pre + ".mlp", h);
}

}  // namespace

TEST_CASE("activation magnitude is the per-position channel mean") {
  CHECK(collab::activation_magnitude(Matrix(4, 3, 1.0)) == std::vector<double>(4, 1.0));
  CHECK(collab::activation_magnitude(Matrix{{2, 4}})[0] == 3.0);
  std::mt19937_64 rng(1);
  const Matrix f = random_matrix(rng, 64, 32);
  const std::vector<double> m = collab::activation_magnitude(f);
  for (std::size_t i = 0; i < 64; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < 32; ++c) s += f(i, c);
    CHECK(std::abs(m[i] - s / 32) <= 1e-12);
  }
}

TEST_CASE("target encoder matches a step-by-step composition") {
  DetectorConfig cfg;
  const ModelParams params = full_params(cfg, 2);
  std::mt19937_64 rng(3);
  const Matrix f = random_matrix(rng, 64, 32);
  ad::Tape tape;
  BoundParams bp(tape, params, false);
  const Matrix out =
      collab::target_encode(bp, cfg, tape.constant(f), bp.at("query_embed"), cfg.top_k, cfg.top_r).value();
  CHECK(out.rows() == 16);
  CHECK(out.cols() == 32);

  // Oracle: sort positions by mean activation, reconstruct from the SVD, attend, MLP.
  std::vector<std::size_t> order(64);
  std::iota(order.begin(), order.end(), 0);
  const std::vector<double> mag = collab::activation_magnitude(f);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mag[a] > mag[b]; });
  order.resize(cfg.top_k);
  const Matrix fa = gather_rows(f, order);
  const SvdResult s = svd(fa);
  Matrix recon(fa.rows(), fa.cols());
  for (std::size_t i = 0; i < fa.rows(); ++i)
    for (std::size_t j = 0; j < fa.cols(); ++j)
      for (std::size_t t = 0; t < cfg.top_r; ++t) recon(i, j) += s.u(i, t) * s.sigma[t] * s.vt(t, j);
  const Matrix q = naive_matmul(params.at("query_embed"), params.at("target_encoder.wq"));
  const Matrix k = naive_matmul(recon, params.at("target_encoder.wk"));
  const Matrix v = naive_matmul(recon, params.at("target_encoder.wv"));
  const Matrix expected = naive_mlp(params, "target_encoder.mlp", naive_matmul(naive_attention_weights(q, k), v));
  CHECK(max_abs_diff(out, expected) <= 1e-8);
}

TEST_CASE("reconstruction of already low-rank features is lossless") {
  std::mt19937_64 rng(4);
  const Matrix low = naive_matmul(random_matrix(rng, 50, 5), random_matrix(rng, 5, 32));
  ad::Tape tape;
  const Matrix recon = ad::truncated_reconstruct(tape.constant(low), 5).value();
  CHECK(max_abs_diff(recon, low) <= 1e-6);
}

TEST_CASE("target encoder rejects k and r out of range") {
  DetectorConfig cfg;
  const ModelParams params = full_params(cfg, 5);
  ad::Tape tape;
  BoundParams bp(tape, params, false);
  ad::Var f = tape.constant(Matrix(64, 32, 1.0));
  CHECK_THROWS_AS(collab::target_encode(bp, cfg, f, bp.at("query_embed"), 65, 5), ParameterError);
  CHECK_THROWS_AS(collab::target_encode(bp, cfg, f, bp.at("query_embed"), 0, 5), ParameterError);
  CHECK_THROWS_AS(collab::target_encode(bp, cfg, f, bp.at("query_embed"), 4, 5), ParameterError);
  CHECK_THROWS_AS(collab::target_encode(bp, cfg, f, bp.at("query_embed"), 50, 33), ParameterError);
}

TEST_CASE("cross-domain attention: duplication identity, row sums and loop oracle") {
  DetectorConfig cfg;
  std::mt19937_64 rng(6);
  for (int draw = 0; draw < 100; ++draw) {
    const ModelParams params = full_params(cfg, 100 + static_cast<std::uint64_t>(draw));
    ad::Tape tape;
    BoundParams bp(tape, params, false);
    const Matrix fs = random_matrix(rng, 16, 32, -2, 2);
    const Matrix dup = collab::cross_domain_attention(bp, "collab.0", tape.constant(fs), tape.constant(fs)).value();
    const Matrix q = naive_matmul(fs, params.at("collab.0.wq"));
    const Matrix k = naive_matmul(fs, params.at("collab.0.wk"));
    const Matrix single = naive_matmul(naive_attention_weights(q, k), naive_matmul(fs, params.at("collab.0.wv")));
    CHECK(max_abs_diff(dup, single) <= 1e-6);
    const Matrix per_half =
        collab::cross_domain_attention(bp, "collab.0", tape.constant(fs), tape.constant(fs), false).value();
    CHECK(max_abs_diff(per_half, single) <= 1e-6);

    const Matrix ft = random_matrix(rng, 16, 32, -2, 2);
    const Matrix out = collab::cross_domain_attention(bp, "collab.0", tape.constant(fs), tape.constant(ft)).value();
    CHECK(max_abs_diff(out, naive_cda(params, "collab.0", fs, ft)) <= 1e-10);
  }
  const ModelParams params = full_params(cfg, 7);
  const Matrix fs = random_matrix(rng, 16, 32), ft = random_matrix(rng, 16, 32);
  const Matrix w = naive_attention_weights(naive_matmul(fs, params.at("collab.1.wq")),
                                           naive_matmul(vstack(fs, ft), params.at("collab.1.wk")));
  CHECK(w.cols() == 32);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double s = 0;
    for (double v : w.row(i)) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
  ad::Tape tape;
  BoundParams bp(tape, params, false);
  CHECK_THROWS_AS(collab::cross_domain_attention(bp, "collab.0", tape.constant(Matrix(16, 32)),
                                                 tape.constant(Matrix(15, 32))),
                  ShapeError);
}

TEST_CASE("collab layer: composition oracle and zero-weight residual identity") {
  DetectorConfig cfg;
  ModelParams params = full_params(cfg, 8);
  std::mt19937_64 rng(9);
  const Matrix fs = random_matrix(rng, 16, 32), ft = random_matrix(rng, 16, 32);
  {
    ad::Tape tape;
    BoundParams bp(tape, params, false);
    const Matrix out = collab::collab_layer(bp, cfg, 1, tape.constant(fs), tape.constant(ft)).value();
    CHECK(out.rows() == 16);
    CHECK(out.cols() == 32);
    CHECK(max_abs_diff(out, naive_collab_layer(params, 1, fs, ft)) <= 1e-8);
  }
  for (auto& [name, m] : params)
    if (name.starts_with("collab.")) m = Matrix(m.rows(), m.cols());
  ad::Tape tape;
  BoundParams bp(tape, params, false);
  CHECK(collab::collab_layer(bp, cfg, 1, tape.constant(fs), tape.constant(ft)).value() == ft);
}

TEST_CASE("decode_with_collab with L = 0 is decode_plain bit for bit") {
  DetectorConfig cfg;
  const ModelParams params = full_params(cfg, 10);
  std::mt19937_64 rng(11);
  ad::Tape tape;
  BoundParams bp(tape, params, false);
  ad::Var seed = tape.constant(random_matrix(rng, 16, 32));
  ad::Var memory = tape.constant(random_matrix(rng, 64, 32));
  ad::Var t0 = tape.constant(random_matrix(rng, 16, 32));
  CHECK(collab::decode_with_collab(bp, cfg, seed, t0, memory, 0).value() == decode_plain(bp, cfg, seed, memory).value());
  CHECK_THROWS_AS(collab::decode_with_collab(bp, cfg, seed, t0, memory, 6), ConfigError);
}

TEST_CASE("decode_with_collab follows the scripted propagation") {
  for (bool gated : {true, false}) {
    DetectorConfig cfg;
    cfg.gated_prefix = gated;
    cfg.prefix_gate_init = 0.7;
    const ModelParams params = full_params(cfg, 12);
    std::mt19937_64 rng(13);
    const Matrix seed = random_matrix(rng, 16, 32), memory = random_matrix(rng, 64, 32), t0 = random_matrix(rng, 16, 32);
    ad::Tape tape;
    BoundParams bp(tape, params, false);
    const Matrix out =
        collab::decode_with_collab(bp, cfg, tape.constant(seed), tape.constant(t0), tape.constant(memory), 3).value();
    // Decoder 1 runs plain; collab layers 0..2 feed decoders 2..4 (indices 1..3); 5 and 6 run plain.
    Matrix x = naive_decoder_layer(params, 0, seed, memory);
    Matrix ft = t0;
    for (std::size_t l = 1; l < 6; ++l) {
      if (l <= 3) {
        ft = naive_collab_layer(params, l - 1, x, ft);
        const double g = gated ? params.at("collab." + std::to_string(l - 1) + ".gate")(0, 0) : 0.0;
        x = naive_decoder_layer(params, l, x, memory, &ft, gated ? &g : nullptr);
      } else {
        x = naive_decoder_layer(params, l, x, memory);
      }
    }
    INFO("gated " << gated);
    CHECK(max_abs_diff(out, x) <= 1e-8);
  }
}

TEST_CASE("zero-weight collab layers inject the initial target features as prefixes") {
  DetectorConfig cfg;
  ModelParams params = full_params(cfg, 14);
  for (auto& [name, m] : params)
    if (name.starts_with("collab.") && !name.ends_with(".gate")) m = Matrix(m.rows(), m.cols());
  std::mt19937_64 rng(15);
  const Matrix seed = random_matrix(rng, 16, 32), memory = random_matrix(rng, 64, 32), t0 = random_matrix(rng, 16, 32);
  ad::Tape tape;
  BoundParams bp(tape, params, false);
  const Matrix out =
      collab::decode_with_collab(bp, cfg, tape.constant(seed), tape.constant(t0), tape.constant(memory), 3).value();
  const double g = cfg.prefix_gate_init;
  Matrix x = seed;
  for (std::size_t l = 0; l < 6; ++l) x = naive_decoder_layer(params, l, x, memory, l >= 1 && l <= 3 ? &t0 : nullptr, &g);
  CHECK(max_abs_diff(out, x) <= 1e-8);
  const Matrix plain = decode_plain(bp, cfg, tape.constant(seed), tape.constant(memory)).value();
  CHECK(max_abs_diff(out, plain) > 1e-6);
}

TEST_CASE("closed prefix gates reproduce the plain decoder exactly") {
  DetectorConfig cfg;
  ModelParams params = full_params(cfg, 18);
  for (std::size_t l = 0; l < cfg.collab_layers; ++l) params.at("collab." + std::to_string(l) + ".gate")(0, 0) = 0.0;
  std::mt19937_64 rng(19);
  ad::Tape tape;
  BoundParams bp(tape, params, false);
  ad::Var seed = tape.constant(random_matrix(rng, 16, 32));
  ad::Var memory = tape.constant(random_matrix(rng, 64, 32));
  ad::Var t0 = tape.constant(random_matrix(rng, 16, 32));
  CHECK(collab::decode_with_collab(bp, cfg, seed, t0, memory, 3).value() == decode_plain(bp, cfg, seed, memory).value());
}

TEST_CASE("one training step gives every collab and target-encoder tensor a gradient") {
  DetectorConfig cfg;
  const ModelParams params = full_params(cfg, 16);
  std::mt19937_64 rng(17);
  Image img(3, 64, 64);
  std::uniform_real_distribution<double> u(0, 1);
  for (double& v : img.pixels) v = u(rng);
  std::vector<adapt::Example> batch{{&img, {Target{Box{0.4, 0.4, 0.2, 0.3}, 2}}}};
  const adapt::LossAndGrad lg = adapt::batch_loss_and_grad(params, cfg, batch, true, false);
  CHECK(lg.loss > 0);
  for (const std::string& name : collab::collab_param_names(params)) {
    double mx = 0;
    for (double v : lg.grads.at(name).flat()) mx = std::max(mx, std::abs(v));
    INFO(name);
    CHECK(mx > 0.0);
  }
  CHECK(collab::collab_param_names(params).size() == 7 + 8 * cfg.collab_layers);
}
