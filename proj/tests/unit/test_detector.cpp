#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "naive_model.hpp"
#include "sfdet/collab/collab.hpp"
#include "sfdet/detector/box.hpp"
#include "sfdet/detector/hungarian.hpp"
#include "sfdet/detector/losses.hpp"
#include "sfdet/detector/model.hpp"
#include "sfdet/numerics/errors.hpp"
#include "sfdet/numerics/linalg.hpp"
#include "support.hpp"

using namespace sfdet;
using namespace sfdet::testing;

namespace {

Box random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(0.1, 0.9), s(0.05, 0.5);
  return Box{c(rng), c(rng), s(rng), s(rng)};
}

Image random_image(std::mt19937_64& rng, std::size_t size) {
  Image img(3, size, size);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : img.pixels) v = u(rng);
  return img;
}

DetectorConfig small_config() {
  DetectorConfig cfg;
  cfg.image_size = 16;
  cfg.patch = 4;
  cfg.channels = 8;
  cfg.model_dim = 8;
  cfg.num_queries = 4;
  cfg.num_decoder_layers = 3;
  cfg.collab_layers = 2;
  cfg.top_k = 10;
  cfg.top_r = 3;
  cfg.mlp_hidden = 8;
  cfg.prefix_gate_init = 1.0;  // keeps target-encoder gradients well above finite-difference noise
  return cfg;
}

double brute_force_cost(const Matrix& cost) {
  std::vector<std::size_t> perm(cost.rows());
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double s = 0;
    for (std::size_t j = 0; j < cost.cols(); ++j) s += cost(perm[j], j);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("giou hand cases") {
  CHECK(giou(Box{0.5, 0.5, 0.4, 0.2}, Box{0.5, 0.5, 0.4, 0.2}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(giou(Box{0.25, 0.25, 0.5, 0.5}, Box{0.75, 0.75, 0.5, 0.5}) == doctest::Approx(-0.5).epsilon(1e-12));
  const Box outer{0.5, 0.5, 0.4, 0.4};
  const Box inner{0.5, 0.5, 0.4, 0.2};
  CHECK(iou(outer, inner) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(giou(outer, inner) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(iou(Box{0.5, 0.5, 0.0, 0.3}, outer) == 0.0);
}

TEST_CASE("giou is symmetric, bounded and 1 on the diagonal") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10000; ++i) {
    const Box a = random_box(rng), b = random_box(rng);
    const double g = giou(a, b);
    CHECK(g >= -1.0);
    CHECK(g <= 1.0);
    CHECK(g == doctest::Approx(giou(b, a)).epsilon(1e-12));
    CHECK(giou(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("giou gradient matches finite differences") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const Box a = random_box(rng), b = random_box(rng);
    std::array<double, 4> grad{};
    giou_with_grad(a, b, grad);
    for (int k = 0; k < 4; ++k) {
      Box hi = a, lo = a;
      double* fields_hi[] = {&hi.cx, &hi.cy, &hi.w, &hi.h};
      double* fields_lo[] = {&lo.cx, &lo.cy, &lo.w, &lo.h};
      *fields_hi[k] += 1e-6;
      *fields_lo[k] -= 1e-6;
      const double fd = (giou(hi, b) - giou(lo, b)) / 2e-6;
      CHECK(std::abs(grad[static_cast<std::size_t>(k)] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("focal loss closed forms") {
  const double ln2 = std::log(2.0);
  std::vector<double> zeros(4, 0.0);
  // Every class negative at p = 0.5: (1−α)·0.5²·ln2 each.
  CHECK(focal_loss(zeros, std::nullopt) == doctest::Approx(4 * 0.75 * 0.25 * ln2).epsilon(1e-10));
  // One positive at p = 0.5 contributes α·0.5²·ln2 instead.
  CHECK(focal_loss(zeros, 2) == doctest::Approx(3 * 0.75 * 0.25 * ln2 + 0.25 * 0.25 * ln2).epsilon(1e-10));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-4, 4);
  const FocalParams half{0.5, 0.0};
  for (int i = 0; i < 100; ++i) {
    std::vector<double> logits{u(rng), u(rng), u(rng), u(rng)};
    const int target = i % 5;  // 0 means no object
    double bce = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      const double p = 1.0 / (1.0 + std::exp(-logits[c]));
      bce -= static_cast<int>(c) + 1 == target ? std::log(p) : std::log(1 - p);
    }
    const auto t = target == 0 ? std::nullopt : std::optional<int>(target);
    CHECK(focal_loss(logits, t, half) == doctest::Approx(0.5 * bce).epsilon(1e-10));
  }

  std::vector<double> confident{40, -40, -40, -40};
  CHECK(focal_loss(confident, 1) < 1e-12);
  CHECK_THROWS_AS(focal_loss(zeros, 5), ParameterError);
  CHECK_THROWS_AS(focal_loss(zeros, 0), ParameterError);
}

TEST_CASE("hungarian hand cases") {
  Matrix diag{{0.1, 5, 5}, {5, 0.2, 5}, {5, 5, 0.3}};
  const Assignment a = hungarian_match(diag);
  CHECK(a.gt_to_pred == std::vector<std::size_t>{0, 1, 2});
  const Assignment b = hungarian_match(Matrix{{1, 2}, {2, 1}});
  CHECK(b.gt_to_pred == std::vector<std::size_t>{0, 1});
  CHECK(b.total_cost == 2.0);
  CHECK_THROWS_AS(hungarian_match(Matrix(2, 3, 1.0)), ParameterError);
  CHECK_THROWS_AS(hungarian_match(Matrix{{1.0, NAN}, {0, 0}}), ParameterError);
}

TEST_CASE("hungarian equals permutation brute force") {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    const Matrix cost = random_matrix(rng, 6, 6, -2, 3);
    const Assignment a = hungarian_match(cost);
    CHECK(a.total_cost == doctest::Approx(brute_force_cost(cost)).epsilon(1e-12));
    std::vector<std::size_t> sorted = a.gt_to_pred;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  }
  // Rectangular: more predictions than ground truths.
  for (int i = 0; i < 50; ++i) {
    const Matrix cost = random_matrix(rng, 6, 3);
    double best = INFINITY;
    for (std::size_t x = 0; x < 6; ++x)
      for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t z = 0; z < 6; ++z)
          if (x != y && y != z && x != z) best = std::min(best, cost(x, 0) + cost(y, 1) + cost(z, 2));
    CHECK(hungarian_match(cost).total_cost == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("detection loss properties") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    ad::Tape tape;
    const Matrix logits = random_matrix(rng, 8, 4, -3, 3);
    Matrix boxes(8, 4);
    for (std::size_t i = 0; i < 8; ++i) {
      const Box b = random_box(rng);
      boxes(i, 0) = b.cx, boxes(i, 1) = b.cy, boxes(i, 2) = b.w, boxes(i, 3) = b.h;
    }
    std::vector<Target> targets;
    for (int k = 0; k < 1 + trial % 4; ++k) targets.push_back(Target{random_box(rng), 1 + (trial + k) % 4});
    const DetectionLoss l = detection_loss(tape.constant(logits), tape.constant(boxes), targets);
    CHECK(l.total.value()(0, 0) >= 0.0);
    std::vector<Target> shuffled = targets;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const DetectionLoss s = detection_loss(tape.constant(logits), tape.constant(boxes), shuffled);
    CHECK(s.total.value()(0, 0) == doctest::Approx(l.total.value()(0, 0)).epsilon(1e-10));

    // No labels: the weighted sum of no-object focal terms.
    const DetectionLoss e = detection_loss(tape.constant(logits), tape.constant(boxes), {});
    double expected = 0;
    for (std::size_t i = 0; i < 8; ++i) expected += focal_loss(logits.row(i), std::nullopt);
    CHECK(e.total.value()(0, 0) == doctest::Approx(LossWeights{}.cls * expected).epsilon(1e-10));
  }
}

TEST_CASE("detection loss vanishes in the saturated exact-match limit") {
  ad::Tape tape;
  Matrix logits(3, 4, -60.0);
  Matrix boxes{{0.3, 0.3, 0.2, 0.2}, {0.7, 0.6, 0.3, 0.1}, {0.5, 0.5, 0.1, 0.1}};
  logits(0, 0) = 60.0;
  logits(1, 3) = 60.0;
  std::vector<Target> targets{{Box{0.7, 0.6, 0.3, 0.1}, 4}, {Box{0.3, 0.3, 0.2, 0.2}, 1}};
  const DetectionLoss l = detection_loss(tape.constant(logits), tape.constant(boxes), targets);
  CHECK(l.total.value()(0, 0) < 1e-12);
  CHECK(l.matching.gt_to_pred == std::vector<std::size_t>{1, 0});
}

TEST_CASE("backbone shape, linearity and determinism") {
  DetectorConfig cfg;
  std::mt19937_64 rng(8);
  ModelParams params = init_detector_params(cfg, rng);
  ad::Tape tape;
  BoundParams bp(tape, params, false);
  const Image img = random_image(rng, 64);
  const Matrix f = backbone(bp, cfg, img).value();
  CHECK(f.rows() == 64);
  CHECK(f.cols() == 32);
  CHECK(backbone(bp, cfg, img).value() == f);
  CHECK(backbone(bp, cfg, Image(3, 64, 64)).value() == Matrix(64, 32));  // bias is initialized to zero
  CHECK_THROWS_AS(backbone(bp, cfg, Image(3, 32, 32)), ShapeError);

  // Patch rows follow (channel, dy, dx) order in raster patch order.
  const Matrix patches = patchify(img, cfg);
  CHECK(patches(9, 0) == img.at(0, 8, 8));
  CHECK(patches(9, 64 + 8 * 2 + 3) == img.at(1, 10, 11));
}

TEST_CASE("encoder attention rows sum to one and seeds have N_q x D shape") {
  std::mt19937_64 rng(9);
  ad::Tape tape;
  const Matrix w = naive_attention_weights(random_matrix(rng, 16, 32, -2, 2), random_matrix(rng, 64, 32, -2, 2));
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double s = 0;
    for (double v : w.row(i)) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  const Matrix a =
      attention_weights(tape.constant(random_matrix(rng, 5, 8)), tape.constant(random_matrix(rng, 9, 8))).value();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0;
    for (double v : a.row(i)) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
  for (const DetectorConfig& cfg : {DetectorConfig{}, small_config()}) {
    ModelParams params = init_detector_params(cfg, rng);
    BoundParams bp(tape, params, false);
    const Encoded e = encode(bp, cfg, backbone(bp, cfg, random_image(rng, cfg.image_size)));
    CHECK(e.seed.rows() == cfg.num_queries);
    CHECK(e.seed.cols() == cfg.model_dim);
  }
}

TEST_CASE("token permutation with matching positions leaves the seed unchanged") {
  DetectorConfig cfg;
  std::mt19937_64 rng(10);
  ModelParams params = init_detector_params(cfg, rng);
  ad::Tape tape;
  BoundParams bp(tape, params, false);
  const Matrix f = random_matrix(rng, 64, 32);
  const Matrix pos = positional_codes(cfg.grid(), cfg.channels);
  std::vector<std::size_t> perm(64);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Matrix fp = gather_rows(f, perm), pp = gather_rows(pos, perm);
  const Encoded a = encode(bp, cfg, tape.constant(f), pos);
  const Encoded b = encode(bp, cfg, tape.constant(fp), pp);
  CHECK(max_abs_diff(a.seed.value(), b.seed.value()) <= 1e-6);
  CHECK(max_abs_diff(gather_rows(a.memory.value(), perm), b.memory.value()) <= 1e-6);
}

TEST_CASE("zero-weight decoder is the identity") {
  DetectorConfig cfg;
  std::mt19937_64 rng(11);
  ModelParams params = init_detector_params(cfg, rng);
  for (auto& [name, m] : params)
    if (name.starts_with("decoder.") && (name.ends_with(".wo") || name.ends_with(".w2") || name.ends_with(".b2")))
      m = Matrix(m.rows(), m.cols());
  ad::Tape tape;
  BoundParams bp(tape, params, false);
  const Matrix seed = random_matrix(rng, 16, 32);
  const Matrix out = decode_plain(bp, cfg, tape.constant(seed), tape.constant(random_matrix(rng, 64, 32))).value();
  CHECK(out == seed);
}

TEST_CASE("decoder matches a naive per-layer re-implementation") {
  DetectorConfig cfg;
  std::mt19937_64 rng(12);
  ModelParams params = init_detector_params(cfg, rng);
  ad::Tape tape;
  BoundParams bp(tape, params, false);
  const Matrix seed = random_matrix(rng, 16, 32), memory = random_matrix(rng, 64, 32);
  const Matrix out = decode_plain(bp, cfg, tape.constant(seed), tape.constant(memory)).value();
  Matrix x = seed;
  for (std::size_t l = 0; l < cfg.num_decoder_layers; ++l) x = naive_decoder_layer(params, l, x, memory);
  CHECK(max_abs_diff(out, x) <= 1e-10);
}

TEST_CASE("heads emit N_q proposals with boxes inside the unit square") {
  DetectorConfig cfg;
  std::mt19937_64 rng(13);
  ModelParams params = init_detector_params(cfg, rng);
  for (int i = 0; i < 5; ++i) {
    ad::Tape tape;
    BoundParams bp(tape, params, false);
    const Image img = random_image(rng, 64);
    const DetectorOutput out = run_detector(bp, cfg, img, false);
    const std::vector<Proposal> props = to_proposals(out.heads);
    CHECK(props.size() == cfg.num_queries);
    for (const Proposal& p : props) {
      CHECK(p.logits.size() == cfg.num_logits());
      CHECK(p.feature.size() == cfg.model_dim);
      for (double v : {p.box.cx, p.box.cy, p.box.w, p.box.h}) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
    }
    ad::Tape again;
    BoundParams bp2(again, params, false);
    CHECK(run_detector(bp2, cfg, img, false).heads.logits.value() == out.heads.logits.value());
  }
}

TEST_CASE("params round-trip through the float32 format bit-exactly") {
  DetectorConfig cfg;
  std::mt19937_64 rng(14);
  ModelParams params = init_detector_params(cfg, rng);
  collab::add_collab_params(params, cfg, rng);
  const auto dir = std::filesystem::temp_directory_path() / "sfdet_params_test";
  std::filesystem::create_directories(dir);
  write_params(params, dir / "a.json", dir / "a.bin", {{"note", "x"}});
  nlohmann::json meta;
  const ModelParams loaded = read_params(dir / "a.json", dir / "a.bin", &meta);
  CHECK(loaded == round_to_float(params));
  CHECK(meta.at("note") == "x");
  write_params(loaded, dir / "b.json", dir / "b.bin", {{"note", "x"}});
  CHECK(read_float_blob(dir / "a.bin") == read_float_blob(dir / "b.bin"));
  CHECK(read_params(dir / "b.json", dir / "b.bin") == loaded);
  CHECK_THROWS_AS(read_params(dir / "missing.json", dir / "a.bin"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("full detection loss gradient matches finite differences, collab path included") {
  const DetectorConfig cfg = small_config();
  std::mt19937_64 rng(15);
  ModelParams params = init_detector_params(cfg, rng);
  collab::add_collab_params(params, cfg, rng);
  const Image img = random_image(rng, cfg.image_size);
  const std::vector<Target> targets{{Box{0.3, 0.35, 0.25, 0.3}, 1}, {Box{0.7, 0.6, 0.3, 0.2}, 4}};
  std::vector<std::string> names;
  std::vector<Matrix> values;
  for (const auto& [name, m] : params) {
    names.push_back(name);
    values.push_back(m);
  }
  ad::ScalarFn f = [&](ad::Tape& tape, std::span<const ad::Var> vars) {
    std::map<std::string, ad::Var> bound;
    for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], vars[i]);
    BoundParams bp(tape, std::move(bound));
    const DetectorOutput out = run_detector(bp, cfg, img, true);
    return detection_loss(out.heads.logits, out.heads.boxes, targets).total;
  };
  const ad::GradCheckReport r = ad::grad_check_report(f, values, 1e-5);
  INFO("worst ", names[r.worst_param], "[", r.worst_index, "] analytic ", r.analytic, " numeric ", r.numeric);
  CHECK(r.max_relative_error <= 1e-4);
}
