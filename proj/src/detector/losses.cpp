#include "sfdet/detector/losses.hpp"

#include <cmath>

#include "sfdet/numerics/errors.hpp"

namespace sfdet {
namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Value and d/dx of the per-element focal term.
void focal_element(double x, bool positive, const FocalParams& fp, double& value, double& grad) {
  const double p = sigmoid(x);
  if (positive) {
    const double log_p = -softplus(-x);
    const double w = std::pow(1.0 - p, fp.gamma);
    value = -fp.alpha * w * log_p;
    grad = fp.alpha * w * (fp.gamma * p * log_p - (1.0 - p));
  } else {
    const double log_1mp = -softplus(x);
    const double w = std::pow(p, fp.gamma);
    value = -(1.0 - fp.alpha) * w * log_1mp;
    grad = (1.0 - fp.alpha) * w * (p - fp.gamma * (1.0 - p) * log_1mp);
  }
}

Box box_row(const Matrix& boxes, std::size_t r) { return Box{boxes(r, 0), boxes(r, 1), boxes(r, 2), boxes(r, 3)}; }

}  // namespace

double focal_loss(std::span<const double> logits, std::optional<int> target, const FocalParams& fp) {
  if (target && (*target < 1 || static_cast<std::size_t>(*target) > logits.size())) {
    throw ParameterError("class id " + std::to_string(*target) + " outside [1, " + std::to_string(logits.size()) + "]");
  }
  double total = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    double v = 0, g = 0;
    focal_element(logits[c], target && static_cast<std::size_t>(*target - 1) == c, fp, v, g);
    total += v;
  }
  return total;
}

ad::Var focal_loss_sum(ad::Var logits, std::span<const int> targets, const FocalParams& fp) {
  const Matrix& x = logits.value();
  if (targets.size() != x.rows()) throw ShapeError("focal targets length mismatch");
  Matrix grad(x.rows(), x.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (targets[r] > static_cast<int>(x.cols())) throw ParameterError("class id out of range");
    for (std::size_t c = 0; c < x.cols(); ++c) {
      double v = 0, g = 0;
      focal_element(x(r, c), targets[r] > 0 && static_cast<std::size_t>(targets[r] - 1) == c, fp, v, g);
      total += v;
      grad(r, c) = g;
    }
  }
  ad::Var in[] = {logits};
  return logits.tape()->record(Matrix(1, 1, total), in, [logits, grad = std::move(grad)](ad::Tape& tp, const Matrix& g) {
    tp.accumulate(logits, g(0, 0) * grad);
  });
}

ad::Var l1_loss_sum(ad::Var boxes, std::span<const std::size_t> pred, std::span<const Box> targets) {
  const Matrix& b = boxes.value();
  Matrix grad(b.rows(), b.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double t[4] = {targets[i].cx, targets[i].cy, targets[i].w, targets[i].h};
    for (std::size_t c = 0; c < 4; ++c) {
      const double d = b(pred[i], c) - t[c];
      total += std::abs(d);
      grad(pred[i], c) += d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
    }
  }
  ad::Var in[] = {boxes};
  return boxes.tape()->record(Matrix(1, 1, total), in, [boxes, grad = std::move(grad)](ad::Tape& tp, const Matrix& g) {
    tp.accumulate(boxes, g(0, 0) * grad);
  });
}

ad::Var giou_loss_sum(ad::Var boxes, std::span<const std::size_t> pred, std::span<const Box> targets) {
  const Matrix& b = boxes.value();
  Matrix grad(b.rows(), b.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    std::array<double, 4> g{};
    total += 1.0 - giou_with_grad(box_row(b, pred[i]), targets[i], g);
    for (std::size_t c = 0; c < 4; ++c) grad(pred[i], c) -= g[c];
  }
  ad::Var in[] = {boxes};
  return boxes.tape()->record(Matrix(1, 1, total), in, [boxes, grad = std::move(grad)](ad::Tape& tp, const Matrix& g) {
    tp.accumulate(boxes, g(0, 0) * grad);
  });
}

Matrix matching_cost(const Matrix& logits, const Matrix& boxes, std::span<const Target> targets, const LossWeights& w) {
  Matrix cost(logits.rows(), targets.size());
  for (std::size_t p = 0; p < logits.rows(); ++p) {
    const Box pb = box_row(boxes, p);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const Box& tb = targets[t].box;
      const double prob = sigmoid(logits(p, static_cast<std::size_t>(targets[t].cls - 1)));
      const double l1 = std::abs(pb.cx - tb.cx) + std::abs(pb.cy - tb.cy) + std::abs(pb.w - tb.w) + std::abs(pb.h - tb.h);
      cost(p, t) = -w.cls * prob + w.l1 * l1 - w.giou * giou(pb, tb);
    }
  }
  return cost;
}

DetectionLoss detection_loss(ad::Var logits, ad::Var boxes, std::span<const Target> targets, const LossWeights& w) {
  const Matrix& lv = logits.value();
  const Matrix& bv = boxes.value();
  if (lv.rows() != bv.rows() || bv.cols() != 4) throw ShapeError("logits/boxes disagree: " + lv.shape_string() + " vs " + bv.shape_string());
  for (const Target& t : targets) {
    if (t.cls < 1 || static_cast<std::size_t>(t.cls) > lv.cols()) throw ParameterError("target class out of range");
  }
  DetectionLoss out;
  out.matching = hungarian_match(matching_cost(lv, bv, targets, w));

  std::vector<int> cls_targets(lv.rows(), 0);
  std::vector<std::size_t> pred(targets.size());
  std::vector<Box> boxes_t(targets.size());
  for (std::size_t g = 0; g < targets.size(); ++g) {
    pred[g] = out.matching.gt_to_pred[g];
    cls_targets[pred[g]] = targets[g].cls;
    boxes_t[g] = targets[g].box;
  }
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, targets.size()));
  ad::Var cls = ad::scale(focal_loss_sum(logits, cls_targets, w.focal), norm);
  out.cls = cls.value()(0, 0);
  ad::Var total = ad::scale(cls, w.cls);
  if (!targets.empty()) {
    ad::Var l1 = ad::scale(l1_loss_sum(boxes, pred, boxes_t), norm);
    ad::Var gl = ad::scale(giou_loss_sum(boxes, pred, boxes_t), norm);
    out.l1 = l1.value()(0, 0);
    out.giou = gl.value()(0, 0);
    total = ad::add(total, ad::add(ad::scale(l1, w.l1), ad::scale(gl, w.giou)));
  }
  out.total = total;
  return out;
}

}  // namespace sfdet
