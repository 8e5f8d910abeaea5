#pragma once

#include <optional>
#include <span>
#include <vector>

#include "sfdet/detector/box.hpp"
#include "sfdet/detector/hungarian.hpp"
#include "sfdet/numerics/autodiff.hpp"

namespace sfdet {

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

/// Sigmoid focal loss of one logit row summed over classes. `target` is a
/// 1-based class id in [1, logits.size()] or nullopt for "no object".
double focal_loss(std::span<const double> logits, std::optional<int> target, const FocalParams& fp = {});

/// One supervision target: box plus 1-based class id (K+1 is unknown).
struct Target {
  Box box;
  int cls = 1;
};

struct LossWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
  FocalParams focal;
};

/// Matching cost between every proposal (row) and target (column):
/// −w_cls·sigmoid(logit_target) + w_l1·‖b − b̂‖₁ − w_giou·giou.
Matrix matching_cost(const Matrix& logits, const Matrix& boxes, std::span<const Target> targets,
                     const LossWeights& w = {});

struct DetectionLoss {
  ad::Var total;
  double cls = 0.0;   // normalized focal term
  double l1 = 0.0;    // normalized L1 term
  double giou = 0.0;  // normalized 1 − GIoU term
  Assignment matching;
};

/// L = w_cls·L_cls + w_l1·L_L1 + w_giou·L_giou after Hungarian matching. Each
/// term is summed over proposals (or matched pairs) and divided by
/// max(1, #targets). Unmatched proposals contribute the no-object focal term.
DetectionLoss detection_loss(ad::Var logits, ad::Var boxes, std::span<const Target> targets,
                             const LossWeights& w = {});

// Fused tape ops used by detection_loss; exposed for gradient checks.

/// Σ_i focal(logits_i, targets_i); targets_i ≤ 0 means no object.
ad::Var focal_loss_sum(ad::Var logits, std::span<const int> targets, const FocalParams& fp = {});
/// Σ over pairs of ‖boxes[pred] − target‖₁.
ad::Var l1_loss_sum(ad::Var boxes, std::span<const std::size_t> pred, std::span<const Box> targets);
/// Σ over pairs of 1 − giou(boxes[pred], target).
ad::Var giou_loss_sum(ad::Var boxes, std::span<const std::size_t> pred, std::span<const Box> targets);

}  // namespace sfdet
