#pragma once

#include <span>
#include <string>
#include <vector>

#include "sfdet/bench/scene.hpp"
#include "sfdet/detector/box.hpp"
#include "sfdet/detector/config.hpp"
#include "sfdet/detector/params.hpp"

namespace sfdet::bench {

struct ScoredBox {
  Box box;
  double score = 0.0;
};

/// A percentage plus a flag raised when the metric had no ground truth.
struct MetricValue {
  double percent = 0.0;
  bool no_ground_truth = false;
};

/// Detections are visited by descending score (ties keep input order); each
/// claims the unmatched ground truth of its image with the highest IoU when
/// that IoU reaches `iou_thr`. Returns the true-positive flag per detection in
/// visiting order along with that order.
struct GreedyMatch {
  std::vector<std::pair<std::size_t, std::size_t>> order;  // (image, detection index)
  std::vector<bool> true_positive;
  std::size_t num_gt = 0;
};
GreedyMatch greedy_match(std::span<const std::vector<ScoredBox>> detections, std::span<const std::vector<Box>> gts,
                         double iou_thr);

/// All-point interpolated area under the precision–recall curve, in percent.
MetricValue average_precision(std::span<const std::vector<ScoredBox>> detections,
                              std::span<const std::vector<Box>> gts, double iou_thr);

/// Fraction of ground truth covered by greedily matched detections, in percent.
MetricValue u_recall(std::span<const std::vector<ScoredBox>> detections, std::span<const std::vector<Box>> gts,
                     double iou_thr);

/// Harmonic mean 2mu/(m+u); 0 when m+u = 0.
double h_score(double known_map, double u_rec);

/// Arithmetic mean of per-class APs; 0 for an empty list.
double mean_ap(std::span<const double> class_ap);

struct EvalConfig {
  double score_floor = 0.05;
  double iou_threshold = 0.5;
  std::size_t max_detections = 0;  // per image and class; 0 = no cap
  bool use_teacher = false;        // checkpoints carry a teacher next to the student
};

struct MetricsReport {
  std::vector<double> ap;  // per known class, percent
  double known_map = 0.0;
  double u_recall = 0.0;
  double h_score = 0.0;
  std::size_t images = 0;
  std::size_t gt_known = 0;
  std::size_t gt_unknown = 0;
  std::vector<std::string> warnings;
};

/// Detections of one image grouped by class: index c−1 for class c ∈ 1..K+1.
using ImageDetections = std::vector<std::vector<ScoredBox>>;

/// Threshold-and-cap detections from a forward pass of `params` on `image`.
ImageDetections detect(const ModelParams& params, const DetectorConfig& cfg, const Image& image, bool use_collab,
                       const EvalConfig& eval);

/// Metrics from precomputed detections; annotation classes > K count as unknown.
MetricsReport evaluate_detections(std::span<const ImageDetections> detections, std::span<const Scene> scenes,
                                  std::size_t num_known, const EvalConfig& eval);

/// Runs inference over `scenes` in parallel (collab path when `params` carry
/// collab tensors) and scores it.
MetricsReport evaluate(const ModelParams& params, const DetectorConfig& cfg, std::span<const Scene> scenes,
                       const EvalConfig& eval = {});

}  // namespace sfdet::bench
