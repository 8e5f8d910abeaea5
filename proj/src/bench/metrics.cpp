#include "sfdet/bench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sfdet/collab/collab.hpp"
#include "sfdet/detector/model.hpp"
#include "sfdet/numerics/errors.hpp"

namespace sfdet::bench {

GreedyMatch greedy_match(std::span<const std::vector<ScoredBox>> detections, std::span<const std::vector<Box>> gts,
                         double iou_thr) {
  if (detections.size() != gts.size()) throw ShapeError("detections and ground truth cover different image counts");
  if (!(iou_thr > 0.0 && iou_thr < 1.0)) throw ParameterError("iou threshold must lie in (0, 1)");
  GreedyMatch out;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    out.num_gt += gts[i].size();
    for (std::size_t j = 0; j < detections[i].size(); ++j) {
      if (!std::isfinite(detections[i][j].score)) throw ParameterError("non-finite detection score");
      out.order.emplace_back(i, j);
    }
  }
  std::stable_sort(out.order.begin(), out.order.end(), [&](const auto& a, const auto& b) {
    return detections[a.first][a.second].score > detections[b.first][b.second].score;
  });
  std::vector<std::vector<bool>> taken(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) taken[i].assign(gts[i].size(), false);
  for (const auto& [img, det] : out.order) {
    const Box& b = detections[img][det].box;
    double best = -1.0;
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < gts[img].size(); ++g) {
      if (taken[img][g]) continue;
      const double v = iou(b, gts[img][g]);
      if (v > best) {
        best = v;
        best_g = g;
      }
    }
    const bool tp = best >= iou_thr;
    if (tp) taken[img][best_g] = true;
    out.true_positive.push_back(tp);
  }
  return out;
}

MetricValue average_precision(std::span<const std::vector<ScoredBox>> detections,
                              std::span<const std::vector<Box>> gts, double iou_thr) {
  const GreedyMatch m = greedy_match(detections, gts, iou_thr);
  if (m.num_gt == 0) return MetricValue{0.0, true};
  const std::size_t n = m.true_positive.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += m.true_positive[i] ? 1 : 0;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(m.num_gt);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return MetricValue{100.0 * ap, false};
}

MetricValue u_recall(std::span<const std::vector<ScoredBox>> detections, std::span<const std::vector<Box>> gts,
                     double iou_thr) {
  const GreedyMatch m = greedy_match(detections, gts, iou_thr);
  if (m.num_gt == 0) return MetricValue{0.0, true};
  const auto matched = std::count(m.true_positive.begin(), m.true_positive.end(), true);
  return MetricValue{100.0 * static_cast<double>(matched) / static_cast<double>(m.num_gt), false};
}

double h_score(double known_map, double u_rec) {
  const double s = known_map + u_rec;
  return s == 0.0 ? 0.0 : 2.0 * known_map * u_rec / s;
}

double mean_ap(std::span<const double> class_ap) {
  if (class_ap.empty()) return 0.0;
  return std::accumulate(class_ap.begin(), class_ap.end(), 0.0) / static_cast<double>(class_ap.size());
}

ImageDetections detect(const ModelParams& params, const DetectorConfig& cfg, const Image& image, bool use_collab,
                       const EvalConfig& eval) {
  ad::Tape tape;
  BoundParams bp(tape, params, false);
  const DetectorOutput out = run_detector(bp, cfg, image, use_collab);
  const std::vector<Proposal> proposals = to_proposals(out.heads);
  ImageDetections dets(cfg.num_logits());
  for (const Proposal& p : proposals)
    for (std::size_t c = 0; c < cfg.num_logits(); ++c) {
      const double s = 1.0 / (1.0 + std::exp(-p.logits[c]));
      if (s >= eval.score_floor) dets[c].push_back(ScoredBox{p.box, s});
    }
  if (eval.max_detections > 0)
    for (auto& list : dets) {
      std::stable_sort(list.begin(), list.end(), [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
      if (list.size() > eval.max_detections) list.resize(eval.max_detections);
    }
  return dets;
}

MetricsReport evaluate_detections(std::span<const ImageDetections> detections, std::span<const Scene> scenes,
                                  std::size_t num_known, const EvalConfig& eval) {
  if (scenes.empty()) throw UsageError("evaluation needs at least one scene");
  if (detections.size() != scenes.size()) throw ShapeError("one detection set per scene required");
  MetricsReport report;
  report.images = scenes.size();
  auto collect = [&](std::size_t slot, auto&& is_class) {
    std::vector<std::vector<ScoredBox>> d(scenes.size());
    std::vector<std::vector<Box>> g(scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      if (slot < detections[i].size()) d[i] = detections[i][slot];
      for (const Annotation& a : scenes[i].annotations)
        if (is_class(a.cls)) g[i].push_back(a.box);
    }
    return std::pair{d, g};
  };
  for (std::size_t c = 1; c <= num_known; ++c) {
    auto [d, g] = collect(c - 1, [c](int cls) { return static_cast<std::size_t>(cls) == c; });
    for (const auto& v : g) report.gt_known += v.size();
    const MetricValue ap = average_precision(d, g, eval.iou_threshold);
    if (ap.no_ground_truth) report.warnings.push_back("class " + std::to_string(c) + " has no ground truth");
    report.ap.push_back(ap.percent);
  }
  report.known_map = mean_ap(report.ap);
  auto [d, g] = collect(num_known, [num_known](int cls) { return static_cast<std::size_t>(cls) > num_known; });
  for (const auto& v : g) report.gt_unknown += v.size();
  const MetricValue ur = u_recall(d, g, eval.iou_threshold);
  if (ur.no_ground_truth) report.warnings.push_back("no unknown ground truth");
  report.u_recall = ur.percent;
  report.h_score = h_score(report.known_map, report.u_recall);
  return report;
}

MetricsReport evaluate(const ModelParams& params, const DetectorConfig& cfg, std::span<const Scene> scenes,
                       const EvalConfig& eval) {
  if (scenes.empty()) throw UsageError("evaluation needs at least one scene");
  const bool use_collab = collab::has_collab_params(params, cfg);
  std::vector<ImageDetections> dets(scenes.size());
  const auto n = static_cast<std::ptrdiff_t>(scenes.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    dets[static_cast<std::size_t>(i)] = detect(params, cfg, scenes[static_cast<std::size_t>(i)].image, use_collab, eval);
  return evaluate_detections(dets, scenes, cfg.num_known_classes, eval);
}

}  // namespace sfdet::bench
