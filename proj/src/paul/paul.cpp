#include "sfdet/paul/paul.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "sfdet/numerics/errors.hpp"
#include "sfdet/numerics/kernels.hpp"
#include "sfdet/numerics/linalg.hpp"

namespace sfdet::paul {
namespace {

std::atomic<std::uint64_t> g_invocations{0};

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Rows of `features` minus origin, projected onto the axes: n × p.
Matrix project(const Matrix& features, const PrincipalAxes& axes) {
  Matrix shifted = features;
  for (std::size_t r = 0; r < shifted.rows(); ++r)
    for (std::size_t c = 0; c < shifted.cols(); ++c) shifted(r, c) -= axes.origin[c];
  return kernels::matmul_nt(shifted, axes.axes);
}

Matrix stack_features(std::span<const Proposal> proposals, std::span<const std::size_t> idx) {
  const std::size_t d = proposals.empty() ? 0 : proposals[0].feature.size();
  Matrix m(idx.size(), d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& f = proposals[idx[i]].feature;
    if (f.size() != d) throw ShapeError("proposal feature dimensions differ");
    std::copy(f.begin(), f.end(), m.row(i).begin());
  }
  return m;
}

}  // namespace

std::uint64_t invocation_count() { return g_invocations.load(std::memory_order_relaxed); }

std::vector<Target> PseudoLabelSet::targets() const {
  std::vector<Target> out;
  out.reserve(size());
  for (const auto& l : known) out.push_back(Target{l.box, l.cls});
  for (const auto& l : unknown) out.push_back(Target{l.box, l.cls});
  return out;
}

KnownAssignment assign_known(std::span<const Proposal> proposals, std::size_t num_known, double threshold) {
  KnownAssignment out;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const auto& logits = proposals[i].logits;
    if (logits.size() < num_known) throw ShapeError("proposal has fewer logits than known classes");
    std::size_t best = 0;
    for (std::size_t c = 1; c < num_known; ++c)
      if (logits[c] > logits[best]) best = c;
    if (num_known > 0 && sigmoid(logits[best]) >= threshold) {
      out.known.push_back(LabeledBox{proposals[i].box, static_cast<int>(best + 1), i});
    } else {
      out.remaining.push_back(i);
    }
  }
  return out;
}

std::optional<PrincipalAxes> principal_axes(const Matrix& known_features, std::size_t p_max, bool center) {
  const std::size_t n = known_features.rows(), d = known_features.cols();
  if (n < 2 || d == 0) return std::nullopt;
  PrincipalAxes out;
  out.origin.assign(d, 0.0);
  Matrix work = known_features;
  if (center) {
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0;
      for (std::size_t r = 0; r < n; ++r) s += work(r, c);
      out.origin[c] = s / static_cast<double>(n);
    }
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) work(r, c) -= out.origin[c];
  }
  const SvdResult dec = svd(work);
  const std::size_t p = std::min({p_max, n, d});
  out.axes = Matrix(p, d);
  for (std::size_t k = 0; k < p; ++k)
    for (std::size_t c = 0; c < d; ++c) out.axes(k, c) = dec.vt(k, c);
  return out;
}

std::optional<ObjectnessScores> objectness_scores(const Matrix& known_features, const Matrix& remaining_features,
                                                  const PrincipalAxes& axes) {
  const std::size_t nk = known_features.rows();
  if (nk < 2) return std::nullopt;
  if (remaining_features.rows() > 0 && remaining_features.cols() != known_features.cols()) {
    throw ShapeError("known and remaining features differ in width");
  }
  const Matrix pk = project(known_features, axes);
  const Matrix pr = remaining_features.rows() > 0 ? project(remaining_features, axes) : Matrix(0, axes.count());
  ObjectnessScores s;
  s.known.resize(nk);
  for (std::size_t i = 0; i < nk; ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < nk; ++j)
      if (j != i) acc += cosine_similarity(pk.row(i), pk.row(j));
    s.known[i] = acc / static_cast<double>(nk - 1);
  }
  s.remaining.resize(pr.rows());
  for (std::size_t i = 0; i < pr.rows(); ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < nk; ++j) acc += cosine_similarity(pr.row(i), pk.row(j));
    s.remaining[i] = acc / static_cast<double>(nk);
  }
  double total = 0;
  for (double v : s.known) total += v;
  s.delta = total / static_cast<double>(nk);
  return s;
}

UnknownMasks unknown_mask(const ObjectnessScores* scores, std::span<const double> unknown_conf, double epsilon,
                          MaskMode mode) {
  const std::size_t n = unknown_conf.size();
  if (scores && scores->remaining.size() != n) throw ShapeError("objectness and confidence lengths differ");
  UnknownMasks m;
  m.objectness.assign(n, false);
  m.confidence.assign(n, false);
  m.unknown.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    m.confidence[i] = unknown_conf[i] >= epsilon;
    if (scores) {
      m.objectness[i] = scores->remaining[i] >= scores->delta;
      m.unknown[i] = mode == MaskMode::Or ? (m.objectness[i] || m.confidence[i]) : (m.objectness[i] && m.confidence[i]);
    } else {
      m.unknown[i] = m.confidence[i];
    }
  }
  return m;
}

std::vector<LabeledBox> assign_unknown(std::span<const Proposal> proposals, std::span<const std::size_t> remaining,
                                       const std::vector<bool>& mask, int unknown_class) {
  if (mask.size() != remaining.size()) throw ShapeError("mask length differs from remaining proposals");
  std::vector<LabeledBox> out;
  for (std::size_t i = 0; i < remaining.size(); ++i)
    if (mask[i]) out.push_back(LabeledBox{proposals[remaining[i]].box, unknown_class, remaining[i]});
  return out;
}

namespace {

std::vector<double> unknown_confidence(std::span<const Proposal> proposals, std::span<const std::size_t> remaining,
                                       std::size_t num_known) {
  std::vector<double> conf(remaining.size());
  for (std::size_t i = 0; i < remaining.size(); ++i) {
    const auto& logits = proposals[remaining[i]].logits;
    if (logits.size() != num_known + 1) throw ShapeError("proposal logits must have K+1 entries");
    conf[i] = sigmoid(logits[num_known]);
  }
  return conf;
}

}  // namespace

PseudoLabelSet paul_pipeline(std::span<const Proposal> proposals, std::size_t num_known, const PaulConfig& cfg,
                             PaulTrace* trace) {
  g_invocations.fetch_add(1, std::memory_order_relaxed);
  KnownAssignment ka = assign_known(proposals, num_known, cfg.known_threshold);
  std::vector<std::size_t> known_idx;
  for (const auto& l : ka.known) known_idx.push_back(l.proposal);

  std::optional<ObjectnessScores> scores;
  if (known_idx.size() >= 2) {
    const Matrix fk = stack_features(proposals, known_idx);
    const Matrix fr = stack_features(proposals, ka.remaining);
    if (auto axes = principal_axes(fk, cfg.p_max, cfg.center)) scores = objectness_scores(fk, fr, *axes);
  }
  const std::vector<double> conf = unknown_confidence(proposals, ka.remaining, num_known);
  UnknownMasks masks = unknown_mask(scores ? &*scores : nullptr, conf, cfg.epsilon, cfg.mask_mode);

  PseudoLabelSet out;
  out.unknown = assign_unknown(proposals, ka.remaining, masks.unknown, static_cast<int>(num_known + 1));
  out.known = std::move(ka.known);
  if (trace) {
    trace->known_indices = known_idx;
    trace->remaining_indices = ka.remaining;
    trace->scores = scores;
    trace->unknown_conf = conf;
    trace->masks = std::move(masks);
  }
  return out;
}

PseudoLabelSet confidence_labels(std::span<const Proposal> proposals, std::size_t num_known, const PaulConfig& cfg,
                                 PaulTrace* trace) {
  KnownAssignment ka = assign_known(proposals, num_known, cfg.known_threshold);
  std::vector<double> conf = unknown_confidence(proposals, ka.remaining, num_known);
  UnknownMasks masks = unknown_mask(nullptr, conf, cfg.epsilon);
  PseudoLabelSet out;
  out.unknown = assign_unknown(proposals, ka.remaining, masks.unknown, static_cast<int>(num_known + 1));
  if (trace) {
    for (const LabeledBox& l : ka.known) trace->known_indices.push_back(l.proposal);
    trace->remaining_indices = ka.remaining;
    trace->scores.reset();
    trace->unknown_conf = std::move(conf);
    trace->masks = std::move(masks);
  }
  out.known = std::move(ka.known);
  return out;
}

void keep_top_unknown(PseudoLabelSet& labels, const PaulTrace& trace, std::size_t max_count) {
  if (max_count == 0 || labels.unknown.size() <= max_count) return;
  std::unordered_map<std::size_t, double> rank;
  for (std::size_t i = 0; i < trace.remaining_indices.size(); ++i)
    rank[trace.remaining_indices[i]] = trace.scores ? trace.scores->remaining[i] : trace.unknown_conf[i];
  auto rank_of = [&](const LabeledBox& l) {
    const auto it = rank.find(l.proposal);
    if (it == rank.end()) throw ParameterError("unknown label outside the trace's remaining proposals");
    return it->second;
  };
  std::vector<std::size_t> order(labels.unknown.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rank_of(labels.unknown[a]) > rank_of(labels.unknown[b]); });
  order.resize(max_count);
  std::sort(order.begin(), order.end());
  std::vector<LabeledBox> kept;
  for (std::size_t i : order) kept.push_back(labels.unknown[i]);
  labels.unknown = std::move(kept);
}

nlohmann::json trace_to_json(const PaulTrace& trace) {
  auto bools = [](const std::vector<bool>& v) {
    std::vector<int> out(v.begin(), v.end());
    return out;
  };
  nlohmann::json j{{"known_indices", trace.known_indices},
                   {"remaining_indices", trace.remaining_indices},
                   {"unknown_conf", trace.unknown_conf},
                   {"m_obj", bools(trace.masks.objectness)},
                   {"m_conf", bools(trace.masks.confidence)},
                   {"m_unk", bools(trace.masks.unknown)}};
  if (trace.scores) {
    j["s_kn"] = trace.scores->known;
    j["s_re"] = trace.scores->remaining;
    j["delta"] = trace.scores->delta;
  } else {
    j["s_kn"] = nlohmann::json::array();
    j["s_re"] = nlohmann::json::array();
    j["delta"] = nullptr;
  }
  return j;
}

}  // namespace sfdet::paul
