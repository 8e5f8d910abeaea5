#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "sfdet/detector/losses.hpp"
#include "sfdet/detector/model.hpp"

namespace sfdet::paul {

enum class MaskMode { Or, And };

struct PaulConfig {
  double known_threshold = 0.3;
  double epsilon = 0.3;
  std::size_t p_max = 8;
  bool center = false;  // mean-center known features before estimating axes
  MaskMode mask_mode = MaskMode::Or;
};

struct LabeledBox {
  Box box;
  int cls = 1;  // 1..K known, K+1 unknown
  std::size_t proposal = 0;
};

/// Teacher supervision for one image.
struct PseudoLabelSet {
  std::vector<LabeledBox> known;
  std::vector<LabeledBox> unknown;

  std::vector<Target> targets() const;
  std::size_t size() const { return known.size() + unknown.size(); }
};

struct KnownAssignment {
  std::vector<LabeledBox> known;
  std::vector<std::size_t> remaining;  // proposal indices, ascending
};

/// Proposal i is known iff max_{c≤K} sigmoid(logit_c) ≥ threshold; its label
/// is the argmax known class and its predicted box.
KnownAssignment assign_known(std::span<const Proposal> proposals, std::size_t num_known, double threshold);

/// Orthonormal rows spanning the top right-singular subspace of known features.
struct PrincipalAxes {
  Matrix axes;                  // p × D
  std::vector<double> origin;   // subtracted before projecting (zeros unless centered)
  std::size_t count() const { return axes.rows(); }
};

/// nullopt signals degenerate input (fewer than two known features).
std::optional<PrincipalAxes> principal_axes(const Matrix& known_features, std::size_t p_max, bool center = false);

struct ObjectnessScores {
  std::vector<double> known;      // s_kn, one per known proposal
  std::vector<double> remaining;  // s_re, one per remaining proposal
  double delta = 0.0;             // mean of s_kn
};

/// Mean cosine similarity after projecting onto the axes: s_kn over the other
/// known features (divisor N_k − 1), s_re over all known features (divisor N_k).
/// nullopt when N_k < 2.
std::optional<ObjectnessScores> objectness_scores(const Matrix& known_features, const Matrix& remaining_features,
                                                  const PrincipalAxes& axes);

struct UnknownMasks {
  std::vector<bool> objectness;
  std::vector<bool> confidence;
  std::vector<bool> unknown;
};

/// M_obj = [s_re ≥ δ], M_conf = [c_un ≥ ε], M_unk = M_obj ∨ M_conf (∧ in And
/// mode). Without scores (degenerate known set) M_unk = M_conf.
UnknownMasks unknown_mask(const ObjectnessScores* scores, std::span<const double> unknown_conf, double epsilon,
                          MaskMode mode = MaskMode::Or);

std::vector<LabeledBox> assign_unknown(std::span<const Proposal> proposals, std::span<const std::size_t> remaining,
                                       const std::vector<bool>& mask, int unknown_class);

/// Everything computed for one image; serializable as a debug record.
struct PaulTrace {
  std::vector<std::size_t> known_indices;
  std::vector<std::size_t> remaining_indices;
  std::optional<ObjectnessScores> scores;
  std::vector<double> unknown_conf;
  UnknownMasks masks;
};

nlohmann::json trace_to_json(const PaulTrace& trace);

/// assign_known → principal_axes → objectness_scores → unknown_mask → assign_unknown.
PseudoLabelSet paul_pipeline(std::span<const Proposal> proposals, std::size_t num_known, const PaulConfig& cfg,
                             PaulTrace* trace = nullptr);

/// Baseline labeling: known assignment plus remaining proposals whose unknown
/// sigmoid reaches ε (M_conf alone).
PseudoLabelSet confidence_labels(std::span<const Proposal> proposals, std::size_t num_known, const PaulConfig& cfg,
                                 PaulTrace* trace = nullptr);

/// Keeps at most `max_count` unknown labels (0 keeps all): those whose
/// proposals rank highest by s_re, or by unknown confidence when the trace
/// has no objectness scores. Ties and survivors keep their original order.
void keep_top_unknown(PseudoLabelSet& labels, const PaulTrace& trace, std::size_t max_count);

/// Number of paul_pipeline invocations since process start. Thread-safe.
std::uint64_t invocation_count();

}  // namespace sfdet::paul
