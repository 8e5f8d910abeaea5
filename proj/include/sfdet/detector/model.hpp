#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sfdet/detector/box.hpp"
#include "sfdet/detector/config.hpp"
#include "sfdet/detector/image.hpp"
#include "sfdet/detector/params.hpp"
#include "sfdet/numerics/autodiff.hpp"

namespace sfdet {

/// ModelParams placed on a tape, either as trainable leaves or as constants.
class BoundParams {
 public:
  BoundParams(ad::Tape& tape, const ModelParams& params, bool trainable);
  /// Wraps variables already on `tape` (used by gradient checks).
  BoundParams(ad::Tape& tape, std::map<std::string, ad::Var> vars) : tape_(&tape), vars_(std::move(vars)) {}

  ad::Var at(const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  ad::Tape& tape() const { return *tape_; }
  const std::map<std::string, ad::Var>& vars() const { return vars_; }

 private:
  ad::Tape* tape_;
  std::map<std::string, ad::Var> vars_;
};

/// Non-overlapping patches flattened to rows of (channel, dy, dx); rows follow
/// raster order of the patch grid.
Matrix patchify(const Image& image, const DetectorConfig& cfg);

/// Fixed 2-D sinusoidal codes, one row per patch position, `dim` columns.
Matrix positional_codes(std::size_t grid, std::size_t dim);

/// Patch flattening then linear projection: (h·w) × C.
ad::Var backbone(const BoundParams& p, const DetectorConfig& cfg, const Image& image);

ad::Var layer_norm(const BoundParams& p, const std::string& prefix, ad::Var x);
ad::Var mlp(const BoundParams& p, const std::string& prefix, ad::Var x);
/// softmax(q·kᵀ/√d) for already-projected queries and keys.
ad::Var attention_weights(ad::Var q, ad::Var k);
/// Single-head attention with projections prefix.{wq,wk,wv,wo}.
ad::Var attention(const BoundParams& p, const std::string& prefix, ad::Var query, ad::Var key, ad::Var value);

struct Encoded {
  ad::Var memory;  // (h·w) × D patch tokens after self-attention
  ad::Var seed;    // N_q × D, object queries pooled from memory
};

Encoded encode(const BoundParams& p, const DetectorConfig& cfg, ad::Var features);
/// As above with explicit positional codes (rows aligned with feature rows).
Encoded encode(const BoundParams& p, const DetectorConfig& cfg, ad::Var features, const Matrix& positions);

/// One pre-norm decoder layer: query self-attention, cross-attention to the
/// memory, MLP, each with a residual. Without `gate`, `prefix` rows (if
/// valid) are appended to the self-attention keys and values. With `gate`,
/// the queries attend to the prefix rows separately and that output is added
/// scaled by the 1×1 gate.
ad::Var decoder_layer(const BoundParams& p, const DetectorConfig& cfg, std::size_t layer, ad::Var x,
                      ad::Var memory, ad::Var prefix = {}, ad::Var gate = {});

/// Runs every decoder layer; each layer's output is appended to `layer_outputs` when given.
ad::Var decode_plain(const BoundParams& p, const DetectorConfig& cfg, ad::Var seed, ad::Var memory,
                     std::vector<ad::Var>* layer_outputs = nullptr);

struct HeadOutput {
  ad::Var features;  // normalized proposal features, N_q × D
  ad::Var logits;    // N_q × (K+1)
  ad::Var boxes;     // N_q × 4, sigmoid-activated (cx, cy, w, h)
};

HeadOutput heads(const BoundParams& p, const DetectorConfig& cfg, ad::Var decoded);

/// One query's detector output.
struct Proposal {
  std::vector<double> feature;
  std::vector<double> logits;
  Box box;
};

std::vector<Proposal> to_proposals(const HeadOutput& out);

}  // namespace sfdet
