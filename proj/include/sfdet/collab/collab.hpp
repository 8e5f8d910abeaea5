#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "sfdet/detector/model.hpp"

namespace sfdet::collab {

/// Per-position mean over channels of an (h·w) × C feature map.
std::vector<double> activation_magnitude(const Matrix& features);

/// Auxiliary target encoder: keep the k most activated positions, replace them
/// by their rank-r SVD reconstruction, cross-attend from the object queries
/// and refine with a two-layer MLP. Output N_q × D.
ad::Var target_encode(const BoundParams& p, const DetectorConfig& cfg, ad::Var features, ad::Var queries,
                      std::size_t k, std::size_t r);

/// Attention of source-dependent queries over the row-stacked source and
/// target features (2·N_q keys). Returns attn·v, N_q × D. Weights live at
/// `prefix`.{wq,wk,wv}.
ad::Var cross_domain_attention(const BoundParams& p, const std::string& prefix, ad::Var source, ad::Var target,
                               bool joint_softmax = true);

/// f_tˡ = h + MLP(h) with h = f_tˡ⁻¹ + cross_domain_attention(f_sˡ, f_tˡ⁻¹).
ad::Var collab_layer(const BoundParams& p, const DetectorConfig& cfg, std::size_t index, ad::Var source,
                     ad::Var target_prev);

/// Decoder propagation with collaborative layers feeding decoders 2..L+1 as
/// self-attention prefixes. L = 0 is exactly decode_plain.
ad::Var decode_with_collab(const BoundParams& p, const DetectorConfig& cfg, ad::Var seed, ad::Var target0,
                           ad::Var memory, std::size_t collab_layers,
                           std::vector<ad::Var>* layer_outputs = nullptr);

/// Adds target-encoder and collaborative-layer tensors (for cfg.collab_layers
/// layers, plus any missing up to `layers`) drawn U(±1/√fan_in).
void add_collab_params(ModelParams& params, const DetectorConfig& cfg, std::mt19937_64& rng);
bool has_collab_params(const ModelParams& params, const DetectorConfig& cfg);
std::vector<std::string> collab_param_names(const ModelParams& params);

/// Number of collab code-path entries (target_encode + collab_layer calls)
/// since process start. Thread-safe.
std::uint64_t invocation_count();

}  // namespace sfdet::collab

namespace sfdet {

struct DetectorOutput {
  HeadOutput heads;
  ad::Var features;  // backbone output
  ad::Var memory;
  ad::Var seed;
  ad::Var target0;  // invalid when the collab path is off
  ad::Var decoded;
  std::vector<ad::Var> layer_outputs;  // every decoder layer's output; the last equals `decoded`
};

/// Full detector forward pass: backbone → encode → decode (collab or plain) → heads.
DetectorOutput run_detector(const BoundParams& p, const DetectorConfig& cfg, const Image& image, bool use_collab);

}  // namespace sfdet
