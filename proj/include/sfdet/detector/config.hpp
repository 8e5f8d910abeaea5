#pragma once

#include <cstddef>

namespace sfdet {

/// Shape configuration of the toy set-prediction detector.
struct DetectorConfig {
  std::size_t image_size = 64;
  std::size_t patch = 8;
  std::size_t channels = 32;        // backbone output channels C
  std::size_t model_dim = 32;       // D
  std::size_t num_queries = 16;     // N_q
  std::size_t num_decoder_layers = 6;
  std::size_t num_known_classes = 3;  // K; logits carry K+1 entries
  std::size_t collab_layers = 3;      // L
  std::size_t top_k = 50;             // 0 selects every position
  std::size_t top_r = 5;
  std::size_t encoder_layers = 1;
  std::size_t mlp_hidden = 64;
  // Cross-domain attention normalizes over all 2·N_q keys jointly; false uses
  // two N_q-way softmaxes (one per half), each weighted by ½.
  bool joint_softmax = true;
  // Decoder prefixes get their own softmax, added through a learnable scalar
  // gate starting at prefix_gate_init; false appends them to the self-attention
  // keys and values under one softmax.
  bool gated_prefix = true;
  double prefix_gate_init = 0.01;

  std::size_t grid() const { return image_size / patch; }
  std::size_t num_tokens() const { return grid() * grid(); }
  std::size_t patch_dim() const { return 3 * patch * patch; }
  std::size_t num_logits() const { return num_known_classes + 1; }
  std::size_t effective_top_k() const { return top_k == 0 ? num_tokens() : top_k; }

  /// Throws ConfigError when an invariant fails.
  void validate() const;
};

}  // namespace sfdet
