#include "sfdet/detector/config.hpp"

#include <algorithm>
#include <string>

#include "sfdet/numerics/errors.hpp"

namespace sfdet {

void DetectorConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (patch == 0 || image_size == 0 || image_size % patch != 0) fail("image_size must be a positive multiple of patch");
  if (channels == 0 || model_dim == 0 || num_queries == 0 || mlp_hidden == 0) fail("dimensions must be positive");
  if (num_known_classes == 0) fail("num_known_classes must be positive");
  if (num_decoder_layers < collab_layers + 1) {
    fail("num_decoder_layers (" + std::to_string(num_decoder_layers) + ") must exceed collab_layers (" +
         std::to_string(collab_layers) + ")");
  }
  if (top_k > num_tokens()) fail("top_k exceeds the number of patch positions");
  if (top_r == 0 || top_r > std::min(effective_top_k(), channels)) fail("top_r must lie in [1, min(top_k, channels)]");
}

}  // namespace sfdet
