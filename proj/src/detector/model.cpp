#include "sfdet/detector/model.hpp"

#include <cmath>

#include "sfdet/numerics/errors.hpp"

namespace sfdet {

BoundParams::BoundParams(ad::Tape& tape, const ModelParams& params, bool trainable) : tape_(&tape) {
  for (const auto& [name, value] : params) vars_.emplace(name, trainable ? tape.parameter(value) : tape.constant(value));
}

ad::Var BoundParams::at(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ParameterError("no bound tensor named " + name);
  return it->second;
}

Matrix patchify(const Image& image, const DetectorConfig& cfg) {
  if (image.channels != 3 || image.height != cfg.image_size || image.width != cfg.image_size ||
      image.pixels.size() != 3 * cfg.image_size * cfg.image_size) {
    throw ShapeError("image " + std::to_string(image.channels) + "x" + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + " does not match configured size " + std::to_string(cfg.image_size));
  }
  const std::size_t g = cfg.grid(), ps = cfg.patch;
  Matrix out(g * g, cfg.patch_dim());
  for (std::size_t py = 0; py < g; ++py)
    for (std::size_t px = 0; px < g; ++px) {
      auto row = out.row(py * g + px);
      std::size_t k = 0;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t dy = 0; dy < ps; ++dy)
          for (std::size_t dx = 0; dx < ps; ++dx) row[k++] = image.at(c, py * ps + dy, px * ps + dx);
    }
  return out;
}

Matrix positional_codes(std::size_t grid, std::size_t dim) {
  // First half of the columns encodes the row, second half the column. Each
  // axis uses sin/cos pairs at frequencies spaced geometrically from one
  // cycle per image up to grid/2 cycles.
  Matrix out(grid * grid, dim);
  const std::size_t half = dim / 2;
  constexpr double two_pi = 6.283185307179586;
  for (std::size_t y = 0; y < grid; ++y)
    for (std::size_t x = 0; x < grid; ++x) {
      const double pos[2] = {(static_cast<double>(y) + 0.5) / static_cast<double>(grid) * two_pi,
                             (static_cast<double>(x) + 0.5) / static_cast<double>(grid) * two_pi};
      for (std::size_t c = 0; c < dim; ++c) {
        const std::size_t axis = c < half ? 0 : 1;
        const std::size_t local = axis == 0 ? c : c - half;
        const std::size_t pairs = ((axis == 0 ? half : dim - half) + 1) / 2;
        const double t = pairs > 1 ? static_cast<double>(local / 2) / static_cast<double>(pairs - 1) : 0.0;
        const double freq = std::pow(std::max(1.0, 0.5 * static_cast<double>(grid)), t);
        out(y * grid + x, c) = local % 2 == 0 ? std::sin(pos[axis] * freq) : std::cos(pos[axis] * freq);
      }
    }
  return out;
}

ad::Var backbone(const BoundParams& p, const DetectorConfig& cfg, const Image& image) {
  ad::Var patches = p.tape().constant(patchify(image, cfg));
  return ad::add_row(ad::matmul(patches, p.at("backbone.weight")), p.at("backbone.bias"));
}

ad::Var layer_norm(const BoundParams& p, const std::string& prefix, ad::Var x) {
  return ad::layer_norm(x, p.at(prefix + ".gain"), p.at(prefix + ".bias"));
}

ad::Var mlp(const BoundParams& p, const std::string& prefix, ad::Var x) {
  ad::Var h = ad::gelu(ad::add_row(ad::matmul(x, p.at(prefix + ".w1")), p.at(prefix + ".b1")));
  return ad::add_row(ad::matmul(h, p.at(prefix + ".w2")), p.at(prefix + ".b2"));
}

ad::Var attention_weights(ad::Var q, ad::Var k) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv));
}

ad::Var attention(const BoundParams& p, const std::string& prefix, ad::Var query, ad::Var key, ad::Var value) {
  ad::Var q = ad::matmul(query, p.at(prefix + ".wq"));
  ad::Var k = ad::matmul(key, p.at(prefix + ".wk"));
  ad::Var v = ad::matmul(value, p.at(prefix + ".wv"));
  return ad::matmul(ad::matmul(attention_weights(q, k), v), p.at(prefix + ".wo"));
}

Encoded encode(const BoundParams& p, const DetectorConfig& cfg, ad::Var features) {
  return encode(p, cfg, features, positional_codes(cfg.grid(), cfg.channels));
}

Encoded encode(const BoundParams& p, const DetectorConfig& cfg, ad::Var features, const Matrix& positions) {
  require_shape(features.value(), cfg.num_tokens(), cfg.channels, "encode features");
  require_shape(positions, cfg.num_tokens(), cfg.channels, "encode positions");
  ad::Var x = ad::add(features, p.tape().constant(positions));
  x = ad::add_row(ad::matmul(x, p.at("input_proj.weight")), p.at("input_proj.bias"));
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
    const std::string pre = "encoder." + std::to_string(i);
    ad::Var h = layer_norm(p, pre + ".ln1", x);
    x = ad::add(x, attention(p, pre + ".attn", h, h, h));
    x = ad::add(x, mlp(p, pre + ".mlp", layer_norm(p, pre + ".ln2", x)));
  }
  ad::Var queries = p.at("query_embed");
  require_shape(queries.value(), cfg.num_queries, cfg.model_dim, "query_embed");
  ad::Var seed = ad::add(queries, attention(p, "query_pool.attn", layer_norm(p, "query_pool.ln", queries), x, x));
  return Encoded{x, seed};
}

ad::Var decoder_layer(const BoundParams& p, const DetectorConfig& cfg, std::size_t layer, ad::Var x, ad::Var memory,
                      ad::Var prefix, ad::Var gate) {
  require_shape(x.value(), cfg.num_queries, cfg.model_dim, "decoder input");
  const std::string pre = "decoder." + std::to_string(layer);
  ad::Var qpos = p.at("query_embed");

  ad::Var h = layer_norm(p, pre + ".ln_self", x);
  ad::Var hq = ad::add(h, qpos);
  if (!prefix.valid()) {
    x = ad::add(x, attention(p, pre + ".self_attn", hq, hq, h));
  } else {
    require_shape(prefix.value(), cfg.num_queries, cfg.model_dim, "decoder prefix");
    ad::Var hp = layer_norm(p, pre + ".ln_self", prefix);
    if (gate.valid()) {
      x = ad::add(x, attention(p, pre + ".self_attn", hq, hq, h));
      x = ad::add(x, ad::scale_by(attention(p, pre + ".self_attn", hq, hp, hp), gate));
    } else {
      x = ad::add(x, attention(p, pre + ".self_attn", hq, ad::vstack(hq, hp), ad::vstack(h, hp)));
    }
  }
  h = layer_norm(p, pre + ".ln_cross", x);
  x = ad::add(x, attention(p, pre + ".cross_attn", ad::add(h, qpos), memory, memory));
  x = ad::add(x, mlp(p, pre + ".mlp", layer_norm(p, pre + ".ln_mlp", x)));
  return x;
}

ad::Var decode_plain(const BoundParams& p, const DetectorConfig& cfg, ad::Var seed, ad::Var memory,
                     std::vector<ad::Var>* layer_outputs) {
  ad::Var x = seed;
  for (std::size_t l = 0; l < cfg.num_decoder_layers; ++l) {
    x = decoder_layer(p, cfg, l, x, memory);
    if (layer_outputs != nullptr) layer_outputs->push_back(x);
  }
  return x;
}

HeadOutput heads(const BoundParams& p, const DetectorConfig& cfg, ad::Var decoded) {
  require_shape(decoded.value(), cfg.num_queries, cfg.model_dim, "heads input");
  HeadOutput out;
  out.features = layer_norm(p, "head_norm", decoded);
  out.logits = ad::add_row(ad::matmul(out.features, p.at("class_head.weight")), p.at("class_head.bias"));
  out.boxes = ad::sigmoid(ad::add_row(ad::matmul(out.features, p.at("box_head.weight")), p.at("box_head.bias")));
  return out;
}

std::vector<Proposal> to_proposals(const HeadOutput& out) {
  const Matrix& f = out.features.value();
  const Matrix& l = out.logits.value();
  const Matrix& b = out.boxes.value();
  std::vector<Proposal> props(f.rows());
  for (std::size_t i = 0; i < f.rows(); ++i) {
    props[i].feature.assign(f.row(i).begin(), f.row(i).end());
    props[i].logits.assign(l.row(i).begin(), l.row(i).end());
    props[i].box = Box{b(i, 0), b(i, 1), b(i, 2), b(i, 3)};
  }
  return props;
}

}  // namespace sfdet
