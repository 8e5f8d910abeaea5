#include "sfdet/collab/collab.hpp"

#include <atomic>
#include <cmath>

#include "sfdet/numerics/errors.hpp"
#include "sfdet/numerics/linalg.hpp"

namespace sfdet::collab {
namespace {

std::atomic<std::uint64_t> g_invocations{0};

std::string layer_prefix(std::size_t index) { return "collab." + std::to_string(index); }

}  // namespace

std::uint64_t invocation_count() { return g_invocations.load(std::memory_order_relaxed); }

std::vector<double> activation_magnitude(const Matrix& features) { return row_means(features); }

ad::Var target_encode(const BoundParams& p, const DetectorConfig& cfg, ad::Var features, ad::Var queries,
                      std::size_t k, std::size_t r) {
  g_invocations.fetch_add(1, std::memory_order_relaxed);
  const Matrix& f = features.value();
  require_shape(f, cfg.num_tokens(), cfg.channels, "target_encode features");
  if (k == 0 || k > f.rows()) throw ParameterError("top-k " + std::to_string(k) + " outside [1, " + std::to_string(f.rows()) + "]");
  if (r == 0 || r > std::min(k, f.cols())) throw ParameterError("top-r " + std::to_string(r) + " outside [1, min(k, C)]");

  const std::vector<std::size_t> idx = topk_indices(activation_magnitude(f), k);
  ad::Var selected = ad::gather_rows(features, idx);
  ad::Var recon = ad::truncated_reconstruct(selected, r);

  ad::Var q = ad::matmul(queries, p.at("target_encoder.wq"));
  ad::Var key = ad::matmul(recon, p.at("target_encoder.wk"));
  ad::Var value = ad::matmul(recon, p.at("target_encoder.wv"));
  ad::Var attended = ad::matmul(attention_weights(q, key), value);
  return mlp(p, "target_encoder.mlp", attended);
}

ad::Var cross_domain_attention(const BoundParams& p, const std::string& prefix, ad::Var source, ad::Var target,
                               bool joint_softmax) {
  if (!source.value().same_shape(target.value())) {
    throw ShapeError("cross-domain attention " + source.value().shape_string() + " vs " + target.value().shape_string());
  }
  ad::Var q = ad::matmul(source, p.at(prefix + ".wq"));
  if (joint_softmax) {
    ad::Var stacked = ad::vstack(source, target);
    ad::Var k = ad::matmul(stacked, p.at(prefix + ".wk"));
    ad::Var v = ad::matmul(stacked, p.at(prefix + ".wv"));
    return ad::matmul(attention_weights(q, k), v);
  }
  ad::Var ks = ad::matmul(source, p.at(prefix + ".wk"));
  ad::Var kt = ad::matmul(target, p.at(prefix + ".wk"));
  ad::Var vs = ad::matmul(source, p.at(prefix + ".wv"));
  ad::Var vt = ad::matmul(target, p.at(prefix + ".wv"));
  return ad::scale(ad::add(ad::matmul(attention_weights(q, ks), vs), ad::matmul(attention_weights(q, kt), vt)), 0.5);
}

ad::Var collab_layer(const BoundParams& p, const DetectorConfig& cfg, std::size_t index, ad::Var source,
                     ad::Var target_prev) {
  g_invocations.fetch_add(1, std::memory_order_relaxed);
  require_shape(source.value(), cfg.num_queries, cfg.model_dim, "collab source");
  require_shape(target_prev.value(), cfg.num_queries, cfg.model_dim, "collab target");
  const std::string pre = layer_prefix(index);
  ad::Var h = ad::add(target_prev, cross_domain_attention(p, pre, source, target_prev, cfg.joint_softmax));
  return ad::add(h, mlp(p, pre + ".mlp", h));
}

ad::Var decode_with_collab(const BoundParams& p, const DetectorConfig& cfg, ad::Var seed, ad::Var target0,
                           ad::Var memory, std::size_t collab_layers, std::vector<ad::Var>* layer_outputs) {
  if (collab_layers >= cfg.num_decoder_layers) {
    throw ConfigError("collab layers " + std::to_string(collab_layers) + " need more than that many decoder layers");
  }
  if (collab_layers == 0) return decode_plain(p, cfg, seed, memory, layer_outputs);
  ad::Var x = decoder_layer(p, cfg, 0, seed, memory);
  if (layer_outputs != nullptr) layer_outputs->push_back(x);
  ad::Var ft = target0;
  for (std::size_t l = 1; l < cfg.num_decoder_layers; ++l) {
    if (l <= collab_layers) {
      ft = collab_layer(p, cfg, l - 1, x, ft);
      ad::Var gate = cfg.gated_prefix ? p.at(layer_prefix(l - 1) + ".gate") : ad::Var{};
      x = decoder_layer(p, cfg, l, x, memory, ft, gate);
    } else {
      x = decoder_layer(p, cfg, l, x, memory);
    }
    if (layer_outputs != nullptr) layer_outputs->push_back(x);
  }
  return x;
}

void add_collab_params(ModelParams& params, const DetectorConfig& cfg, std::mt19937_64& rng) {
  const std::size_t c = cfg.channels, d = cfg.model_dim;
  auto add = [&](const std::string& name, std::size_t rows, std::size_t cols, bool bias) {
    if (params.contains(name)) return;
    params.insert(name, bias ? Matrix(rows, cols) : uniform_matrix(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)), rng));
  };
  add("target_encoder.wq", d, d, false);
  add("target_encoder.wk", c, d, false);
  add("target_encoder.wv", c, c, false);
  add("target_encoder.mlp.w1", c, d, false);
  add("target_encoder.mlp.b1", 1, d, true);
  add("target_encoder.mlp.w2", d, d, false);
  add("target_encoder.mlp.b2", 1, d, true);
  for (std::size_t l = 0; l < cfg.collab_layers; ++l) {
    const std::string pre = layer_prefix(l);
    add(pre + ".wq", d, d, false);
    add(pre + ".wk", d, d, false);
    add(pre + ".wv", d, d, false);
    add(pre + ".mlp.w1", d, d, false);
    add(pre + ".mlp.b1", 1, d, true);
    add(pre + ".mlp.w2", d, d, false);
    add(pre + ".mlp.b2", 1, d, true);
    if (cfg.gated_prefix && !params.contains(pre + ".gate")) params.insert(pre + ".gate", Matrix(1, 1, cfg.prefix_gate_init));
  }
}

bool has_collab_params(const ModelParams& params, const DetectorConfig& cfg) {
  if (!params.contains("target_encoder.wq")) return false;
  for (std::size_t l = 0; l < cfg.collab_layers; ++l) {
    if (!params.contains(layer_prefix(l) + ".wq")) return false;
    if (cfg.gated_prefix && !params.contains(layer_prefix(l) + ".gate")) return false;
  }
  return true;
}

std::vector<std::string> collab_param_names(const ModelParams& params) {
  std::vector<std::string> out;
  for (const auto& [name, _] : params)
    if (name.rfind("collab.", 0) == 0 || name.rfind("target_encoder.", 0) == 0) out.push_back(name);
  return out;
}

}  // namespace sfdet::collab

namespace sfdet {

DetectorOutput run_detector(const BoundParams& p, const DetectorConfig& cfg, const Image& image, bool use_collab) {
  DetectorOutput out;
  out.features = backbone(p, cfg, image);
  Encoded enc = encode(p, cfg, out.features);
  out.memory = enc.memory;
  out.seed = enc.seed;
  if (use_collab && cfg.collab_layers > 0) {
    out.target0 = collab::target_encode(p, cfg, out.features, p.at("query_embed"), cfg.effective_top_k(), cfg.top_r);
    out.decoded =
        collab::decode_with_collab(p, cfg, enc.seed, out.target0, enc.memory, cfg.collab_layers, &out.layer_outputs);
  } else {
    out.decoded = decode_plain(p, cfg, enc.seed, enc.memory, &out.layer_outputs);
  }
  out.heads = heads(p, cfg, out.decoded);
  return out;
}

}  // namespace sfdet
