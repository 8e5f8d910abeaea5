#include "sfdet/detector/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "sfdet/numerics/errors.hpp"

namespace sfdet {

void ModelParams::insert(const std::string& name, Matrix value) {
  if (!tensors_.emplace(name, std::move(value)).second) throw ParameterError("duplicate tensor name " + name);
}

const Matrix& ModelParams::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ParameterError("no tensor named " + name);
  return it->second;
}

Matrix& ModelParams::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ParameterError("no tensor named " + name);
  return it->second;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : tensors_) n += m.size();
  return n;
}

std::vector<std::string> ModelParams::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, _] : tensors_) out.push_back(name);
  return out;
}

bool ModelParams::same_structure(const ModelParams& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  auto a = tensors_.begin();
  auto b = other.tensors_.begin();
  for (; a != tensors_.end(); ++a, ++b) {
    if (a->first != b->first || !a->second.same_shape(b->second)) return false;
  }
  return true;
}

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = dist(rng);
  return m;
}

namespace {

Matrix xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  return uniform_matrix(fan_in, fan_out, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

void add_norm(ModelParams& p, const std::string& prefix, std::size_t dim) {
  p.insert(prefix + ".gain", Matrix(1, dim, 1.0));
  p.insert(prefix + ".bias", Matrix(1, dim, 0.0));
}

void add_attention(ModelParams& p, const std::string& prefix, std::size_t dim, std::mt19937_64& rng) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) p.insert(prefix + "." + w, xavier(dim, dim, rng));
}

void add_mlp(ModelParams& p, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
             std::mt19937_64& rng) {
  p.insert(prefix + ".w1", xavier(in, hidden, rng));
  p.insert(prefix + ".b1", Matrix(1, hidden));
  p.insert(prefix + ".w2", xavier(hidden, out, rng));
  p.insert(prefix + ".b2", Matrix(1, out));
}

}  // namespace

ModelParams init_detector_params(const DetectorConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t c = cfg.channels, d = cfg.model_dim;
  ModelParams p;
  p.insert("backbone.weight", xavier(cfg.patch_dim(), c, rng));
  p.insert("backbone.bias", Matrix(1, c));
  p.insert("input_proj.weight", xavier(c, d, rng));
  p.insert("input_proj.bias", Matrix(1, d));
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
    const std::string pre = "encoder." + std::to_string(i);
    add_norm(p, pre + ".ln1", d);
    add_attention(p, pre + ".attn", d, rng);
    add_norm(p, pre + ".ln2", d);
    add_mlp(p, pre + ".mlp", d, cfg.mlp_hidden, d, rng);
  }
  {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix q(cfg.num_queries, d);
    for (double& v : q.flat()) v = normal(rng);
    p.insert("query_embed", std::move(q));
  }
  add_norm(p, "query_pool.ln", d);
  add_attention(p, "query_pool.attn", d, rng);
  for (std::size_t l = 0; l < cfg.num_decoder_layers; ++l) {
    const std::string pre = "decoder." + std::to_string(l);
    add_norm(p, pre + ".ln_self", d);
    add_attention(p, pre + ".self_attn", d, rng);
    add_norm(p, pre + ".ln_cross", d);
    add_attention(p, pre + ".cross_attn", d, rng);
    add_norm(p, pre + ".ln_mlp", d);
    add_mlp(p, pre + ".mlp", d, cfg.mlp_hidden, d, rng);
  }
  add_norm(p, "head_norm", d);
  p.insert("class_head.weight", xavier(d, cfg.num_logits(), rng));
  // Prior of 1% foreground per class keeps the initial focal loss moderate.
  p.insert("class_head.bias", Matrix(1, cfg.num_logits(), -std::log(99.0)));
  p.insert("box_head.weight", xavier(d, 4, rng));
  Matrix box_bias(1, 4);
  box_bias(0, 2) = box_bias(0, 3) = -1.5;
  p.insert("box_head.bias", std::move(box_bias));
  return p;
}

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

}  // namespace

void write_float_blob(const std::filesystem::path& path, const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) words[i] = to_le(std::bit_cast<std::uint32_t>(values[i]));
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<float> read_float_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % 4 != 0) throw IoError(path.string() + ": size " + std::to_string(bytes) + " is not a multiple of 4");
  in.seekg(0);
  std::vector<std::uint32_t> words(bytes / 4);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("failed reading " + path.string());
  std::vector<float> out(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) out[i] = std::bit_cast<float>(to_le(words[i]));
  return out;
}

void write_params(const ModelParams& params, const std::filesystem::path& manifest_path,
                  const std::filesystem::path& blob_path, const nlohmann::json& metadata) {
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<float> blob;
  blob.reserve(params.scalar_count());
  for (const auto& [name, m] : params) {
    tensors.push_back({{"name", name},
                       {"shape", {m.rows(), m.cols()}},
                       {"offset", blob.size() * 4},
                       {"length", m.size() * 4}});
    for (double v : m.flat()) blob.push_back(static_cast<float>(v));
  }
  nlohmann::json manifest{{"format", "sfdet-params"},
                          {"version", 1},
                          {"dtype", "float32-le"},
                          {"blob", blob_path.filename().string()},
                          {"tensors", std::move(tensors)},
                          {"metadata", metadata}};
  write_float_blob(blob_path, blob);
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + manifest_path.string() + " for writing");
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + manifest_path.string());
}

ModelParams read_params(const std::filesystem::path& manifest_path, const std::filesystem::path& blob_path,
                        nlohmann::json* metadata) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "sfdet-params" || manifest.value("version", 0) != 1) {
    throw IoError(manifest_path.string() + ": not an sfdet-params v1 manifest");
  }
  const std::vector<float> blob = read_float_blob(blob_path);
  ModelParams params;
  for (const auto& t : manifest.at("tensors")) {
    const auto rows = t.at("shape").at(0).get<std::size_t>();
    const auto cols = t.at("shape").at(1).get<std::size_t>();
    const auto offset = t.at("offset").get<std::size_t>();
    if (offset % 4 != 0 || offset / 4 + rows * cols > blob.size()) {
      throw IoError(manifest_path.string() + ": tensor " + t.at("name").get<std::string>() + " out of blob range");
    }
    std::vector<double> data(rows * cols);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = blob[offset / 4 + i];
    params.insert(t.at("name").get<std::string>(), Matrix(rows, cols, std::move(data)));
  }
  if (metadata) *metadata = manifest.value("metadata", nlohmann::json::object());
  return params;
}

ModelParams round_to_float(const ModelParams& params) {
  ModelParams out = params;
  for (auto& [_, m] : out)
    for (double& v : m.flat()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

}  // namespace sfdet
