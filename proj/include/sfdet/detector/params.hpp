#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "sfdet/detector/config.hpp"
#include "sfdet/numerics/matrix.hpp"

namespace sfdet {

/// Named tensor set of a detector. Names are unique; iteration order is the
/// lexicographic name order, which is also the serialization order.
class ModelParams {
 public:
  void insert(const std::string& name, Matrix value);
  const Matrix& at(const std::string& name) const;
  Matrix& at(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const;
  std::vector<std::string> names() const;
  /// True when both sets have identical names and shapes.
  bool same_structure(const ModelParams& other) const;

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  std::map<std::string, Matrix> tensors_;
};

/// Fresh detector weights (backbone, encoder, queries, decoder, heads).
ModelParams init_detector_params(const DetectorConfig& cfg, std::mt19937_64& rng);

/// Uniform(−bound, bound) matrix.
Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng);

// Serialization: a JSON manifest (name, shape, byte offset, byte length per
// tensor, plus free-form metadata) next to a flat little-endian float32 blob.
// Values are rounded to float32 on write; a loaded set re-serializes to
// byte-identical files.

void write_params(const ModelParams& params, const std::filesystem::path& manifest_path,
                  const std::filesystem::path& blob_path, const nlohmann::json& metadata = nlohmann::json::object());
ModelParams read_params(const std::filesystem::path& manifest_path, const std::filesystem::path& blob_path,
                        nlohmann::json* metadata = nullptr);

/// Rounds every entry to the nearest float32 value.
ModelParams round_to_float(const ModelParams& params);

void write_float_blob(const std::filesystem::path& path, const std::vector<float>& values);
std::vector<float> read_float_blob(const std::filesystem::path& path);

}  // namespace sfdet
