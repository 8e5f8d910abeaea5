#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <random>
#include <vector>

#include "sfdet/detector/box.hpp"
#include "sfdet/detector/image.hpp"

namespace sfdet::bench {

enum class Domain { Source, Target };

const char* domain_name(Domain d);
Domain parse_domain(const std::string& name);

/// Shape classes. 1..3 are known (source) classes; 4..5 appear only in the
/// target domain and are evaluated as the single unknown class.
enum ShapeClass : int { kSquare = 1, kCircle = 2, kTriangle = 3, kCross = 4, kRing = 5 };
inline constexpr int kNumKnownShapes = 3;
inline constexpr int kNumShapes = 5;

struct Annotation {
  Box box;
  int cls = 1;  // original shape class, 1..5
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Scene {
  Image image;
  std::vector<Annotation> annotations;
  Domain domain = Domain::Source;
  friend bool operator==(const Scene&, const Scene&) = default;
};

struct GeneratorConfig {
  std::size_t image_size = 64;
  std::size_t min_objects = 1;
  std::size_t max_objects = 5;
  double min_size = 12.0;  // pixels
  double max_size = 24.0;
  double max_pair_iou = 0.3;
  // Relative class rates in the target domain (classes 1..5); the source
  // domain renormalizes over the known classes.
  std::vector<double> target_class_weights{1, 1, 1, 1, 1};
  double fog_min = 0.3;
  double fog_max = 0.5;
  double fog_gray = 0.7;
  double target_noise = 0.02;
};

/// Geometry of one drawn shape in pixel units (square bounding extent).
struct ShapeSpec {
  int cls = 1;
  double x0 = 0, y0 = 0;  // top-left of the extent
  double size = 16;
  double color[3] = {1, 1, 1};
};

/// Pixel membership mask (row-major, image_size²) of a shape, tested at pixel centers.
std::vector<bool> rasterize(const ShapeSpec& shape, std::size_t image_size);

/// Normalized box of the shape's geometric extent.
Box shape_box(const ShapeSpec& shape, std::size_t image_size);

/// Tight normalized bounds of the set pixels; nullopt for an empty mask.
std::optional<Box> mask_box(const std::vector<bool>& mask, std::size_t image_size);

/// Draws 1–5 shapes with pairwise IoU ≤ max_pair_iou over a textured
/// background. Target scenes may contain unknown shapes and are fogged and
/// noised. Pixel values are rounded to float32 precision.
Scene generate_scene(std::mt19937_64& rng, Domain domain, const GeneratorConfig& cfg = {});

/// Deterministic per-record generator seed.
std::uint64_t scene_seed(std::uint64_t base, std::uint64_t split, std::uint64_t index);

}  // namespace sfdet::bench
