#include "sfdet/bench/scene.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sfdet/numerics/errors.hpp"

namespace sfdet::bench {
namespace {

constexpr double kBaseColors[kNumShapes][3] = {
    {0.85, 0.20, 0.20},  // square
    {0.20, 0.80, 0.25},  // circle
    {0.20, 0.30, 0.90},  // triangle
    {0.90, 0.85, 0.20},  // cross
    {0.85, 0.25, 0.85},  // ring
};

bool inside(const ShapeSpec& s, double px, double py) {
  const double u = (px - s.x0) / s.size;  // normalized [0,1) within the extent
  const double v = (py - s.y0) / s.size;
  if (u < 0 || u >= 1 || v < 0 || v >= 1) return false;
  const double du = u - 0.5, dv = v - 0.5;
  switch (s.cls) {
    case kSquare:
      return true;
    case kCircle:
      return du * du + dv * dv <= 0.25;
    case kTriangle:  // apex at top centre, base on the bottom edge
      return std::abs(du) <= 0.5 * v;
    case kCross:
      return std::abs(du) <= 1.0 / 6.0 || std::abs(dv) <= 1.0 / 6.0;
    case kRing: {
      const double r2 = du * du + dv * dv;
      return r2 <= 0.25 && r2 >= 0.09;
    }
    default:
      throw ParameterError("unknown shape class " + std::to_string(s.cls));
  }
}

}  // namespace

const char* domain_name(Domain d) { return d == Domain::Source ? "source" : "target"; }

Domain parse_domain(const std::string& name) {
  if (name == "source") return Domain::Source;
  if (name == "target") return Domain::Target;
  throw ParameterError("unknown domain " + name);
}

std::vector<bool> rasterize(const ShapeSpec& shape, std::size_t image_size) {
  std::vector<bool> mask(image_size * image_size, false);
  const auto lo_x = static_cast<std::size_t>(std::max(0.0, std::floor(shape.x0)));
  const auto lo_y = static_cast<std::size_t>(std::max(0.0, std::floor(shape.y0)));
  const auto hi_x = std::min(image_size, static_cast<std::size_t>(std::ceil(shape.x0 + shape.size)) + 1);
  const auto hi_y = std::min(image_size, static_cast<std::size_t>(std::ceil(shape.y0 + shape.size)) + 1);
  for (std::size_t y = lo_y; y < hi_y; ++y)
    for (std::size_t x = lo_x; x < hi_x; ++x)
      mask[y * image_size + x] = inside(shape, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
  return mask;
}

std::optional<Box> mask_box(const std::vector<bool>& mask, std::size_t image_size) {
  std::size_t x1 = image_size, y1 = image_size, x2 = 0, y2 = 0;
  bool any = false;
  for (std::size_t y = 0; y < image_size; ++y)
    for (std::size_t x = 0; x < image_size; ++x)
      if (mask[y * image_size + x]) {
        any = true;
        x1 = std::min(x1, x);
        y1 = std::min(y1, y);
        x2 = std::max(x2, x + 1);
        y2 = std::max(y2, y + 1);
      }
  if (!any) return std::nullopt;
  const double n = static_cast<double>(image_size);
  return Box::from_corners(static_cast<double>(x1) / n, static_cast<double>(y1) / n, static_cast<double>(x2) / n,
                           static_cast<double>(y2) / n);
}

Box shape_box(const ShapeSpec& s, std::size_t image_size) {
  const double n = static_cast<double>(image_size);
  return Box::from_corners(s.x0 / n, s.y0 / n, (s.x0 + s.size) / n, (s.y0 + s.size) / n);
}

std::uint64_t scene_seed(std::uint64_t base, std::uint64_t split, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::uint64_t out[1];
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out[0];
}

Scene generate_scene(std::mt19937_64& rng, Domain domain, const GeneratorConfig& cfg) {
  if (cfg.target_class_weights.size() != kNumShapes) throw ConfigError("target_class_weights needs 5 entries");
  const std::size_t n = cfg.image_size;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Scene scene;
  scene.domain = domain;
  scene.image = Image(3, n, n);

  // Background: gray base, two low-frequency sinusoids per channel, fine noise.
  const double base = 0.3 + 0.2 * unit(rng);
  double fx[3], fy[3], ph[3], amp[3];
  for (int c = 0; c < 3; ++c) {
    fx[c] = 1.0 + 3.0 * unit(rng);
    fy[c] = 1.0 + 3.0 * unit(rng);
    ph[c] = 6.283185307179586 * unit(rng);
    amp[c] = 0.03 + 0.04 * unit(rng);
  }
  std::normal_distribution<double> fine(0.0, 0.015);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double t = (fx[c] * static_cast<double>(x) + fy[c] * static_cast<double>(y)) / static_cast<double>(n);
        scene.image.at(c, y, x) = base + amp[c] * std::sin(6.283185307179586 * t + ph[c]) + fine(rng);
      }

  std::vector<double> weights = cfg.target_class_weights;
  if (domain == Domain::Source)
    for (int c = kNumKnownShapes; c < kNumShapes; ++c) weights[static_cast<std::size_t>(c)] = 0.0;
  std::discrete_distribution<int> pick_class(weights.begin(), weights.end());
  std::uniform_int_distribution<std::size_t> count(cfg.min_objects, cfg.max_objects);
  std::uniform_real_distribution<double> size_dist(cfg.min_size, cfg.max_size);
  std::uniform_real_distribution<double> jitter(-0.08, 0.08);

  const std::size_t wanted = count(rng);
  std::vector<std::pair<ShapeSpec, std::vector<bool>>> placed;
  for (std::size_t attempt = 0; placed.size() < wanted && attempt < 200; ++attempt) {
    ShapeSpec s;
    s.cls = pick_class(rng) + 1;
    s.size = std::round(size_dist(rng));
    std::uniform_real_distribution<double> pos(0.0, static_cast<double>(n) - s.size);
    s.x0 = std::round(pos(rng));
    s.y0 = std::round(pos(rng));
    for (int c = 0; c < 3; ++c) s.color[c] = std::clamp(kBaseColors[s.cls - 1][c] + jitter(rng), 0.0, 1.0);
    std::vector<bool> mask = rasterize(s, n);
    const Box b = *mask_box(mask, n);
    bool ok = true;
    for (const Annotation& a : scene.annotations) ok = ok && iou(b, a.box) <= cfg.max_pair_iou;
    if (!ok) continue;
    scene.annotations.push_back(Annotation{b, s.cls});
    placed.emplace_back(s, std::move(mask));
  }
  for (const auto& [s, mask] : placed)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        if (mask[y * n + x])
          for (std::size_t c = 0; c < 3; ++c) scene.image.at(c, y, x) = s.color[c];

  if (domain == Domain::Target) {
    std::uniform_real_distribution<double> fog(cfg.fog_min, cfg.fog_max);
    std::normal_distribution<double> noise(0.0, cfg.target_noise);
    const double a = fog(rng);
    for (double& v : scene.image.pixels) v = (1.0 - a) * v + a * cfg.fog_gray + noise(rng);
  }
  for (double& v : scene.image.pixels) v = static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0)));
  return scene;
}

}  // namespace sfdet::bench
