#include "sfdet/bench/dataset.hpp"

#include <fstream>

#include "sfdet/bench/config.hpp"
#include "sfdet/detector/params.hpp"
#include "sfdet/numerics/errors.hpp"

namespace sfdet::bench {
namespace {

enum Split : std::uint64_t { kSourceTrain = 0, kTargetTrain = 1, kTargetEval = 2 };
constexpr const char* kSplitNames[] = {"source_train", "target_train", "target_eval"};

std::vector<Scene> generate_split(const DatasetConfig& cfg, Split split, std::size_t count) {
  std::vector<Scene> out(count);
  const Domain domain = split == kSourceTrain ? Domain::Source : Domain::Target;
  const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(scene_seed(cfg.seed, split, static_cast<std::uint64_t>(i)));
    out[static_cast<std::size_t>(i)] = generate_scene(rng, domain, cfg.generator);
  }
  return out;
}

}  // namespace

Dataset generate_dataset(const DatasetConfig& cfg) {
  Dataset d;
  d.config = cfg;
  d.source_train = generate_split(cfg, kSourceTrain, cfg.source_train);
  d.target_train = generate_split(cfg, kTargetTrain, cfg.target_train);
  d.target_eval = generate_split(cfg, kTargetEval, cfg.target_eval);
  return d;
}

nlohmann::json write_dataset(const Dataset& data, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<float> blob;
  nlohmann::json records = nlohmann::json::array();
  const std::vector<Scene>* splits[] = {&data.source_train, &data.target_train, &data.target_eval};
  for (std::size_t s = 0; s < 3; ++s)
    for (const Scene& scene : *splits[s]) {
      nlohmann::json ann = nlohmann::json::array();
      for (const Annotation& a : scene.annotations)
        ann.push_back({{"cls", a.cls}, {"box", {a.box.cx, a.box.cy, a.box.w, a.box.h}}});
      records.push_back({{"split", kSplitNames[s]},
                         {"domain", domain_name(scene.domain)},
                         {"offset", blob.size() * 4},
                         {"length", scene.image.pixels.size() * 4},
                         {"annotations", std::move(ann)}});
      for (double v : scene.image.pixels) blob.push_back(static_cast<float>(v));
    }
  const std::size_t size = data.config.generator.image_size;
  nlohmann::json manifest{{"format", "sfdet-dataset"},
                          {"version", 1},
                          {"images", "images.bin"},
                          {"dtype", "float32-le"},
                          {"layout", "CHW"},
                          {"channels", 3},
                          {"height", size},
                          {"width", size},
                          {"config", to_json(data.config)},
                          {"records", std::move(records)}};
  write_float_blob(out_dir / "images.bin", blob);
  const auto path = out_dir / "manifest.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << manifest.dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
  return manifest;
}

nlohmann::json render_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
  return write_dataset(generate_dataset(cfg), out_dir);
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " (run gen-data first)");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "sfdet-dataset" || manifest.value("version", 0) != 1)
    throw IoError(path.string() + ": not an sfdet-dataset v1 manifest");
  Dataset d;
  d.config = dataset_config_from_json(manifest.at("config"));
  const std::vector<float> blob = read_float_blob(dir / manifest.at("images").get<std::string>());
  const auto c = manifest.at("channels").get<std::size_t>();
  const auto h = manifest.at("height").get<std::size_t>();
  const auto w = manifest.at("width").get<std::size_t>();
  std::size_t expected_offset = 0;
  for (const auto& r : manifest.at("records")) {
    const auto offset = r.at("offset").get<std::size_t>();
    const auto length = r.at("length").get<std::size_t>();
    if (offset != expected_offset || length != c * h * w * 4 || (offset + length) / 4 > blob.size())
      throw IoError(path.string() + ": record offsets are inconsistent with images blob");
    expected_offset = offset + length;
    Scene scene;
    scene.domain = parse_domain(r.at("domain").get<std::string>());
    scene.image = Image(c, h, w);
    for (std::size_t i = 0; i < scene.image.pixels.size(); ++i) scene.image.pixels[i] = blob[offset / 4 + i];
    for (const auto& a : r.at("annotations")) {
      const auto& b = a.at("box");
      const int cls = a.at("cls").get<int>();
      if (cls < 1 || cls > kNumShapes) throw IoError(path.string() + ": annotation class out of range");
      scene.annotations.push_back(
          Annotation{Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()},
                     cls});
    }
    const std::string split = r.at("split").get<std::string>();
    if (split == kSplitNames[0]) d.source_train.push_back(std::move(scene));
    else if (split == kSplitNames[1]) d.target_train.push_back(std::move(scene));
    else if (split == kSplitNames[2]) d.target_eval.push_back(std::move(scene));
    else throw IoError(path.string() + ": unknown split " + split);
  }
  return d;
}

}  // namespace sfdet::bench
