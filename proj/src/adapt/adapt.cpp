#include "sfdet/adapt/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sfdet/collab/collab.hpp"
#include "sfdet/detector/model.hpp"
#include "sfdet/numerics/errors.hpp"

namespace sfdet::adapt {

const char* method_name(Method m) {
  switch (m) {
    case Method::MtConf: return "mt-conf";
    case Method::CollabOnly: return "collab-only";
    case Method::PaulOnly: return "paul-only";
    case Method::Collapaul: return "collapaul";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::MtConf, Method::CollabOnly, Method::PaulOnly, Method::Collapaul})
    if (name == method_name(m)) return m;
  throw ConfigError("unknown method '" + name + "' (expected mt-conf, collab-only, paul-only or collapaul)");
}

TeacherStudent make_teacher_student(const ModelParams& init, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
  return TeacherStudent{init, init, alpha};
}

void ema_update(ModelParams& teacher, const ModelParams& student, double alpha) {
  if (!teacher.same_structure(student)) throw ParameterError("teacher and student tensor sets differ");
  for (auto& [name, t] : teacher) {
    const Matrix& s = student.at(name);
    auto tf = t.flat();
    auto sf = s.flat();
    for (std::size_t i = 0; i < tf.size(); ++i) tf[i] = alpha * tf[i] + (1.0 - alpha) * sf[i];
  }
}

Image flip_horizontal(const Image& image) {
  Image out = image;
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
  return out;
}

Box flip_box(const Box& b) { return Box{1.0 - b.cx, b.cy, b.w, b.h}; }

const char* augment_mode_name(AugmentMode m) {
  switch (m) {
    case AugmentMode::None: return "none";
    case AugmentMode::Weak: return "weak";
    case AugmentMode::Strong: return "strong";
  }
  return "?";
}

AugmentMode parse_augment_mode(const std::string& name) {
  for (AugmentMode m : {AugmentMode::None, AugmentMode::Weak, AugmentMode::Strong})
    if (name == augment_mode_name(m)) return m;
  throw ConfigError("unknown augmentation '" + name + "' (expected none, weak or strong)");
}

Augmented augment(const Image& image, const AugmentSpec& spec, std::mt19937_64& rng) {
  if (spec.mode == AugmentMode::None) return Augmented{image, false};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Augmented out;
  out.flipped = unit(rng) < spec.flip_prob;
  out.image = out.flipped ? flip_horizontal(image) : image;
  if (spec.mode == AugmentMode::Weak) return out;

  Image& img = out.image;
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  std::uniform_real_distribution<double> gain(spec.scale_lo, spec.scale_hi);
  for (std::size_t c = 0; c < img.channels; ++c) {
    const double g = gain(rng);
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) img.at(c, y, x) = img.at(c, y, x) * g + noise(rng);
  }
  if (spec.erase_size > 0 && spec.erase_size <= img.width && spec.erase_size <= img.height) {
    std::uniform_int_distribution<std::size_t> px(0, img.width - spec.erase_size);
    std::uniform_int_distribution<std::size_t> py(0, img.height - spec.erase_size);
    const std::size_t x0 = px(rng), y0 = py(rng);
    for (std::size_t c = 0; c < img.channels; ++c)
      for (std::size_t y = y0; y < y0 + spec.erase_size; ++y)
        for (std::size_t x = x0; x < x0 + spec.erase_size; ++x) img.at(c, y, x) = spec.erase_fill;
  }
  for (double& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
  return out;
}

double AdamConfig::learning_rate_for(const std::string& name) const {
  for (const auto& [prefix, scale] : lr_scales)
    if (name.starts_with(prefix)) return learning_rate * scale;
  return learning_rate;
}

void Adam::step(ModelParams& params, const ModelParams& grads) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (const auto& [name, g] : grads) {
    Matrix& w = params.at(name);
    require_shape(g, w.rows(), w.cols(), "Adam gradient");
    if (!m_.contains(name)) {
      m_.insert(name, Matrix(w.rows(), w.cols()));
      v_.insert(name, Matrix(w.rows(), w.cols()));
    }
    const double lr = cfg_.learning_rate_for(name);
    auto wf = w.flat();
    auto gf = g.flat();
    auto mf = m_.at(name).flat();
    auto vf = v_.at(name).flat();
    for (std::size_t i = 0; i < wf.size(); ++i) {
      mf[i] = cfg_.beta1 * mf[i] + (1.0 - cfg_.beta1) * gf[i];
      vf[i] = cfg_.beta2 * vf[i] + (1.0 - cfg_.beta2) * gf[i] * gf[i];
      wf[i] -= lr * (mf[i] / c1) / (std::sqrt(vf[i] / c2) + cfg_.eps);
    }
  }
}

void Adam::restore(std::size_t steps, ModelParams m, ModelParams v) {
  if (!m.same_structure(v)) throw ParameterError("optimizer moment sets differ");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

double clip_gradients(ModelParams& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.flat()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& v : g.flat()) v *= s;
  }
  return norm;
}

LossAndGrad batch_loss_and_grad(const ModelParams& params, const DetectorConfig& cfg, std::span<const Example> batch,
                                bool use_collab, bool aux_loss, const LossWeights& w) {
  if (batch.empty()) throw UsageError("empty batch");
  const auto n = static_cast<std::ptrdiff_t>(batch.size());
  std::vector<double> losses(batch.size()), detection(batch.size());
  std::vector<ModelParams> grads(batch.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const Example& ex = batch[static_cast<std::size_t>(i)];
    ad::Tape tape;
    BoundParams bp(tape, params, true);
    const DetectorOutput out = run_detector(bp, cfg, *ex.image, use_collab);
    const DetectionLoss dl = detection_loss(out.heads.logits, out.heads.boxes, ex.targets, w);
    ad::Var objective = dl.total;
    if (aux_loss)
      for (std::size_t l = 0; l + 1 < out.layer_outputs.size(); ++l) {
        const HeadOutput h = heads(bp, cfg, out.layer_outputs[l]);
        objective = ad::add(objective, detection_loss(h.logits, h.boxes, ex.targets, w).total);
      }
    tape.backward(objective);
    losses[static_cast<std::size_t>(i)] = objective.value()(0, 0);
    detection[static_cast<std::size_t>(i)] = dl.total.value()(0, 0);
    for (const auto& [name, var] : bp.vars()) grads[static_cast<std::size_t>(i)].insert(name, tape.grad(var));
  }
  LossAndGrad out;
  out.grads = std::move(grads[0]);
  out.loss = losses[0];
  out.detection = detection[0];
  for (std::size_t i = 1; i < batch.size(); ++i) {
    out.loss += losses[i];
    out.detection += detection[i];
    for (auto& [name, g] : out.grads) {
      auto dst = g.flat();
      auto src = grads[i].at(name).flat();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  out.detection *= inv;
  for (auto& [name, g] : out.grads)
    for (double& v : g.flat()) v *= inv;
  return out;
}

std::vector<Target> known_targets(const bench::Scene& scene, std::size_t num_known) {
  std::vector<Target> out;
  for (const bench::Annotation& a : scene.annotations)
    if (a.cls >= 1 && static_cast<std::size_t>(a.cls) <= num_known) out.push_back(Target{a.box, a.cls});
  return out;
}

PretrainResult pretrain_source(std::span<const bench::Scene> scenes, const DetectorConfig& cfg,
                               const PretrainConfig& train) {
  if (scenes.empty()) throw UsageError("pretraining needs at least one source scene");
  if (train.batch_size == 0) throw ConfigError("batch_size must be positive");
  std::mt19937_64 rng(train.seed);
  PretrainResult result;
  result.params = init_detector_params(cfg, rng);
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = train.learning_rate;
  Adam opt(adam_cfg);
  std::uniform_int_distribution<std::size_t> pick(0, scenes.size() - 1);
  AugmentSpec spec = train.augment == AugmentMode::Strong ? AugmentSpec::strong() : AugmentSpec::weak();
  spec.mode = train.augment;
  for (std::size_t step = 0; step < train.steps; ++step) {
    std::vector<Image> images;
    std::vector<Example> batch;
    images.reserve(train.batch_size);
    for (std::size_t b = 0; b < train.batch_size; ++b) {
      const bench::Scene& scene = scenes[pick(rng)];
      Augmented aug = augment(scene.image, spec, rng);
      std::vector<Target> targets = known_targets(scene, cfg.num_known_classes);
      if (aug.flipped)
        for (Target& t : targets) t.box = flip_box(t.box);
      images.push_back(std::move(aug.image));
      batch.push_back(Example{nullptr, std::move(targets)});
    }
    for (std::size_t b = 0; b < batch.size(); ++b) batch[b].image = &images[b];
    LossAndGrad lg = batch_loss_and_grad(result.params, cfg, batch, false, train.aux_loss);
    result.losses.push_back(lg.detection);
    clip_gradients(lg.grads, train.grad_clip);
    opt.step(result.params, lg.grads);
  }
  return result;
}

AdaptState init_adaptation(const ModelParams& source, const DetectorConfig& cfg, const TrainConfig& train) {
  cfg.validate();
  // Collab tensors draw from their own stream so every method sees the same batches and views.
  std::seed_seq init_seq{train.seed, std::uint64_t{0x636f6c6c}};
  std::mt19937_64 init_rng(init_seq);
  ModelParams init = source;
  if (uses_collab(train.method) && !collab::has_collab_params(init, cfg)) collab::add_collab_params(init, cfg, init_rng);
  std::mt19937_64 rng(train.seed);
  AdamConfig opt;
  opt.learning_rate = train.learning_rate;
  if (uses_collab(train.method)) opt.lr_scales = {{"collab.", train.collab_lr_scale}, {"target_encoder.", train.collab_lr_scale}};
  return AdaptState{make_teacher_student(init, train.alpha), Adam(opt), rng, 0};
}

paul::PseudoLabelSet teacher_labels(const ModelParams& teacher, const DetectorConfig& cfg, const Image& image,
                                    Method method, const paul::PaulConfig& paul_cfg, std::size_t max_unknown) {
  ad::Tape tape;
  BoundParams bp(tape, teacher, false);
  const DetectorOutput out = run_detector(bp, cfg, image, uses_collab(method));
  const std::vector<Proposal> proposals = to_proposals(out.heads);
  paul::PaulTrace trace;
  paul::PseudoLabelSet labels = uses_paul(method)
                                    ? paul::paul_pipeline(proposals, cfg.num_known_classes, paul_cfg, &trace)
                                    : paul::confidence_labels(proposals, cfg.num_known_classes, paul_cfg, &trace);
  paul::keep_top_unknown(labels, trace, max_unknown);
  return labels;
}

StepReport adaptation_step(std::span<const Image> batch, AdaptState& state, const DetectorConfig& cfg,
                           const TrainConfig& train, const paul::PaulConfig& paul_cfg) {
  if (batch.empty()) throw UsageError("empty adaptation batch");
  std::vector<std::uint64_t> seeds(batch.size());
  for (auto& s : seeds) s = state.rng();

  const auto n = static_cast<std::ptrdiff_t>(batch.size());
  std::vector<Image> views(batch.size());
  std::vector<Example> examples(batch.size());
  std::vector<std::size_t> known(batch.size()), unknown(batch.size());
  AugmentSpec photometric = AugmentSpec::strong();
  photometric.flip_prob = 0.0;  // geometry is shared with the teacher's weak view
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    std::mt19937_64 rng(seeds[k]);
    const Augmented weak = augment(batch[k], AugmentSpec::weak(), rng);
    const paul::PseudoLabelSet labels = teacher_labels(state.ts.teacher, cfg, weak.image, train.method, paul_cfg, train.max_unknown_labels);
    known[k] = labels.known.size();
    unknown[k] = labels.unknown.size();
    views[k] = augment(weak.image, photometric, rng).image;
    examples[k].targets = labels.targets();
  }
  StepReport report;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    examples[k].image = &views[k];
    report.known_labels += known[k];
    report.unknown_labels += unknown[k];
  }
  LossAndGrad lg = batch_loss_and_grad(state.ts.student, cfg, examples, uses_collab(train.method), train.aux_loss);
  clip_gradients(lg.grads, train.grad_clip);
  state.optimizer.step(state.ts.student, lg.grads);
  ema_update(state.ts.teacher, state.ts.student, state.ts.alpha);
  ++state.step;
  report.loss = lg.detection;
  return report;
}

AdaptResult adapt(const ModelParams& source, std::span<const bench::Scene> target_images, const DetectorConfig& cfg,
                  const TrainConfig& train, const paul::PaulConfig& paul_cfg) {
  if (target_images.empty()) throw UsageError("adaptation needs at least one target image");
  if (train.batch_size == 0) throw ConfigError("batch_size must be positive");
  AdaptResult result{init_adaptation(source, cfg, train), {}};
  std::uniform_int_distribution<std::size_t> pick(0, target_images.size() - 1);
  std::vector<Image> batch(train.batch_size);
  for (std::size_t step = 0; step < train.steps; ++step) {
    for (Image& img : batch) img = target_images[pick(result.state.rng)].image;
    result.history.push_back(adaptation_step(batch, result.state, cfg, train, paul_cfg));
  }
  return result;
}

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const std::string& suffix) {
  return stem.parent_path() / (stem.filename().string() + suffix);
}

}  // namespace

void save_params(const ModelParams& params, const std::filesystem::path& stem, const nlohmann::json& metadata) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  write_params(params, with_suffix(stem, ".json"), with_suffix(stem, ".bin"),
               metadata.is_null() ? nlohmann::json::object() : metadata);
}

ModelParams load_params(const std::filesystem::path& stem, nlohmann::json* metadata) {
  return read_params(with_suffix(stem, ".json"), with_suffix(stem, ".bin"), metadata);
}

void save_checkpoint(const AdaptState& state, const std::filesystem::path& stem, const nlohmann::json& metadata) {
  save_params(state.ts.student, stem, metadata);
  save_params(state.ts.teacher, with_suffix(stem, ".teacher"));
  save_params(state.optimizer.first_moment(), with_suffix(stem, ".adam_m"));
  save_params(state.optimizer.second_moment(), with_suffix(stem, ".adam_v"));
  std::ostringstream rng;
  rng << state.rng;
  const nlohmann::json sidecar{{"format", "sfdet-train-state"},
                               {"version", 1},
                               {"step", state.step},
                               {"alpha", state.ts.alpha},
                               {"optimizer",
                                {{"steps", state.optimizer.steps()},
                                 {"learning_rate", state.optimizer.config().learning_rate},
                                 {"beta1", state.optimizer.config().beta1},
                                 {"beta2", state.optimizer.config().beta2},
                                 {"eps", state.optimizer.config().eps},
                                 {"lr_scales", state.optimizer.config().lr_scales},
                                 {"first_moment", with_suffix(stem, ".adam_m").filename().string()},
                                 {"second_moment", with_suffix(stem, ".adam_v").filename().string()}}},
                               {"teacher", with_suffix(stem, ".teacher").filename().string()},
                               {"rng", rng.str()}};
  const auto path = with_suffix(stem, ".state.json");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << sidecar.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

AdaptState load_checkpoint(const std::filesystem::path& stem) {
  const auto path = with_suffix(stem, ".state.json");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json sidecar;
  try {
    sidecar = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (sidecar.value("format", "") != "sfdet-train-state") throw IoError(path.string() + ": not a training-state file");
  const auto& opt = sidecar.at("optimizer");
  AdamConfig acfg;
  acfg.learning_rate = opt.at("learning_rate").get<double>();
  acfg.beta1 = opt.at("beta1").get<double>();
  acfg.beta2 = opt.at("beta2").get<double>();
  acfg.eps = opt.at("eps").get<double>();
  if (opt.contains("lr_scales")) acfg.lr_scales = opt.at("lr_scales").get<std::vector<std::pair<std::string, double>>>();
  const auto dir = stem.parent_path();
  AdaptState state{TeacherStudent{load_params(stem), load_params(dir / sidecar.at("teacher").get<std::string>()),
                                  sidecar.at("alpha").get<double>()},
                   Adam(acfg), std::mt19937_64{}, sidecar.at("step").get<std::size_t>()};
  state.optimizer.restore(opt.at("steps").get<std::size_t>(),
                          load_params(dir / opt.at("first_moment").get<std::string>()),
                          load_params(dir / opt.at("second_moment").get<std::string>()));
  std::istringstream rng(sidecar.at("rng").get<std::string>());
  rng >> state.rng;
  return state;
}

}  // namespace sfdet::adapt
