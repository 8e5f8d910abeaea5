#include "sfdet/bench/config.hpp"

#include <fstream>

#include "sfdet/bench/json_fields.hpp"
#include "sfdet/numerics/errors.hpp"

namespace sfdet::bench {

using nlohmann::json;

json to_json(const GeneratorConfig& c) {
  return {{"image_size", c.image_size},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"min_size", c.min_size},
          {"max_size", c.max_size},
          {"max_pair_iou", c.max_pair_iou},
          {"target_class_weights", c.target_class_weights},
          {"fog_min", c.fog_min},
          {"fog_max", c.fog_max},
          {"fog_gray", c.fog_gray},
          {"target_noise", c.target_noise}};
}

json to_json(const DatasetConfig& c) {
  return {{"seed", c.seed},
          {"source_train", c.source_train},
          {"target_train", c.target_train},
          {"target_eval", c.target_eval},
          {"generator", to_json(c.generator)}};
}

json to_json(const DetectorConfig& c) {
  return {{"image_size", c.image_size},
          {"patch", c.patch},
          {"channels", c.channels},
          {"model_dim", c.model_dim},
          {"num_queries", c.num_queries},
          {"num_decoder_layers", c.num_decoder_layers},
          {"num_known_classes", c.num_known_classes},
          {"collab_layers", c.collab_layers},
          {"top_k", c.top_k},
          {"top_r", c.top_r},
          {"encoder_layers", c.encoder_layers},
          {"mlp_hidden", c.mlp_hidden},
          {"joint_softmax", c.joint_softmax},
          {"gated_prefix", c.gated_prefix},
          {"prefix_gate_init", c.prefix_gate_init}};
}

json to_json(const adapt::PretrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"steps", c.steps},         {"batch_size", c.batch_size},
          {"seed", c.seed},                   {"grad_clip", c.grad_clip}, {"augment", adapt::augment_mode_name(c.augment)},
          {"aux_loss", c.aux_loss}};
}

json to_json(const adapt::TrainConfig& c) {
  return {{"alpha", c.alpha},
          {"learning_rate", c.learning_rate},
          {"steps", c.steps},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"method", adapt::method_name(c.method)},
          {"grad_clip", c.grad_clip},
          {"aux_loss", c.aux_loss},
          {"collab_lr_scale", c.collab_lr_scale},
          {"max_unknown_labels", c.max_unknown_labels}};
}

json to_json(const paul::PaulConfig& c) {
  return {{"known_threshold", c.known_threshold},
          {"epsilon", c.epsilon},
          {"p_max", c.p_max},
          {"center", c.center},
          {"mask_mode", c.mask_mode == paul::MaskMode::Or ? "or" : "and"}};
}

json to_json(const EvalConfig& c) {
  return {{"score_floor", c.score_floor},
          {"iou_threshold", c.iou_threshold},
          {"max_detections", c.max_detections},
          {"use_teacher", c.use_teacher}};
}

json to_json(const ExperimentConfig& c) {
  return {{"data", to_json(c.data)},
          {"detector", to_json(c.detector)},
          {"pretrain", to_json(c.pretrain)},
          {"train", to_json(c.train)},
          {"paul", to_json(c.paul)},
          {"eval", to_json(c.eval)},
          {"run",
           {{"seeds", c.run.seeds},
            {"data_dir", c.run.data_dir},
            {"source_ckpt", c.run.source_ckpt},
            {"cache_dir", c.run.cache_dir}}}};
}

namespace {

GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig c;
  FieldReader r(j, "data.generator");
  r.read("image_size", c.image_size);
  r.read("min_objects", c.min_objects);
  r.read("max_objects", c.max_objects);
  r.read("min_size", c.min_size);
  r.read("max_size", c.max_size);
  r.read("max_pair_iou", c.max_pair_iou);
  r.read("target_class_weights", c.target_class_weights);
  r.read("fog_min", c.fog_min);
  r.read("fog_max", c.fog_max);
  r.read("fog_gray", c.fog_gray);
  r.read("target_noise", c.target_noise);
  r.finish();
  if (c.min_objects < 1 || c.min_objects > c.max_objects) throw ConfigError("data.generator: bad object count range");
  if (c.target_class_weights.size() != kNumShapes) throw ConfigError("data.generator.target_class_weights needs 5 entries");
  if (!(c.min_size >= 4 && c.min_size <= c.max_size && c.max_size < static_cast<double>(c.image_size)))
    throw ConfigError("data.generator: bad object size range");
  return c;
}

adapt::PretrainConfig pretrain_from_json(const json& j) {
  adapt::PretrainConfig c;
  FieldReader r(j, "pretrain");
  r.read("learning_rate", c.learning_rate);
  r.read("steps", c.steps);
  r.read("batch_size", c.batch_size);
  r.read("seed", c.seed);
  r.read("grad_clip", c.grad_clip);
  std::string augment = adapt::augment_mode_name(c.augment);
  r.read("augment", augment);
  r.read("aux_loss", c.aux_loss);
  r.finish();
  c.augment = adapt::parse_augment_mode(augment);
  if (c.batch_size == 0) throw ConfigError("pretrain.batch_size must be positive");
  return c;
}

adapt::TrainConfig train_from_json(const json& j) {
  adapt::TrainConfig c;
  FieldReader r(j, "train");
  std::string method = adapt::method_name(c.method);
  r.read("alpha", c.alpha);
  r.read("learning_rate", c.learning_rate);
  r.read("steps", c.steps);
  r.read("batch_size", c.batch_size);
  r.read("seed", c.seed);
  r.read("method", method);
  r.read("grad_clip", c.grad_clip);
  r.read("aux_loss", c.aux_loss);
  r.read("collab_lr_scale", c.collab_lr_scale);
  r.read("max_unknown_labels", c.max_unknown_labels);
  r.finish();
  c.method = adapt::parse_method(method);
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ConfigError("train.alpha must lie in (0, 1)");
  if (c.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  return c;
}

paul::PaulConfig paul_from_json(const json& j) {
  paul::PaulConfig c;
  FieldReader r(j, "paul");
  std::string mode = "or";
  r.read("known_threshold", c.known_threshold);
  r.read("epsilon", c.epsilon);
  r.read("p_max", c.p_max);
  r.read("center", c.center);
  r.read("mask_mode", mode);
  r.finish();
  if (mode == "or") c.mask_mode = paul::MaskMode::Or;
  else if (mode == "and") c.mask_mode = paul::MaskMode::And;
  else throw ConfigError("paul.mask_mode must be 'or' or 'and'");
  if (c.p_max == 0) throw ConfigError("paul.p_max must be positive");
  return c;
}

EvalConfig eval_from_json(const json& j) {
  EvalConfig c;
  FieldReader r(j, "eval");
  r.read("score_floor", c.score_floor);
  r.read("iou_threshold", c.iou_threshold);
  r.read("max_detections", c.max_detections);
  r.read("use_teacher", c.use_teacher);
  r.finish();
  if (!(c.iou_threshold > 0.0 && c.iou_threshold < 1.0)) throw ConfigError("eval.iou_threshold must lie in (0, 1)");
  return c;
}

RunConfig run_from_json(const json& j) {
  RunConfig c;
  FieldReader r(j, "run");
  r.read("seeds", c.seeds);
  r.read("data_dir", c.data_dir);
  r.read("source_ckpt", c.source_ckpt);
  r.read("cache_dir", c.cache_dir);
  r.finish();
  if (c.seeds.empty()) throw ConfigError("run.seeds must not be empty");
  return c;
}

}  // namespace

DatasetConfig dataset_config_from_json(const json& j) {
  DatasetConfig c;
  FieldReader r(j, "data");
  r.read("seed", c.seed);
  r.read("source_train", c.source_train);
  r.read("target_train", c.target_train);
  r.read("target_eval", c.target_eval);
  if (const json* g = r.sub("generator")) c.generator = generator_from_json(*g);
  r.finish();
  return c;
}

DetectorConfig detector_config_from_json(const json& j) {
  DetectorConfig c;
  FieldReader r(j, "detector");
  r.read("image_size", c.image_size);
  r.read("patch", c.patch);
  r.read("channels", c.channels);
  r.read("model_dim", c.model_dim);
  r.read("num_queries", c.num_queries);
  r.read("num_decoder_layers", c.num_decoder_layers);
  r.read("num_known_classes", c.num_known_classes);
  r.read("collab_layers", c.collab_layers);
  r.read("top_k", c.top_k);
  r.read("top_r", c.top_r);
  r.read("encoder_layers", c.encoder_layers);
  r.read("mlp_hidden", c.mlp_hidden);
  r.read("joint_softmax", c.joint_softmax);
  r.read("gated_prefix", c.gated_prefix);
  r.read("prefix_gate_init", c.prefix_gate_init);
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  FieldReader r(j, "config");
  if (const json* s = r.sub("data")) c.data = dataset_config_from_json(*s);
  if (const json* s = r.sub("detector")) c.detector = detector_config_from_json(*s);
  if (const json* s = r.sub("pretrain")) c.pretrain = pretrain_from_json(*s);
  if (const json* s = r.sub("train")) c.train = train_from_json(*s);
  if (const json* s = r.sub("paul")) c.paul = paul_from_json(*s);
  if (const json* s = r.sub("eval")) c.eval = eval_from_json(*s);
  if (const json* s = r.sub("run")) c.run = run_from_json(*s);
  r.finish();
  if (c.detector.image_size != c.data.generator.image_size)
    throw ConfigError("detector.image_size must equal data.generator.image_size");
  if (c.detector.num_known_classes != static_cast<std::size_t>(kNumKnownShapes))
    throw ConfigError("detector.num_known_classes must be 3 for the synthetic benchmark");
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

}  // namespace sfdet::bench
