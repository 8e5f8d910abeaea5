#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sfdet/bench/scene.hpp"
#include "sfdet/detector/config.hpp"
#include "sfdet/detector/losses.hpp"
#include "sfdet/detector/params.hpp"
#include "sfdet/paul/paul.hpp"

namespace sfdet::adapt {

enum class Method { MtConf, CollabOnly, PaulOnly, Collapaul };

const char* method_name(Method m);
Method parse_method(const std::string& name);
inline bool uses_collab(Method m) { return m == Method::CollabOnly || m == Method::Collapaul; }
inline bool uses_paul(Method m) { return m == Method::PaulOnly || m == Method::Collapaul; }

struct TeacherStudent {
  ModelParams student;
  ModelParams teacher;
  double alpha = 0.99;
};

/// Teacher and student both start as exact copies of `init`.
TeacherStudent make_teacher_student(const ModelParams& init, double alpha);

/// t ← alpha·t + (1−alpha)·s for every tensor.
void ema_update(ModelParams& teacher, const ModelParams& student, double alpha);

enum class AugmentMode { None, Weak, Strong };

const char* augment_mode_name(AugmentMode m);
AugmentMode parse_augment_mode(const std::string& name);

struct AugmentSpec {
  AugmentMode mode = AugmentMode::Weak;
  double flip_prob = 0.5;
  double noise_sigma = 0.05;
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  std::size_t erase_size = 8;
  double erase_fill = 0.5;

  static AugmentSpec weak() { return AugmentSpec{}; }
  static AugmentSpec strong() {
    AugmentSpec s;
    s.mode = AugmentMode::Strong;
    return s;
  }
};

struct Augmented {
  Image image;
  bool flipped = false;
};

Image flip_horizontal(const Image& image);
Box flip_box(const Box& b);

/// None: identity, no rng draws. Weak: horizontal flip with probability flip_prob. Strong adds Gaussian
/// noise, a per-channel gain and one erased square patch. Output in [0, 1].
Augmented augment(const Image& image, const AugmentSpec& spec, std::mt19937_64& rng);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Learning-rate multipliers by parameter-name prefix; the first match applies.
  std::vector<std::pair<std::string, double>> lr_scales;

  double learning_rate_for(const std::string& name) const;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One bias-corrected update of every tensor in `grads` (names must exist in `params`).
  void step(ModelParams& params, const ModelParams& grads);

  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }
  const ModelParams& first_moment() const { return m_; }
  const ModelParams& second_moment() const { return v_; }
  void restore(std::size_t steps, ModelParams m, ModelParams v);

 private:
  AdamConfig cfg_;
  std::size_t steps_ = 0;
  ModelParams m_;
  ModelParams v_;
};

struct TrainConfig {
  double alpha = 0.99;
  double learning_rate = 1e-4;
  std::size_t steps = 1000;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
  Method method = Method::Collapaul;
  double grad_clip = 1.0;  // global L2 norm cap; 0 disables
  bool aux_loss = true;    // add the detection loss of every intermediate decoder layer
  double collab_lr_scale = 10.0;  // learning-rate multiplier for the newly added collab tensors
  std::size_t max_unknown_labels = 1;  // per image, highest objectness first; 0 keeps all
};

struct PretrainConfig {
  double learning_rate = 1e-3;
  std::size_t steps = 4000;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  double grad_clip = 1.0;
  AugmentMode augment = AugmentMode::Strong;  // applied to every source image
  bool aux_loss = true;
};

struct Example {
  const Image* image = nullptr;
  std::vector<Target> targets;
};

struct LossAndGrad {
  double loss = 0.0;       // optimized objective, mean over the batch
  double detection = 0.0;  // final-layer detection loss, mean over the batch
  ModelParams grads;       // d(objective)/d(param) for every parameter
};

/// Mean loss over `batch` and its gradient. The objective is the final-layer
/// detection loss, plus the same loss on each intermediate decoder layer's
/// output (through the shared heads) when `aux_loss` is set. Images are
/// processed in parallel; per-image gradients are summed in batch order.
LossAndGrad batch_loss_and_grad(const ModelParams& params, const DetectorConfig& cfg, std::span<const Example> batch,
                                bool use_collab, bool aux_loss, const LossWeights& w = {});

/// Scales `grads` so its global L2 norm is at most `max_norm`; returns the pre-clip norm.
double clip_gradients(ModelParams& grads, double max_norm);

/// Known-class targets of a scene (annotations with class ≤ K).
std::vector<Target> known_targets(const bench::Scene& scene, std::size_t num_known);

struct PretrainResult {
  ModelParams params;
  std::vector<double> losses;  // mean final-layer detection loss of each batch, before its update
};

/// Supervised source training of the plain detector.
PretrainResult pretrain_source(std::span<const bench::Scene> scenes, const DetectorConfig& cfg,
                               const PretrainConfig& train);

struct AdaptState {
  TeacherStudent ts;
  Adam optimizer;
  std::mt19937_64 rng;
  std::size_t step = 0;
};

/// Teacher/student from source params; collab tensors are added (identically
/// to both) when the method uses them.
AdaptState init_adaptation(const ModelParams& source, const DetectorConfig& cfg, const TrainConfig& train);

struct StepReport {
  double loss = 0.0;
  std::size_t known_labels = 0;
  std::size_t unknown_labels = 0;
};

/// Teacher labels weakly augmented images, the student trains on strong views
/// of the same geometry, then Adam updates the student and EMA the teacher.
StepReport adaptation_step(std::span<const Image> batch, AdaptState& state, const DetectorConfig& cfg,
                           const TrainConfig& train, const paul::PaulConfig& paul_cfg);

/// Pseudo-labels the teacher emits for one (already augmented) image, keeping
/// at most `max_unknown` unknown labels (0 keeps all; see keep_top_unknown).
paul::PseudoLabelSet teacher_labels(const ModelParams& teacher, const DetectorConfig& cfg, const Image& image,
                                    Method method, const paul::PaulConfig& paul_cfg, std::size_t max_unknown = 0);

struct AdaptResult {
  AdaptState state;
  std::vector<StepReport> history;
};

/// Runs `train.steps` adaptation steps on batches drawn from `target_images`.
AdaptResult adapt(const ModelParams& source, std::span<const bench::Scene> target_images, const DetectorConfig& cfg,
                  const TrainConfig& train, const paul::PaulConfig& paul_cfg);

// Checkpoints: `<stem>.json` + `<stem>.bin` hold the params; the training
// sidecar `<stem>.state.json` records step count, optimizer moments (stored as
// two more params files) and the serialized rng state.

void save_params(const ModelParams& params, const std::filesystem::path& stem, const nlohmann::json& metadata = {});
ModelParams load_params(const std::filesystem::path& stem, nlohmann::json* metadata = nullptr);
void save_checkpoint(const AdaptState& state, const std::filesystem::path& stem, const nlohmann::json& metadata = {});
AdaptState load_checkpoint(const std::filesystem::path& stem);

}  // namespace sfdet::adapt
