#pragma once

#include "clpoison/augment.hpp"
#include "clpoison/datasets.hpp"
#include "clpoison/frameworks.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace clpoison {

enum class Direction { Minimize, Maximize };

/// Projected signed-gradient descent in an L-infinity ball, pixels kept in [0, 1].
/// Requires 0 < alpha <= epsilon, except that epsilon = 0 (no budget) is accepted
/// and produces zero noise.
struct PgdConfig {
  double epsilon = 8.0 / 255.0;
  double alpha = 0.8 / 255.0;
  int steps = 200;
  Direction direction = Direction::Minimize;
  /// Start from a uniform draw inside the ball instead of from zero noise.
  bool random_init = false;

  std::vector<std::string> violations() const;
  void validate() const;  // throws ConfigError
};

/// Alternation schedule of the error-minimizing attacks: per outer iteration,
/// `model_epochs` passes over the phase subset, then `pgd_steps` noise updates.
struct AttackSchedule {
  int iterations = 200;
  int pgd_steps = 5;
  int model_epochs = 1;
  double data_fraction = 1.0;  // share of the data used in each iteration's phases
  BranchMode branch_mode = BranchMode::Dual;

  static AttackSchedule sample_wise();  // 200 iterations, T = 5, full data
  static AttackSchedule class_wise();   // 600 iterations, T = 1, 20% of the data

  std::vector<std::string> violations() const;
  void validate() const;  // throws ConfigError
};

/// x' <- clamp(project_eps(x + s * alpha * sign(g)), 0, 1) with s = -1 when
/// minimizing and +1 when maximizing; sign(0) = 0. Throws NumericalError on a
/// non-finite gradient.
Matrix pgd_step(const Matrix& x_current, const Matrix& gradient, const PgdConfig& cfg, const Matrix& x_anchor);

/// Projection onto {z : |z - anchor| <= eps} intersected with [0, 1].
Matrix project_ball(const Matrix& z, const Matrix& anchor, double epsilon);

struct NoiseGradient {
  double loss = 0.0;
  Matrix grad;  // dL/dx' with x' = x + delta, one row per image
};

/// Gradient of the contrastive loss on the views of x' with respect to x'
/// (equivalently delta). The views must be freshly sampled; they are run forward here.
NoiseGradient noise_gradient(EncoderState& state, const Matrix& poisoned, ViewBatch& view_a, ViewBatch& view_b,
                             BranchMode mode);
/// Same, drawing both views from `views` with `rng`.
NoiseGradient noise_gradient(EncoderState& state, const Matrix& poisoned, const ViewConfig& views, Rng& rng,
                             BranchMode mode);

struct AttackProgress {
  int iteration = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
  std::string note;  // e.g. classes missing from a class-wise phase subset
};

/// Noise-phase batches use the attacked model's batch size.
struct AttackOptions {
  std::uint64_t seed = 0;
  /// Views used inside the noise optimization; the framework's own views when unset.
  std::optional<ViewConfig> attack_views;
  std::function<void(const AttackProgress&)> on_progress;
};

/// Adversarial poisoning: PGD that maximizes the contrastive loss of a frozen,
/// pretrained encoder. The encoder's parameters are not modified.
PerturbationSet attack_ap_cl(const LabeledImageDataset& clean, EncoderState& pretrained, const PgdConfig& pgd,
                             BranchMode mode, const AttackOptions& options = {});
/// Pretrains the encoder with `framework` on the clean data first.
PerturbationSet attack_ap_cl(const LabeledImageDataset& clean, const FrameworkConfig& framework, const PgdConfig& pgd,
                             BranchMode mode, const AttackOptions& options = {});

/// Error-minimizing poisoning: alternates training an encoder on the current
/// poisoned data with PGD steps that minimize its contrastive loss.
PerturbationSet attack_emp_cl_sample(const LabeledImageDataset& clean, const FrameworkConfig& framework,
                                     const PgdConfig& pgd, const AttackSchedule& schedule,
                                     const AttackOptions& options = {});
/// Class-wise variant: one delta per class, updated with the mean gradient of
/// the class members in each iteration's subset.
PerturbationSet attack_emp_cl_class(const LabeledImageDataset& clean, const FrameworkConfig& framework,
                                    const PgdConfig& pgd, const AttackSchedule& schedule,
                                    const AttackOptions& options = {});

/// Supervised classifier used by the baseline attacks: the encoder backbone plus a linear head.
struct ClassifierConfig {
  EncoderArch arch;
  double learning_rate = 0.1;
  double weight_decay = 1e-4;
  double sgd_momentum = 0.9;
  int epochs = 50;  // pretraining epochs for the adversarial baseline
  int batch_size = 128;
  ViewConfig views = default_views();

  /// Random resized crop and flip, no colour distortion.
  static ViewConfig default_views();
  std::vector<std::string> violations() const;
};

/// Adversarial poisoning against a supervised classifier trained on the clean data.
PerturbationSet attack_ap_supervised(const LabeledImageDataset& clean, const ClassifierConfig& classifier,
                                     const PgdConfig& pgd, const AttackOptions& options = {});
/// Error-minimizing poisoning against a co-trained supervised classifier.
PerturbationSet attack_emp_supervised(NoiseMode mode, const LabeledImageDataset& clean,
                                      const ClassifierConfig& classifier, const PgdConfig& pgd,
                                      const AttackSchedule& schedule, const AttackOptions& options = {});

/// Sidecar written next to every poison file.
struct AttackManifest {
  std::string attack;
  std::string framework;
  BranchMode branch_mode = BranchMode::Dual;
  double epsilon = 0.0;
  double alpha = 0.0;
  int pgd_steps = 0;
  AttackSchedule schedule;
  std::uint64_t seed = 0;
  std::string loss_trace_path;
};

std::string manifest_to_json(const AttackManifest& manifest);

}  // namespace clpoison
