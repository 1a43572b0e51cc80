#pragma once

#include "clpoison/augment.hpp"
#include "clpoison/datasets.hpp"
#include "clpoison/nn/layers.hpp"
#include "clpoison/nn/optim.hpp"
#include "clpoison/rng.hpp"
#include "clpoison/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace clpoison {

enum class Framework { SimClr, MocoV2, Byol };

std::string to_string(Framework framework);
/// Accepts "simclr", "moco", "mocov2", "moco-v2", "byol" (case-insensitive).
Framework parse_framework(const std::string& name);

/// Single: the momentum branch is a constant function of its input.
/// Dual: input gradients also flow back through the momentum branch.
enum class BranchMode { Single, Dual };

std::string to_string(BranchMode mode);
BranchMode parse_branch_mode(const std::string& name);

/// Small convolutional backbone: stride-2 convolutions, each followed by batch
/// normalization and ReLU, then global average pooling; a two-layer projector
/// (and predictor for BYOL) with batch normalization on the hidden layer.
struct EncoderArch {
  ImageShape input{3, 32, 32};
  std::vector<int> conv_channels{16, 32};
  int kernel = 3;
  int stride = 2;
  int padding = 1;
  int projector_hidden = 64;
  int projector_dim = 128;
  bool batch_norm = true;

  int feature_dim() const { return conv_channels.empty() ? input.size() : conv_channels.back(); }
  std::vector<std::string> violations() const;
};

struct FrameworkConfig {
  Framework framework = Framework::SimClr;
  double temperature = 0.5;
  double learning_rate = 0.5;
  double weight_decay = 1e-4;
  double sgd_momentum = 0.9;
  double momentum = 0.0;  // EMA coefficient of the momentum encoder
  int epochs = 1000;
  int batch_size = 512;
  int queue_size = 4096;
  ViewConfig views;
  EncoderArch arch;

  /// Full-scale defaults for each framework (CIFAR-sized training).
  static FrameworkConfig defaults(Framework framework);
  /// Defaults shrunk for a single CPU: fewer epochs, smaller batches and queue,
  /// gentler crops without colour distortion and a lower learning rate.
  static FrameworkConfig desk(Framework framework);

  std::vector<std::string> violations() const;
  /// Throws ConfigError listing every violation.
  void validate() const;
};

/// Online networks, momentum copies and the MoCo key queue.
struct EncoderState {
  FrameworkConfig config;
  nn::Sequential backbone;
  nn::Sequential projector;
  nn::Sequential predictor;           // BYOL only
  nn::Sequential momentum_backbone;   // MoCo and BYOL
  nn::Sequential momentum_projector;  // MoCo and BYOL

  /// Fresh networks; momentum copies start equal to the online ones and the
  /// queue is filled with random unit vectors.
  static EncoderState create(const FrameworkConfig& config, std::uint64_t seed);

  Framework framework() const { return config.framework; }
  bool has_momentum() const { return !momentum_backbone.empty(); }

  /// Backbone features f(x), one row per image, with batch normalization in
  /// evaluation mode (running statistics).
  Matrix features(const Matrix& images);

  std::vector<nn::Param*> online_params();
  /// Backbone and projector only, in the same order as momentum_params().
  std::vector<nn::Param*> online_encoder_params();
  std::vector<nn::Param*> momentum_params();
  void zero_grad();

  /// Queue keys ordered from oldest to newest.
  Matrix queue() const;
  /// Raw ring buffer; row order is irrelevant to the loss.
  const Matrix& queue_buffer() const { return queue_; }
  int queue_capacity() const { return static_cast<int>(queue_.rows()); }
  /// Appends keys, evicting the oldest ones once the queue is full.
  void enqueue(const Matrix& keys);

  /// Running statistics of every network, named like the parameters.
  std::vector<nn::Param*> buffers();

  /// Hash of every parameter and buffer value, for checking that a network was left untouched.
  std::uint64_t parameter_hash();

 private:
  Matrix queue_;
  int queue_head_ = 0;  // index of the oldest key
};

/// theta_m <- m * theta_m + (1 - m) * theta, element-wise.
void ema_update(const std::vector<nn::Param*>& online, const std::vector<nn::Param*>& momentum, double m);

/// One evaluation of the framework loss on a pair of view batches.
struct ClPass {
  double loss = 0.0;
  Matrix grad_a;  // dL/d(view a), filled when input gradients are requested
  Matrix grad_b;
  Matrix keys;    // MoCo momentum keys for the queue
};

/// Computes the contrastive loss of `state` on (view_a, view_b) and backpropagates.
/// Online parameter gradients are accumulated (call zero_grad first). When
/// `input_grad` is set the view gradients are returned; in dual mode they include
/// the path through the momentum networks. Queue keys are constants.
ClPass cl_loss_backward(EncoderState& state, const Matrix& view_a, const Matrix& view_b,
                        BranchMode mode, bool input_grad);

/// JSON echo of a configuration, as stored in checkpoints and manifests.
std::string config_to_json(const FrameworkConfig& config);
FrameworkConfig config_from_json(const std::string& text);

/// Optional per-view transform inserted after augmentation (used by defenses).
using ViewTransform = std::function<void(Matrix& views, Rng& rng)>;

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

/// Owns an EncoderState and its optimizer so training can be resumed across calls.
class ClTrainer {
 public:
  ClTrainer(EncoderState state, std::uint64_t seed);

  /// One pass over `images` in shuffled minibatches of the configured size (the
  /// last partial batch is dropped unless it is the only one). Returns the mean loss.
  double train_epoch(const Matrix& images, double lr);
  /// One optimizer step on a batch; returns the loss.
  double train_step(const Matrix& batch, double lr);

  EncoderState& state() { return state_; }
  const EncoderState& state() const { return state_; }
  EncoderState release() { return std::move(state_); }
  Rng& rng() { return rng_; }
  void set_view_transform(ViewTransform t) { transform_ = std::move(t); }

  /// Two augmented views of a batch, with the view transform applied.
  std::pair<Matrix, Matrix> make_views(const Matrix& batch);

 private:
  EncoderState state_;
  nn::Sgd optimizer_;
  Rng rng_;
  ViewTransform transform_;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  ViewTransform transform;                         // applied to every view when set
  std::function<void(const EpochLog&)> on_epoch;   // e.g. append to a JSON-lines log
};

/// Trains a fresh encoder with a cosine learning-rate schedule. epochs = 0 returns
/// the initialized state. Throws TrainingError on a non-finite loss.
EncoderState train_encoder(const LabeledImageDataset& dataset, const FrameworkConfig& config,
                           const TrainOptions& options = {});

/// Multinomial logistic regression on fixed features.
struct LinearHead {
  Matrix weight;  // feature_dim x class_count
  RowVector bias;
  RowVector feature_mean;
  RowVector feature_scale;

  Matrix logits(const Matrix& features) const;
  std::vector<int> predict(const Matrix& features) const;
};

struct ProbeOptions {
  int epochs = 100;
  int batch_size = 64;
  double learning_rate = 0.01;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

/// Fits a standardized linear head on the training split and returns it with
/// the held-out accuracy.
std::pair<LinearHead, double> fit_linear_probe(const Matrix& features, const std::vector<int>& labels,
                                               int class_count, const ProbeOptions& options = {});

/// Top-1 held-out accuracy of a linear head trained on frozen encoder features.
/// Throws ArgumentError when either split would be empty.
double linear_probe(EncoderState& encoder, const LabeledImageDataset& data, const ProbeOptions& options = {});

/// Versioned binary checkpoint: config echo plus named f32 parameter tensors.
void save_checkpoint(const std::string& path, EncoderState& state);
EncoderState load_checkpoint(const std::string& path);

}  // namespace clpoison
