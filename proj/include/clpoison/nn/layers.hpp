#pragma once

#include "clpoison/rng.hpp"
#include "clpoison/tensor.hpp"

#include <memory>
#include <string>
#include <vector>

namespace clpoison::nn {

/// A trainable tensor and its accumulated gradient.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
};

/// Feed-forward layer over a batch (one sample per row).
///
/// forward() caches whatever backward() needs; backward() must follow the
/// matching forward(), accumulates parameter gradients and returns the gradient
/// with respect to the layer input.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Matrix forward(const Matrix& input) = 0;
  virtual Matrix backward(const Matrix& grad_output) = 0;
  /// backward() without the input gradient, for the first trainable layer.
  virtual void backward_params(const Matrix& grad_output) { backward(grad_output); }
  virtual std::vector<Param*> params() { return {}; }
  /// Non-trainable state (running statistics), saved with checkpoints.
  virtual std::vector<Param*> buffers() { return {}; }
  virtual void set_training(bool) {}
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual std::string kind() const = 0;
  virtual int input_size() const = 0;
  virtual int output_size() const = 0;
};

/// Spatial extent of a channels-last activation map.
struct MapShape {
  int height = 0;
  int width = 0;
  int channels = 0;
  int size() const { return height * width * channels; }
};

/// Reorders (C, H, W) rows into (H, W, C) rows so convolutions can run as one GEMM.
class ChannelsLast final : public Layer {
 public:
  explicit ChannelsLast(ImageShape shape) : shape_(shape) {}
  Matrix forward(const Matrix& input) override;
  Matrix backward(const Matrix& grad_output) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ChannelsLast>(*this); }
  std::string kind() const override { return "channels_last"; }
  int input_size() const override { return shape_.size(); }
  int output_size() const override { return shape_.size(); }

 private:
  ImageShape shape_;
};

class Conv2d final : public Layer {
 public:
  Conv2d(MapShape input, int out_channels, int kernel, int stride, int padding, Rng& rng);

  Matrix forward(const Matrix& input) override;
  Matrix backward(const Matrix& grad_output) override;
  void backward_params(const Matrix& grad_output) override;
  std::vector<Param*> params() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  std::string kind() const override { return "conv2d"; }
  int input_size() const override { return in_.size(); }
  int output_size() const override { return out_.size(); }
  MapShape output_shape() const { return out_; }

 private:
  void im2col(const Matrix& input);

  MapShape in_;
  MapShape out_;
  int kernel_;
  int stride_;
  int padding_;
  Param weight_;  // (kernel * kernel * in_channels) x out_channels
  Param bias_;    // 1 x out_channels
  Matrix cols_;   // (batch * out positions) x (kernel * kernel * in_channels)
  Eigen::Index batch_ = 0;
};

class Relu final : public Layer {
 public:
  explicit Relu(int size) : size_(size) {}
  Matrix forward(const Matrix& input) override;
  Matrix backward(const Matrix& grad_output) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
  std::string kind() const override { return "relu"; }
  int input_size() const override { return size_; }
  int output_size() const override { return size_; }

 private:
  int size_;
  Matrix output_;
};

/// Mean over spatial positions of a channels-last map.
class GlobalAvgPool final : public Layer {
 public:
  explicit GlobalAvgPool(MapShape input) : in_(input) {}
  Matrix forward(const Matrix& input) override;
  Matrix backward(const Matrix& grad_output) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  std::string kind() const override { return "global_avg_pool"; }
  int input_size() const override { return in_.size(); }
  int output_size() const override { return in_.channels; }

 private:
  MapShape in_;
};

/// Per-channel batch normalization of a channels-last map; `spatial` = 1 for
/// plain feature vectors. Training mode normalizes with the batch statistics
/// and updates running averages (biased mean, unbiased variance); evaluation
/// mode uses the running averages.
class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(int channels, int spatial = 1, double momentum = 0.1, double eps = 1e-5);

  Matrix forward(const Matrix& input) override;
  Matrix backward(const Matrix& grad_output) override;
  std::vector<Param*> params() override { return {&gamma_, &beta_}; }
  std::vector<Param*> buffers() override { return {&running_mean_, &running_var_}; }
  void set_training(bool training) override { training_ = training; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }
  std::string kind() const override { return "batch_norm"; }
  int input_size() const override { return channels_ * spatial_; }
  int output_size() const override { return channels_ * spatial_; }

 private:
  int channels_;
  int spatial_;
  double momentum_;
  double eps_;
  bool training_ = true;
  Param gamma_;
  Param beta_;
  Param running_mean_;
  Param running_var_;
  Matrix normalized_;  // cached x_hat, (batch * spatial) x channels
  RowVector inv_std_;
  bool used_batch_stats_ = true;
};

class Linear final : public Layer {
 public:
  Linear(int in_features, int out_features, Rng& rng);
  Matrix forward(const Matrix& input) override;
  Matrix backward(const Matrix& grad_output) override;
  void backward_params(const Matrix& grad_output) override;
  std::vector<Param*> params() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }
  std::string kind() const override { return "linear"; }
  int input_size() const override { return static_cast<int>(weight_.value.rows()); }
  int output_size() const override { return static_cast<int>(weight_.value.cols()); }

 private:
  Param weight_;  // in x out
  Param bias_;    // 1 x out
  Matrix input_;
};

/// Ordered stack of layers with value semantics (copies are deep).
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Matrix forward(const Matrix& input);
  Matrix backward(const Matrix& grad_output);
  /// Accumulates parameter gradients only, skipping work that serves the input gradient.
  void backward_params(const Matrix& grad_output);

  /// Parameters named "<prefix><layer index>.weight" / ".bias".
  std::vector<Param*> params(const std::string& prefix = "");
  /// Buffers named "<prefix><layer index>.running_mean" / ".running_var".
  std::vector<Param*> buffers(const std::string& prefix = "");
  std::size_t parameter_count();
  void zero_grad();
  /// Switches batch normalization between batch and running statistics.
  void set_training(bool training);

  bool empty() const { return layers_.empty(); }
  std::size_t size() const { return layers_.size(); }
  int input_size() const { return layers_.front()->input_size(); }
  int output_size() const { return layers_.back()->output_size(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace clpoison::nn
