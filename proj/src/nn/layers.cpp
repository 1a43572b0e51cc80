#include "clpoison/nn/layers.hpp"

#include "clpoison/errors.hpp"

#include <cmath>

namespace clpoison::nn {

namespace {

void init_uniform(Matrix& m, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
}

void check_width(const Matrix& m, int expected, const char* layer) {
  if (m.cols() != expected) {
    throw ArgumentError(std::string(layer) + ": expected " + std::to_string(expected) +
                        " features per row, got " + std::to_string(m.cols()));
  }
}

}  // namespace

Matrix ChannelsLast::forward(const Matrix& input) {
  check_width(input, shape_.size(), "channels_last");
  const int c = shape_.channels, hw = shape_.plane();
  Matrix out(input.rows(), input.cols());
  for (Eigen::Index b = 0; b < input.rows(); ++b) {
    const Real* src = input.row(b).data();
    Real* dst = out.row(b).data();
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < hw; ++p) dst[p * c + ch] = src[ch * hw + p];
  }
  return out;
}

Matrix ChannelsLast::backward(const Matrix& grad_output) {
  const int c = shape_.channels, hw = shape_.plane();
  Matrix out(grad_output.rows(), grad_output.cols());
  for (Eigen::Index b = 0; b < grad_output.rows(); ++b) {
    const Real* src = grad_output.row(b).data();
    Real* dst = out.row(b).data();
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < hw; ++p) dst[ch * hw + p] = src[p * c + ch];
  }
  return out;
}

Conv2d::Conv2d(MapShape input, int out_channels, int kernel, int stride, int padding, Rng& rng)
    : in_(input), kernel_(kernel), stride_(stride), padding_(padding) {
  if (kernel < 1 || stride < 1 || padding < 0 || out_channels < 1) {
    throw ArgumentError("conv2d: invalid geometry");
  }
  out_.height = (in_.height + 2 * padding - kernel) / stride + 1;
  out_.width = (in_.width + 2 * padding - kernel) / stride + 1;
  out_.channels = out_channels;
  if (out_.height < 1 || out_.width < 1) throw ArgumentError("conv2d: kernel larger than input");
  const int fan_in = kernel * kernel * in_.channels;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  weight_.value.resize(fan_in, out_channels);
  bias_.value.resize(1, out_channels);
  init_uniform(weight_.value, bound, rng);
  init_uniform(bias_.value, bound, rng);
  weight_.grad = Matrix::Zero(fan_in, out_channels);
  bias_.grad = Matrix::Zero(1, out_channels);
}

void Conv2d::im2col(const Matrix& input) {
  const int positions = out_.height * out_.width;
  const int patch = kernel_ * kernel_ * in_.channels;
  cols_.setZero(batch_ * positions, patch);
  const int c = in_.channels;
  for (Eigen::Index b = 0; b < batch_; ++b) {
    const Real* src = input.row(b).data();
    for (int oy = 0; oy < out_.height; ++oy) {
      for (int ox = 0; ox < out_.width; ++ox) {
        Real* dst = cols_.row(b * positions + oy * out_.width + ox).data();
        for (int ky = 0; ky < kernel_; ++ky) {
          const int iy = oy * stride_ - padding_ + ky;
          if (iy < 0 || iy >= in_.height) continue;
          for (int kx = 0; kx < kernel_; ++kx) {
            const int ix = ox * stride_ - padding_ + kx;
            if (ix < 0 || ix >= in_.width) continue;
            const Real* px = src + (iy * in_.width + ix) * c;
            Real* q = dst + (ky * kernel_ + kx) * c;
            for (int ch = 0; ch < c; ++ch) q[ch] = px[ch];
          }
        }
      }
    }
  }
}

Matrix Conv2d::forward(const Matrix& input) {
  check_width(input, in_.size(), "conv2d");
  batch_ = input.rows();
  im2col(input);
  Matrix out(batch_, out_.size());
  Eigen::Map<Matrix> view(out.data(), batch_ * out_.height * out_.width, out_.channels);
  view.noalias() = cols_ * weight_.value;
  view.rowwise() += bias_.value.row(0);
  return out;
}

void Conv2d::backward_params(const Matrix& grad_output) {
  check_width(grad_output, out_.size(), "conv2d backward");
  const Eigen::Index positions = out_.height * out_.width;
  Eigen::Map<const Matrix> dy(grad_output.data(), batch_ * positions, out_.channels);
  weight_.grad.noalias() += cols_.transpose() * dy;
  bias_.grad += dy.colwise().sum();
}

Matrix Conv2d::backward(const Matrix& grad_output) {
  backward_params(grad_output);
  const Eigen::Index positions = out_.height * out_.width;
  Eigen::Map<const Matrix> dy(grad_output.data(), batch_ * positions, out_.channels);
  const Matrix dcols = dy * weight_.value.transpose();

  Matrix din = Matrix::Zero(batch_, in_.size());
  const int c = in_.channels;
  for (Eigen::Index b = 0; b < batch_; ++b) {
    Real* dst = din.row(b).data();
    for (int oy = 0; oy < out_.height; ++oy) {
      for (int ox = 0; ox < out_.width; ++ox) {
        const Real* src = dcols.row(b * positions + oy * out_.width + ox).data();
        for (int ky = 0; ky < kernel_; ++ky) {
          const int iy = oy * stride_ - padding_ + ky;
          if (iy < 0 || iy >= in_.height) continue;
          for (int kx = 0; kx < kernel_; ++kx) {
            const int ix = ox * stride_ - padding_ + kx;
            if (ix < 0 || ix >= in_.width) continue;
            Real* px = dst + (iy * in_.width + ix) * c;
            const Real* q = src + (ky * kernel_ + kx) * c;
            for (int ch = 0; ch < c; ++ch) px[ch] += q[ch];
          }
        }
      }
    }
  }
  return din;
}

Matrix Relu::forward(const Matrix& input) {
  check_width(input, size_, "relu");
  output_ = input.cwiseMax(0.0);
  return output_;
}

Matrix Relu::backward(const Matrix& grad_output) {
  return (output_.array() > 0.0).select(grad_output, 0.0);
}

Matrix GlobalAvgPool::forward(const Matrix& input) {
  check_width(input, in_.size(), "global_avg_pool");
  const int positions = in_.height * in_.width;
  Matrix out = Matrix::Zero(input.rows(), in_.channels);
  for (Eigen::Index b = 0; b < input.rows(); ++b) {
    Eigen::Map<const Matrix> map(input.row(b).data(), positions, in_.channels);
    out.row(b) = map.colwise().mean();
  }
  return out;
}

Matrix GlobalAvgPool::backward(const Matrix& grad_output) {
  const int positions = in_.height * in_.width;
  Matrix din(grad_output.rows(), in_.size());
  const Real scale = 1.0 / positions;
  for (Eigen::Index b = 0; b < grad_output.rows(); ++b) {
    Eigen::Map<Matrix> map(din.row(b).data(), positions, in_.channels);
    map.rowwise() = grad_output.row(b) * scale;
  }
  return din;
}

BatchNorm::BatchNorm(int channels, int spatial, double momentum, double eps)
    : channels_(channels), spatial_(spatial), momentum_(momentum), eps_(eps) {
  if (channels < 1 || spatial < 1) throw ArgumentError("batch_norm: invalid size");
  gamma_.value = Matrix::Ones(1, channels);
  beta_.value = Matrix::Zero(1, channels);
  gamma_.grad = Matrix::Zero(1, channels);
  beta_.grad = Matrix::Zero(1, channels);
  running_mean_.value = Matrix::Zero(1, channels);
  running_var_.value = Matrix::Ones(1, channels);
}

// Both passes walk the channels-last data row by row with per-channel accumulators.
Matrix BatchNorm::forward(const Matrix& input) {
  check_width(input, input_size(), "batch_norm");
  const Eigen::Index m = input.rows() * spatial_;
  const int c = channels_;
  const Real* x = input.data();
  used_batch_stats_ = training_;
  RowVector mean = RowVector::Zero(c), var = RowVector::Zero(c);
  if (training_) {
    if (m < 2) throw ArgumentError("batch_norm: training needs more than one value per channel");
    for (Eigen::Index r = 0; r < m; ++r)
      for (int k = 0; k < c; ++k) mean[k] += x[r * c + k];
    mean /= static_cast<Real>(m);
    for (Eigen::Index r = 0; r < m; ++r)
      for (int k = 0; k < c; ++k) {
        const Real d = x[r * c + k] - mean[k];
        var[k] += d * d;
      }
    var /= static_cast<Real>(m);
    running_mean_.value.row(0) = (1.0 - momentum_) * running_mean_.value.row(0) + momentum_ * mean;
    running_var_.value.row(0) =
        (1.0 - momentum_) * running_var_.value.row(0) + momentum_ * var * (static_cast<double>(m) / (m - 1));
  } else {
    mean = running_mean_.value.row(0);
    var = running_var_.value.row(0);
  }
  inv_std_ = (var.array() + eps_).rsqrt().matrix();
  normalized_.resize(m, c);
  Matrix out(input.rows(), input.cols());
  Real* xh = normalized_.data();
  Real* y = out.data();
  const Real* g = gamma_.value.data();
  const Real* bt = beta_.value.data();
  for (Eigen::Index r = 0; r < m; ++r)
    for (int k = 0; k < c; ++k) {
      const Real v = (x[r * c + k] - mean[k]) * inv_std_[k];
      xh[r * c + k] = v;
      y[r * c + k] = v * g[k] + bt[k];
    }
  return out;
}

Matrix BatchNorm::backward(const Matrix& grad_output) {
  const Eigen::Index m = grad_output.rows() * spatial_;
  const int c = channels_;
  const Real* dy = grad_output.data();
  const Real* xh = normalized_.data();
  RowVector sum_dy = RowVector::Zero(c), sum_dy_xhat = RowVector::Zero(c);
  for (Eigen::Index r = 0; r < m; ++r)
    for (int k = 0; k < c; ++k) {
      sum_dy[k] += dy[r * c + k];
      sum_dy_xhat[k] += dy[r * c + k] * xh[r * c + k];
    }
  gamma_.grad.row(0) += sum_dy_xhat;
  beta_.grad.row(0) += sum_dy;
  Matrix din(grad_output.rows(), grad_output.cols());
  Real* dx = din.data();
  const RowVector scale = (gamma_.value.row(0).array() * inv_std_.array()).matrix();
  if (used_batch_stats_) {
    const Real inv_m = 1.0 / static_cast<Real>(m);
    const RowVector mean_dy = sum_dy * inv_m, mean_dy_xhat = sum_dy_xhat * inv_m;
    for (Eigen::Index r = 0; r < m; ++r)
      for (int k = 0; k < c; ++k)
        dx[r * c + k] = (dy[r * c + k] - mean_dy[k] - xh[r * c + k] * mean_dy_xhat[k]) * scale[k];
  } else {
    for (Eigen::Index r = 0; r < m; ++r)
      for (int k = 0; k < c; ++k) dx[r * c + k] = dy[r * c + k] * scale[k];
  }
  return din;
}

Linear::Linear(int in_features, int out_features, Rng& rng) {
  if (in_features < 1 || out_features < 1) throw ArgumentError("linear: invalid size");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  weight_.value.resize(in_features, out_features);
  bias_.value.resize(1, out_features);
  init_uniform(weight_.value, bound, rng);
  init_uniform(bias_.value, bound, rng);
  weight_.grad = Matrix::Zero(in_features, out_features);
  bias_.grad = Matrix::Zero(1, out_features);
}

Matrix Linear::forward(const Matrix& input) {
  check_width(input, input_size(), "linear");
  input_ = input;
  Matrix out = input * weight_.value;
  out.rowwise() += bias_.value.row(0);
  return out;
}

void Linear::backward_params(const Matrix& grad_output) {
  weight_.grad.noalias() += input_.transpose() * grad_output;
  bias_.grad += grad_output.colwise().sum();
}

Matrix Linear::backward(const Matrix& grad_output) {
  backward_params(grad_output);
  return grad_output * weight_.value.transpose();
}

Sequential::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Matrix Sequential::forward(const Matrix& input) {
  Matrix x = input;
  for (auto& l : layers_) x = l->forward(x);
  return x;
}

Matrix Sequential::backward(const Matrix& grad_output) {
  Matrix g = grad_output;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::backward_params(const Matrix& grad_output) {
  std::size_t first = 0;
  while (first < layers_.size() && layers_[first]->params().empty()) ++first;
  if (first == layers_.size()) return;
  Matrix g = grad_output;
  for (std::size_t i = layers_.size() - 1; i > first; --i) g = layers_[i]->backward(g);
  layers_[first]->backward_params(g);
}

std::vector<Param*> Sequential::params(const std::string& prefix) {
  std::vector<Param*> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto ps = layers_[i]->params();
    for (std::size_t j = 0; j < ps.size(); ++j) {
      ps[j]->name = prefix + std::to_string(i) + (j == 0 ? ".weight" : ".bias");
      out.push_back(ps[j]);
    }
  }
  return out;
}

std::vector<Param*> Sequential::buffers(const std::string& prefix) {
  std::vector<Param*> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto bs = layers_[i]->buffers();
    for (std::size_t j = 0; j < bs.size(); ++j) {
      bs[j]->name = prefix + std::to_string(i) + (j == 0 ? ".running_mean" : ".running_var");
      out.push_back(bs[j]);
    }
  }
  return out;
}

void Sequential::set_training(bool training) {
  for (auto& l : layers_) l->set_training(training);
}

std::size_t Sequential::parameter_count() {
  std::size_t n = 0;
  for (auto* p : params()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void Sequential::zero_grad() {
  for (auto* p : params()) p->grad.setZero();
}

}  // namespace clpoison::nn
