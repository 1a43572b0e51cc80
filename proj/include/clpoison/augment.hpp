#pragma once

#include "clpoison/rng.hpp"
#include "clpoison/tensor.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace clpoison {

/// Random view augmentation: resized crop, horizontal flip, colour jitter
/// (brightness, contrast, saturation, hue) and random greyscale.
struct ViewConfig {
  double crop_scale_min = 0.08;
  double crop_scale_max = 1.0;
  double crop_ratio_min = 3.0 / 4.0;
  double crop_ratio_max = 4.0 / 3.0;
  double flip_prob = 0.5;
  double jitter_prob = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double grayscale_prob = 0.2;

  /// Every augmentation off: views equal the input.
  static ViewConfig identity();
  /// Throws ArgumentError on out-of-range values (crop scale must lie in (0, 1]).
  void validate() const;
};

/// The concrete random draw for one view of one image.
struct ViewParams {
  double top = 0.0;  // crop box in source pixel units
  double left = 0.0;
  double crop_height = 0.0;
  double crop_width = 0.0;
  bool flip = false;
  bool jitter = false;
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;  // rotation as a fraction of a full turn
  bool grayscale = false;
};

ViewParams sample_view_params(const ViewConfig& cfg, ImageShape shape, Rng& rng);

/// One realized view. forward() records what backward() needs, so the
/// augmentation is differentiable with respect to its input image (the
/// vector-Jacobian product is exact; clamps pass zero gradient when saturated).
class View {
 public:
  View(ImageShape shape, ViewParams params);

  RowVector forward(const Eigen::Ref<const RowVector>& image);
  RowVector backward(const Eigen::Ref<const RowVector>& grad_output) const;
  const ViewParams& params() const { return params_; }

 private:
  struct Tap {
    int lo = 0;
    int hi = 0;
    double w = 0.0;  // weight of hi
  };
  enum class Op { Brightness, Contrast, Saturation, Hue, Grayscale };
  struct Stage {
    Op op;
    std::vector<std::uint8_t> pass;  // 1 where the output clamp was inactive
  };

  RowVector resample(const RowVector& in) const;
  RowVector resample_adjoint(const RowVector& g) const;

  ImageShape shape_;
  ViewParams params_;
  std::vector<Tap> ytaps_;
  std::vector<Tap> xtaps_;
  Eigen::Matrix3d hue_matrix_;
  std::vector<Stage> stages_;
};

/// Views of a whole batch (one View per row).
class ViewBatch {
 public:
  ViewBatch() = default;
  ViewBatch(ImageShape shape, std::vector<ViewParams> params);
  static ViewBatch sample(const ViewConfig& cfg, ImageShape shape, int count, Rng& rng);

  Matrix forward(const Matrix& images);
  Matrix backward(const Matrix& grad_output) const;
  std::size_t size() const { return views_.size(); }

 private:
  ImageShape shape_;
  std::vector<View> views_;
};

/// Two independently augmented views of one image.
std::pair<RowVector, RowVector> generate_views(const Eigen::Ref<const RowVector>& image, ImageShape shape,
                                               const ViewConfig& cfg, Rng& rng);

}  // namespace clpoison
