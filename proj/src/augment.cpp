#include "clpoison/augment.hpp"

#include "clpoison/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace clpoison {

namespace {

constexpr double kLuma[3] = {0.299, 0.587, 0.114};

Eigen::Matrix3d yiq_rotation(double turns) {
  Eigen::Matrix3d m;
  m << 0.299, 0.587, 0.114, 0.596, -0.274, -0.322, 0.211, -0.523, 0.312;
  const double t = turns * 2.0 * std::numbers::pi;
  Eigen::Matrix3d r;
  r << 1, 0, 0, 0, std::cos(t), -std::sin(t), 0, std::sin(t), std::cos(t);
  return m.inverse() * r * m;
}

double clamp01(double v, std::uint8_t& pass) {
  if (v < 0.0) {
    pass = 0;
    return 0.0;
  }
  if (v > 1.0) {
    pass = 0;
    return 1.0;
  }
  pass = 1;
  return v;
}

}  // namespace

ViewConfig ViewConfig::identity() {
  ViewConfig c;
  c.crop_scale_min = c.crop_scale_max = 1.0;
  c.flip_prob = 0.0;
  c.jitter_prob = 0.0;
  c.brightness = c.contrast = c.saturation = c.hue = 0.0;
  c.grayscale_prob = 0.0;
  return c;
}

void ViewConfig::validate() const {
  if (!(crop_scale_min > 0.0 && crop_scale_max <= 1.0 && crop_scale_min <= crop_scale_max)) {
    throw ArgumentError("view crop scale must satisfy 0 < min <= max <= 1");
  }
  if (!(crop_ratio_min > 0.0 && crop_ratio_min <= crop_ratio_max)) {
    throw ArgumentError("view crop ratio must satisfy 0 < min <= max");
  }
  for (double p : {flip_prob, jitter_prob, grayscale_prob}) {
    if (p < 0.0 || p > 1.0) throw ArgumentError("view probabilities must lie in [0, 1]");
  }
  for (double s : {brightness, contrast, saturation}) {
    if (s < 0.0 || s > 1.0) throw ArgumentError("jitter strengths must lie in [0, 1]");
  }
  if (hue < 0.0 || hue > 0.5) throw ArgumentError("hue jitter must lie in [0, 0.5]");
}

ViewParams sample_view_params(const ViewConfig& cfg, ImageShape shape, Rng& rng) {
  cfg.validate();
  ViewParams p;
  const double H = shape.height, W = shape.width;
  p.crop_height = H;
  p.crop_width = W;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double scale = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
    const double ratio =
        std::exp(rng.uniform(std::log(cfg.crop_ratio_min), std::log(cfg.crop_ratio_max)));
    const double w = std::sqrt(scale * ratio);
    const double h = std::sqrt(scale / ratio);
    if (w <= 1.0 && h <= 1.0) {
      p.crop_width = w * W;
      p.crop_height = h * H;
      p.left = rng.uniform(0.0, W - p.crop_width);
      p.top = rng.uniform(0.0, H - p.crop_height);
      break;
    }
  }
  p.flip = rng.bernoulli(cfg.flip_prob);
  p.jitter = rng.bernoulli(cfg.jitter_prob);
  if (p.jitter) {
    p.brightness = rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness);
    p.contrast = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast);
    p.saturation = rng.uniform(1.0 - cfg.saturation, 1.0 + cfg.saturation);
    p.hue = rng.uniform(-cfg.hue, cfg.hue);
  }
  p.grayscale = rng.bernoulli(cfg.grayscale_prob);
  return p;
}

View::View(ImageShape shape, ViewParams params) : shape_(shape), params_(params) {
  const int H = shape.height, W = shape.width;
  auto taps = [](int n, double start, double extent, bool reverse) {
    std::vector<Tap> out(static_cast<std::size_t>(n));
    for (int o = 0; o < n; ++o) {
      const int src = reverse ? n - 1 - o : o;
      double s = start + (src + 0.5) * (extent / n) - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(n - 1));
      Tap t;
      t.lo = static_cast<int>(std::floor(s));
      t.hi = std::min(t.lo + 1, n - 1);
      t.w = s - t.lo;
      out[static_cast<std::size_t>(o)] = t;
    }
    return out;
  };
  ytaps_ = taps(H, params.top, params.crop_height, false);
  xtaps_ = taps(W, params.left, params.crop_width, params.flip);
  hue_matrix_ = yiq_rotation(params.hue);
}

RowVector View::resample(const RowVector& in) const {
  const int H = shape_.height, W = shape_.width, plane = shape_.plane();
  RowVector out(in.size());
  for (int c = 0; c < shape_.channels; ++c) {
    const Real* src = in.data() + c * plane;
    Real* dst = out.data() + c * plane;
    for (int oy = 0; oy < H; ++oy) {
      const Tap& ty = ytaps_[static_cast<std::size_t>(oy)];
      const Real* r0 = src + ty.lo * W;
      const Real* r1 = src + ty.hi * W;
      for (int ox = 0; ox < W; ++ox) {
        const Tap& tx = xtaps_[static_cast<std::size_t>(ox)];
        const double top = r0[tx.lo] + tx.w * (r0[tx.hi] - r0[tx.lo]);
        const double bot = r1[tx.lo] + tx.w * (r1[tx.hi] - r1[tx.lo]);
        dst[oy * W + ox] = top + ty.w * (bot - top);
      }
    }
  }
  return out;
}

RowVector View::resample_adjoint(const RowVector& g) const {
  const int H = shape_.height, W = shape_.width, plane = shape_.plane();
  RowVector out = RowVector::Zero(g.size());
  for (int c = 0; c < shape_.channels; ++c) {
    const Real* src = g.data() + c * plane;
    Real* dst = out.data() + c * plane;
    for (int oy = 0; oy < H; ++oy) {
      const Tap& ty = ytaps_[static_cast<std::size_t>(oy)];
      Real* r0 = dst + ty.lo * W;
      Real* r1 = dst + ty.hi * W;
      for (int ox = 0; ox < W; ++ox) {
        const Tap& tx = xtaps_[static_cast<std::size_t>(ox)];
        const double v = src[oy * W + ox];
        const double vt = v * (1.0 - ty.w), vb = v * ty.w;
        r0[tx.lo] += vt * (1.0 - tx.w);
        r0[tx.hi] += vt * tx.w;
        r1[tx.lo] += vb * (1.0 - tx.w);
        r1[tx.hi] += vb * tx.w;
      }
    }
  }
  return out;
}

RowVector View::forward(const Eigen::Ref<const RowVector>& image) {
  if (image.size() != shape_.size()) throw ArgumentError("view: image size does not match shape");
  stages_.clear();
  RowVector v = resample(image);
  const int plane = shape_.plane();
  const int n = static_cast<int>(v.size());
  const bool colour = shape_.channels == 3;

  auto gray_at = [&](const RowVector& x, int p) {
    return kLuma[0] * x(p) + kLuma[1] * x(plane + p) + kLuma[2] * x(2 * plane + p);
  };

  if (params_.jitter) {
    {
      Stage s{Op::Brightness, std::vector<std::uint8_t>(static_cast<std::size_t>(n))};
      for (int i = 0; i < n; ++i) v(i) = clamp01(params_.brightness * v(i), s.pass[static_cast<std::size_t>(i)]);
      stages_.push_back(std::move(s));
    }
    {
      double mean = 0.0;
      if (colour) {
        for (int p = 0; p < plane; ++p) mean += gray_at(v, p);
        mean /= plane;
      } else {
        mean = v.mean();
      }
      Stage s{Op::Contrast, std::vector<std::uint8_t>(static_cast<std::size_t>(n))};
      const double c = params_.contrast;
      for (int i = 0; i < n; ++i) v(i) = clamp01(c * v(i) + (1.0 - c) * mean, s.pass[static_cast<std::size_t>(i)]);
      stages_.push_back(std::move(s));
    }
    if (colour) {
      Stage s{Op::Saturation, std::vector<std::uint8_t>(static_cast<std::size_t>(n))};
      const double k = params_.saturation;
      for (int p = 0; p < plane; ++p) {
        const double g = gray_at(v, p);
        for (int ch = 0; ch < 3; ++ch) {
          const int i = ch * plane + p;
          v(i) = clamp01(k * v(i) + (1.0 - k) * g, s.pass[static_cast<std::size_t>(i)]);
        }
      }
      stages_.push_back(std::move(s));

      Stage h{Op::Hue, std::vector<std::uint8_t>(static_cast<std::size_t>(n))};
      for (int p = 0; p < plane; ++p) {
        const Eigen::Vector3d px(v(p), v(plane + p), v(2 * plane + p));
        const Eigen::Vector3d q = hue_matrix_ * px;
        for (int ch = 0; ch < 3; ++ch) {
          const int i = ch * plane + p;
          v(i) = clamp01(q(ch), h.pass[static_cast<std::size_t>(i)]);
        }
      }
      stages_.push_back(std::move(h));
    }
  }
  if (params_.grayscale && colour) {
    for (int p = 0; p < plane; ++p) {
      const double g = gray_at(v, p);
      v(p) = v(plane + p) = v(2 * plane + p) = g;
    }
    stages_.push_back(Stage{Op::Grayscale, {}});
  }
  return v;
}

RowVector View::backward(const Eigen::Ref<const RowVector>& grad_output) const {
  RowVector g = grad_output;
  const int plane = shape_.plane();
  const int n = static_cast<int>(g.size());
  const bool colour = shape_.channels == 3;
  auto mask = [&](const Stage& s) {
    for (int i = 0; i < n; ++i) {
      if (!s.pass[static_cast<std::size_t>(i)]) g(i) = 0.0;
    }
  };
  for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
    const Stage& s = *it;
    switch (s.op) {
      case Op::Grayscale:
        for (int p = 0; p < plane; ++p) {
          const double sum = g(p) + g(plane + p) + g(2 * plane + p);
          for (int ch = 0; ch < 3; ++ch) g(ch * plane + p) = kLuma[ch] * sum;
        }
        break;
      case Op::Hue:
        mask(s);
        for (int p = 0; p < plane; ++p) {
          const Eigen::Vector3d gp(g(p), g(plane + p), g(2 * plane + p));
          const Eigen::Vector3d q = hue_matrix_.transpose() * gp;
          for (int ch = 0; ch < 3; ++ch) g(ch * plane + p) = q(ch);
        }
        break;
      case Op::Saturation: {
        mask(s);
        const double k = params_.saturation;
        for (int p = 0; p < plane; ++p) {
          const double sum = g(p) + g(plane + p) + g(2 * plane + p);
          for (int ch = 0; ch < 3; ++ch) {
            const int i = ch * plane + p;
            g(i) = k * g(i) + (1.0 - k) * kLuma[ch] * sum;
          }
        }
        break;
      }
      case Op::Contrast: {
        mask(s);
        const double c = params_.contrast;
        const double total = g.sum();
        if (colour) {
          for (int ch = 0; ch < 3; ++ch)
            for (int p = 0; p < plane; ++p) {
              const int i = ch * plane + p;
              g(i) = c * g(i) + (1.0 - c) * total * kLuma[ch] / plane;
            }
        } else {
          const double share = (1.0 - c) * total / n;
          for (int i = 0; i < n; ++i) g(i) = c * g(i) + share;
        }
        break;
      }
      case Op::Brightness:
        mask(s);
        g *= params_.brightness;
        break;
    }
  }
  return resample_adjoint(g);
}

ViewBatch::ViewBatch(ImageShape shape, std::vector<ViewParams> params) : shape_(shape) {
  views_.reserve(params.size());
  for (const auto& p : params) views_.emplace_back(shape, p);
}

ViewBatch ViewBatch::sample(const ViewConfig& cfg, ImageShape shape, int count, Rng& rng) {
  std::vector<ViewParams> params;
  params.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) params.push_back(sample_view_params(cfg, shape, rng));
  return {shape, std::move(params)};
}

Matrix ViewBatch::forward(const Matrix& images) {
  if (static_cast<std::size_t>(images.rows()) != views_.size()) {
    throw ArgumentError("view batch: row count does not match the number of views");
  }
  Matrix out(images.rows(), images.cols());
  for (Eigen::Index i = 0; i < images.rows(); ++i) {
    out.row(i) = views_[static_cast<std::size_t>(i)].forward(images.row(i));
  }
  return out;
}

Matrix ViewBatch::backward(const Matrix& grad_output) const {
  Matrix out(grad_output.rows(), grad_output.cols());
  for (Eigen::Index i = 0; i < grad_output.rows(); ++i) {
    out.row(i) = views_[static_cast<std::size_t>(i)].backward(grad_output.row(i));
  }
  return out;
}

std::pair<RowVector, RowVector> generate_views(const Eigen::Ref<const RowVector>& image, ImageShape shape,
                                               const ViewConfig& cfg, Rng& rng) {
  if (image.size() > 0 && (image.minCoeff() < 0.0 || image.maxCoeff() > 1.0)) {
    throw ArgumentError("generate_views: image must lie in [0, 1]");
  }
  View a(shape, sample_view_params(cfg, shape, rng));
  View b(shape, sample_view_params(cfg, shape, rng));
  return {a.forward(image), b.forward(image)};
}

}  // namespace clpoison
