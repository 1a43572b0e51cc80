#include "clpoison/defenses.hpp"

#include "clpoison/errors.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace clpoison {

namespace {

void check_batch(const Matrix& images, ImageShape shape, const char* op) {
  if (!shape.valid() || images.cols() != shape.size()) {
    throw ArgumentError(std::string(op) + ": rows must hold " + shape.str() + " images");
  }
}

// Mirror index without repeating the edge: -1 -> 1, n -> n - 2.
int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::vector<double> gaussian_1d(int k) {
  const double sigma = 0.3 * ((k - 1) * 0.5 - 1.0) + 0.8;
  std::vector<double> g(static_cast<std::size_t>(k));
  const int r = k / 2;
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    const double d = i - r;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= sum;
  return g;
}

void check_kernel(int k) {
  if (k < 1 || k % 2 == 0) throw ArgumentError("gaussian kernel size must be odd and positive, got " + std::to_string(k));
}

std::string lower_dash(std::string s) {
  for (char& c : s) c = c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

Matrix add_random_noise(const Matrix& images, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw ArgumentError("add_random_noise: sigma must be >= 0");
  Matrix out = images;
  if (sigma == 0.0) return out;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out.data()[i] = std::clamp(out.data()[i] + sigma * rng.normal(), 0.0, 1.0);
  }
  return out;
}

Matrix gaussian_kernel(int k) {
  check_kernel(k);
  const auto g = gaussian_1d(k);
  Matrix out(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) out(i, j) = g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
  return out;
}

Matrix gaussian_smooth(const Matrix& images, ImageShape shape, int k) {
  check_kernel(k);
  check_batch(images, shape, "gaussian_smooth");
  if (k == 1) return images;
  const auto g = gaussian_1d(k);
  const int r = k / 2, h = shape.height, w = shape.width;
  Matrix out(images.rows(), images.cols());
  std::vector<double> tmp(static_cast<std::size_t>(shape.plane()));
  for (Eigen::Index b = 0; b < images.rows(); ++b) {
    for (int c = 0; c < shape.channels; ++c) {
      const Real* src = images.row(b).data() + c * shape.plane();
      Real* dst = out.row(b).data() + c * shape.plane();
      // The kernel is separable: rows first, then columns.
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double s = 0.0;
          for (int t = -r; t <= r; ++t) s += g[static_cast<std::size_t>(t + r)] * src[y * w + reflect(x + t, w)];
          tmp[static_cast<std::size_t>(y * w + x)] = s;
        }
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double s = 0.0;
          for (int t = -r; t <= r; ++t) s += g[static_cast<std::size_t>(t + r)] * tmp[static_cast<std::size_t>(reflect(y + t, h) * w + x)];
          dst[y * w + x] = s;
        }
    }
  }
  return out;
}

Matrix cutout_at(const Matrix& images, ImageShape shape, int hole, int center_y, int center_x) {
  check_batch(images, shape, "cutout");
  if (hole < 0) throw ArgumentError("cutout: hole must be >= 0");
  Matrix out = images;
  const int y0 = std::max(0, center_y - hole / 2), y1 = std::min(shape.height, center_y - hole / 2 + hole);
  const int x0 = std::max(0, center_x - hole / 2), x1 = std::min(shape.width, center_x - hole / 2 + hole);
  for (Eigen::Index b = 0; b < out.rows(); ++b)
    for (int c = 0; c < shape.channels; ++c)
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) out(b, c * shape.plane() + y * shape.width + x) = 0.0;
  return out;
}

Matrix cutout(const Matrix& images, ImageShape shape, int hole, Rng& rng) {
  check_batch(images, shape, "cutout");
  if (hole < 0) throw ArgumentError("cutout: hole must be >= 0");
  Matrix out(images.rows(), images.cols());
  for (Eigen::Index b = 0; b < images.rows(); ++b) {
    const int cy = static_cast<int>(rng.below(static_cast<std::uint64_t>(shape.height)));
    const int cx = static_cast<int>(rng.below(static_cast<std::uint64_t>(shape.width)));
    out.row(b) = cutout_at(images.row(b), shape, hole, cy, cx);
  }
  return out;
}

Matrix usvt_reconstruct(const Matrix& matrix, const Matrix& mask, double drop_prob, double clip_fraction,
                        UsvtThreshold threshold) {
  if (matrix.rows() != mask.rows() || matrix.cols() != mask.cols()) throw ArgumentError("usvt: mask shape mismatch");
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw ArgumentError("usvt: drop probability must lie in [0, 1)");
  if (!(clip_fraction >= 0.0 && clip_fraction <= 1.0)) throw ArgumentError("usvt: clip fraction must lie in [0, 1]");
  const double observed = (mask.array() != 0.0).count();
  if (observed == 0.0) throw DegenerateInputError("usvt: every entry was dropped");

  const Eigen::MatrixXd filled = ((mask.array() != 0.0).select(matrix, 0.0) / (1.0 - drop_prob)).matrix();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(filled, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd s = svd.singularValues();
  const auto r = static_cast<int>(std::min(matrix.rows(), matrix.cols()));
  if (threshold == UsvtThreshold::Rank) {
    const int drop = static_cast<int>(std::ceil(clip_fraction * r - 1e-12));
    for (int i = r - drop; i < r; ++i) s(i) = 0.0;
  } else {
    const double p_obs = observed / static_cast<double>(matrix.size());
    const double tau = 2.01 * std::sqrt(static_cast<double>(std::max(matrix.rows(), matrix.cols())) * p_obs);
    for (int i = 0; i < r; ++i) {
      if (s(i) * (1.0 - drop_prob) < tau) s(i) = 0.0;
    }
  }
  const Eigen::MatrixXd rec = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  return rec.cwiseMax(0.0).cwiseMin(1.0);
}

Matrix matrix_complete_augment(const Matrix& images, ImageShape shape, double drop_prob, double clip_fraction,
                               Rng& rng, UsvtThreshold threshold) {
  check_batch(images, shape, "matrix_complete_augment");
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw ArgumentError("matrix_complete_augment: q must lie in [0, 1)");
  const int h = shape.height, w = shape.width;
  Matrix out(images.rows(), images.cols());
  Matrix mask(h, w);
  for (Eigen::Index b = 0; b < images.rows(); ++b) {
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < drop_prob ? 0.0 : 1.0;
    for (int c = 0; c < shape.channels; ++c) {
      Eigen::Map<const Matrix> channel(images.row(b).data() + c * shape.plane(), h, w);
      Eigen::Map<Matrix> dst(out.row(b).data() + c * shape.plane(), h, w);
      dst = usvt_reconstruct(channel, mask, drop_prob, clip_fraction, threshold);
    }
  }
  return out;
}

std::string to_string(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::None: return "none";
    case DefenseKind::RandomNoise: return "random_noise";
    case DefenseKind::GaussSmooth: return "gauss_smooth";
    case DefenseKind::Cutout: return "cutout";
    case DefenseKind::MatrixCompletion: return "matrix_completion";
  }
  return "unknown";
}

DefenseKind parse_defense_kind(const std::string& name) {
  const std::string n = lower_dash(name);
  for (DefenseKind k : {DefenseKind::None, DefenseKind::RandomNoise, DefenseKind::GaussSmooth, DefenseKind::Cutout,
                        DefenseKind::MatrixCompletion}) {
    if (n == to_string(k)) return k;
  }
  throw ArgumentError("unknown defense '" + name + "'");
}

std::vector<std::string> DefenseTransform::violations() const {
  std::vector<std::string> v;
  if (!(sigma >= 0.0)) v.push_back("defense: sigma must be >= 0");
  if (kernel < 1 || kernel % 2 == 0) v.push_back("defense: kernel must be odd and >= 1");
  if (hole < 0) v.push_back("defense: hole must be >= 0");
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) v.push_back("defense: drop_prob must lie in [0, 1)");
  if (!(clip_fraction >= 0.0 && clip_fraction <= 1.0)) v.push_back("defense: clip_fraction must lie in [0, 1]");
  return v;
}

void DefenseTransform::validate() const {
  auto v = violations();
  if (!v.empty()) throw ConfigError(std::move(v));
}

Matrix DefenseTransform::apply(const Matrix& images, ImageShape shape, Rng& rng) const {
  switch (kind) {
    case DefenseKind::None: return images;
    case DefenseKind::RandomNoise: return add_random_noise(images, sigma, rng);
    case DefenseKind::GaussSmooth: return gaussian_smooth(images, shape, kernel);
    case DefenseKind::Cutout: return cutout(images, shape, hole, rng);
    case DefenseKind::MatrixCompletion:
      return matrix_complete_augment(images, shape, drop_prob, clip_fraction, rng, threshold);
  }
  return images;
}

ViewTransform DefenseTransform::view_transform(ImageShape shape) const {
  validate();
  if (kind == DefenseKind::None) return {};
  const DefenseTransform self = *this;
  return [self, shape](Matrix& views, Rng& rng) { views = self.apply(views, shape, rng); };
}

std::string DefenseTransform::label() const {
  std::ostringstream os;
  os << to_string(kind);
  switch (kind) {
    case DefenseKind::None: break;
    case DefenseKind::RandomNoise: os << "(sigma=" << sigma << ")"; break;
    case DefenseKind::GaussSmooth: os << "(k=" << kernel << ")"; break;
    case DefenseKind::Cutout: os << "(hole=" << hole << ")"; break;
    case DefenseKind::MatrixCompletion:
      os << "(q=" << drop_prob << ",c=" << clip_fraction << (threshold == UsvtThreshold::Absolute ? ",absolute" : "") << ")";
      break;
  }
  return os.str();
}

}  // namespace clpoison
