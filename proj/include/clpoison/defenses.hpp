#pragma once

#include "clpoison/frameworks.hpp"
#include "clpoison/rng.hpp"
#include "clpoison/tensor.hpp"

#include <string>
#include <vector>

namespace clpoison {

// All image functions take a batch, one (C, H, W) image per row, and return a
// new batch of the same shape with values in [0, 1].

/// clamp(x + n, 0, 1) with n ~ N(0, sigma^2) i.i.d. per pixel.
Matrix add_random_noise(const Matrix& images, double sigma, Rng& rng);

/// sigma = 0.3 * ((k - 1) / 2 - 1) + 0.8, weights normalized to sum to 1.
Matrix gaussian_kernel(int k);
/// Per-channel k x k Gaussian blur with reflect padding (edge pixel not repeated).
/// Linear; the weights are positive and sum to 1, so [0, 1] inputs stay in range.
/// Throws ArgumentError for even or non-positive k.
Matrix gaussian_smooth(const Matrix& images, ImageShape shape, int k);

/// Zeroes a hole x hole square in every channel; the center is uniform over the
/// image and the square is clipped at the borders.
Matrix cutout(const Matrix& images, ImageShape shape, int hole, Rng& rng);
/// Same with a fixed center (row, column) for every image.
Matrix cutout_at(const Matrix& images, ImageShape shape, int hole, int center_y, int center_x);

enum class UsvtThreshold {
  /// Zero the smallest ceil(c * min(H, W)) singular values.
  Rank,
  /// Keep singular values of the zero-filled matrix above (2 + 0.01) * sqrt(max(H, W) * p_obs).
  Absolute,
};

/// Low-rank completion of a single matrix. `mask` is 1 where an entry was
/// observed and 0 where it was dropped; dropped entries are zero-filled and the
/// observed ones rescaled by 1 / (1 - q). The result is clamped to [0, 1].
/// Throws DegenerateInputError when no entry is observed.
Matrix usvt_reconstruct(const Matrix& matrix, const Matrix& mask, double drop_prob, double clip_fraction,
                        UsvtThreshold threshold = UsvtThreshold::Rank);

/// Drops pixels with probability q (one mask shared by all channels of an
/// image) and reconstructs every channel with usvt_reconstruct.
Matrix matrix_complete_augment(const Matrix& images, ImageShape shape, double drop_prob, double clip_fraction,
                               Rng& rng, UsvtThreshold threshold = UsvtThreshold::Rank);

enum class DefenseKind { None, RandomNoise, GaussSmooth, Cutout, MatrixCompletion };

std::string to_string(DefenseKind kind);
/// Accepts "none", "random_noise", "gauss_smooth", "cutout", "matrix_completion"
/// (hyphens allowed in place of underscores).
DefenseKind parse_defense_kind(const std::string& name);

struct DefenseTransform {
  DefenseKind kind = DefenseKind::None;
  double sigma = 8.0 / 255.0;   // random_noise
  int kernel = 3;               // gauss_smooth
  int hole = 16;                // cutout
  double drop_prob = 0.25;      // matrix_completion
  double clip_fraction = 0.5;   // matrix_completion
  UsvtThreshold threshold = UsvtThreshold::Rank;

  std::vector<std::string> violations() const;
  void validate() const;  // throws ConfigError

  Matrix apply(const Matrix& images, ImageShape shape, Rng& rng) const;
  /// Hook for victim training: applied to each augmented view batch.
  ViewTransform view_transform(ImageShape shape) const;
  /// Short label for result tables, e.g. "matrix_completion(q=0.25,c=0.5)".
  std::string label() const;
};

}  // namespace clpoison
