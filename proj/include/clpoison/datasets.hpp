#pragma once

#include "clpoison/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace clpoison {

/// Images in [0, 1] with integer class labels. Immutable once constructed.
class LabeledImageDataset {
 public:
  LabeledImageDataset() = default;
  /// Validates shape, label range and pixel range; throws ArgumentError.
  LabeledImageDataset(ImageShape shape, Matrix images, std::vector<int> labels, int class_count);

  const ImageShape& shape() const { return shape_; }
  const Matrix& images() const { return images_; }
  const std::vector<int>& labels() const { return labels_; }
  int class_count() const { return class_count_; }
  int size() const { return static_cast<int>(labels_.size()); }
  bool empty() const { return labels_.empty(); }
  std::uint64_t fingerprint() const { return fingerprint_; }

  LabeledImageDataset subset(std::span<const int> indices) const;
  /// Same labels, new pixels (e.g. after poisoning or a defense).
  LabeledImageDataset with_images(Matrix images) const;

 private:
  ImageShape shape_;
  Matrix images_;
  std::vector<int> labels_;
  int class_count_ = 0;
  std::uint64_t fingerprint_ = 0;
};

/// Knobs of the synthetic generator. Class structure is fixed by template_seed,
/// so datasets drawn with different sample seeds describe the same task.
struct SyntheticOptions {
  int channels = 3;
  /// Grating frequencies in cycles per image side; each is used horizontally and
  /// vertically. Extended upward in steps of 2 when there are fewer than
  /// class_count texture channels.
  std::vector<int> frequencies{4, 8};
  double separation = 1.3;   // log-amplitude boost of a class's own channels
  double spread = 0.5;       // log-amplitude standard deviation per channel
  double amplitude = 0.035;  // pixel amplitude of the texture sum
  double base = 0.5;         // mean grey level
  double brightness = 0.15;  // per-sample grey offset range around the base
  double pixel_noise = 0.02; // uniform i.i.d. pixel noise half-width
  std::uint64_t template_seed = 12345;
};

/// Desk-scale stand-in for natural images: greyscale textures made of horizontal
/// and vertical gratings with random per-sample phases and log-normal
/// amplitudes. Each class boosts the amplitude of its own channels, so the class
/// lives in texture statistics that survive cropping and flipping but are not
/// linearly visible in pixel space.
LabeledImageDataset make_synthetic(int class_count, int per_class, int height, int width,
                                   std::uint64_t seed, const SyntheticOptions& options = {});

/// Reads CIFAR-10 style binary batches (1 label byte + 3072 CHW pixel bytes per record).
LabeledImageDataset load_cifar_batches(const std::vector<std::filesystem::path>& files,
                                       int class_count = 10);

enum class NoiseMode : std::uint8_t { SampleWise = 0, ClassWise = 1 };

std::string to_string(NoiseMode mode);

/// Poisoning perturbations: one delta per sample (sample-wise) or per class.
///
/// Deltas are stored at 32-bit precision, exactly as serialized, so a save/load
/// round trip is lossless.
struct PerturbationSet {
  NoiseMode mode = NoiseMode::SampleWise;
  float epsilon = 0.0f;
  ImageShape shape;
  int class_count = 0;
  std::uint64_t dataset_fingerprint = 0;  // zero for class-wise sets
  std::vector<float> deltas;               // count() rows of shape.size() values

  int count() const { return shape.size() == 0 ? 0 : static_cast<int>(deltas.size()) / shape.size(); }
  std::span<const float> delta(int i) const;
  float max_abs() const;
  Matrix to_matrix() const;

  /// Builds a set from real-valued deltas; clips nothing, so callers must stay within epsilon.
  static PerturbationSet from_matrix(NoiseMode mode, double epsilon, ImageShape shape,
                                     int class_count, std::uint64_t fingerprint,
                                     const Matrix& deltas);
  static PerturbationSet zeros_like(const LabeledImageDataset& ds, NoiseMode mode, double epsilon);

  /// Throws IntegrityError when any |delta| exceeds epsilon or counts are inconsistent.
  void validate() const;

  bool operator==(const PerturbationSet&) const = default;
};

struct PoisonApplication {
  double fraction = 0.0;
  std::uint64_t selection_seed = 0;
  std::vector<int> poisoned_indices;  // sorted, unique
};

/// Indices poisoned for fraction p: a uniformly random subset of size round(p * n).
std::vector<int> select_poisoned(int dataset_size, double fraction, std::uint64_t seed);

/// Adds deltas to the selected samples and clamps to [0, 1]; labels are untouched.
std::pair<LabeledImageDataset, PoisonApplication> apply_perturbations(
    const LabeledImageDataset& ds, const PerturbationSet& ps, double fraction, std::uint64_t seed);

std::vector<std::uint8_t> save_perturbations(const PerturbationSet& ps);
PerturbationSet load_perturbations(std::span<const std::uint8_t> bytes);

void write_perturbation_file(const std::filesystem::path& path, const PerturbationSet& ps);
PerturbationSet read_perturbation_file(const std::filesystem::path& path);

}  // namespace clpoison
