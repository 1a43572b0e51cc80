#include "clpoison/datasets.hpp"

#include "clpoison/errors.hpp"
#include "clpoison/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

namespace clpoison {

namespace {

std::uint64_t hash_dataset(const ImageShape& shape, const Matrix& images,
                           const std::vector<int>& labels, int class_count) {
  Fnv1a h;
  h.update_value(static_cast<std::int32_t>(shape.channels));
  h.update_value(static_cast<std::int32_t>(shape.height));
  h.update_value(static_cast<std::int32_t>(shape.width));
  h.update_value(static_cast<std::int32_t>(class_count));
  for (int y : labels) h.update_value(static_cast<std::int32_t>(y));
  h.update(images.data(), static_cast<std::size_t>(images.size()) * sizeof(Real));
  return h.digest();
}

}  // namespace

LabeledImageDataset::LabeledImageDataset(ImageShape shape, Matrix images, std::vector<int> labels,
                                         int class_count)
    : shape_(shape), images_(std::move(images)), labels_(std::move(labels)), class_count_(class_count) {
  if (!shape_.valid()) throw ArgumentError("dataset: invalid image shape " + shape_.str());
  if (class_count_ < 1) throw ArgumentError("dataset: class_count must be positive");
  if (images_.rows() != static_cast<Eigen::Index>(labels_.size())) {
    throw ArgumentError("dataset: image and label counts differ");
  }
  if (images_.cols() != shape_.size()) throw ArgumentError("dataset: image width does not match shape");
  for (int y : labels_) {
    if (y < 0 || y >= class_count_) throw ArgumentError("dataset: label out of range");
  }
  if (images_.size() > 0 && (images_.minCoeff() < 0.0 || images_.maxCoeff() > 1.0)) {
    throw ArgumentError("dataset: pixel values must lie in [0, 1]");
  }
  fingerprint_ = hash_dataset(shape_, images_, labels_, class_count_);
}

LabeledImageDataset LabeledImageDataset::subset(std::span<const int> indices) const {
  Matrix imgs(static_cast<Eigen::Index>(indices.size()), images_.cols());
  std::vector<int> ys;
  ys.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int k = indices[i];
    if (k < 0 || k >= size()) throw ArgumentError("dataset: subset index out of range");
    imgs.row(static_cast<Eigen::Index>(i)) = images_.row(k);
    ys.push_back(labels_[static_cast<std::size_t>(k)]);
  }
  return {shape_, std::move(imgs), std::move(ys), class_count_};
}

LabeledImageDataset LabeledImageDataset::with_images(Matrix images) const {
  return {shape_, std::move(images), labels_, class_count_};
}

LabeledImageDataset make_synthetic(int class_count, int per_class, int height, int width,
                                   std::uint64_t seed, const SyntheticOptions& opt) {
  if (class_count < 2) throw ArgumentError("make_synthetic: class_count must be >= 2");
  if (per_class < 1) throw ArgumentError("make_synthetic: per_class must be >= 1");
  if (height < 1 || width < 1 || opt.channels < 1) throw ArgumentError("make_synthetic: invalid image size");
  if (opt.frequencies.empty()) throw ArgumentError("make_synthetic: frequencies must not be empty");
  for (int f : opt.frequencies) {
    if (f < 1) throw ArgumentError("make_synthetic: frequencies must be positive");
  }

  const ImageShape shape{opt.channels, height, width};
  const int plane = shape.plane();
  std::vector<int> freqs = opt.frequencies;
  while (2 * static_cast<int>(freqs.size()) < class_count) freqs.push_back(freqs.back() + 2);
  const int k = 2 * static_cast<int>(freqs.size());
  const int own = std::max(1, k / (2 * class_count));

  Rng trng(opt.template_seed);
  const std::vector<int> order = trng.permutation(k);
  Matrix boost = Matrix::Zero(class_count, k);
  for (int c = 0; c < class_count; ++c)
    for (int t = 0; t < own; ++t) boost(c, order[static_cast<std::size_t>((c * own + t) % k)]) = opt.separation;
  // Expected amplitude, so `amplitude` sets the typical texture contrast.
  const double mean_amp = std::exp(0.5 * opt.spread * opt.spread) *
                          (1.0 + (std::exp(opt.separation) - 1.0) * own / static_cast<double>(k));
  const double scale = opt.amplitude / (mean_amp * std::sqrt(static_cast<double>(k)));

  Rng rng(seed);
  const int n = class_count * per_class;
  Matrix images(n, shape.size());
  std::vector<int> labels(static_cast<std::size_t>(n));
  RowVector pattern(plane);
  for (int i = 0; i < n; ++i) {
    const int y = i / per_class;
    labels[static_cast<std::size_t>(i)] = y;
    pattern.setZero();
    for (int j = 0; j < k; ++j) {
      const double a = scale * std::exp(boost(y, j) + opt.spread * rng.normal());
      const double phase = rng.uniform() * 2.0 * std::numbers::pi;
      const int f = freqs[static_cast<std::size_t>(j / 2)];
      const bool vertical = j % 2 == 1;
      const int extent = vertical ? width : height;
      for (int yy = 0; yy < height; ++yy)
        for (int xx = 0; xx < width; ++xx) {
          const double u = vertical ? xx : yy;
          pattern(yy * width + xx) += a * std::cos(2.0 * std::numbers::pi * f * u / extent + phase);
        }
    }
    const double base = opt.base + opt.brightness * rng.uniform(-1.0, 1.0);
    for (int ch = 0; ch < shape.channels; ++ch) {
      for (int p = 0; p < plane; ++p) {
        const double v = base + pattern(p) + opt.pixel_noise * rng.uniform(-1.0, 1.0);
        images(i, ch * plane + p) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return {shape, std::move(images), std::move(labels), class_count};
}

LabeledImageDataset load_cifar_batches(const std::vector<std::filesystem::path>& files, int class_count) {
  constexpr int kPixels = 3 * 32 * 32;
  constexpr int kRecord = kPixels + 1;
  std::vector<unsigned char> raw;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw ArgumentError("cannot open dataset batch " + f.string());
    raw.insert(raw.end(), std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  if (raw.empty() || raw.size() % kRecord != 0) {
    throw FormatError("dataset batch size is not a multiple of the record size");
  }
  const auto n = static_cast<Eigen::Index>(raw.size() / kRecord);
  Matrix images(n, kPixels);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const unsigned char* rec = raw.data() + i * kRecord;
    labels[static_cast<std::size_t>(i)] = rec[0];
    for (int p = 0; p < kPixels; ++p) images(i, p) = rec[1 + p] / 255.0;
  }
  return {ImageShape{3, 32, 32}, std::move(images), std::move(labels), class_count};
}

std::string to_string(NoiseMode mode) {
  return mode == NoiseMode::SampleWise ? "sample-wise" : "class-wise";
}

std::span<const float> PerturbationSet::delta(int i) const {
  if (i < 0 || i >= count()) throw ArgumentError("perturbation index out of range");
  return {deltas.data() + static_cast<std::size_t>(i) * shape.size(), static_cast<std::size_t>(shape.size())};
}

float PerturbationSet::max_abs() const {
  float m = 0.0f;
  for (float d : deltas) m = std::max(m, std::fabs(d));
  return m;
}

Matrix PerturbationSet::to_matrix() const {
  Matrix m(count(), shape.size());
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = deltas[static_cast<std::size_t>(i)];
  return m;
}

PerturbationSet PerturbationSet::from_matrix(NoiseMode mode, double epsilon, ImageShape shape,
                                             int class_count, std::uint64_t fingerprint,
                                             const Matrix& deltas) {
  if (deltas.cols() != shape.size()) throw ArgumentError("perturbation width does not match shape");
  PerturbationSet ps;
  ps.mode = mode;
  ps.epsilon = static_cast<float>(epsilon);
  ps.shape = shape;
  ps.class_count = class_count;
  ps.dataset_fingerprint = mode == NoiseMode::SampleWise ? fingerprint : 0;
  ps.deltas.resize(static_cast<std::size_t>(deltas.size()));
  for (Eigen::Index i = 0; i < deltas.size(); ++i) ps.deltas[static_cast<std::size_t>(i)] = static_cast<float>(deltas.data()[i]);
  return ps;
}

PerturbationSet PerturbationSet::zeros_like(const LabeledImageDataset& ds, NoiseMode mode, double epsilon) {
  const int rows = mode == NoiseMode::SampleWise ? ds.size() : ds.class_count();
  return from_matrix(mode, epsilon, ds.shape(), ds.class_count(), ds.fingerprint(),
                     Matrix::Zero(rows, ds.shape().size()));
}

void PerturbationSet::validate() const {
  if (!std::isfinite(epsilon) || epsilon < 0.0f) throw IntegrityError("perturbation epsilon is invalid");
  if (shape.size() <= 0 || deltas.size() % static_cast<std::size_t>(shape.size()) != 0) {
    throw IntegrityError("perturbation payload does not match its shape");
  }
  if (mode == NoiseMode::ClassWise && count() != class_count) {
    throw IntegrityError("class-wise set must hold one delta per class");
  }
  for (float d : deltas) {
    if (!std::isfinite(d) || std::fabs(d) > epsilon) {
      throw IntegrityError("perturbation exceeds its epsilon bound");
    }
  }
}

std::vector<int> select_poisoned(int dataset_size, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw ArgumentError("poison fraction must lie in [0, 1]");
  const auto k = static_cast<int>(std::lround(fraction * dataset_size));
  Rng rng(seed);
  auto perm = rng.permutation(dataset_size);
  std::vector<int> idx(perm.begin(), perm.begin() + k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::pair<LabeledImageDataset, PoisonApplication> apply_perturbations(
    const LabeledImageDataset& ds, const PerturbationSet& ps, double fraction, std::uint64_t seed) {
  if (ps.shape != ds.shape()) throw ArgumentError("perturbation shape " + ps.shape.str() +
                                                  " does not match dataset " + ds.shape().str());
  if (ps.mode == NoiseMode::SampleWise) {
    if (ps.dataset_fingerprint != ds.fingerprint()) {
      throw PoisonMismatchError("sample-wise perturbations were built for a different dataset");
    }
    if (ps.count() != ds.size()) throw ArgumentError("sample-wise perturbation count != dataset size");
  } else if (ps.count() != ds.class_count()) {
    throw ArgumentError("class-wise perturbation count != class count");
  }

  PoisonApplication app{fraction, seed, select_poisoned(ds.size(), fraction, seed)};
  Matrix images = ds.images();
  for (int i : app.poisoned_indices) {
    const int row = ps.mode == NoiseMode::SampleWise ? i : ds.labels()[static_cast<std::size_t>(i)];
    const auto d = ps.delta(row);
    for (int p = 0; p < ds.shape().size(); ++p) {
      images(i, p) = std::clamp(images(i, p) + static_cast<Real>(d[static_cast<std::size_t>(p)]), 0.0, 1.0);
    }
  }
  return {ds.with_images(std::move(images)), std::move(app)};
}

namespace {

constexpr char kMagic[4] = {'C', 'L', 'P', 'N'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 2 + 1 + 4 + 4 * 5 + 8;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  template <typename T>
  T le() {
    if (pos_ + sizeof(T) > in_.size()) throw FormatError("poison file is truncated");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, &bits, sizeof(T));
    return v;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> save_perturbations(const PerturbationSet& ps) {
  ps.validate();
  Writer w;
  w.out.reserve(kHeaderBytes + ps.deltas.size() * 4);
  w.bytes(kMagic, 4);
  w.le<std::uint16_t>(kVersion);
  w.le<std::uint8_t>(static_cast<std::uint8_t>(ps.mode));
  w.le<float>(ps.epsilon);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ps.class_count));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ps.count()));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ps.shape.channels));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ps.shape.height));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ps.shape.width));
  w.le<std::uint64_t>(ps.mode == NoiseMode::SampleWise ? ps.dataset_fingerprint : 0);
  for (float d : ps.deltas) w.le<float>(d);
  return std::move(w.out);
}

PerturbationSet load_perturbations(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw FormatError("not a poison file (bad magic)");
  }
  Reader r(bytes.subspan(4));
  const auto version = r.le<std::uint16_t>();
  if (version != kVersion) throw FormatError("unsupported poison file version " + std::to_string(version));
  const auto mode = r.le<std::uint8_t>();
  if (mode > 1) throw FormatError("unknown poison mode byte");
  PerturbationSet ps;
  ps.mode = static_cast<NoiseMode>(mode);
  ps.epsilon = r.le<float>();
  ps.class_count = static_cast<int>(r.le<std::uint32_t>());
  const auto count = r.le<std::uint32_t>();
  ps.shape.channels = static_cast<int>(r.le<std::uint32_t>());
  ps.shape.height = static_cast<int>(r.le<std::uint32_t>());
  ps.shape.width = static_cast<int>(r.le<std::uint32_t>());
  ps.dataset_fingerprint = r.le<std::uint64_t>();
  const std::uint64_t values = static_cast<std::uint64_t>(count) * ps.shape.channels * ps.shape.height * ps.shape.width;
  if (r.remaining() < values * 4) throw FormatError("poison file is truncated");
  if (r.remaining() > values * 4) throw FormatError("poison file has trailing bytes");
  ps.deltas.resize(values);
  for (auto& d : ps.deltas) d = r.le<float>();
  ps.validate();
  return ps;
}

void write_perturbation_file(const std::filesystem::path& path, const PerturbationSet& ps) {
  const auto bytes = save_perturbations(ps);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

PerturbationSet read_perturbation_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_perturbations(bytes);
}

}  // namespace clpoison
