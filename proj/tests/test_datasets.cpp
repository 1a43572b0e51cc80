#include "clpoison/datasets.hpp"
#include "clpoison/errors.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace clpoison;

TEST_CASE("synthetic data: shape, range, class-major labels, determinism") {
  const auto a = make_synthetic(3, 10, 8, 8, 5);
  CHECK(a.size() == 30);
  CHECK(a.shape() == ImageShape{3, 8, 8});
  CHECK(a.images().minCoeff() >= 0.0);
  CHECK(a.images().maxCoeff() <= 1.0);
  for (int i = 0; i < 30; ++i) CHECK(a.labels()[static_cast<std::size_t>(i)] == i / 10);
  const auto b = make_synthetic(3, 10, 8, 8, 5);
  CHECK(a.images() == b.images());
  CHECK(a.fingerprint() == b.fingerprint());
  const auto c = make_synthetic(3, 10, 8, 8, 6);
  CHECK(a.fingerprint() != c.fingerprint());
  CHECK_THROWS_AS(make_synthetic(1, 10, 8, 8, 5), ArgumentError);
}

TEST_CASE("dataset construction validates its inputs") {
  CHECK_THROWS_AS(LabeledImageDataset(ImageShape{1, 2, 2}, Matrix::Constant(1, 4, 1.5), {0}, 2), ArgumentError);
  CHECK_THROWS_AS(LabeledImageDataset(ImageShape{1, 2, 2}, Matrix::Constant(1, 4, 0.5), {2}, 2), ArgumentError);
  CHECK_THROWS_AS(LabeledImageDataset(ImageShape{1, 2, 2}, Matrix::Constant(2, 4, 0.5), {0}, 2), ArgumentError);
}

TEST_CASE("poison selection picks round(p * n) distinct sorted indices") {
  for (double p : {0.0, 0.2, 0.5, 1.0}) {
    const auto idx = select_poisoned(101, p, 7);
    CHECK(idx.size() == static_cast<std::size_t>(std::lround(p * 101)));
    CHECK(std::set<int>(idx.begin(), idx.end()).size() == idx.size());
    CHECK(std::is_sorted(idx.begin(), idx.end()));
  }
  CHECK(select_poisoned(50, 0.5, 1) == select_poisoned(50, 0.5, 1));
  CHECK_THROWS_AS(select_poisoned(10, 1.5, 1), ArgumentError);
}

TEST_CASE("applying perturbations touches only the selected rows and clamps") {
  const auto ds = make_synthetic(2, 8, 4, 4, 1);
  Rng rng(2);
  const double eps = 8.0 / 255.0;
  const Matrix d = testing::uniform_matrix(ds.size(), ds.shape().size(), rng, -eps, eps);
  const auto ps = PerturbationSet::from_matrix(NoiseMode::SampleWise, eps, ds.shape(), 2, ds.fingerprint(), d);
  const auto [poisoned, info] = apply_perturbations(ds, ps, 0.5, 3);
  CHECK(info.poisoned_indices.size() == 8);
  std::set<int> chosen(info.poisoned_indices.begin(), info.poisoned_indices.end());
  for (int i = 0; i < ds.size(); ++i) {
    const RowVector diff = poisoned.images().row(i) - ds.images().row(i);
    if (chosen.count(i)) {
      CHECK(diff.cwiseAbs().maxCoeff() <= eps + 1e-6);
      CHECK(diff.cwiseAbs().maxCoeff() > 0.0);
    } else {
      CHECK(diff.cwiseAbs().maxCoeff() == 0.0);
    }
  }
  CHECK(poisoned.labels() == ds.labels());
  const auto other = make_synthetic(2, 8, 4, 4, 9);
  CHECK_THROWS_AS(apply_perturbations(other, ps, 1.0, 3), PoisonMismatchError);
}

TEST_CASE("class-wise perturbations add the class vector") {
  const auto ds = make_synthetic(2, 3, 2, 2, 1);
  Matrix d(2, 12);
  d.row(0).setConstant(0.01);
  d.row(1).setConstant(-0.01);
  const auto ps = PerturbationSet::from_matrix(NoiseMode::ClassWise, 0.02, ds.shape(), 2, 0, d);
  const auto poisoned = apply_perturbations(ds, ps, 1.0, 0).first;
  for (int i = 0; i < ds.size(); ++i) {
    const double expected = ds.labels()[static_cast<std::size_t>(i)] == 0 ? 0.01 : -0.01;
    const RowVector want = (ds.images().row(i).array() + expected).min(1.0).max(0.0).matrix();
    CHECK((poisoned.images().row(i) - want).cwiseAbs().maxCoeff() <= 1e-7);
  }
}

TEST_CASE("poison files round-trip bit-exactly and reject corruption") {
  Rng rng(4);
  const ImageShape shape{3, 4, 4};
  const Matrix d = testing::uniform_matrix(5, shape.size(), rng, -0.03, 0.03);
  const auto ps = PerturbationSet::from_matrix(NoiseMode::SampleWise, 0.03, shape, 2, 0xabcdef, d);
  const auto bytes = save_perturbations(ps);
  const auto back = load_perturbations(bytes);
  CHECK(back == ps);
  CHECK(save_perturbations(back) == bytes);

  auto bad = bytes;
  bad[0] ^= 0xff;
  CHECK_THROWS_AS(load_perturbations(bad), FormatError);
  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(load_perturbations(cut), FormatError);

  const auto path = std::filesystem::temp_directory_path() / "clpoison_roundtrip.bin";
  write_perturbation_file(path, ps);
  CHECK(read_perturbation_file(path) == ps);
  std::filesystem::remove(path);
}

TEST_CASE("perturbations beyond epsilon fail validation") {
  Matrix d = Matrix::Constant(1, 4, 0.05);
  const auto ps = PerturbationSet::from_matrix(NoiseMode::SampleWise, 0.03, ImageShape{1, 2, 2}, 2, 1, d);
  CHECK_THROWS_AS(ps.validate(), IntegrityError);
}

TEST_CASE("cifar-style batches load with CHW pixels scaled to [0, 1]") {
  const auto path = std::filesystem::temp_directory_path() / "clpoison_fake_batch.bin";
  {
    std::ofstream os(path, std::ios::binary);
    for (int r = 0; r < 2; ++r) {
      os.put(static_cast<char>(r == 0 ? 3 : 7));
      for (int i = 0; i < 3072; ++i) os.put(static_cast<char>(i % 256));
    }
  }
  const auto ds = load_cifar_batches({path});
  CHECK(ds.size() == 2);
  CHECK(ds.labels() == std::vector<int>{3, 7});
  CHECK(ds.images()(0, 255) == doctest::Approx(1.0));
  CHECK(ds.images()(1, 1) == doctest::Approx(1.0 / 255.0));
  {
    std::ofstream os(path, std::ios::binary);
    os.put(1);
  }
  CHECK_THROWS_AS(load_cifar_batches({path}), FormatError);
  std::filesystem::remove(path);
}
