#include "clpoison/errors.hpp"
#include "clpoison/frameworks.hpp"
#include "clpoison/poison.hpp"
#include "helpers.hpp"
#include "toy.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace clpoison;

TEST_CASE("toy encoders stay under 1k parameters") {
  for (Framework f : {Framework::SimClr, Framework::MocoV2, Framework::Byol}) {
    EncoderState s = EncoderState::create(testing::toy_config(f), 1);
    std::size_t n = 0;
    for (auto* p : s.online_params()) n += static_cast<std::size_t>(p->value.size());
    for (auto* p : s.momentum_params()) n += static_cast<std::size_t>(p->value.size());
    CHECK(n < 1000);
  }
}

TEST_CASE("EMA matches the closed form after n steps with a fixed online network") {
  nn::Param online{"w", Matrix::Constant(2, 2, 3.0), Matrix::Zero(2, 2)};
  nn::Param mom{"w", Matrix::Constant(2, 2, -1.0), Matrix::Zero(2, 2)};
  const double m = 0.9;
  const int n = 25;
  for (int i = 0; i < n; ++i) ema_update({&online}, {&mom}, m);
  const double expected = -1.0 * std::pow(m, n) + 3.0 * (1.0 - std::pow(m, n));
  CHECK(std::abs(mom.value(1, 0) - expected) <= 1e-10);
  ema_update({&online}, {&mom}, 1.0);
  CHECK(std::abs(mom.value(1, 0) - expected) <= 1e-10);
  ema_update({&online}, {&mom}, 0.0);
  CHECK(mom.value(1, 0) == 3.0);
  CHECK_THROWS_AS(ema_update({&online}, {&mom}, 1.5), ArgumentError);
}

TEST_CASE("momentum copies start equal to the online networks") {
  EncoderState s = EncoderState::create(testing::toy_config(Framework::MocoV2), 2);
  auto on = s.online_encoder_params(), mo = s.momentum_params();
  REQUIRE(on.size() == mo.size());
  for (std::size_t i = 0; i < on.size(); ++i) CHECK(on[i]->value == mo[i]->value);
}

TEST_CASE("MoCo queue is FIFO and bounded") {
  EncoderState s = EncoderState::create(testing::toy_config(Framework::MocoV2), 3);
  CHECK(s.queue_capacity() == 6);
  Matrix keys(8, 3);
  for (int i = 0; i < 8; ++i) keys.row(i).setConstant(i);
  s.enqueue(keys.topRows(4));
  s.enqueue(keys.bottomRows(4));
  const Matrix q = s.queue();
  REQUIRE(q.rows() == 6);
  for (int i = 0; i < 6; ++i) CHECK(q(i, 0) == i + 2);  // the two oldest keys were evicted
}

TEST_CASE("noise gradients agree with central finite differences for every framework") {
  Rng rng(5);
  for (Framework f : {Framework::SimClr, Framework::MocoV2, Framework::Byol}) {
    EncoderState s = EncoderState::create(testing::toy_config(f), 7);
    // Move the momentum copies away from the online networks.
    for (auto* p : s.momentum_params()) p->value += testing::random_matrix(static_cast<int>(p->value.rows()), static_cast<int>(p->value.cols()), rng, 0.1);
    const ImageShape shape = s.config.arch.input;
    const Matrix x = testing::uniform_matrix(4, shape.size(), rng, 0.3, 0.7);
    ViewConfig views = ViewConfig::identity();
    views.crop_scale_min = 0.5;
    views.flip_prob = 0.5;
    ViewBatch va = ViewBatch::sample(views, shape, 4, rng), vb = ViewBatch::sample(views, shape, 4, rng);
    const NoiseGradient g = noise_gradient(s, x, va, vb, BranchMode::Dual);
    const Matrix n = testing::numeric_gradient(
        [&](const Matrix& y) { return noise_gradient(s, y, va, vb, BranchMode::Dual).loss; }, x, 1e-5);
    INFO(to_string(f));
    CHECK(testing::relative_error(g.grad, n) <= 1e-4);
  }
}

TEST_CASE("dual equals single for SimCLR and differs for momentum frameworks") {
  Rng rng(6);
  for (Framework f : {Framework::SimClr, Framework::MocoV2, Framework::Byol}) {
    EncoderState s = EncoderState::create(testing::toy_config(f), 8);
    for (auto* p : s.momentum_params()) p->value += testing::random_matrix(static_cast<int>(p->value.rows()), static_cast<int>(p->value.cols()), rng, 0.1);
    const Matrix x = testing::uniform_matrix(4, 48, rng, 0.2, 0.8);
    ViewBatch va = ViewBatch::sample(ViewConfig::identity(), s.config.arch.input, 4, rng);
    ViewBatch vb = ViewBatch::sample(ViewConfig::identity(), s.config.arch.input, 4, rng);
    const Matrix dual = noise_gradient(s, x, va, vb, BranchMode::Dual).grad;
    const Matrix single = noise_gradient(s, x, va, vb, BranchMode::Single).grad;
    if (f == Framework::SimClr) {
      CHECK(dual == single);
    } else {
      CHECK((dual - single).norm() > 1e-8);
    }
  }
}

TEST_CASE("epochs = 0 returns the initialized state") {
  const auto ds = make_synthetic(2, 4, 4, 4, 1);
  FrameworkConfig c = testing::toy_config(Framework::SimClr);
  c.epochs = 0;
  TrainOptions o;
  o.seed = 3;
  EncoderState trained = train_encoder(ds, c, o);
  Rng seeds(3);
  EncoderState fresh = EncoderState::create(c, seeds.next());
  CHECK(trained.parameter_hash() == fresh.parameter_hash());
}

TEST_CASE("training is deterministic per seed and changes the parameters") {
  const auto ds = make_synthetic(2, 8, 4, 4, 1);
  FrameworkConfig c = testing::toy_config(Framework::Byol);
  c.epochs = 2;
  TrainOptions o;
  o.seed = 4;
  std::vector<double> losses;
  o.on_epoch = [&](const EpochLog& e) { losses.push_back(e.loss); };
  EncoderState a = train_encoder(ds, c, o);
  EncoderState b = train_encoder(ds, c, o);
  CHECK(a.parameter_hash() == b.parameter_hash());
  CHECK(losses.size() == 4);
  c.epochs = 0;
  CHECK(train_encoder(ds, c, o).parameter_hash() != a.parameter_hash());
}

TEST_CASE("linear probe leaves the encoder untouched") {
  const auto ds = make_synthetic(2, 10, 4, 4, 1);
  EncoderState s = EncoderState::create(testing::toy_config(Framework::MocoV2), 9);
  const auto before = s.parameter_hash();
  const double acc = linear_probe(s, ds);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK(s.parameter_hash() == before);
}

TEST_CASE("linear probe separates linearly separable features") {
  Rng rng(10);
  Matrix f(200, 2);
  std::vector<int> y(200);
  for (int i = 0; i < 200; ++i) {
    y[static_cast<std::size_t>(i)] = i % 2;
    f(i, 0) = (i % 2 ? 2.0 : -2.0) + 0.3 * rng.normal();
    f(i, 1) = rng.normal();
  }
  CHECK(fit_linear_probe(f, y, 2).second == doctest::Approx(1.0));
}

TEST_CASE("checkpoints round-trip parameters, buffers and config") {
  FrameworkConfig c = testing::toy_config(Framework::Byol);
  EncoderState s = EncoderState::create(c, 11);
  const auto path = std::filesystem::temp_directory_path() / "clpoison_test.ckpt";
  save_checkpoint(path.string(), s);
  EncoderState t = load_checkpoint(path.string());
  CHECK(config_to_json(t.config) == config_to_json(s.config));
  // Parameters are stored at 32-bit precision.
  auto ps = s.online_params(), pt = t.online_params();
  REQUIRE(ps.size() == pt.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    CHECK((ps[i]->value - pt[i]->value).cwiseAbs().maxCoeff() <= 1e-6);
  }
  std::filesystem::remove(path);
}

TEST_CASE("config validation lists problems") {
  FrameworkConfig c = testing::toy_config(Framework::SimClr);
  c.temperature = 0.0;
  c.batch_size = 1;
  CHECK(c.violations().size() >= 2);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(config_to_json(config_from_json(config_to_json(c))) == config_to_json(c));
}
