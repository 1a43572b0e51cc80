#include "clpoison/errors.hpp"
#include "clpoison/poison.hpp"
#include "helpers.hpp"
#include "pgd_properties.hpp"
#include "toy.hpp"

#include <doctest.h>

using namespace clpoison;

TEST_CASE("PGD and ball projection properties on randomized dyadic cases") {
  std::string failure;
  const int failures = testing::check_pgd_properties(2000, 1, failure);
  INFO(failure);
  CHECK(failures == 0);
}

TEST_CASE("pgd config validation") {
  PgdConfig c;
  CHECK(c.violations().empty());
  CHECK(c.epsilon == doctest::Approx(8.0 / 255.0));
  CHECK(c.alpha == doctest::Approx(0.8 / 255.0));
  c.alpha = 2 * c.epsilon;
  CHECK(c.violations().size() == 1);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  Matrix x = Matrix::Constant(1, 2, 0.5);
  CHECK_THROWS_AS(pgd_step(x, x, c, x), ConfigError);
}

TEST_CASE("non-finite gradients are rejected") {
  PgdConfig c;
  Matrix x = Matrix::Constant(1, 2, 0.5), g = x;
  g(0, 1) = std::nan("");
  CHECK_THROWS_AS(pgd_step(x, g, c, x), NumericalError);
}

TEST_CASE("attack schedules carry the full-scale defaults") {
  const auto s = AttackSchedule::sample_wise();
  CHECK(s.iterations == 200);
  CHECK(s.pgd_steps == 5);
  CHECK(s.data_fraction == 1.0);
  const auto c = AttackSchedule::class_wise();
  CHECK(c.iterations == 600);
  CHECK(c.pgd_steps == 1);
  CHECK(c.data_fraction == doctest::Approx(0.2));
}

namespace {

void check_set(const PerturbationSet& ps, const LabeledImageDataset& ds, NoiseMode mode, double eps) {
  CHECK(ps.mode == mode);
  CHECK(ps.shape == ds.shape());
  CHECK(ps.count() == (mode == NoiseMode::SampleWise ? ds.size() : ds.class_count()));
  CHECK(ps.max_abs() <= static_cast<float>(eps) * (1.0f + 1e-6f));
  CHECK_NOTHROW(ps.validate());
  if (mode == NoiseMode::SampleWise) CHECK(ps.dataset_fingerprint == ds.fingerprint());
}

}  // namespace

TEST_CASE("contrastive attacks produce bounded, reproducible poisons") {
  const auto ds = make_synthetic(2, 6, 4, 4, 1);
  PgdConfig pgd;
  pgd.steps = 3;
  AttackSchedule sch;
  sch.iterations = 2;
  sch.pgd_steps = 2;
  AttackOptions o;
  o.seed = 5;
  int progress = 0;
  o.on_progress = [&](const AttackProgress&) { ++progress; };
  for (Framework f : {Framework::SimClr, Framework::MocoV2, Framework::Byol}) {
    FrameworkConfig c = testing::toy_config(f);
    c.epochs = 1;
    INFO(to_string(f));
    const auto emp = attack_emp_cl_sample(ds, c, pgd, sch, o);
    check_set(emp, ds, NoiseMode::SampleWise, pgd.epsilon);
    CHECK(emp.max_abs() > 0.0f);
    CHECK(attack_emp_cl_sample(ds, c, pgd, sch, o) == emp);
    const auto cw = attack_emp_cl_class(ds, c, pgd, sch, o);
    check_set(cw, ds, NoiseMode::ClassWise, pgd.epsilon);
    const auto ap = attack_ap_cl(ds, c, pgd, BranchMode::Dual, o);
    check_set(ap, ds, NoiseMode::SampleWise, pgd.epsilon);
  }
  CHECK(progress > 0);
}

TEST_CASE("zero budget gives zero noise") {
  const auto ds = make_synthetic(2, 4, 4, 4, 1);
  PgdConfig pgd;
  pgd.epsilon = 0.0;
  AttackSchedule sch;
  sch.iterations = 1;
  FrameworkConfig c = testing::toy_config(Framework::SimClr);
  c.epochs = 1;
  CHECK(attack_emp_cl_sample(ds, c, pgd, sch).max_abs() == 0.0f);
}

TEST_CASE("supervised baselines produce bounded poisons") {
  const auto ds = make_synthetic(2, 6, 4, 4, 1);
  ClassifierConfig cc;
  cc.arch.input = ds.shape();
  cc.arch.conv_channels = {2};
  cc.epochs = 1;
  cc.batch_size = 4;
  PgdConfig pgd;
  pgd.steps = 2;
  AttackSchedule sch;
  sch.iterations = 2;
  sch.pgd_steps = 2;
  check_set(attack_ap_supervised(ds, cc, pgd), ds, NoiseMode::SampleWise, pgd.epsilon);
  check_set(attack_emp_supervised(NoiseMode::SampleWise, ds, cc, pgd, sch), ds, NoiseMode::SampleWise, pgd.epsilon);
  check_set(attack_emp_supervised(NoiseMode::ClassWise, ds, cc, pgd, sch), ds, NoiseMode::ClassWise, pgd.epsilon);
}

TEST_CASE("manifest json names the attack") {
  AttackManifest m;
  m.attack = "emp-cl-s";
  m.framework = "simclr";
  const std::string j = manifest_to_json(m);
  CHECK(j.find("emp-cl-s") != std::string::npos);
  CHECK(j.find("simclr") != std::string::npos);
}
