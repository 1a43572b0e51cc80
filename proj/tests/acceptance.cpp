// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Desk-scale criteria share one set of trained victims and poisons per seed.

#include "clpoison/defenses.hpp"
#include "clpoison/eval_analysis.hpp"
#include "clpoison/losses.hpp"
#include "helpers.hpp"
#include "jacobi_svd.hpp"
#include "nt_xent_oracle.hpp"
#include "pgd_properties.hpp"
#include "toy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

using namespace clpoison;

namespace {

// Tolerances.
constexpr int kPgdCases = 10000;
constexpr double kGradTol = 1e-4;
constexpr double kLossTol = 1e-6;
constexpr double kEmaTol = 1e-10;
constexpr double kUsvtExactTol = 1e-6;
constexpr double kUsvtDropWorst = 0.25;  // calibrated with the Jacobi oracle: worst 0.230
constexpr double kUsvtDropMean = 0.18;   // calibrated mean 0.165
constexpr double kCleanMin = 0.90;
constexpr double kPoisonDrop = 0.15;
constexpr double kOrderGap = 0.03;
constexpr double kFractionSlack = 0.02;
constexpr double kGapRecovered = 0.5;
constexpr double kClassWiseSeparable = 0.99;
constexpr int kSeeds = 3;
constexpr int kDeskIterations = 20;

int failures = 0;

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(int id, bool pass, const std::string& name, const std::string& detail) {
  failures += !pass;
  std::printf("C%-2d %s  %s: %s\n", id, pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

std::string pct(double v) { return fmt(100.0 * v, 3) + "%"; }

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : "/") + fmt(100.0 * x, 3);
  return s;
}

void perturb_momentum(EncoderState& s, Rng& rng) {
  for (auto* p : s.momentum_params())
    p->value += testing::random_matrix(static_cast<int>(p->value.rows()), static_cast<int>(p->value.cols()), rng, 0.1);
}

void pgd_invariants() {
  const auto t0 = std::chrono::steady_clock::now();
  std::string first;
  const int bad = testing::check_pgd_properties(kPgdCases, 2024, first);
  const double t = elapsed(t0);
  report(1, bad == 0 && t < 60.0, "PGD/ball invariants",
         std::to_string(kPgdCases) + " cases, " + std::to_string(bad) + " failed" + (bad ? " (" + first + ")" : "") +
             ", " + fmt(t, 3) + "s");
}

void gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(5);
  bool pass = true;
  std::string detail;
  for (Framework f : {Framework::SimClr, Framework::MocoV2, Framework::Byol}) {
    EncoderState s = EncoderState::create(testing::toy_config(f), 7);
    perturb_momentum(s, rng);
    const ImageShape shape = s.config.arch.input;
    const Matrix x = testing::uniform_matrix(4, shape.size(), rng, 0.3, 0.7);
    ViewConfig views = ViewConfig::identity();
    views.crop_scale_min = 0.5;
    views.flip_prob = 0.5;
    ViewBatch va = ViewBatch::sample(views, shape, 4, rng), vb = ViewBatch::sample(views, shape, 4, rng);
    const Matrix dual = noise_gradient(s, x, va, vb, BranchMode::Dual).grad;
    const Matrix single = noise_gradient(s, x, va, vb, BranchMode::Single).grad;
    const Matrix fd = testing::numeric_gradient(
        [&](const Matrix& y) { return noise_gradient(s, y, va, vb, BranchMode::Dual).loss; }, x, 1e-5);
    const double err = testing::relative_error(dual, fd);
    const bool branches = f == Framework::SimClr ? dual == single : (dual - single).norm() > 1e-8;
    pass = pass && err <= kGradTol && branches;
    detail += to_string(f) + " fd " + fmt(err, 2) + (f == Framework::SimClr ? " dual==single " : " dual!=single ") +
              (branches ? "yes" : "no") + "; ";
  }
  const double t = elapsed(t0);
  report(2, pass && t < 300.0, "dual-branch gradient correctness", detail + fmt(t, 3) + "s");
}

void loss_oracles() {
  Rng rng(3);
  double worst = 0.0;
  for (int B = 2; B <= 4; ++B)
    for (double tau : {0.1, 0.5, 1.0}) {
      const Matrix a = testing::random_matrix(B, 5, rng), b = testing::random_matrix(B, 5, rng);
      worst = std::max(worst, std::abs(info_nce_loss(a, b, tau) - testing::brute_nt_xent(a, b, tau)));
    }
  Matrix p(1, 2), t(1, 2);
  p << 3, 0;
  bool byol = true;
  t << 2, 0;
  byol = byol && byol_loss(p, t) == 0.0;
  t << 0, 5;
  byol = byol && byol_loss(p, t) == 2.0;
  t << -1, 0;
  byol = byol && byol_loss(p, t) == 4.0;

  nn::Param online{"w", Matrix::Constant(2, 2, 3.0), Matrix::Zero(2, 2)};
  nn::Param mom{"w", Matrix::Constant(2, 2, -1.0), Matrix::Zero(2, 2)};
  const double m = 0.99;
  const int n = 50;
  for (int i = 0; i < n; ++i) ema_update({&online}, {&mom}, m);
  const double ema_err = (mom.value.array() - (-1.0 * std::pow(m, n) + 3.0 * (1.0 - std::pow(m, n)))).abs().maxCoeff();

  report(3, worst <= kLossTol && byol && ema_err <= kEmaTol, "loss oracles",
         "NT-Xent max error " + fmt(worst, 2) + ", BYOL fixed points " + (byol ? "exact" : "inexact") +
             ", EMA error " + fmt(ema_err, 2));
}

void usvt() {
  Rng rng(1);
  const Matrix r1 = testing::uniform_matrix(32, 1, rng, 0.1, 1.0) * testing::uniform_matrix(1, 32, rng, 0.1, 1.0);
  const double exact = (usvt_reconstruct(r1, Matrix::Ones(32, 32), 0.0, 0.5) - r1).norm() / r1.norm();

  const double c = 1.0 - 1.0 / 32.0;  // keep the leading singular value
  double total = 0.0, worst = 0.0, oracle_gap = 0.0;
  for (int t = 0; t < 200; ++t) {
    const Matrix m = testing::uniform_matrix(32, 1, rng, 0.2, 1.0) * testing::uniform_matrix(1, 32, rng, 0.2, 1.0);
    Matrix mask(32, 32);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < 0.25 ? 0.0 : 1.0;
    const Matrix rec = usvt_reconstruct(m, mask, 0.25, c);
    oracle_gap = std::max(oracle_gap, (rec - testing::oracle_usvt(m, mask, 0.25, c)).cwiseAbs().maxCoeff());
    const double err = (rec - m).norm() / m.norm();
    total += err;
    worst = std::max(worst, err);
  }

  int rank_ok = 0, rank_checked = 0;
  for (int t = 0; t < 100; ++t) {
    const int h = 4 + static_cast<int>(rng.below(29)), w = 4 + static_cast<int>(rng.below(29));
    const Matrix m = testing::uniform_matrix(h, w, rng, 0.3, 0.7);
    const Matrix rec = usvt_reconstruct(m, Matrix::Ones(h, w), 0.0, 0.5);
    const auto svd = testing::jacobi_svd(rec);
    int rank = 0;
    for (double s : svd.s) rank += s > 1e-9 * svd.s.front();
    ++rank_checked;
    rank_ok += rank <= static_cast<int>(std::ceil(0.5 * std::min(h, w) - 1e-12));
  }
  report(4, exact <= kUsvtExactTol && worst <= kUsvtDropWorst && total / 200.0 <= kUsvtDropMean &&
                oracle_gap <= 1e-8 && rank_ok == rank_checked,
         "USVT", "full observation " + fmt(exact, 2) + ", 25% dropped mean " + fmt(total / 200.0, 3) + " worst " +
                     fmt(worst, 3) + " (bounds " + fmt(kUsvtDropMean) + "/" + fmt(kUsvtDropWorst) +
                     "), oracle gap " + fmt(oracle_gap, 2) + ", rank bound " + std::to_string(rank_ok) + "/" +
                     std::to_string(rank_checked));
}

struct SeedRun {
  double clean = 0, emp = 0, ap = 0, half = 0, defended = 0, moco_dual = 0, moco_single = 0;
  double sep_cl = 0, sep_sup = 0;
  PerturbationSet emp_poison;
};

double victim_accuracy(const LabeledImageDataset& train, const LabeledImageDataset& eval, const FrameworkConfig& cfg,
                       std::uint64_t seed, const PerturbationSet* poison, double fraction,
                       const DefenseTransform& defense = {}) {
  TrainOptions o;
  o.seed = seed;
  o.transform = defense.view_transform(train.shape());
  const LabeledImageDataset data = poison ? apply_perturbations(train, *poison, fraction, seed).first : train;
  EncoderState s = train_encoder(data, cfg, o);
  ProbeOptions p;
  p.seed = seed;
  return linear_probe(s, eval, p);
}

SeedRun desk_seed(int seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t s = static_cast<std::uint64_t>(seed);
  const LabeledImageDataset train = make_synthetic(2, 256, 32, 32, 1 + 10 * s);
  const LabeledImageDataset eval = make_synthetic(2, 256, 32, 32, 2 + 10 * s);
  const FrameworkConfig simclr = FrameworkConfig::desk(Framework::SimClr);
  const FrameworkConfig moco = FrameworkConfig::desk(Framework::MocoV2);
  PgdConfig pgd;
  AttackOptions ao;
  ao.seed = s;
  AttackSchedule sched = AttackSchedule::sample_wise();
  sched.iterations = kDeskIterations;

  SeedRun r;
  r.clean = victim_accuracy(train, eval, simclr, s, nullptr, 0.0);
  r.emp_poison = attack_emp_cl_sample(train, simclr, pgd, sched, ao);
  r.emp = victim_accuracy(train, eval, simclr, s, &r.emp_poison, 1.0);
  r.half = victim_accuracy(train, eval, simclr, s, &r.emp_poison, 0.5);
  DefenseTransform mc;
  mc.kind = DefenseKind::MatrixCompletion;
  r.defended = victim_accuracy(train, eval, simclr, s, &r.emp_poison, 1.0, mc);

  PgdConfig ap_pgd = pgd;
  ap_pgd.steps = kDeskIterations;
  ap_pgd.direction = Direction::Maximize;
  const PerturbationSet ap = attack_ap_cl(train, simclr, ap_pgd, BranchMode::Dual, ao);
  r.ap = victim_accuracy(train, eval, simclr, s, &ap, 1.0);

  for (BranchMode b : {BranchMode::Dual, BranchMode::Single}) {
    AttackSchedule m = sched;
    m.branch_mode = b;
    const PerturbationSet p = attack_emp_cl_sample(train, moco, pgd, m, ao);
    (b == BranchMode::Dual ? r.moco_dual : r.moco_single) = victim_accuracy(train, eval, moco, s, &p, 1.0);
  }

  const PerturbationSet sup = attack_emp_supervised(NoiseMode::SampleWise, train, ClassifierConfig{}, pgd, sched, ao);
  r.sep_cl = noise_separability(r.emp_poison, train.labels(), s);
  r.sep_sup = noise_separability(sup, train.labels(), s);

  std::printf("    seed %d: clean %s emp-cl-s %s ap-cl %s p=0.5 %s mc %s moco dual %s single %s "
              "separability cl %s sup %s (%ss)\n",
              seed, pct(r.clean).c_str(), pct(r.emp).c_str(), pct(r.ap).c_str(), pct(r.half).c_str(),
              pct(r.defended).c_str(), pct(r.moco_dual).c_str(), pct(r.moco_single).c_str(), pct(r.sep_cl).c_str(),
              pct(r.sep_sup).c_str(), fmt(elapsed(t0), 4).c_str());
  std::fflush(stdout);
  return r;
}

void desk_criteria() {
  std::vector<SeedRun> runs;
  for (int s = 0; s < kSeeds; ++s) runs.push_back(desk_seed(s));
  auto col = [&](double SeedRun::*f) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.*f);
    return v;
  };
  const double clean = mean(col(&SeedRun::clean)), emp = mean(col(&SeedRun::emp)), ap = mean(col(&SeedRun::ap));
  const double half = mean(col(&SeedRun::half)), mc = mean(col(&SeedRun::defended));
  const double dual = mean(col(&SeedRun::moco_dual)), single = mean(col(&SeedRun::moco_single));

  report(5, clean >= kCleanMin && clean - emp >= kPoisonDrop, "desk-scale EMP-CL-S poisoning",
         "3-seed mean clean " + pct(clean) + " (" + list(col(&SeedRun::clean)) + "), poisoned " + pct(emp) + " (" +
             list(col(&SeedRun::emp)) + "), drop " + fmt(100 * (clean - emp), 3) + " points");
  report(6, ap - emp >= kOrderGap && clean - ap >= kOrderGap, "attack ordering EMP-CL-S < AP-CL < clean",
         pct(emp) + " < " + pct(ap) + " (" + list(col(&SeedRun::ap)) + ") < " + pct(clean));
  report(7, dual <= single, "MoCo v2 dual-branch at least as strong as single-branch",
         "dual " + pct(dual) + " (" + list(col(&SeedRun::moco_dual)) + ") vs single " + pct(single) + " (" +
             list(col(&SeedRun::moco_single)) + ")");
  report(8, half <= clean + kFractionSlack && emp <= half + kFractionSlack, "poison-fraction monotonicity",
         "p=0 " + pct(clean) + ", p=0.5 " + pct(half) + " (" + list(col(&SeedRun::half)) + "), p=1 " + pct(emp));
  const double recovered = clean > emp ? (mc - emp) / (clean - emp) : 0.0;
  report(9, recovered >= kGapRecovered, "matrix-completion defense",
         "defended " + pct(mc) + " (" + list(col(&SeedRun::defended)) + "), recovers " + pct(recovered) +
             " of the clean-poisoned gap");

  // Class-wise noise on the seed-0 set.
  const LabeledImageDataset train = make_synthetic(2, 256, 32, 32, 1);
  AttackSchedule cw = AttackSchedule::class_wise();
  cw.iterations = kDeskIterations;
  AttackOptions ao;
  const PerturbationSet cls = attack_emp_cl_class(train, FrameworkConfig::desk(Framework::SimClr), PgdConfig{}, cw, ao);
  const double sep_class = noise_separability(cls, train.labels());
  const double sep_cl = mean(col(&SeedRun::sep_cl)), sep_sup = mean(col(&SeedRun::sep_sup));
  report(10, sep_class >= kClassWiseSeparable && sep_sup > sep_cl, "noise separability",
         "class-wise " + pct(sep_class) + ", supervised EMP-S " + pct(sep_sup) + " (" + list(col(&SeedRun::sep_sup)) +
             ") > EMP-CL-S " + pct(sep_cl) + " (" + list(col(&SeedRun::sep_cl)) + ")");

  // Round trip of a real poison, and repeated deterministic cells.
  const std::filesystem::path file = std::filesystem::temp_directory_path() / "clpoison_acceptance_poison.bin";
  write_perturbation_file(file, runs.front().emp_poison);
  const bool round_trip = read_perturbation_file(file) == runs.front().emp_poison &&
                          save_perturbations(read_perturbation_file(file)) == save_perturbations(runs.front().emp_poison);
  std::filesystem::remove(file);
  const LabeledImageDataset small = make_synthetic(2, 16, 8, 8, 5), small_eval = make_synthetic(2, 16, 8, 8, 6);
  CellSpec cell;
  cell.attack.type = AttackType::EmpClSample;
  cell.attack.framework.arch.input = small.shape();
  cell.attack.framework.epochs = 2;
  cell.attack.framework.batch_size = 8;
  cell.attack.schedule.iterations = 2;
  cell.victim.arch.input = small.shape();
  cell.victim.epochs = 3;
  cell.victim.batch_size = 8;
  cell.probe.epochs = 10;
  cell.seed = 9;
  cell.record_wall_time = false;
  const ExperimentResult a = run_cell(small, small_eval, cell), b = run_cell(small, small_eval, cell);
  report(11, round_trip && a.ok() && a == b, "round trip and determinism",
         std::string("poison file ") + (round_trip ? "bit-exact" : "differs") + ", repeated cell " +
             (a.ok() ? (a == b ? "identical" : "differs") : "error: " + a.error) + " (" + result_to_json(a) + ")");
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  pgd_invariants();
  gradient_correctness();
  loss_oracles();
  usvt();
  desk_criteria();
  std::printf("%d of 11 criteria failed, %ss\n", failures, fmt(elapsed(t0), 5).c_str());
  return failures == 0 ? 0 : 1;
}
