#include "clpoison/poison.hpp"

#include "clpoison/errors.hpp"
#include "clpoison/losses.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>

namespace clpoison {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

Matrix gather(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

// Splits `indices` into ceil(n / batch) batches of near-equal size, so no batch is tiny.
std::vector<std::vector<int>> balanced_batches(const std::vector<int>& indices, int batch) {
  const int n = static_cast<int>(indices.size());
  std::vector<std::vector<int>> out;
  if (n == 0) return out;
  const int count = (n + batch - 1) / batch;
  int begin = 0;
  for (int b = 0; b < count; ++b) {
    const int end = begin + (n - begin) / (count - b);
    out.emplace_back(indices.begin() + begin, indices.begin() + end);
    begin = end;
  }
  return out;
}

PerturbationSet build_set(NoiseMode mode, const PgdConfig& pgd, const LabeledImageDataset& ds, Matrix delta) {
  const double eps = pgd.epsilon;
  delta = delta.cwiseMin(eps).cwiseMax(-eps);
  const std::uint64_t fp = mode == NoiseMode::SampleWise ? ds.fingerprint() : 0;
  return PerturbationSet::from_matrix(mode, eps, ds.shape(), ds.class_count(), fp, delta);
}

Matrix initial_delta(NoiseMode mode, const PgdConfig& pgd, const LabeledImageDataset& ds, Rng& rng) {
  const Eigen::Index rows = mode == NoiseMode::SampleWise ? ds.size() : ds.class_count();
  Matrix delta = Matrix::Zero(rows, ds.shape().size());
  if (pgd.random_init && pgd.epsilon > 0.0) {
    for (Eigen::Index i = 0; i < delta.size(); ++i) delta.data()[i] = rng.uniform(-pgd.epsilon, pgd.epsilon);
    if (mode == NoiseMode::SampleWise) {
      delta = project_ball(ds.images() + delta, ds.images(), pgd.epsilon) - ds.images();
    }
  }
  return delta;
}

Matrix poisoned_rows(const Matrix& images, const Matrix& delta, const std::vector<int>& rows,
                     const std::vector<int>& delta_rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), images.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        (images.row(rows[i]) + delta.row(delta_rows[static_cast<std::size_t>(rows[i])])).cwiseMax(0.0).cwiseMin(1.0);
  }
  return out;
}

// The error-minimizing alternation shared by the contrastive and supervised attacks.
struct EmpHooks {
  // Trains the model on the given poisoned images (one pass); returns the mean loss.
  std::function<double(const Matrix& images, const std::vector<int>& labels)> model_epoch;
  // Loss gradient with respect to the poisoned images of one batch.
  std::function<Matrix(const Matrix& images, const std::vector<int>& labels)> input_gradient;
  int batch_size = 128;
};

PerturbationSet run_emp(NoiseMode mode, const LabeledImageDataset& clean, const PgdConfig& pgd,
                        const AttackSchedule& schedule, const AttackOptions& options, Rng& rng,
                        const EmpHooks& hooks) {
  const int n = clean.size();
  const Matrix& X = clean.images();
  const std::vector<int>& labels = clean.labels();
  std::vector<int> delta_row(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) delta_row[static_cast<std::size_t>(i)] = mode == NoiseMode::SampleWise ? i : labels[static_cast<std::size_t>(i)];

  Matrix delta = initial_delta(mode, pgd, clean, rng);
  if (schedule.iterations == 0 || pgd.epsilon == 0.0) return build_set(mode, pgd, clean, std::move(delta));

  PgdConfig step_cfg = pgd;
  step_cfg.direction = Direction::Minimize;
  const int subset_size = static_cast<int>(std::lround(schedule.data_fraction * n));
  if (subset_size < 2) throw ArgumentError("error-minimizing attack: phase subset needs at least two samples");

  for (int it = 0; it < schedule.iterations; ++it) {
    const auto t0 = Clock::now();
    std::vector<int> subset;
    if (subset_size == n) {
      subset.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) subset[static_cast<std::size_t>(i)] = i;
    } else {
      const std::vector<int> perm = rng.permutation(n);
      subset.assign(perm.begin(), perm.begin() + subset_size);
      std::sort(subset.begin(), subset.end());
    }
    std::vector<int> subset_labels(subset.size());
    for (std::size_t i = 0; i < subset.size(); ++i) subset_labels[i] = labels[static_cast<std::size_t>(subset[i])];

    double loss = 0.0;
    try {
      for (int e = 0; e < schedule.model_epochs; ++e) {
        loss = hooks.model_epoch(poisoned_rows(X, delta, subset, delta_row), subset_labels);
      }
    } catch (const NumericalError& err) {
      throw AttackError(std::string("model phase diverged: ") + err.what(), it);
    }
    if (!std::isfinite(loss)) throw AttackError("model phase diverged: non-finite loss", it);

    std::vector<int> order = subset;
    rng.shuffle(order);
    const auto batches = balanced_batches(order, hooks.batch_size);
    for (int t = 0; t < schedule.pgd_steps; ++t) {
      Matrix grad = Matrix::Zero(delta.rows(), delta.cols());
      std::vector<int> members(static_cast<std::size_t>(delta.rows()), 0);
      for (const auto& batch : batches) {
        std::vector<int> batch_labels(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) batch_labels[i] = labels[static_cast<std::size_t>(batch[i])];
        Matrix g;
        try {
          g = hooks.input_gradient(poisoned_rows(X, delta, batch, delta_row), batch_labels);
        } catch (const NumericalError& err) {
          throw AttackError(std::string("noise phase failed: ") + err.what(), it);
        }
        if (!g.allFinite()) throw AttackError("noise phase produced a non-finite gradient", it);
        for (std::size_t i = 0; i < batch.size(); ++i) {
          const int r = delta_row[static_cast<std::size_t>(batch[i])];
          grad.row(r) += g.row(static_cast<Eigen::Index>(i));
          ++members[static_cast<std::size_t>(r)];
        }
      }
      for (Eigen::Index r = 0; r < grad.rows(); ++r) {
        if (members[static_cast<std::size_t>(r)] > 1) grad.row(r) /= members[static_cast<std::size_t>(r)];
      }
      if (mode == NoiseMode::SampleWise) {
        delta = pgd_step(X + delta, grad, step_cfg, X) - X;
      } else {
        const Matrix step = grad.unaryExpr([](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); });
        delta = (delta - pgd.alpha * step).cwiseMin(pgd.epsilon).cwiseMax(-pgd.epsilon);
      }
      if (t + 1 == schedule.pgd_steps && mode == NoiseMode::ClassWise && options.on_progress) {
        std::string missing;
        for (std::size_t c = 0; c < members.size(); ++c) {
          if (members[c] == 0) missing += (missing.empty() ? "" : ",") + std::to_string(c);
        }
        if (!missing.empty()) options.on_progress({it, loss, elapsed_ms(t0), "classes absent, delta unchanged: " + missing});
      }
    }
    if (options.on_progress) options.on_progress({it, loss, elapsed_ms(t0), ""});
  }
  return build_set(mode, pgd, clean, std::move(delta));
}

// Backbone plus linear head trained with cross entropy.
class Classifier {
 public:
  Classifier(const ClassifierConfig& cfg, int classes, std::uint64_t seed)
      : cfg_(cfg), optimizer_(cfg.learning_rate, cfg.sgd_momentum, cfg.weight_decay), rng_(seed) {
    FrameworkConfig fc = FrameworkConfig::defaults(Framework::SimClr);
    fc.arch = cfg.arch;
    Rng init(seed ^ 0x5bd1e995ULL);
    EncoderState s = EncoderState::create(fc, init.next());
    backbone_ = std::move(s.backbone);
    head_.add<nn::Linear>(cfg.arch.feature_dim(), classes, init);
  }

  double train_epoch(const Matrix& images, const std::vector<int>& labels, double lr) {
    const int n = static_cast<int>(images.rows());
    const int bs = std::min(cfg_.batch_size, n);
    const std::vector<int> perm = rng_.permutation(n);
    double total = 0.0;
    int batches = 0;
    optimizer_.set_lr(lr);
    for (int i = 0; i + bs <= n; i += bs) {
      std::vector<int> idx(perm.begin() + i, perm.begin() + i + bs);
      std::vector<int> y(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) y[k] = labels[static_cast<std::size_t>(idx[k])];
      ViewBatch views = ViewBatch::sample(cfg_.views, cfg_.arch.input, bs, rng_);
      const Matrix v = views.forward(gather(images, idx));
      backbone_.zero_grad();
      head_.zero_grad();
      Matrix g;
      total += cross_entropy(head_.forward(backbone_.forward(v)), y, g);
      backbone_.backward_params(head_.backward(g));
      auto params = backbone_.params("backbone.");
      auto hp = head_.params("head.");
      params.insert(params.end(), hp.begin(), hp.end());
      optimizer_.step(params);
      ++batches;
    }
    return total / std::max(1, batches);
  }

  Matrix input_gradient(const Matrix& images, const std::vector<int>& labels) {
    ViewBatch views = ViewBatch::sample(cfg_.views, cfg_.arch.input, static_cast<int>(images.rows()), rng_);
    const Matrix v = views.forward(images);
    Matrix g;
    cross_entropy(head_.forward(backbone_.forward(v)), labels, g);
    return views.backward(backbone_.backward(head_.backward(g)));
  }

 private:
  static double cross_entropy(const Matrix& logits, const std::vector<int>& labels, Matrix& grad) {
    grad.resize(logits.rows(), logits.cols());
    double total = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const double mx = logits.row(r).maxCoeff();
      const RowVector e = (logits.row(r).array() - mx).exp().matrix();
      const double z = e.sum();
      const int y = labels[static_cast<std::size_t>(r)];
      total += std::log(z) + mx - logits(r, y);
      grad.row(r) = e / z;
      grad(r, y) -= 1.0;
    }
    grad /= static_cast<double>(logits.rows());
    return total / static_cast<double>(logits.rows());
  }

  ClassifierConfig cfg_;
  nn::Sequential backbone_;
  nn::Sequential head_;
  nn::Sgd optimizer_;
  Rng rng_;
};

}  // namespace

// ---------------------------------------------------------------------------

std::vector<std::string> PgdConfig::violations() const {
  std::vector<std::string> v;
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) v.push_back("PgdConfig: epsilon must be >= 0");
  if (epsilon > 0.0 && !(alpha > 0.0 && alpha <= epsilon)) v.push_back("PgdConfig: alpha must satisfy 0 < alpha <= epsilon");
  if (steps < 0) v.push_back("PgdConfig: steps must be >= 0");
  return v;
}

void PgdConfig::validate() const {
  auto v = violations();
  if (!v.empty()) throw ConfigError(std::move(v));
}

AttackSchedule AttackSchedule::sample_wise() { return {}; }

AttackSchedule AttackSchedule::class_wise() {
  AttackSchedule s;
  s.iterations = 600;
  s.pgd_steps = 1;
  s.data_fraction = 0.2;
  return s;
}

std::vector<std::string> AttackSchedule::violations() const {
  std::vector<std::string> v;
  if (iterations < 0) v.push_back("AttackSchedule: iterations must be >= 0");
  if (pgd_steps < 0) v.push_back("AttackSchedule: pgd_steps must be >= 0");
  if (model_epochs < 0) v.push_back("AttackSchedule: model_epochs must be >= 0");
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) v.push_back("AttackSchedule: data_fraction must lie in (0, 1]");
  return v;
}

void AttackSchedule::validate() const {
  auto v = violations();
  if (!v.empty()) throw ConfigError(std::move(v));
}

Matrix project_ball(const Matrix& z, const Matrix& anchor, double epsilon) {
  if (z.rows() != anchor.rows() || z.cols() != anchor.cols()) throw ArgumentError("project_ball: shape mismatch");
  return z.array().max(anchor.array() - epsilon).min(anchor.array() + epsilon).max(0.0).min(1.0).matrix();
}

Matrix pgd_step(const Matrix& x_current, const Matrix& gradient, const PgdConfig& cfg, const Matrix& x_anchor) {
  cfg.validate();
  if (x_current.rows() != gradient.rows() || x_current.cols() != gradient.cols() ||
      x_current.rows() != x_anchor.rows() || x_current.cols() != x_anchor.cols()) {
    throw ArgumentError("pgd_step: shape mismatch");
  }
  if (!gradient.allFinite()) throw NumericalError("pgd_step: non-finite gradient");
  const double s = cfg.direction == Direction::Maximize ? cfg.alpha : -cfg.alpha;
  const Matrix sign = gradient.unaryExpr([](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); });
  return project_ball(x_current + s * sign, x_anchor, cfg.epsilon);
}

NoiseGradient noise_gradient(EncoderState& state, const Matrix& poisoned, ViewBatch& view_a, ViewBatch& view_b,
                             BranchMode mode) {
  if (static_cast<Eigen::Index>(view_a.size()) != poisoned.rows() ||
      static_cast<Eigen::Index>(view_b.size()) != poisoned.rows()) {
    throw ArgumentError("noise_gradient: view count does not match the batch");
  }
  const Matrix a = view_a.forward(poisoned);
  const Matrix b = view_b.forward(poisoned);
  state.zero_grad();
  const ClPass pass = cl_loss_backward(state, a, b, mode, true);
  NoiseGradient out;
  out.loss = pass.loss;
  out.grad = view_a.backward(pass.grad_a) + view_b.backward(pass.grad_b);
  return out;
}

NoiseGradient noise_gradient(EncoderState& state, const Matrix& poisoned, const ViewConfig& views, Rng& rng,
                             BranchMode mode) {
  const ImageShape shape = state.config.arch.input;
  const int n = static_cast<int>(poisoned.rows());
  ViewBatch a = ViewBatch::sample(views, shape, n, rng);
  ViewBatch b = ViewBatch::sample(views, shape, n, rng);
  return noise_gradient(state, poisoned, a, b, mode);
}

PerturbationSet attack_ap_cl(const LabeledImageDataset& clean, EncoderState& pretrained, const PgdConfig& pgd,
                             BranchMode mode, const AttackOptions& options) {
  pgd.validate();
  if (clean.empty()) throw ArgumentError("attack_ap_cl: dataset is empty");
  if (!(clean.shape() == pretrained.config.arch.input)) throw ArgumentError("attack_ap_cl: dataset shape does not match encoder");
  Rng rng(options.seed);
  Matrix delta = initial_delta(NoiseMode::SampleWise, pgd, clean, rng);
  if (pgd.epsilon == 0.0 || pgd.steps == 0) return build_set(NoiseMode::SampleWise, pgd, clean, std::move(delta));

  PgdConfig cfg = pgd;
  cfg.direction = Direction::Maximize;
  const ViewConfig views = options.attack_views.value_or(pretrained.config.views);
  const Matrix& X = clean.images();
  const auto batches = balanced_batches(rng.permutation(clean.size()), pretrained.config.batch_size);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto t0 = Clock::now();
    const Matrix x0 = gather(X, batches[b]);
    Matrix xp = x0 + gather(delta, batches[b]);
    double loss = 0.0;
    for (int t = 0; t < cfg.steps; ++t) {
      const NoiseGradient ng = noise_gradient(pretrained, xp, views, rng, mode);
      loss = ng.loss;
      xp = pgd_step(xp, ng.grad, cfg, x0);
    }
    for (std::size_t i = 0; i < batches[b].size(); ++i) {
      delta.row(batches[b][i]) = xp.row(static_cast<Eigen::Index>(i)) - x0.row(static_cast<Eigen::Index>(i));
    }
    if (options.on_progress) options.on_progress({static_cast<int>(b), loss, elapsed_ms(t0), "batch"});
  }
  pretrained.zero_grad();
  return build_set(NoiseMode::SampleWise, pgd, clean, std::move(delta));
}

PerturbationSet attack_ap_cl(const LabeledImageDataset& clean, const FrameworkConfig& framework, const PgdConfig& pgd,
                             BranchMode mode, const AttackOptions& options) {
  TrainOptions to;
  to.seed = options.seed;
  EncoderState f0 = train_encoder(clean, framework, to);
  return attack_ap_cl(clean, f0, pgd, mode, options);
}

namespace {

PerturbationSet emp_cl(NoiseMode mode, const LabeledImageDataset& clean, const FrameworkConfig& framework,
                       const PgdConfig& pgd, const AttackSchedule& schedule, const AttackOptions& options) {
  framework.validate();
  pgd.validate();
  schedule.validate();
  if (clean.empty()) throw ArgumentError("error-minimizing attack: dataset is empty");
  if (!(clean.shape() == framework.arch.input)) throw ArgumentError("error-minimizing attack: dataset shape does not match encoder");
  Rng rng(options.seed);
  const std::uint64_t init_seed = rng.next();
  const std::uint64_t view_seed = rng.next();
  ClTrainer trainer(EncoderState::create(framework, init_seed), view_seed);
  const ViewConfig views = options.attack_views.value_or(framework.views);
  EmpHooks hooks;
  hooks.batch_size = framework.batch_size;
  hooks.model_epoch = [&](const Matrix& images, const std::vector<int>&) {
    return trainer.train_epoch(images, framework.learning_rate);
  };
  hooks.input_gradient = [&](const Matrix& images, const std::vector<int>&) {
    return noise_gradient(trainer.state(), images, views, trainer.rng(), schedule.branch_mode).grad;
  };
  return run_emp(mode, clean, pgd, schedule, options, rng, hooks);
}

}  // namespace

PerturbationSet attack_emp_cl_sample(const LabeledImageDataset& clean, const FrameworkConfig& framework,
                                     const PgdConfig& pgd, const AttackSchedule& schedule,
                                     const AttackOptions& options) {
  return emp_cl(NoiseMode::SampleWise, clean, framework, pgd, schedule, options);
}

PerturbationSet attack_emp_cl_class(const LabeledImageDataset& clean, const FrameworkConfig& framework,
                                    const PgdConfig& pgd, const AttackSchedule& schedule,
                                    const AttackOptions& options) {
  return emp_cl(NoiseMode::ClassWise, clean, framework, pgd, schedule, options);
}

ViewConfig ClassifierConfig::default_views() {
  ViewConfig v;
  v.crop_scale_min = 0.5;
  v.jitter_prob = 0.0;
  v.grayscale_prob = 0.0;
  return v;
}

std::vector<std::string> ClassifierConfig::violations() const {
  std::vector<std::string> v = arch.violations();
  if (!(learning_rate > 0.0)) v.push_back("classifier learning_rate must be > 0");
  if (weight_decay < 0.0) v.push_back("classifier weight_decay must be >= 0");
  if (epochs < 0) v.push_back("classifier epochs must be >= 0");
  if (batch_size < 1) v.push_back("classifier batch_size must be >= 1");
  try {
    views.validate();
  } catch (const ArgumentError& e) {
    v.push_back(e.what());
  }
  return v;
}

PerturbationSet attack_ap_supervised(const LabeledImageDataset& clean, const ClassifierConfig& classifier,
                                     const PgdConfig& pgd, const AttackOptions& options) {
  if (auto v = classifier.violations(); !v.empty()) throw ConfigError(std::move(v));
  pgd.validate();
  if (clean.empty()) throw ArgumentError("attack_ap_supervised: dataset is empty");
  if (!(clean.shape() == classifier.arch.input)) throw ArgumentError("attack_ap_supervised: dataset shape does not match classifier");
  Rng rng(options.seed);
  Matrix delta = initial_delta(NoiseMode::SampleWise, pgd, clean, rng);
  if (pgd.epsilon == 0.0 || pgd.steps == 0) return build_set(NoiseMode::SampleWise, pgd, clean, std::move(delta));

  Classifier h(classifier, clean.class_count(), rng.next());
  for (int e = 0; e < classifier.epochs; ++e) {
    const double loss = h.train_epoch(clean.images(), clean.labels(), nn::cosine_lr(classifier.learning_rate, e, classifier.epochs));
    if (!std::isfinite(loss)) throw TrainingError("classifier training diverged", e);
  }
  PgdConfig cfg = pgd;
  cfg.direction = Direction::Maximize;
  const Matrix& X = clean.images();
  for (const auto& batch : balanced_batches(rng.permutation(clean.size()), classifier.batch_size)) {
    std::vector<int> y(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) y[i] = clean.labels()[static_cast<std::size_t>(batch[i])];
    const Matrix x0 = gather(X, batch);
    Matrix xp = x0 + gather(delta, batch);
    for (int t = 0; t < cfg.steps; ++t) xp = pgd_step(xp, h.input_gradient(xp, y), cfg, x0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      delta.row(batch[i]) = xp.row(static_cast<Eigen::Index>(i)) - x0.row(static_cast<Eigen::Index>(i));
    }
  }
  return build_set(NoiseMode::SampleWise, pgd, clean, std::move(delta));
}

PerturbationSet attack_emp_supervised(NoiseMode mode, const LabeledImageDataset& clean,
                                      const ClassifierConfig& classifier, const PgdConfig& pgd,
                                      const AttackSchedule& schedule, const AttackOptions& options) {
  if (auto v = classifier.violations(); !v.empty()) throw ConfigError(std::move(v));
  pgd.validate();
  schedule.validate();
  if (clean.empty()) throw ArgumentError("attack_emp_supervised: dataset is empty");
  if (!(clean.shape() == classifier.arch.input)) throw ArgumentError("attack_emp_supervised: dataset shape does not match classifier");
  Rng rng(options.seed);
  Classifier h(classifier, clean.class_count(), rng.next());
  EmpHooks hooks;
  hooks.batch_size = classifier.batch_size;
  hooks.model_epoch = [&](const Matrix& images, const std::vector<int>& labels) {
    return h.train_epoch(images, labels, classifier.learning_rate);
  };
  hooks.input_gradient = [&](const Matrix& images, const std::vector<int>& labels) {
    return h.input_gradient(images, labels);
  };
  return run_emp(mode, clean, pgd, schedule, options, rng, hooks);
}

std::string manifest_to_json(const AttackManifest& m) {
  nlohmann::ordered_json j;
  j["attack"] = m.attack;
  j["framework"] = m.framework;
  j["branch_mode"] = to_string(m.branch_mode);
  j["epsilon"] = m.epsilon;
  j["alpha"] = m.alpha;
  j["schedule"] = {{"iterations", m.schedule.iterations},
                   {"pgd_steps", m.pgd_steps},
                   {"model_epochs", m.schedule.model_epochs},
                   {"data_fraction", m.schedule.data_fraction}};
  j["seed"] = m.seed;
  j["loss_trace_path"] = m.loss_trace_path;
  return j.dump(2);
}

}  // namespace clpoison
