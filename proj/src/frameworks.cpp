#include "clpoison/frameworks.hpp"

#include "clpoison/errors.hpp"
#include "clpoison/losses.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace clpoison {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

nn::Sequential make_backbone(const EncoderArch& a, Rng& rng) {
  nn::Sequential s;
  s.add<nn::ChannelsLast>(a.input);
  nn::MapShape m{a.input.height, a.input.width, a.input.channels};
  for (int c : a.conv_channels) {
    auto& conv = s.add<nn::Conv2d>(m, c, a.kernel, a.stride, a.padding, rng);
    m = conv.output_shape();
    if (a.batch_norm) s.add<nn::BatchNorm>(c, m.height * m.width);
    s.add<nn::Relu>(m.size());
  }
  if (!a.conv_channels.empty()) s.add<nn::GlobalAvgPool>(m);
  return s;
}

nn::Sequential make_mlp(int in, int hidden, int out, bool batch_norm, Rng& rng) {
  nn::Sequential s;
  s.add<nn::Linear>(in, hidden, rng);
  if (batch_norm) s.add<nn::BatchNorm>(hidden);
  s.add<nn::Relu>(hidden);
  s.add<nn::Linear>(hidden, out, rng);
  return s;
}

Matrix stack(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

Matrix gather_rows(const Matrix& m, const std::vector<int>& idx, std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Eigen::Index>(end - begin), m.cols());
  for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = m.row(idx[i]);
  return out;
}

}  // namespace

std::string to_string(Framework framework) {
  switch (framework) {
    case Framework::SimClr: return "simclr";
    case Framework::MocoV2: return "mocov2";
    case Framework::Byol: return "byol";
  }
  return "unknown";
}

Framework parse_framework(const std::string& name) {
  const std::string n = lower(name);
  if (n == "simclr") return Framework::SimClr;
  if (n == "moco" || n == "mocov2" || n == "moco-v2" || n == "moco_v2") return Framework::MocoV2;
  if (n == "byol") return Framework::Byol;
  throw ArgumentError("unknown framework '" + name + "'");
}

std::string to_string(BranchMode mode) { return mode == BranchMode::Dual ? "dual" : "single"; }

BranchMode parse_branch_mode(const std::string& name) {
  const std::string n = lower(name);
  if (n == "dual") return BranchMode::Dual;
  if (n == "single") return BranchMode::Single;
  throw ArgumentError("unknown branch mode '" + name + "'");
}

std::vector<std::string> EncoderArch::violations() const {
  std::vector<std::string> v;
  if (!input.valid()) v.push_back("encoder input shape must be positive");
  for (int c : conv_channels) {
    if (c <= 0) v.push_back("encoder conv channel counts must be positive");
  }
  if (kernel <= 0 || stride <= 0 || padding < 0) v.push_back("encoder kernel/stride must be positive, padding >= 0");
  if (projector_hidden <= 0 || projector_dim <= 0) v.push_back("projector widths must be positive");
  return v;
}

FrameworkConfig FrameworkConfig::defaults(Framework framework) {
  FrameworkConfig c;
  c.framework = framework;
  switch (framework) {
    case Framework::SimClr:
      c.temperature = 0.5;
      c.learning_rate = 0.5;
      c.momentum = 0.0;
      break;
    case Framework::MocoV2:
      c.temperature = 0.2;
      c.learning_rate = 0.3;
      c.momentum = 0.99;
      c.views.crop_scale_min = 0.2;
      break;
    case Framework::Byol:
      c.temperature = 0.5;  // unused by the BYOL loss
      c.learning_rate = 1.0;
      c.momentum = 0.999;
      c.views.saturation = 0.2;
      break;
  }
  return c;
}

FrameworkConfig FrameworkConfig::desk(Framework framework) {
  FrameworkConfig c = defaults(framework);
  c.epochs = 50;
  c.batch_size = 128;
  c.queue_size = 256;
  c.learning_rate = 0.1;
  c.views.crop_scale_min = 0.5;
  c.views.jitter_prob = 0.0;
  c.views.grayscale_prob = 0.0;
  return c;
}

std::vector<std::string> FrameworkConfig::violations() const {
  std::vector<std::string> v = arch.violations();
  if (!(temperature > 0.0)) v.push_back("temperature must be > 0");
  if (!(learning_rate > 0.0)) v.push_back("learning_rate must be > 0");
  if (weight_decay < 0.0) v.push_back("weight_decay must be >= 0");
  if (sgd_momentum < 0.0 || sgd_momentum >= 1.0) v.push_back("sgd_momentum must lie in [0, 1)");
  if (momentum < 0.0 || momentum > 1.0) v.push_back("momentum must lie in [0, 1]");
  if (epochs < 0) v.push_back("epochs must be >= 0");
  if (batch_size < 2) v.push_back("batch_size must be >= 2");
  if (framework == Framework::MocoV2 && queue_size < 0) v.push_back("queue_size must be >= 0");
  try {
    views.validate();
  } catch (const ArgumentError& e) {
    v.push_back(e.what());
  }
  return v;
}

void FrameworkConfig::validate() const {
  auto v = violations();
  if (!v.empty()) throw ConfigError(std::move(v));
}

std::string config_to_json(const FrameworkConfig& c) {
  nlohmann::ordered_json j;
  j["framework"] = to_string(c.framework);
  j["temperature"] = c.temperature;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["sgd_momentum"] = c.sgd_momentum;
  j["momentum"] = c.momentum;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["queue_size"] = c.queue_size;
  const ViewConfig& v = c.views;
  j["views"] = {{"crop_scale_min", v.crop_scale_min}, {"crop_scale_max", v.crop_scale_max},
                {"crop_ratio_min", v.crop_ratio_min}, {"crop_ratio_max", v.crop_ratio_max},
                {"flip_prob", v.flip_prob},           {"jitter_prob", v.jitter_prob},
                {"brightness", v.brightness},         {"contrast", v.contrast},
                {"saturation", v.saturation},         {"hue", v.hue},
                {"grayscale_prob", v.grayscale_prob}};
  const EncoderArch& a = c.arch;
  j["arch"] = {{"input", {a.input.channels, a.input.height, a.input.width}},
               {"conv_channels", a.conv_channels},
               {"kernel", a.kernel},
               {"stride", a.stride},
               {"padding", a.padding},
               {"projector_hidden", a.projector_hidden},
               {"projector_dim", a.projector_dim},
               {"batch_norm", a.batch_norm}};
  return j.dump();
}

FrameworkConfig config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    FrameworkConfig c = FrameworkConfig::defaults(parse_framework(j.at("framework").get<std::string>()));
    c.temperature = j.at("temperature");
    c.learning_rate = j.at("learning_rate");
    c.weight_decay = j.at("weight_decay");
    c.sgd_momentum = j.at("sgd_momentum");
    c.momentum = j.at("momentum");
    c.epochs = j.at("epochs");
    c.batch_size = j.at("batch_size");
    c.queue_size = j.at("queue_size");
    const auto& v = j.at("views");
    c.views.crop_scale_min = v.at("crop_scale_min");
    c.views.crop_scale_max = v.at("crop_scale_max");
    c.views.crop_ratio_min = v.at("crop_ratio_min");
    c.views.crop_ratio_max = v.at("crop_ratio_max");
    c.views.flip_prob = v.at("flip_prob");
    c.views.jitter_prob = v.at("jitter_prob");
    c.views.brightness = v.at("brightness");
    c.views.contrast = v.at("contrast");
    c.views.saturation = v.at("saturation");
    c.views.hue = v.at("hue");
    c.views.grayscale_prob = v.at("grayscale_prob");
    const auto& a = j.at("arch");
    c.arch.input = {a.at("input").at(0), a.at("input").at(1), a.at("input").at(2)};
    c.arch.conv_channels = a.at("conv_channels").get<std::vector<int>>();
    c.arch.kernel = a.at("kernel");
    c.arch.stride = a.at("stride");
    c.arch.padding = a.at("padding");
    c.arch.projector_hidden = a.at("projector_hidden");
    c.arch.projector_dim = a.at("projector_dim");
    c.arch.batch_norm = a.value("batch_norm", true);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("framework config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

EncoderState EncoderState::create(const FrameworkConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderState s;
  s.config = config;
  Rng rng(seed);
  Rng brng = rng.fork(1), prng = rng.fork(2), qrng = rng.fork(3), hrng = rng.fork(4);
  const EncoderArch& a = config.arch;
  s.backbone = make_backbone(a, brng);
  s.projector = make_mlp(a.feature_dim(), a.projector_hidden, a.projector_dim, a.batch_norm, prng);
  if (config.framework == Framework::Byol) {
    s.predictor = make_mlp(a.projector_dim, a.projector_hidden, a.projector_dim, a.batch_norm, hrng);
  }
  if (config.framework != Framework::SimClr) {
    s.momentum_backbone = s.backbone;
    s.momentum_projector = s.projector;
  }
  if (config.framework == Framework::MocoV2 && config.queue_size > 0) {
    Matrix q(config.queue_size, a.projector_dim);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = qrng.normal();
    s.queue_ = l2_normalize_rows(q);
  }
  return s;
}

Matrix EncoderState::features(const Matrix& images) {
  constexpr Eigen::Index chunk = 256;
  backbone.set_training(false);
  Matrix out(images.rows(), backbone.output_size());
  for (Eigen::Index i = 0; i < images.rows(); i += chunk) {
    const Eigen::Index n = std::min(chunk, images.rows() - i);
    out.middleRows(i, n) = backbone.forward(images.middleRows(i, n));
  }
  backbone.set_training(true);
  return out;
}

std::vector<nn::Param*> EncoderState::buffers() {
  std::vector<nn::Param*> out;
  const std::pair<nn::Sequential*, const char*> nets[] = {{&backbone, "backbone."},
                                                          {&projector, "projector."},
                                                          {&predictor, "predictor."},
                                                          {&momentum_backbone, "momentum_backbone."},
                                                          {&momentum_projector, "momentum_projector."}};
  for (const auto& [net, prefix] : nets) {
    auto b = net->buffers(prefix);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

std::vector<nn::Param*> EncoderState::online_encoder_params() {
  auto p = backbone.params("backbone.");
  auto q = projector.params("projector.");
  p.insert(p.end(), q.begin(), q.end());
  return p;
}

std::vector<nn::Param*> EncoderState::online_params() {
  auto p = online_encoder_params();
  auto q = predictor.params("predictor.");
  p.insert(p.end(), q.begin(), q.end());
  return p;
}

std::vector<nn::Param*> EncoderState::momentum_params() {
  auto p = momentum_backbone.params("momentum_backbone.");
  auto q = momentum_projector.params("momentum_projector.");
  p.insert(p.end(), q.begin(), q.end());
  return p;
}

void EncoderState::zero_grad() {
  backbone.zero_grad();
  projector.zero_grad();
  predictor.zero_grad();
  momentum_backbone.zero_grad();
  momentum_projector.zero_grad();
}

Matrix EncoderState::queue() const {
  Matrix out(queue_.rows(), queue_.cols());
  const Eigen::Index n = queue_.rows();
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = queue_.row((queue_head_ + i) % n);
  return out;
}

void EncoderState::enqueue(const Matrix& keys) {
  const Eigen::Index n = queue_.rows();
  if (n == 0) return;
  if (keys.cols() != queue_.cols()) throw ArgumentError("enqueue: key width does not match the queue");
  // The ring is always full, so the head is both the oldest entry and the next slot.
  for (Eigen::Index i = 0; i < keys.rows(); ++i) {
    queue_.row(queue_head_) = keys.row(i);
    queue_head_ = static_cast<int>((queue_head_ + 1) % n);
  }
}

std::uint64_t EncoderState::parameter_hash() {
  Fnv1a h;
  for (auto* list : {&backbone, &projector, &predictor, &momentum_backbone, &momentum_projector}) {
    for (nn::Param* p : list->params()) h.update(p->value.data(), sizeof(Real) * static_cast<std::size_t>(p->value.size()));
  }
  for (nn::Param* p : buffers()) h.update(p->value.data(), sizeof(Real) * static_cast<std::size_t>(p->value.size()));
  h.update(queue_.data(), sizeof(Real) * static_cast<std::size_t>(queue_.size()));
  return h.digest();
}

void ema_update(const std::vector<nn::Param*>& online, const std::vector<nn::Param*>& momentum, double m) {
  if (m < 0.0 || m > 1.0) throw ArgumentError("ema_update: m must lie in [0, 1]");
  if (online.size() != momentum.size()) throw ArgumentError("ema_update: parameter lists differ in length");
  for (std::size_t i = 0; i < online.size(); ++i) {
    if (online[i]->value.rows() != momentum[i]->value.rows() ||
        online[i]->value.cols() != momentum[i]->value.cols()) {
      throw ArgumentError("ema_update: shape mismatch at parameter " + online[i]->name);
    }
  }
  for (std::size_t i = 0; i < online.size(); ++i) {
    momentum[i]->value = m * momentum[i]->value + (1.0 - m) * online[i]->value;
  }
}

ClPass cl_loss_backward(EncoderState& s, const Matrix& va, const Matrix& vb, BranchMode mode, bool input_grad) {
  if (va.rows() != vb.rows() || va.cols() != vb.cols() || va.rows() == 0) {
    throw ArgumentError("cl_loss_backward: view batches must be non-empty and equally shaped");
  }
  if (va.cols() != s.backbone.input_size()) throw ArgumentError("cl_loss_backward: view size does not match the encoder");
  const Eigen::Index B = va.rows();
  const bool dual = input_grad && mode == BranchMode::Dual;
  ClPass out;
  switch (s.framework()) {
    case Framework::SimClr: {
      const Matrix z = s.projector.forward(s.backbone.forward(stack(va, vb)));
      const LossGrad lg = info_nce_loss_grad(z.topRows(B), z.bottomRows(B), s.config.temperature);
      out.loss = lg.loss;
      const Matrix dh = s.projector.backward(stack(lg.grad_a, lg.grad_b));
      if (input_grad) {
        const Matrix dx = s.backbone.backward(dh);
        out.grad_a = dx.topRows(B);
        out.grad_b = dx.bottomRows(B);
      } else {
        s.backbone.backward_params(dh);
      }
      break;
    }
    case Framework::MocoV2: {
      const Matrix q = s.projector.forward(s.backbone.forward(va));
      const Matrix k = s.momentum_projector.forward(s.momentum_backbone.forward(vb));
      const LossGrad lg = moco_loss_grad(q, k, s.queue_buffer(), s.config.temperature);
      out.loss = lg.loss;
      out.keys = l2_normalize_rows(k);
      const Matrix dh = s.projector.backward(lg.grad_a);
      if (!input_grad) s.backbone.backward_params(dh);
      if (input_grad) {
        out.grad_a = s.backbone.backward(dh);
        out.grad_b = dual ? s.momentum_backbone.backward(s.momentum_projector.backward(lg.grad_b))
                          : Matrix::Zero(B, vb.cols());
      }
      break;
    }
    case Framework::Byol: {
      const Matrix p = s.predictor.forward(s.projector.forward(s.backbone.forward(stack(va, vb))));
      const Matrix t = s.momentum_projector.forward(s.momentum_backbone.forward(stack(vb, va)));
      const LossGrad lg = byol_loss_grad(p, t);
      out.loss = lg.loss;
      const Matrix dh = s.projector.backward(s.predictor.backward(lg.grad_a));
      if (!input_grad) s.backbone.backward_params(dh);
      if (input_grad) {
        const Matrix dx = s.backbone.backward(dh);
        out.grad_a = dx.topRows(B);
        out.grad_b = dx.bottomRows(B);
        if (dual) {
          const Matrix dt = s.momentum_backbone.backward(s.momentum_projector.backward(lg.grad_b));
          out.grad_b += dt.topRows(B);
          out.grad_a += dt.bottomRows(B);
        }
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

ClTrainer::ClTrainer(EncoderState state, std::uint64_t seed)
    : state_(std::move(state)),
      optimizer_(state_.config.learning_rate, state_.config.sgd_momentum, state_.config.weight_decay),
      rng_(seed) {}

std::pair<Matrix, Matrix> ClTrainer::make_views(const Matrix& batch) {
  const ImageShape shape = state_.config.arch.input;
  const int n = static_cast<int>(batch.rows());
  ViewBatch a = ViewBatch::sample(state_.config.views, shape, n, rng_);
  ViewBatch b = ViewBatch::sample(state_.config.views, shape, n, rng_);
  Matrix va = a.forward(batch), vb = b.forward(batch);
  if (transform_) {
    transform_(va, rng_);
    transform_(vb, rng_);
  }
  return {std::move(va), std::move(vb)};
}

double ClTrainer::train_step(const Matrix& batch, double lr) {
  auto [va, vb] = make_views(batch);
  state_.zero_grad();
  const ClPass pass = cl_loss_backward(state_, va, vb, BranchMode::Single, false);
  if (!std::isfinite(pass.loss)) return pass.loss;
  optimizer_.set_lr(lr);
  optimizer_.step(state_.online_params());
  if (state_.has_momentum()) {
    ema_update(state_.online_encoder_params(), state_.momentum_params(), state_.config.momentum);
  }
  if (state_.framework() == Framework::MocoV2) state_.enqueue(pass.keys);
  return pass.loss;
}

double ClTrainer::train_epoch(const Matrix& images, double lr) {
  const int n = static_cast<int>(images.rows());
  if (n < 2) throw ArgumentError("train_epoch: need at least two images");
  const int bs = std::min(state_.config.batch_size, n);
  const std::vector<int> perm = rng_.permutation(n);
  double total = 0.0;
  int batches = 0;
  for (int i = 0; i + bs <= n; i += bs) {
    const double l = train_step(gather_rows(images, perm, static_cast<std::size_t>(i), static_cast<std::size_t>(i + bs)), lr);
    if (!std::isfinite(l)) return l;
    total += l;
    ++batches;
  }
  return total / batches;
}

EncoderState train_encoder(const LabeledImageDataset& dataset, const FrameworkConfig& config,
                           const TrainOptions& options) {
  config.validate();
  if (dataset.empty()) throw ArgumentError("train_encoder: dataset is empty");
  if (!(dataset.shape() == config.arch.input)) {
    throw ArgumentError("train_encoder: dataset shape " + dataset.shape().str() + " does not match encoder input " +
                        config.arch.input.str());
  }
  if (config.batch_size > dataset.size()) throw ArgumentError("train_encoder: batch size exceeds dataset size");
  Rng seeds(options.seed);
  const std::uint64_t init_seed = seeds.next();
  const std::uint64_t view_seed = seeds.next();
  ClTrainer trainer(EncoderState::create(config, init_seed), view_seed);
  if (options.transform) trainer.set_view_transform(options.transform);
  for (int e = 0; e < config.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = nn::cosine_lr(config.learning_rate, e, config.epochs);
    double loss;
    try {
      loss = trainer.train_epoch(dataset.images(), lr);
    } catch (const NumericalError& err) {
      throw TrainingError(std::string("training diverged: ") + err.what(), e);
    }
    if (!std::isfinite(loss)) throw TrainingError("training diverged: non-finite loss", e);
    if (options.on_epoch) {
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      options.on_epoch({e, loss, lr, ms});
    }
  }
  return trainer.release();
}

// ---------------------------------------------------------------------------

Matrix LinearHead::logits(const Matrix& features) const {
  Matrix z = (features.rowwise() - feature_mean).array().rowwise() / feature_scale.array();
  return (z * weight).rowwise() + bias;
}

std::vector<int> LinearHead::predict(const Matrix& features) const {
  const Matrix l = logits(features);
  std::vector<int> out(static_cast<std::size_t>(l.rows()));
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    Eigen::Index arg;
    l.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

std::pair<LinearHead, double> fit_linear_probe(const Matrix& features, const std::vector<int>& labels,
                                               int class_count, const ProbeOptions& options) {
  const int n = static_cast<int>(features.rows());
  if (static_cast<std::size_t>(n) != labels.size()) throw ArgumentError("linear probe: feature/label count mismatch");
  if (class_count < 1) throw ArgumentError("linear probe: class_count must be positive");
  if (options.epochs < 0 || options.batch_size < 1 || !(options.train_fraction > 0.0 && options.train_fraction < 1.0)) {
    throw ArgumentError("linear probe: invalid options");
  }
  const int ntr = static_cast<int>(options.train_fraction * n);
  if (ntr < 1 || ntr >= n) throw ArgumentError("linear probe: empty train or evaluation split");
  for (int y : labels) {
    if (y < 0 || y >= class_count) throw ArgumentError("linear probe: label out of range");
  }
  Rng rng(options.seed);
  std::vector<int> perm = rng.permutation(n);
  std::vector<int> train(perm.begin(), perm.begin() + ntr), test(perm.begin() + ntr, perm.end());

  const Matrix ftr = gather_rows(features, train, 0, train.size());
  LinearHead head;
  head.feature_mean = ftr.colwise().mean();
  const Matrix centered = ftr.rowwise() - head.feature_mean;
  const double denom = std::max(1, ntr - 1);
  head.feature_scale = ((centered.array().square().colwise().sum() / denom).sqrt() + 1e-6).matrix();
  const Matrix z = centered.array().rowwise() / head.feature_scale.array();

  Rng init = rng.fork(1);
  nn::Linear lin(static_cast<int>(features.cols()), class_count, init);
  nn::Adam adam(options.learning_rate);
  for (int e = 0; e < options.epochs; ++e) {
    std::vector<int> order = rng.permutation(ntr);
    for (int i = 0; i < ntr; i += options.batch_size) {
      const int end = std::min(ntr, i + options.batch_size);
      Matrix xb(end - i, z.cols());
      std::vector<int> yb(static_cast<std::size_t>(end - i));
      for (int r = i; r < end; ++r) {
        xb.row(r - i) = z.row(order[static_cast<std::size_t>(r)]);
        yb[static_cast<std::size_t>(r - i)] = labels[static_cast<std::size_t>(train[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])])];
      }
      Matrix logits = lin.forward(xb);
      Matrix g(logits.rows(), logits.cols());
      for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        RowVector e = (logits.row(r).array() - logits.row(r).maxCoeff()).exp().matrix();
        g.row(r) = e / e.sum();
        g(r, yb[static_cast<std::size_t>(r)]) -= 1.0;
      }
      g /= static_cast<double>(logits.rows());
      for (nn::Param* p : lin.params()) p->grad.setZero();
      lin.backward(g);
      adam.step(lin.params());
    }
  }
  auto params = lin.params();
  head.weight = params[0]->value;
  head.bias = params[1]->value.row(0);

  const Matrix fte = gather_rows(features, test, 0, test.size());
  const std::vector<int> pred = head.predict(fte);
  int correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (pred[i] == labels[static_cast<std::size_t>(test[i])]) ++correct;
  }
  return {std::move(head), static_cast<double>(correct) / static_cast<double>(test.size())};
}

double linear_probe(EncoderState& encoder, const LabeledImageDataset& data, const ProbeOptions& options) {
  if (data.empty()) throw ArgumentError("linear_probe: dataset is empty");
  if (!(data.shape() == encoder.config.arch.input)) throw ArgumentError("linear_probe: dataset shape does not match encoder");
  const Matrix f = encoder.features(data.images());
  return fit_linear_probe(f, data.labels(), data.class_count(), options).second;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'L', 'C', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw FormatError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

struct NamedTensor {
  std::string name;
  Matrix* value;
};

std::vector<NamedTensor> checkpoint_tensors(EncoderState& s, Matrix& queue) {
  std::vector<NamedTensor> out;
  for (nn::Param* p : s.online_params()) out.push_back({p->name, &p->value});
  for (nn::Param* p : s.momentum_params()) out.push_back({p->name, &p->value});
  for (nn::Param* p : s.buffers()) out.push_back({p->name, &p->value});
  if (queue.size() > 0) out.push_back({"queue", &queue});
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, EncoderState& state) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(kCheckpointMagic, 4);
  put<std::uint16_t>(os, kCheckpointVersion);
  const std::string cfg = config_to_json(state.config);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  Matrix queue = state.queue();
  const auto tensors = checkpoint_tensors(state, queue);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint16_t>(os, static_cast<std::uint16_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.value->rows()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.value->cols()));
    for (Eigen::Index i = 0; i < t.value->size(); ++i) put<float>(os, static_cast<float>(t.value->data()[i]));
  }
  if (!os) throw std::runtime_error("failed writing " + path);
}

EncoderState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint: bad magic");
  if (get<std::uint16_t>(is) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  const auto len = get<std::uint32_t>(is);
  std::string cfg(len, '\0');
  if (!is.read(cfg.data(), len)) throw FormatError("checkpoint truncated");
  EncoderState state = EncoderState::create(config_from_json(cfg), 0);
  Matrix queue = state.queue();
  auto tensors = checkpoint_tensors(state, queue);
  const auto count = get<std::uint32_t>(is);
  if (count != tensors.size()) throw FormatError("checkpoint tensor count does not match its config");
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto nlen = get<std::uint16_t>(is);
    std::string name(nlen, '\0');
    if (!is.read(name.data(), nlen)) throw FormatError("checkpoint truncated");
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == name; });
    if (it == tensors.end()) throw FormatError("unexpected tensor '" + name + "' in checkpoint");
    const auto rows = get<std::uint32_t>(is), cols = get<std::uint32_t>(is);
    if (rows != it->value->rows() || cols != it->value->cols()) throw FormatError("shape mismatch for tensor '" + name + "'");
    for (Eigen::Index i = 0; i < it->value->size(); ++i) it->value->data()[i] = get<float>(is);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");
  if (queue.size() > 0) {
    state.enqueue(queue);  // full-capacity push restores order with the oldest key first
  }
  return state;
}

}  // namespace clpoison
