#include <algorithm>
#include <chrono>
#include <cstring>
#include <iterator>
#include <sstream>

#include "tripse/errors.hpp"
#include "tripse/ops.hpp"
#include "tripse/serialize.hpp"
#include "tripse/train.hpp"

namespace tripse {

namespace {

std::size_t argmax_row(const float* row, std::size_t k) {
  return static_cast<std::size_t>(std::max_element(row, row + k) - row);
}

SampleTransform resize_to(std::size_t h, std::size_t w) {
  return [h, w](const Sample& s, std::size_t) {
    if (s.image.dim(1) == h && s.image.dim(2) == w) return s.image;
    return resize_bilinear(s.image, h, w);
  };
}

void expect_magic(std::istream& in, const char* magic) {
  char buf[4];
  io::read_exact(in, buf, 4);
  if (std::memcmp(buf, magic, 4) != 0) {
    throw FormatError(std::string("checkpoint section '") + magic + "' missing");
  }
}

}  // namespace

EvalResult evaluate_model(MiniBackbone<float>& model, const std::vector<Sample>& data, std::size_t batch_size) {
  if (data.empty()) throw DataError("cannot evaluate on an empty split");
  const auto& cfg = model.config();
  NoGradGuard no_grad;
  BatchIterator it(data, batch_size, 0, 0, false, false, resize_to(cfg.input_height, cfg.input_width));
  EvalResult r;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  while (auto b = it.next()) {
    auto logits = model.forward(b->images, false);
    const std::size_t n = b->labels.size(), k = logits.dim(1);
    loss_sum += static_cast<double>(cross_entropy(logits, std::span<const std::size_t>(b->labels)).item()) *
                static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) correct += argmax_row(logits.data().data() + i * k, k) == b->labels[i];
    r.count += n;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
  r.loss = loss_sum / static_cast<double>(r.count);
  return r;
}

Trainer::Trainer(MiniBackbone<float>& model, TrainConfig cfg) : model_(&model), cfg_(std::move(cfg)) {
  if (cfg_.batch_size == 0) throw ConfigError("batch_size must be at least 1");
  cfg_.augmentation.target_h = model.config().input_height;
  cfg_.augmentation.target_w = model.config().input_width;
  cfg_.augmentation.seed = cfg_.seed;
  cfg_.scheduler.maximize = cfg_.plateau_metric == PlateauMetric::val_acc;
  opt_.cfg = cfg_.optimizer;
  sched_.cfg = cfg_.scheduler;
  sched_.lr = cfg_.optimizer.lr;
}

EvalResult Trainer::evaluate(const std::vector<Sample>& data) const {
  return evaluate_model(*model_, data, cfg_.batch_size);
}

EpochMetrics Trainer::train_epoch(const std::vector<Sample>& train, const std::vector<Sample>& val) {
  const auto start = std::chrono::steady_clock::now();
  const auto& mc = model_->config();
  SampleTransform transform;
  if (cfg_.augment) {
    transform = [this](const Sample& s, std::size_t idx) {
      auto rng = sample_rng(cfg_.seed, epoch_, idx);
      return augment(s, cfg_.augmentation, rng).image;
    };
  } else {
    transform = resize_to(mc.input_height, mc.input_width);
  }

  EpochMetrics m;
  m.epoch = epoch_ + 1;
  m.lr = opt_.cfg.lr;
  auto params = model_->parameters();
  BatchIterator it(train, cfg_.batch_size, cfg_.seed, epoch_, true, false, transform);
  std::size_t seen = 0, correct = 0;
  double loss_sum = 0.0;
  while (auto b = it.next()) {
    for (auto& p : params) p.zero_grad();
    auto logits = model_->forward(b->images, true);
    auto loss = cross_entropy(logits, std::span<const std::size_t>(b->labels));
    const std::size_t n = b->labels.size(), k = logits.dim(1);
    for (std::size_t i = 0; i < n; ++i) correct += argmax_row(logits.data().data() + i * k, k) == b->labels[i];
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(n);
    seen += n;
    loss.backward();
    radam_step(std::span<Tensor>(params), opt_);
  }
  for (auto& p : params) p.zero_grad();
  m.train_loss = loss_sum / static_cast<double>(seen);
  m.train_acc = static_cast<double>(correct) / static_cast<double>(seen);

  const EvalResult v = evaluate(val);
  m.val_acc = v.accuracy;
  m.val_loss = v.loss;
  opt_.cfg.lr = scheduler_epoch_end(sched_, cfg_.plateau_metric == PlateauMetric::val_acc ? v.accuracy : v.loss);
  ++epoch_;
  if (cfg_.log_wall_time) {
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return m;
}

void Trainer::save_checkpoint(std::ostream& out) const {
  save_weights(*model_, out, kTrainingCheckpointVersion);
  out.write("RADM", 4);
  io::write_u64(out, opt_.step);
  io::write_f64(out, opt_.cfg.lr);
  io::write_f64(out, opt_.cfg.beta1);
  io::write_f64(out, opt_.cfg.beta2);
  io::write_f64(out, opt_.cfg.eps);
  io::write_u32(out, static_cast<std::uint32_t>(opt_.m.size()));
  for (std::size_t i = 0; i < opt_.m.size(); ++i) {
    write_tensor(out, Tensor(Shape{opt_.m[i].size()}, opt_.m[i]));
    write_tensor(out, Tensor(Shape{opt_.v[i].size()}, opt_.v[i]));
  }
  out.write("SCHD", 4);
  io::write_u32(out, static_cast<std::uint32_t>(sched_.cfg.kind));
  io::write_f64(out, sched_.lr);
  io::write_u32(out, sched_.best ? 1 : 0);
  io::write_f64(out, sched_.best.value_or(0.0));
  io::write_u64(out, sched_.bad_epochs);
  io::write_u64(out, sched_.epochs_seen);
  out.write("EPOC", 4);
  io::write_u64(out, epoch_);
}

void Trainer::load_checkpoint(std::istream& in) {
  // Read everything into temporaries first; weights are loaded last.
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::istringstream probe(bytes);
  auto scratch = MiniBackbone<float>::build(model_->config());
  if (load_weights(scratch, probe) != kTrainingCheckpointVersion) {
    throw CheckpointError("checkpoint holds weights only; resuming needs a training checkpoint");
  }
  RAdamState<float> opt;
  expect_magic(probe, "RADM");
  opt.step = io::read_u64(probe);
  opt.cfg.lr = io::read_f64(probe);
  opt.cfg.beta1 = io::read_f64(probe);
  opt.cfg.beta2 = io::read_f64(probe);
  opt.cfg.eps = io::read_f64(probe);
  const std::uint32_t count = io::read_u32(probe);
  const auto params = model_->parameters();
  if (count != 0 && count != params.size()) {
    throw CheckpointError("optimizer state covers " + std::to_string(count) + " tensors, model has " +
                          std::to_string(params.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const Tensor m = read_tensor(probe);
    const Tensor v = read_tensor(probe);
    if (m.numel() != params[i].numel() || v.numel() != params[i].numel()) {
      throw CheckpointError("optimizer moments for parameter " + std::to_string(i) + " have the wrong size");
    }
    opt.m.emplace_back(m.data().begin(), m.data().end());
    opt.v.emplace_back(v.data().begin(), v.data().end());
  }
  SchedulerState sched;
  sched.cfg = sched_.cfg;
  expect_magic(probe, "SCHD");
  const auto kind = io::read_u32(probe);
  if (kind != static_cast<std::uint32_t>(sched_.cfg.kind)) {
    throw CheckpointError("checkpoint was written with a different scheduler");
  }
  sched.lr = io::read_f64(probe);
  const bool has_best = io::read_u32(probe) != 0;
  const double best = io::read_f64(probe);
  if (has_best) sched.best = best;
  sched.bad_epochs = io::read_u64(probe);
  sched.epochs_seen = io::read_u64(probe);
  expect_magic(probe, "EPOC");
  const std::uint64_t epoch = io::read_u64(probe);

  std::istringstream weights(bytes);
  load_weights(*model_, weights);
  opt_ = std::move(opt);
  sched_ = std::move(sched);
  epoch_ = epoch;
}

}  // namespace tripse
