#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tripse/backbone.hpp"
#include "tripse/data.hpp"
#include "tripse/tensor.hpp"

namespace tripse {

/// Mean over the batch of -log softmax(logits)[label]; logits (N,K).
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::size_t> labels);

// RAdam -----------------------------------------------------------------------

struct RAdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct RAdamState {
  RAdamConfig cfg;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;  // one per parameter, created on the first step
  std::vector<std::vector<T>> v;
};

struct RAdamStepInfo {
  double rho_t = 0.0;
  bool rectified = false;
};

/// Length of the approximated simple moving average at step t.
double radam_rho(double beta2, std::uint64_t t);

/// One update of every parameter from its accumulated gradient (missing
/// gradients count as zero). Uses the rectified adaptive step when rho_t > 4,
/// plain bias-corrected momentum otherwise.
template <typename T>
RAdamStepInfo radam_step(std::span<BasicTensor<T>> params, RAdamState<T>& state);

// Learning-rate schedules -------------------------------------------------------

enum class SchedulerKind { plateau, step, constant };

std::string to_string(SchedulerKind kind);
SchedulerKind parse_scheduler_kind(std::string_view name);

struct SchedulerConfig {
  SchedulerKind kind = SchedulerKind::plateau;
  double factor = 0.1;
  std::size_t patience = 3;
  std::size_t step_period = 10;
  double min_lr = 1e-6;
  bool maximize = true;  // plateau: higher metric is better
};

struct SchedulerState {
  SchedulerConfig cfg;
  double lr = 1e-3;
  std::optional<double> best;
  std::size_t bad_epochs = 0;
  std::size_t epochs_seen = 0;
};

/// Records one finished epoch and returns the learning rate for the next.
double scheduler_epoch_end(SchedulerState& s, double metric);

// Training --------------------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;  // rate used during the epoch
  double seconds = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,train_loss,train_acc,val_acc,lr,seconds";

/// One CSV row, floats as %.6g.
std::string metrics_csv_row(const EpochMetrics& m);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t count = 0;
};

enum class PlateauMetric { val_acc, val_loss };

struct TrainConfig {
  std::size_t batch_size = 32;
  RAdamConfig optimizer;
  SchedulerConfig scheduler;
  PlateauMetric plateau_metric = PlateauMetric::val_acc;
  bool augment = true;
  AugmentConfig augmentation;  // target size is taken from the model
  std::uint64_t seed = 0;
  bool log_wall_time = false;
};

class Trainer {
 public:
  Trainer(MiniBackbone<float>& model, TrainConfig cfg);

  /// One pass over `train` in training mode, then evaluation on `val` and a
  /// scheduler update.
  EpochMetrics train_epoch(const std::vector<Sample>& train, const std::vector<Sample>& val);
  EvalResult evaluate(const std::vector<Sample>& data) const;

  std::size_t epochs_done() const { return epoch_; }
  double lr() const { return opt_.cfg.lr; }
  const TrainConfig& config() const { return cfg_; }
  const SchedulerState& scheduler() const { return sched_; }

  /// Weights, optimizer moments, scheduler and epoch counter.
  void save_checkpoint(std::ostream& out) const;
  void load_checkpoint(std::istream& in);

 private:
  MiniBackbone<float>* model_;
  TrainConfig cfg_;
  RAdamState<float> opt_;
  SchedulerState sched_;
  std::size_t epoch_ = 0;
};

/// Resizes images to the model input when needed, eval-mode forward, argmax.
EvalResult evaluate_model(MiniBackbone<float>& model, const std::vector<Sample>& data, std::size_t batch_size);

}  // namespace tripse
