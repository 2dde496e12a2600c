#include <algorithm>
#include <cctype>
#include <cstdio>

#include "tripse/errors.hpp"
#include "tripse/train.hpp"

namespace tripse {

std::string to_string(SchedulerKind kind) {
  switch (kind) {
    case SchedulerKind::plateau: return "plateau";
    case SchedulerKind::step: return "step";
    case SchedulerKind::constant: return "constant";
  }
  return "plateau";
}

SchedulerKind parse_scheduler_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (auto k : {SchedulerKind::plateau, SchedulerKind::step, SchedulerKind::constant}) {
    if (lower == to_string(k)) return k;
  }
  throw ArgumentError("unknown scheduler '" + std::string(name) + "'");
}

double scheduler_epoch_end(SchedulerState& s, double metric) {
  const SchedulerConfig& c = s.cfg;
  ++s.epochs_seen;
  bool drop = false;
  switch (c.kind) {
    case SchedulerKind::plateau: {
      const bool improved = !s.best || (c.maximize ? metric > *s.best : metric < *s.best);
      if (improved) {
        s.best = metric;
        s.bad_epochs = 0;
      } else if (++s.bad_epochs >= c.patience) {
        drop = true;
        s.bad_epochs = 0;
      }
      break;
    }
    case SchedulerKind::step:
      drop = c.step_period > 0 && s.epochs_seen % c.step_period == 0;
      break;
    case SchedulerKind::constant:
      break;
  }
  if (drop) s.lr = std::max(s.lr * c.factor, c.min_lr);
  return s.lr;
}

std::string metrics_csv_row(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.6g,%.6g,%.6g,%.6g,%.6g", m.epoch, m.train_loss, m.train_acc, m.val_acc, m.lr,
                m.seconds);
  return buf;
}

}  // namespace tripse
