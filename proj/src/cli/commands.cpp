#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "tripse/commands.hpp"
#include "tripse/errors.hpp"
#include "tripse/gradcheck.hpp"
#include "tripse/ops.hpp"

namespace tripse {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string join(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

/// Maps library exceptions onto the exit-code contract.
int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ArgumentError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const FormatError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitVerification;
  }
}

std::vector<Sample> capped(std::vector<Sample> samples, std::size_t cap, std::uint64_t seed, std::uint64_t tag) {
  if (cap == 0 || samples.size() <= cap) return samples;
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = sample_rng(seed, std::numeric_limits<std::uint64_t>::max(), tag);
  for (std::size_t i = idx.size() - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> d(0, i);
    std::swap(idx[i], idx[d(rng)]);
  }
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<Sample> out;
  out.reserve(cap);
  for (auto i : idx) out.push_back(std::move(samples[i]));
  return out;
}

std::vector<Sample> synth_split(const RunConfig& cfg, bool training) {
  SynthConfig s;
  s.num_classes = cfg.num_classes;
  s.per_class = training ? cfg.synth_per_class : cfg.synth_val_per_class;
  s.height = s.width = cfg.image_size;
  s.noise = cfg.synth_noise;
  s.seed = training ? cfg.seed : cfg.seed + 1;
  return synth_dataset(s);
}

std::vector<Sample> raw_split(const RunConfig& cfg, Split split) {
  if (cfg.dataset == "synthetic") return synth_split(cfg, split == Split::training);
  return select_split(load_fer_csv(cfg.fer_csv), split);
}

/// Rows of an existing metrics file up to and including `epochs`.
std::vector<std::string> previous_rows(const fs::path& csv, std::size_t epochs) {
  std::vector<std::string> rows;
  std::ifstream in(csv);
  std::string line;
  if (!in || !std::getline(in, line) || line != kMetricsHeader) return rows;
  while (rows.size() < epochs && std::getline(in, line)) rows.push_back(line);
  return rows;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << bytes;
}

void save_training_checkpoint(const Trainer& trainer, const fs::path& path) {
  std::ostringstream os;
  trainer.save_checkpoint(os);
  write_file(path, os.str());
}

std::ifstream open_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return in;
}

/// Moves every BN running statistic off the identity so eval-mode checks exercise it.
template <typename T>
void perturb_running_stats(const StateList<T>& state, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& e : state) {
    if (e.trainable) continue;
    BasicTensor<T> t = e.tensor;
    const bool var = e.name.ends_with("running_var");
    for (auto& v : t.mutable_data()) v = static_cast<T>(var ? 0.5 + u(rng) : 0.4 * (u(rng) - 0.5));
  }
}

BasicTensor<double> uniform_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape.numel());
  for (auto& x : v) x = d(rng);
  return BasicTensor<double>(shape, std::move(v));
}

AttentionConfig attention_config(const std::string& variant, std::size_t ratio, std::size_t kernel) {
  if (kernel % 2 == 0) throw ConfigError("kernel must be odd");
  return AttentionConfig{parse_attention_kind(variant), ratio, kernel};
}

Dims3 dims_of(const std::vector<std::size_t>& shape) {
  if (shape.size() != 4) throw ConfigError("shape needs four extents N,C,H,W");
  for (auto d : shape) {
    if (d == 0) throw ConfigError("shape extents must be positive");
  }
  return Dims3{shape[1], shape[2], shape[3]};
}

}  // namespace

RunConfig resolve_config(const std::string& config_path, const Overrides& overrides) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
  validate(cfg);
  return cfg;
}

std::vector<Sample> load_split(const RunConfig& cfg, Split split) {
  const bool training = split == Split::training;
  return capped(raw_split(cfg, split), training ? cfg.max_train_samples : cfg.max_eval_samples, cfg.seed,
                static_cast<std::uint64_t>(split));
}

DataSplits load_data(const RunConfig& cfg) {
  DataSplits d;
  const Split eval = parse_split(cfg.eval_split);
  if (cfg.dataset == "synthetic") {
    d.train = load_split(cfg, Split::training);
    d.eval = load_split(cfg, eval == Split::training ? Split::training : Split::public_test);
  } else {
    const auto records = load_fer_csv(cfg.fer_csv);
    d.train = capped(select_split(records, Split::training), cfg.max_train_samples, cfg.seed,
                     static_cast<std::uint64_t>(Split::training));
    d.eval = capped(select_split(records, eval), cfg.max_eval_samples, cfg.seed, static_cast<std::uint64_t>(eval));
  }
  if (d.train.empty()) throw DataError("training split is empty");
  if (d.eval.empty()) throw DataError("evaluation split '" + cfg.eval_split + "' is empty");
  return d;
}

int cmd_train(const std::string& config_path, const Overrides& overrides, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = resolve_config(config_path, overrides);
    const DataSplits data = load_data(cfg);

    const fs::path dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output_dir '" + cfg.output_dir + "': " + ec.message());
    write_file(dir / "config.txt", render_config(cfg));

    auto model = MiniBackbone<float>::build(backbone_config(cfg));
    Trainer trainer(model, train_config(cfg));
    if (!cfg.resume.empty()) {
      auto in = open_checkpoint(cfg.resume);
      trainer.load_checkpoint(in);
    }

    std::vector<std::string> rows = previous_rows(dir / "metrics.csv", trainer.epochs_done());
    auto flush_csv = [&] {
      std::string text = std::string(kMetricsHeader) + "\n";
      for (const auto& r : rows) text += r + "\n";
      write_file(dir / "metrics.csv", text);
    };

    out << kMetricsHeader << "\n";
    while (trainer.epochs_done() < cfg.epochs) {
      const EpochMetrics m = trainer.train_epoch(data.train, data.eval);
      rows.push_back(metrics_csv_row(m));
      out << rows.back() << "\n" << std::flush;
      flush_csv();
      if (cfg.checkpoint_every != 0 && trainer.epochs_done() % cfg.checkpoint_every == 0) {
        save_training_checkpoint(trainer, dir / "checkpoint.tsew");
      }
    }
    flush_csv();
    save_training_checkpoint(trainer, dir / "checkpoint.tsew");
    save_training_checkpoint(trainer, dir / "model.tsew");
    // Taken from the CSV text so a resumed run reports the same as an uninterrupted one.
    double best = -1.0;
    std::size_t best_epoch = 0;
    for (const auto& r : rows) {
      std::istringstream fields(r);
      std::string epoch, loss, acc, val;
      std::getline(fields, epoch, ',');
      std::getline(fields, loss, ',');
      std::getline(fields, acc, ',');
      std::getline(fields, val, ',');
      if (std::stod(val) > best) best = std::stod(val), best_epoch = std::stoul(epoch);
    }
    out << "best_val_acc=" << fmt("%.6g", std::max(best, 0.0)) << " epoch=" << best_epoch << "\n";
    return kExitOk;
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.checkpoint.empty()) throw ConfigError("eval needs a checkpoint");
    std::string config = args.config;
    if (config.empty()) config = (fs::path(args.checkpoint).parent_path() / "config.txt").string();
    RunConfig cfg = resolve_config(config, args.overrides);
    if (args.split) {
      try {
        cfg.eval_split = to_string(parse_split(*args.split));
      } catch (const DataError& e) {
        throw ConfigError(e.what());
      }
    }

    auto model = MiniBackbone<float>::build(backbone_config(cfg));
    {
      auto in = open_checkpoint(args.checkpoint);
      load_weights(model, in);
    }
    const auto data = load_split(cfg, parse_split(cfg.eval_split));
    if (data.empty()) throw DataError("split '" + cfg.eval_split + "' is empty");
    const EvalResult r = evaluate_model(model, data, cfg.batch_size);
    out << "accuracy=" << fmt("%.6g", r.accuracy) << " n=" << r.count << "\n";
    return kExitOk;
  });
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.eps <= 0.0) throw ConfigError("eps must be positive");
    std::vector<std::pair<std::string, Tensor64>> tensors;
    std::function<Tensor64()> f;

    std::optional<AttentionBlock<double>> block;
    std::optional<MiniBackbone<double>> net;
    Tensor64 x, w;
    if (args.variant == "backbone") {
      BackboneConfig cfg;
      cfg.num_classes = 3;
      cfg.stages = {{{2, 1, false}, {3, 1, true}, {4, 1, true}, {4, 1, true}}};
      cfg.input_height = cfg.input_width = 8;
      cfg.attention = attention_config("tripse1", args.ratio == 0 ? 1 : args.ratio, args.kernel);
      cfg.seed = args.seed;
      net.emplace(MiniBackbone<double>::build(cfg));
      perturb_running_stats(net->state(), args.seed + 1);
      x = uniform_tensor({1, 1, 8, 8}, args.seed + 2, -1.0, 1.0);
      w = uniform_tensor({1, 3}, args.seed + 3, 0.5, 1.5);
      f = [&] { return sum(mul(net->forward(x, false), w)); };
      tensors.emplace_back("input", x);
      for (const auto& e : net->state()) {
        if (e.trainable) tensors.emplace_back(e.name, e.tensor);
      }
    } else {
      const AttentionConfig cfg = attention_config(args.variant, args.ratio, args.kernel);
      if (cfg.kind == AttentionKind::none) throw ConfigError("variant none has no parameters to check");
      const Dims3 dims = dims_of(args.shape);
      Initializer init(args.seed);
      block = make_attention<double>(cfg, dims, init);
      StateList<double> state;
      block->collect_state("block", state);
      perturb_running_stats(state, args.seed + 1);
      const Shape shape{args.shape[0], args.shape[1], args.shape[2], args.shape[3]};
      x = uniform_tensor(shape, args.seed + 2, -1.0, 1.0);
      w = uniform_tensor(shape, args.seed + 3, 0.5, 1.5);
      f = [&] { return sum(mul(block->forward(x, false), w)); };
      tensors.emplace_back("input", x);
      for (const auto& e : state) {
        if (e.trainable) tensors.emplace_back(e.name, e.tensor);
      }
    }

    struct FaultScope {
      explicit FaultScope(bool on) { tripse::testing::inject_backward_fault(on); }
      ~FaultScope() { tripse::testing::inject_backward_fault(false); }
    } fault(args.inject_fault);

    out << "variant=" << args.variant << " kernel=" << args.kernel << " eps=" << fmt("%g", args.eps) << "\n";
    double worst = 0.0;
    for (const auto& [name, t] : tensors) {
      const auto r = finite_diff_check_all<double>(f, {t}, args.eps);
      worst = std::max(worst, r.max_rel_error);
      out << name << " numel=" << t.numel() << " max_rel_err=" << fmt("%.3e", r.max_rel_error) << "\n";
    }
    const bool ok = worst <= args.tolerance;
    out << "worst=" << fmt("%.3e", worst) << " tolerance=" << fmt("%g", args.tolerance)
        << " result=" << (ok ? "pass" : "fail") << "\n";
    return ok ? kExitOk : kExitVerification;
  });
}

ParamsReport attention_params(const ParamsArgs& args) {
  if (args.widths.size() != args.spatial.size()) throw ConfigError("widths and spatial need the same length");
  const AttentionConfig cfg = attention_config(args.variant, args.ratio, args.kernel);
  ParamsReport r;
  for (std::size_t i = 0; i < args.widths.size(); ++i) {
    r.per_stage.push_back(attention_param_count(cfg, Dims3{args.widths[i], args.spatial[i], args.spatial[i]}));
    r.total += r.per_stage.back();
  }
  return r;
}

std::string format_millions(std::size_t n) { return fmt("%.1f", static_cast<double>(n) / 1e6) + "M"; }

int cmd_params(const ParamsArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ParamsReport r = attention_params(args);
    out << "variant=" << args.variant << " ratio="
        << AttentionConfig{parse_attention_kind(args.variant), args.ratio, args.kernel}.resolved_reduction()
        << " kernel=" << args.kernel << "\n";
    for (std::size_t i = 0; i < r.per_stage.size(); ++i) {
      out << "stage" << i + 1 << " channels=" << args.widths[i] << " spatial=" << args.spatial[i] << "x"
          << args.spatial[i] << " params=" << r.per_stage[i] << "\n";
    }
    out << "total=" << r.total << " (" << format_millions(r.total) << ")\n";
    return kExitOk;
  });
}

namespace {

struct Timing {
  std::size_t params = 0;
  double mean_ns = 0.0;
  double min_ns = 0.0;
};

Timing time_block(const std::string& variant, const BenchArgs& args) {
  const AttentionConfig cfg = attention_config(variant, args.ratio, args.kernel);
  const Dims3 dims = dims_of(args.shape);
  Initializer init(args.seed);
  auto block = make_attention<float>(cfg, dims, init);
  const Shape shape{args.shape[0], args.shape[1], args.shape[2], args.shape[3]};
  std::mt19937_64 rng(args.seed + 1);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> values(shape.numel());
  for (auto& v : values) v = d(rng);
  const Tensor x(shape, std::move(values));

  NoGradGuard no_grad;
  auto run = [&] {
    if (block) block->forward(x, false);
  };
  for (std::size_t i = 0; i < args.warmup; ++i) run();
  Timing t;
  t.params = block ? block->param_count() : 0;
  t.min_ns = std::numeric_limits<double>::infinity();
  double total = 0.0;
  for (std::size_t i = 0; i < args.iters; ++i) {
    const auto start = std::chrono::steady_clock::now();
    run();
    const double ns = std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - start).count();
    total += ns;
    t.min_ns = std::min(t.min_ns, ns);
  }
  t.mean_ns = total / static_cast<double>(args.iters);
  return t;
}

}  // namespace

int cmd_bench(const BenchArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.iters == 0) throw ConfigError("iters must be at least 1");
    const Timing t = time_block(args.variant, args);
    const double samples_per_s = static_cast<double>(args.shape[0]) * 1e9 / t.mean_ns;
    out << "variant=" << args.variant << " shape=" << join(args.shape) << " params=" << t.params
        << " warmup=" << args.warmup << " iters=" << args.iters << "\n";
    out << "mean_ns=" << fmt("%.0f", t.mean_ns) << " min_ns=" << fmt("%.0f", t.min_ns)
        << " throughput=" << fmt("%.1f", samples_per_s) << " samples/s\n";
    if (!args.baseline.empty()) {
      const Timing b = time_block(args.baseline, args);
      out << "baseline=" << args.baseline << " params=" << b.params << " mean_ns=" << fmt("%.0f", b.mean_ns)
          << " min_ns=" << fmt("%.0f", b.min_ns) << "\n";
      out << "overhead=" << fmt("%+.1f", 100.0 * (t.mean_ns / b.mean_ns - 1.0)) << "%\n";
    }
    return kExitOk;
  });
}

}  // namespace tripse
