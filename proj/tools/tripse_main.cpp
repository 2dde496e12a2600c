#include <CLI11.hpp>

#include <iostream>

#include "tripse/commands.hpp"
#include "tripse/errors.hpp"

namespace {

std::vector<std::size_t> to_sizes(const std::string& text) { return tripse::parse_size_list(text); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Triplet and squeeze-excitation attention toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "Train the mini backbone from a run config");
  train->add_option("config", config_path, "Run config file (key = value lines)");
  train->allow_extras();
  train->footer("Any config key can be overridden with --key=value.");

  tripse::EvalArgs eval_args;
  std::string eval_split;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  eval->add_option("--config", eval_args.config, "Run config (default: config.txt next to the checkpoint)");
  eval->add_option("--split", eval_split, "Training, PublicTest or PrivateTest");
  eval->allow_extras();

  tripse::GradcheckArgs gc;
  std::string gc_shape = "1,4,5,5";
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of a block in double precision");
  gradcheck->add_option("--variant", gc.variant, "se, ta, tripse1..tripse4 or backbone")->capture_default_str();
  gradcheck->add_option("--kernel", gc.kernel, "Gate kernel size")->capture_default_str();
  gradcheck->add_option("--shape", gc_shape, "Input shape N,C,H,W")->capture_default_str();
  gradcheck->add_option("--eps", gc.eps, "Finite-difference step")->capture_default_str();
  gradcheck->add_option("--ratio", gc.ratio, "SE reduction ratio, 0 for the default")->capture_default_str();
  gradcheck->add_option("--seed", gc.seed, "Seed for weights and inputs")->capture_default_str();
  gradcheck->add_flag("--inject-fault", gc.inject_fault)->group("");

  tripse::ParamsArgs pa;
  std::string pa_widths = "96,192,384,768", pa_spatial = "56,28,14,7";
  auto* params = app.add_subcommand("params", "Attention parameter counts per stage");
  params->add_option("--variant", pa.variant, "none, se, ta, tripse1..tripse4")->capture_default_str();
  params->add_option("--widths", pa_widths, "Stage channel widths")->capture_default_str();
  params->add_option("--ratio", pa.ratio, "SE reduction ratio, 0 for the default")->capture_default_str();
  params->add_option("--kernel", pa.kernel, "Gate kernel size")->capture_default_str();
  params->add_option("--spatial", pa_spatial, "Stage spatial extents")->capture_default_str();

  tripse::BenchArgs ba;
  std::string ba_shape = "8,64,28,28";
  auto* bench = app.add_subcommand("bench", "Forward latency of one block");
  bench->add_option("--variant", ba.variant, "Block to time")->capture_default_str();
  bench->add_option("--shape", ba_shape, "Input shape N,C,H,W")->capture_default_str();
  bench->add_option("--iters", ba.iters, "Timed iterations")->capture_default_str();
  bench->add_option("--ratio", ba.ratio, "SE reduction ratio, 0 for the default")->capture_default_str();
  bench->add_option("--kernel", ba.kernel, "Gate kernel size")->capture_default_str();
  bench->add_option("--baseline", ba.baseline, "Second variant for a relative overhead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : tripse::kExitConfig;
  }

  try {
    if (*train) {
      return tripse::cmd_train(config_path, tripse::parse_overrides(train->remaining()), std::cout, std::cerr);
    }
    if (*eval) {
      eval_args.overrides = tripse::parse_overrides(eval->remaining());
      if (!eval_split.empty()) eval_args.split = eval_split;
      return tripse::cmd_eval(eval_args, std::cout, std::cerr);
    }
    if (*gradcheck) {
      gc.shape = to_sizes(gc_shape);
      return tripse::cmd_gradcheck(gc, std::cout, std::cerr);
    }
    if (*params) {
      pa.widths = to_sizes(pa_widths);
      pa.spatial = to_sizes(pa_spatial);
      return tripse::cmd_params(pa, std::cout, std::cerr);
    }
    if (*bench) {
      ba.shape = to_sizes(ba_shape);
      return tripse::cmd_bench(ba, std::cout, std::cerr);
    }
  } catch (const tripse::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return tripse::kExitConfig;
  }
  return tripse::kExitConfig;
}
