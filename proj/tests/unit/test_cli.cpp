#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "tripse/commands.hpp"
#include "tripse/config.hpp"
#include "tripse/errors.hpp"

using namespace tripse;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tripse_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

/// A run small enough for unit tests.
Overrides tiny_run(const fs::path& dir, std::size_t epochs = 3) {
  return {{"synth-per-class", "10"}, {"synth-val-per-class", "4"}, {"image-size", "16"},
          {"widths", "4,8,8,8"},     {"epochs", std::to_string(epochs)},
          {"batch-size", "16"},      {"output-dir", dir.string()}};
}

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome train(const Overrides& o) {
  std::ostringstream out, err;
  Outcome r;
  r.code = cmd_train("", o, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

Outcome eval(const EvalArgs& a) {
  std::ostringstream out, err;
  Outcome r;
  r.code = cmd_eval(a, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

Outcome gradcheck(const GradcheckArgs& a) {
  std::ostringstream out, err;
  Outcome r;
  r.code = cmd_gradcheck(a, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::size_t se_oracle(std::size_t c, std::size_t r) {
  const std::size_t mid = std::max<std::size_t>(1, c / r);
  return 2 * c * mid + mid + c;
}

}  // namespace

// config -------------------------------------------------------------------------------

TEST(Config, DefaultsRenderAndParseBack) {
  const RunConfig d;
  std::istringstream in(render_config(d));
  const RunConfig back = parse_config(in);
  EXPECT_EQ(render_config(back), render_config(d));
  for (const auto& k : config_keys()) EXPECT_FALSE(k.description.empty()) << k.name;
}

TEST(Config, NonDefaultValuesRoundTrip) {
  RunConfig c;
  set_config_value(c, "lr", "0.00037");
  set_config_value(c, "widths", "8, 16,32,64");
  set_config_value(c, "attention", "tripse3");
  set_config_value(c, "augment", "false");
  set_config_value(c, "seed", "18446744073709551615");
  std::istringstream in(render_config(c));
  const RunConfig back = parse_config(in);
  EXPECT_EQ(back.lr, 0.00037);
  EXPECT_EQ(back.widths, (std::vector<std::size_t>{8, 16, 32, 64}));
  EXPECT_EQ(back.attention, "tripse3");
  EXPECT_FALSE(back.augment);
  EXPECT_EQ(back.seed, 18446744073709551615ull);
}

TEST(Config, CommentsBlankLinesAndDashes) {
  std::istringstream in("# header\n\n  epochs = 5   # trailing\nse-ratio=1\n");
  const RunConfig c = parse_config(in);
  EXPECT_EQ(c.epochs, 5u);
  EXPECT_EQ(c.se_ratio, 1u);
}

TEST(Config, UnknownKeyNamesTheLine) {
  std::istringstream in("epochs = 2\nlearning_rate = 0.1\n");
  try {
    parse_config(in, "run.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos) << e.what();
  }
}

TEST(Config, MalformedValuesAreRejected) {
  RunConfig c;
  EXPECT_THROW(set_config_value(c, "epochs", "-3"), ConfigError);
  EXPECT_THROW(set_config_value(c, "epochs", "3x"), ConfigError);
  EXPECT_THROW(set_config_value(c, "lr", ""), ConfigError);
  EXPECT_THROW(set_config_value(c, "augment", "maybe"), ConfigError);
  EXPECT_THROW(set_config_value(c, "widths", "8,,16"), ConfigError);
  std::istringstream no_eq("epochs 3\n");
  EXPECT_THROW(parse_config(no_eq), ConfigError);
}

TEST(Config, OverridesInBothForms) {
  const auto o = parse_overrides({"--attention=tripse4", "--se-ratio", "1", "--lr=1e-4"});
  ASSERT_EQ(o.size(), 3u);
  EXPECT_EQ(o[0], (std::pair<std::string, std::string>{"attention", "tripse4"}));
  EXPECT_EQ(o[1], (std::pair<std::string, std::string>{"se-ratio", "1"}));
  EXPECT_EQ(o[2], (std::pair<std::string, std::string>{"lr", "1e-4"}));
  EXPECT_THROW(parse_overrides({"epochs=3"}), ConfigError);
  EXPECT_THROW(parse_overrides({"--epochs"}), ConfigError);
}

TEST(Config, ValidationCatchesInconsistentSettings) {
  auto bad = [](const char* key, const char* value) {
    RunConfig c;
    set_config_value(c, key, value);
    EXPECT_THROW(validate(c), ConfigError) << key << "=" << value;
  };
  bad("widths", "8,16,32");
  bad("kernel", "4");
  bad("attention", "cbam");
  bad("scheduler", "cosine");
  bad("plateau_metric", "train_loss");
  bad("dataset", "imagenet");
  bad("eval_split", "Validation");
  bad("image_size", "30");  // not divisible by the stage strides
  bad("hflip_prob", "1.5");
  bad("batch_size", "0");
  EXPECT_NO_THROW(validate(RunConfig{}));
}

TEST(Config, MapsOntoModelAndTrainerSettings) {
  RunConfig c;
  c.widths = {96, 192, 384, 768};
  c.depths = {2, 1, 1, 3};
  c.attention = "tripse4";
  c.kernel = 5;
  c.scheduler = "step";
  c.plateau_metric = "val_loss";
  const auto b = backbone_config(c);
  EXPECT_EQ(b.stages[0].width, 96u);
  EXPECT_FALSE(b.stages[0].downsample);
  EXPECT_TRUE(b.stages[3].downsample);
  EXPECT_EQ(b.stages[3].depth, 3u);
  EXPECT_EQ(b.attention.kind, AttentionKind::tripse4);
  EXPECT_EQ(b.attention.resolved_reduction(), 1u);
  EXPECT_EQ(b.attention.kernel, 5u);
  const auto t = train_config(c);
  EXPECT_EQ(t.scheduler.kind, SchedulerKind::step);
  EXPECT_EQ(t.plateau_metric, PlateauMetric::val_loss);
  EXPECT_EQ(t.scheduler.min_lr, 1e-6);
  EXPECT_EQ(t.optimizer.lr, 1e-3);
}

// params ---------------------------------------------------------------------------------

TEST(Params, TripSE1AtReferenceWidths) {
  const auto r = attention_params(ParamsArgs{});
  EXPECT_EQ(r.total, 100650u);
  EXPECT_EQ(format_millions(r.total), "0.1M");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_params(ParamsArgs{}, out, err), 0);
  EXPECT_NE(out.str().find("total=100650 (0.1M)"), std::string::npos) << out.str();
  EXPECT_EQ(lines_of(out.str()).size(), 6u);
}

TEST(Params, SEMatchesFormulaSummation) {
  ParamsArgs a;
  a.variant = "se";
  std::size_t expected = 0;
  for (std::size_t c : {96, 192, 384, 768}) expected += se_oracle(c, 16);
  EXPECT_EQ(expected, 99450u);
  EXPECT_EQ(attention_params(a).total, expected);
}

TEST(Params, NoneIsZero) {
  ParamsArgs a;
  a.variant = "none";
  EXPECT_EQ(attention_params(a).total, 0u);
}

TEST(Params, MillionsRendering) {
  EXPECT_EQ(format_millions(0), "0.0M");
  EXPECT_EQ(format_millions(28'600'000), "28.6M");
  EXPECT_EQ(format_millions(28'700'650), "28.7M");
  EXPECT_EQ(format_millions(49'999'999), "50.0M");
}

TEST(Params, BadArgumentsAreConfigErrors) {
  ParamsArgs a;
  a.spatial = {56, 28};
  std::ostringstream out, err;
  EXPECT_EQ(cmd_params(a, out, err), kExitConfig);
  a = ParamsArgs{};
  a.variant = "cbam";
  EXPECT_EQ(cmd_params(a, out, err), kExitConfig);
}

// gradcheck ------------------------------------------------------------------------------

TEST(Gradcheck, SEErrorsBelowOneInAMillion) {
  GradcheckArgs a;
  a.variant = "se";
  const Outcome r = gradcheck(a);
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  const std::regex line(R"((\S+) numel=\d+ max_rel_err=(\S+))");
  std::size_t checked = 0;
  for (const auto& l : lines_of(r.out)) {
    std::smatch m;
    if (!std::regex_match(l, m, line)) continue;
    ++checked;
    EXPECT_LT(std::stod(m[2]), 1e-6) << l;
  }
  EXPECT_EQ(checked, 5u);  // input plus four SE tensors
}

TEST(Gradcheck, EveryVariantPasses) {
  for (const char* v : {"ta", "tripse1", "tripse2", "tripse3", "tripse4"}) {
    GradcheckArgs a;
    a.variant = v;
    const Outcome r = gradcheck(a);
    EXPECT_EQ(r.code, 0) << v << "\n" << r.out << r.err;
    EXPECT_NE(r.out.find("result=pass"), std::string::npos) << v;
  }
}

TEST(Gradcheck, Backbone) {
  GradcheckArgs a;
  a.variant = "backbone";
  const Outcome r = gradcheck(a);
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("head.weight"), std::string::npos);
}

TEST(Gradcheck, CorruptedBackwardFails) {
  GradcheckArgs a;
  a.variant = "tripse1";
  a.inject_fault = true;
  const Outcome r = gradcheck(a);
  EXPECT_EQ(r.code, kExitVerification) << r.out;
  EXPECT_NE(r.out.find("result=fail"), std::string::npos);
  a.inject_fault = false;
  EXPECT_EQ(gradcheck(a).code, 0);
}

TEST(Gradcheck, BadArguments) {
  GradcheckArgs a;
  a.variant = "none";
  EXPECT_EQ(gradcheck(a).code, kExitConfig);
  a.variant = "se";
  a.shape = {1, 4, 5};
  EXPECT_EQ(gradcheck(a).code, kExitConfig);
  a.shape = {1, 4, 5, 5};
  a.kernel = 4;
  EXPECT_EQ(gradcheck(a).code, kExitConfig);
}

// bench --------------------------------------------------------------------------------

TEST(Bench, SingleIterationAndStableStaticFacts) {
  BenchArgs a;
  a.variant = "tripse1";
  a.shape = {2, 8, 6, 6};
  a.iters = 1;
  a.warmup = 1;
  a.baseline = "ta";
  std::ostringstream o1, o2, err;
  ASSERT_EQ(cmd_bench(a, o1, err), 0) << err.str();
  ASSERT_EQ(cmd_bench(a, o2, err), 0);
  const auto l1 = lines_of(o1.str()), l2 = lines_of(o2.str());
  ASSERT_EQ(l1.size(), 4u);
  EXPECT_EQ(l1[0], "variant=tripse1 shape=2,8,6,6 params=" + std::to_string(attention_param_count(
                                                                AttentionConfig{AttentionKind::tripse1, 0, 7},
                                                                Dims3{8, 6, 6})) +
                       " warmup=1 iters=1");
  EXPECT_EQ(l1[0], l2[0]);
  EXPECT_NE(l1[1].find("mean_ns="), std::string::npos);
  EXPECT_NE(l1[3].find("overhead="), std::string::npos);
  a.iters = 0;
  EXPECT_EQ(cmd_bench(a, o1, err), kExitConfig);
}

// train and eval ------------------------------------------------------------------------

TEST(Train, WritesMetricsConfigAndSummary) {
  const auto dir = scratch_dir("train");
  auto o = tiny_run(dir, 5);
  o.emplace_back("attention", "tripse4");
  o.emplace_back("se-ratio", "1");
  const Outcome r = train(o);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = lines_of(read_file(dir / "metrics.csv"));
  ASSERT_EQ(csv.size(), 6u);
  EXPECT_EQ(csv[0], kMetricsHeader);
  for (std::size_t e = 1; e <= 5; ++e) EXPECT_EQ(csv[e].substr(0, csv[e].find(',')), std::to_string(e));
  EXPECT_TRUE(std::regex_search(r.out, std::regex(R"(best_val_acc=[0-9.e-]+ epoch=[1-5]\n$)"))) << r.out;
  const std::string cfg = read_file(dir / "config.txt");
  EXPECT_NE(cfg.find("\nattention = tripse4\n"), std::string::npos);
  EXPECT_NE(cfg.find("\nse_ratio = 1\n"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "checkpoint.tsew"));
  EXPECT_TRUE(fs::exists(dir / "model.tsew"));
}

TEST(Train, ConfigFileThenOverrides) {
  const auto dir = scratch_dir("config_file");
  {
    std::ofstream f(dir / "run.cfg");
    f << "# tiny\nepochs = 7\nattention = ta\nsynth_per_class = 6\nsynth_val_per_class = 2\n"
         "image_size = 16\nwidths = 4,4,4,4\n";
  }
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train((dir / "run.cfg").string(), {{"epochs", "1"}, {"output_dir", (dir / "out").string()}}, out,
                      err),
            0)
      << err.str();
  std::istringstream resolved(read_file(dir / "out" / "config.txt"));
  const RunConfig c = parse_config(resolved);
  EXPECT_EQ(c.epochs, 1u);
  EXPECT_EQ(c.attention, "ta");
  EXPECT_EQ(c.synth_per_class, 6u);
}

TEST(Train, IdenticalRunsGiveIdenticalMetrics) {
  const auto a = scratch_dir("repro_a"), b = scratch_dir("repro_b");
  ASSERT_EQ(train(tiny_run(a)).code, 0);
  ASSERT_EQ(train(tiny_run(b)).code, 0);
  EXPECT_EQ(read_file(a / "metrics.csv"), read_file(b / "metrics.csv"));
  EXPECT_EQ(read_file(a / "model.tsew"), read_file(b / "model.tsew"));
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto full = scratch_dir("resume_full"), part = scratch_dir("resume_part");
  auto o = tiny_run(full, 4);
  o.emplace_back("attention", "tripse2");
  o.emplace_back("scheduler", "step");
  o.emplace_back("step_period", "2");
  ASSERT_EQ(train(o).code, 0);

  auto p = o;
  p.emplace_back("output_dir", part.string());
  p.emplace_back("epochs", "1");
  ASSERT_EQ(train(p).code, 0);
  p.back() = {"epochs", "4"};
  p.emplace_back("resume", (part / "checkpoint.tsew").string());
  const Outcome r = train(p);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(full / "metrics.csv"), read_file(part / "metrics.csv"));
  EXPECT_EQ(read_file(full / "model.tsew"), read_file(part / "model.tsew"));
}

TEST(Train, ExitCodes) {
  const auto dir = scratch_dir("exit_codes");
  auto o = tiny_run(dir, 1);
  o.emplace_back("colour", "blue");
  EXPECT_EQ(train(o).code, kExitConfig);
  EXPECT_EQ(train({{"epochs", "x"}}).code, kExitConfig);
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train((dir / "missing.cfg").string(), {}, out, err), kExitConfig);

  o = tiny_run(dir, 1);
  o.emplace_back("dataset", "fer2013");
  o.emplace_back("fer_csv", (dir / "absent.csv").string());
  const Outcome r = train(o);
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("absent.csv"), std::string::npos);

  o = tiny_run(dir, 1);
  o.emplace_back("resume", (dir / "absent.tsew").string());
  EXPECT_EQ(train(o).code, kExitCheckpoint);
}

TEST(Eval, ReproducesFinalValidationAccuracy) {
  const auto dir = scratch_dir("eval");
  auto o = tiny_run(dir, 3);
  o.emplace_back("attention", "tripse1");
  ASSERT_EQ(train(o).code, 0);
  const auto csv = lines_of(read_file(dir / "metrics.csv"));
  std::vector<std::string> fields;
  std::istringstream row(csv.back());
  for (std::string f; std::getline(row, f, ',');) fields.push_back(f);

  EvalArgs a;
  a.checkpoint = (dir / "model.tsew").string();
  const Outcome r = eval(a);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "accuracy=" + fields[3] + " n=28\n");
}

TEST(Eval, ArchitectureMismatchExitsWithCheckpointCode) {
  const auto dir = scratch_dir("eval_mismatch");
  ASSERT_EQ(train(tiny_run(dir, 1)).code, 0);
  EvalArgs a;
  a.checkpoint = (dir / "model.tsew").string();
  a.overrides = {{"attention", "tripse3"}};
  const Outcome r = eval(a);
  EXPECT_EQ(r.code, kExitCheckpoint);
  EXPECT_NE(r.err.find("fingerprint"), std::string::npos) << r.err;
  a.overrides.clear();
  a.checkpoint = (dir / "nothing.tsew").string();
  a.config = (dir / "config.txt").string();
  EXPECT_EQ(eval(a).code, kExitCheckpoint);
}

TEST(Eval, SplitFlagSelectsFerSplits) {
  const auto dir = scratch_dir("eval_fer");
  const std::string csv = std::string(TRIPSE_FIXTURE_DIR) + "/fer_mini.csv";
  Overrides o{{"dataset", "fer2013"}, {"fer_csv", csv},        {"image_size", "16"},
              {"widths", "4,4,4,4"},  {"epochs", "1"},         {"output_dir", dir.string()}};
  ASSERT_EQ(train(o).code, 0);
  EvalArgs a;
  a.checkpoint = (dir / "model.tsew").string();
  for (const auto& [split, n] : std::vector<std::pair<std::string, int>>{
           {"Training", 6}, {"PublicTest", 2}, {"PrivateTest", 2}}) {
    a.split = split;
    const Outcome r = eval(a);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find(" n=" + std::to_string(n) + "\n"), std::string::npos) << split << ": " << r.out;
  }
  a.split = "Validation";
  EXPECT_EQ(eval(a).code, kExitConfig);
}

TEST(Eval, EmptySplitExitsWithDataCode) {
  const auto dir = scratch_dir("eval_empty");
  std::ifstream src(std::string(TRIPSE_FIXTURE_DIR) + "/fer_mini.csv");
  std::ofstream dst(dir / "train_only.csv");
  std::string line;
  std::getline(src, line);
  dst << line << "\n";
  while (std::getline(src, line)) {
    if (line.find("Training") != std::string::npos) dst << line << "\n";
  }
  dst.close();
  Overrides o{{"dataset", "fer2013"}, {"fer_csv", (dir / "train_only.csv").string()},
              {"eval_split", "Training"}, {"image_size", "16"}, {"widths", "4,4,4,4"},
              {"epochs", "1"}, {"output_dir", dir.string()}};
  ASSERT_EQ(train(o).code, 0);
  EvalArgs a;
  a.checkpoint = (dir / "model.tsew").string();
  a.split = "PrivateTest";
  const Outcome r = eval(a);
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("empty"), std::string::npos) << r.err;
}
