#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "tripse/config.hpp"
#include "tripse/errors.hpp"

namespace tripse {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string normalize_key(std::string_view key) {
  std::string k(trim(key));
  std::replace(k.begin(), k.end(), '-', '_');
  return k;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key) + " (expected " + expected +
                    ")");
}

template <typename U>
U parse_unsigned(std::string_view key, std::string_view v) {
  v = trim(v);
  U out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  v = trim(v);
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  std::string s(trim(v));
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad_value(key, v, "true or false");
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string format_list(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(xs[i]);
  }
  return out;
}

struct Key {
  ConfigKeyInfo info;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

Key str_key(std::string name, std::string desc, std::string RunConfig::*field) {
  return {{std::move(name), std::move(desc)},
          [field](RunConfig& c, std::string_view v) { c.*field = std::string(trim(v)); },
          [field](const RunConfig& c) { return c.*field; }};
}

Key size_key(std::string name, std::string desc, std::size_t RunConfig::*field) {
  return {{name, std::move(desc)},
          [field, name](RunConfig& c, std::string_view v) { c.*field = parse_unsigned<std::size_t>(name, v); },
          [field](const RunConfig& c) { return std::to_string(c.*field); }};
}

Key double_key(std::string name, std::string desc, double RunConfig::*field) {
  return {{name, std::move(desc)},
          [field, name](RunConfig& c, std::string_view v) { c.*field = parse_double(name, v); },
          [field](const RunConfig& c) { return format_double(c.*field); }};
}

Key bool_key(std::string name, std::string desc, bool RunConfig::*field) {
  return {{name, std::move(desc)},
          [field, name](RunConfig& c, std::string_view v) { c.*field = parse_bool(name, v); },
          [field](const RunConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}

Key list_key(std::string name, std::string desc, std::vector<std::size_t> RunConfig::*field) {
  return {{name, std::move(desc)},
          [field, name](RunConfig& c, std::string_view v) {
            try {
              c.*field = parse_size_list(v);
            } catch (const ConfigError&) {
              bad_value(name, v, "comma-separated non-negative integers");
            }
          },
          [field](const RunConfig& c) { return format_list(c.*field); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(str_key("dataset", "synthetic or fer2013", &RunConfig::dataset));
    k.push_back(str_key("fer_csv", "path of the FER2013 CSV", &RunConfig::fer_csv));
    k.push_back(str_key("eval_split", "FER2013 split used for validation and eval", &RunConfig::eval_split));
    k.push_back(size_key("num_classes", "number of classes", &RunConfig::num_classes));
    k.push_back(size_key("synth_per_class", "synthetic training samples per class", &RunConfig::synth_per_class));
    k.push_back(
        size_key("synth_val_per_class", "synthetic validation samples per class", &RunConfig::synth_val_per_class));
    k.push_back(double_key("synth_noise", "synthetic uniform noise amplitude", &RunConfig::synth_noise));
    k.push_back(size_key("image_size", "network input height and width", &RunConfig::image_size));
    k.push_back(size_key("in_channels", "input channels", &RunConfig::in_channels));
    k.push_back(bool_key("augment", "random flip and rotation during training", &RunConfig::augment));
    k.push_back(double_key("hflip_prob", "horizontal flip probability", &RunConfig::hflip_prob));
    k.push_back(double_key("rotation_min", "minimum rotation in degrees", &RunConfig::rotation_min));
    k.push_back(double_key("rotation_max", "maximum rotation in degrees", &RunConfig::rotation_max));
    k.push_back(size_key("max_train_samples", "seeded training subset size, 0 for all", &RunConfig::max_train_samples));
    k.push_back(size_key("max_eval_samples", "seeded evaluation subset size, 0 for all", &RunConfig::max_eval_samples));
    k.push_back(list_key("widths", "channels of the four stages", &RunConfig::widths));
    k.push_back(list_key("depths", "residual blocks per stage", &RunConfig::depths));
    k.push_back(size_key("stem_stride", "stride of the stem convolution", &RunConfig::stem_stride));
    k.push_back(str_key("attention", "none, se, ta, tripse1, tripse2, tripse3 or tripse4", &RunConfig::attention));
    k.push_back(size_key("se_ratio", "SE reduction ratio, 0 for the variant default", &RunConfig::se_ratio));
    k.push_back(size_key("kernel", "attention gate kernel size (odd)", &RunConfig::kernel));
    k.push_back({{"seed", "seed for weights, data and augmentation"},
                 [](RunConfig& c, std::string_view v) { c.seed = parse_unsigned<std::uint64_t>("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    k.push_back(str_key("output_dir", "directory for all run outputs", &RunConfig::output_dir));
    k.push_back(size_key("epochs", "total training epochs", &RunConfig::epochs));
    k.push_back(size_key("batch_size", "mini-batch size", &RunConfig::batch_size));
    k.push_back(double_key("lr", "initial learning rate", &RunConfig::lr));
    k.push_back(double_key("min_lr", "learning-rate floor", &RunConfig::min_lr));
    k.push_back(double_key("beta1", "RAdam first-moment decay", &RunConfig::beta1));
    k.push_back(double_key("beta2", "RAdam second-moment decay", &RunConfig::beta2));
    k.push_back(double_key("eps", "RAdam denominator epsilon", &RunConfig::eps));
    k.push_back(str_key("scheduler", "plateau, step or constant", &RunConfig::scheduler));
    k.push_back(double_key("lr_factor", "learning-rate multiplier on each drop", &RunConfig::lr_factor));
    k.push_back(size_key("patience", "plateau: non-improving epochs before a drop", &RunConfig::patience));
    k.push_back(size_key("step_period", "step: epochs between drops", &RunConfig::step_period));
    k.push_back(str_key("plateau_metric", "val_acc or val_loss", &RunConfig::plateau_metric));
    k.push_back(
        size_key("checkpoint_every", "epochs between checkpoints, 0 for final only", &RunConfig::checkpoint_every));
    k.push_back(bool_key("log_wall_time", "record epoch seconds in the metrics CSV", &RunConfig::log_wall_time));
    k.push_back(str_key("resume", "training checkpoint to continue from, empty for a fresh run", &RunConfig::resume));
    return k;
  }();
  return table;
}

const Key& find_key(std::string_view key) {
  const std::string k = normalize_key(key);
  for (const auto& e : keys()) {
    if (e.info.name == k) return e;
  }
  throw ConfigError("unknown config key '" + std::string(trim(key)) + "'");
}

}  // namespace

std::vector<std::size_t> parse_size_list(std::string_view text) {
  std::vector<std::size_t> out;
  std::string_view rest = trim(text);
  if (rest.empty()) throw ConfigError("empty list");
  while (true) {
    const auto comma = rest.find(',');
    out.push_back(parse_unsigned<std::size_t>("list", rest.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

const std::vector<ConfigKeyInfo>& config_keys() {
  static const std::vector<ConfigKeyInfo> infos = [] {
    std::vector<ConfigKeyInfo> v;
    for (const auto& k : keys()) v.push_back(k.info);
    return v;
  }();
  return infos;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  find_key(key).set(cfg, value);
}

std::string get_config_value(const RunConfig& cfg, std::string_view key) { return find_key(key).get(cfg); }

RunConfig parse_config(std::istream& in, const std::string& source) {
  RunConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view row(line);
    if (const auto hash = row.find('#'); hash != std::string_view::npos) row = row.substr(0, hash);
    row = trim(row);
    if (row.empty()) continue;
    const auto eq = row.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set_config_value(cfg, row.substr(0, eq), row.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in, path);
}

std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& args) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string_view a(args[i]);
    if (a.substr(0, 2) != "--" || a.size() == 2) throw ConfigError("unexpected argument '" + args[i] + "'");
    a.remove_prefix(2);
    if (const auto eq = a.find('='); eq != std::string_view::npos) {
      out.emplace_back(std::string(a.substr(0, eq)), std::string(a.substr(eq + 1)));
    } else {
      if (i + 1 >= args.size()) throw ConfigError("missing value for --" + std::string(a));
      out.emplace_back(std::string(a), args[++i]);
    }
  }
  return out;
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& k : keys()) {
    os << "# " << k.info.description << "\n" << k.info.name << " = " << k.get(cfg) << "\n";
  }
  return os.str();
}

void validate(const RunConfig& cfg) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(cfg.dataset == "synthetic" || cfg.dataset == "fer2013", "dataset must be synthetic or fer2013");
  try {
    parse_split(cfg.eval_split);
  } catch (const DataError& e) {
    throw ConfigError(std::string("eval_split: ") + e.what());
  }
  try {
    parse_attention_kind(cfg.attention);
    parse_scheduler_kind(cfg.scheduler);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  require(cfg.plateau_metric == "val_acc" || cfg.plateau_metric == "val_loss",
          "plateau_metric must be val_acc or val_loss");
  require(cfg.num_classes >= 2, "num_classes must be at least 2");
  if (cfg.dataset == "fer2013") {
    require(cfg.num_classes == kFerClasses, "fer2013 has 7 classes");
  }
  require(cfg.synth_per_class > 0 && cfg.synth_val_per_class > 0, "synthetic sample counts must be positive");
  require(cfg.synth_noise >= 0.0, "synth_noise must be non-negative");
  require(cfg.image_size > 0, "image_size must be positive");
  require(cfg.in_channels == 1, "in_channels must be 1: both datasets are grayscale");
  require(cfg.hflip_prob >= 0.0 && cfg.hflip_prob <= 1.0, "hflip_prob must lie in [0,1]");
  require(cfg.rotation_min <= cfg.rotation_max, "rotation_min must not exceed rotation_max");
  require(cfg.widths.size() == 4 && cfg.depths.size() == 4, "widths and depths need four entries");
  for (std::size_t i = 0; i < 4; ++i) {
    require(cfg.widths[i] > 0 && cfg.depths[i] > 0, "widths and depths must be positive");
  }
  require(cfg.stem_stride > 0, "stem_stride must be positive");
  require(cfg.kernel % 2 == 1, "kernel must be odd");
  require(cfg.batch_size > 0, "batch_size must be positive");
  require(cfg.lr > 0.0 && cfg.min_lr >= 0.0 && cfg.eps > 0.0, "lr and eps must be positive");
  require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0, "betas must lie in [0,1)");
  require(cfg.lr_factor > 0.0 && cfg.lr_factor <= 1.0, "lr_factor must lie in (0,1]");
  require(cfg.step_period > 0, "step_period must be positive");
  backbone_config(cfg).stage_dims();
}

BackboneConfig backbone_config(const RunConfig& cfg) {
  BackboneConfig b;
  b.in_channels = cfg.in_channels;
  b.num_classes = cfg.num_classes;
  if (cfg.widths.size() != 4 || cfg.depths.size() != 4) throw ConfigError("widths and depths need four entries");
  for (std::size_t i = 0; i < 4; ++i) b.stages[i] = StageSpec{cfg.widths[i], cfg.depths[i], i > 0};
  b.stem_stride = cfg.stem_stride;
  try {
    b.attention = AttentionConfig{parse_attention_kind(cfg.attention), cfg.se_ratio, cfg.kernel};
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  b.input_height = b.input_width = cfg.image_size;
  b.seed = cfg.seed;
  return b;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.batch_size = cfg.batch_size;
  t.optimizer = RAdamConfig{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};
  try {
    t.scheduler.kind = parse_scheduler_kind(cfg.scheduler);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  t.scheduler.factor = cfg.lr_factor;
  t.scheduler.patience = cfg.patience;
  t.scheduler.step_period = cfg.step_period;
  t.scheduler.min_lr = cfg.min_lr;
  t.plateau_metric = cfg.plateau_metric == "val_loss" ? PlateauMetric::val_loss : PlateauMetric::val_acc;
  t.augment = cfg.augment;
  t.augmentation.hflip_prob = cfg.hflip_prob;
  t.augmentation.rotation_min = cfg.rotation_min;
  t.augmentation.rotation_max = cfg.rotation_max;
  t.augmentation.seed = cfg.seed;
  t.seed = cfg.seed;
  t.log_wall_time = cfg.log_wall_time;
  return t;
}

}  // namespace tripse
