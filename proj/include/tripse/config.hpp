#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tripse/backbone.hpp"
#include "tripse/train.hpp"

namespace tripse {

/// Every setting of a run. Defaults here are the documented defaults.
struct RunConfig {
  // data
  std::string dataset = "synthetic";  // synthetic | fer2013
  std::string fer_csv = "data/fer2013.csv";
  std::string eval_split = "PublicTest";
  std::size_t num_classes = 7;
  std::size_t synth_per_class = 200;
  std::size_t synth_val_per_class = 20;
  double synth_noise = 0.1;
  std::size_t image_size = 32;
  std::size_t in_channels = 1;
  bool augment = true;
  double hflip_prob = 0.5;
  double rotation_min = -30.0;
  double rotation_max = 30.0;
  std::size_t max_train_samples = 0;  // 0 keeps everything
  std::size_t max_eval_samples = 0;

  // model
  std::vector<std::size_t> widths{16, 32, 64, 128};
  std::vector<std::size_t> depths{1, 1, 1, 1};
  std::size_t stem_stride = 1;
  std::string attention = "none";
  std::size_t se_ratio = 0;  // 0 picks the per-variant default
  std::size_t kernel = 7;

  // training
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double min_lr = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::string scheduler = "plateau";
  double lr_factor = 0.1;
  std::size_t patience = 3;
  std::size_t step_period = 10;
  std::string plateau_metric = "val_acc";
  std::size_t checkpoint_every = 1;
  bool log_wall_time = false;
  std::string resume;  // training checkpoint to continue from
};

struct ConfigKeyInfo {
  std::string name;
  std::string description;
};

/// Every accepted key with its description, in rendering order.
const std::vector<ConfigKeyInfo>& config_keys();

/// Sets one key from its text form. Dashes in the key count as underscores.
/// Throws ConfigError for unknown keys and malformed values.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& cfg, std::string_view key);

/// Flat "key = value" lines; '#' starts a comment. Starts from defaults.
RunConfig parse_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

/// "--key=value" or "--key value" pairs, in order.
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& args);

/// Every key, one per line, parseable by parse_config.
std::string render_config(const RunConfig& cfg);

/// Checks cross-field constraints. Throws ConfigError.
void validate(const RunConfig& cfg);

BackboneConfig backbone_config(const RunConfig& cfg);
TrainConfig train_config(const RunConfig& cfg);

/// Comma-separated unsigned integers.
std::vector<std::size_t> parse_size_list(std::string_view text);

}  // namespace tripse
