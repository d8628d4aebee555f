#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftm {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Every knob of a pipeline run. The file format is `key = value` per line,
/// `#` starts a comment, and absent keys keep the defaults below.
struct RunConfig {
  std::uint64_t seed = 1;
  double scale = 0.1;
  int lm_sentences = 4000;
  int heldout_sentences = 400;
  double near_miss_rate = 0.1;
  double far_field_rate = 0.0;
  double far_field_sigma = 2.0;
  int lm_order = 3;
  double lm_discount = 0.4;
  double confusion_lambda = 1.5;
  double confusion_sigma = 0.3;
  int beam = 8;
  int max_arcs_per_step = 4;
  int hidden_dim = 32;
  int head_hidden = 32;
  int epochs = 8;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double target_fs = 0.004;
  double encoder_lr_scale = 0.1;
  std::vector<std::string> variants = {
      "base-single", "chatter-single", "ratio", "score-merge", "embed-merge",
      "parallel-full-random", "parallel-full-pretrained", "moe"};
  std::filesystem::path run_dir = "run";
};

/// Names accepted by `train-ftm --variant`, in canonical order.
const std::vector<std::string>& known_variants();
bool is_known_variant(const std::string& name);

RunConfig parse_config(const std::string& text);

/// Reads a config file; a relative run_dir resolves against the file's
/// directory.
RunConfig load_config(const std::filesystem::path& path);

/// Canonical text of every key except run_dir, in a fixed order, so two
/// equal configurations serialize to the same bytes.
std::string serialize_config(const RunConfig& c);

}  // namespace ftm
