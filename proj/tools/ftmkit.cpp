// ftmkit: command-line driver for the false-trigger mitigation pipeline.

#include <CLI11.hpp>
#include <iostream>

#include "ftm/config.hpp"
#include "ftm/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

const char* const kCommands[] = {"gen-data", "train-lm", "decode", "train-ftm", "eval", "report"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lattice-based false-trigger mitigation toolkit"};
  std::string command;
  std::string config_path;
  std::string variant;
  std::string out_dir;
  app.add_option("command", command, "gen-data | train-lm | decode | train-ftm | eval | report")
      ->required()
      ->check(CLI::IsMember(std::vector<std::string>(std::begin(kCommands), std::end(kCommands))));
  app.add_option("--config", config_path, "key = value configuration file")->required();
  app.add_option("--variant", variant,
                 "train-lm: base | chatter; train-ftm: classifier variant (default: all configured)");
  app.add_option("--out", out_dir, "run directory, overriding run_dir from the config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kOk : kUsageError;
  }

  ftm::RunConfig cfg;
  try {
    cfg = ftm::load_config(config_path);
  } catch (const ftm::ConfigError& e) {
    std::cerr << "ftmkit: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "ftmkit: " << e.what() << "\n";
    return kRuntimeError;
  }
  if (!out_dir.empty()) cfg.run_dir = out_dir;

  if (command == "train-lm" && variant != "base" && variant != "chatter") {
    std::cerr << "ftmkit: train-lm needs --variant base or --variant chatter\n";
    return kUsageError;
  }
  if (command == "train-ftm" && !variant.empty() && !ftm::is_known_variant(variant)) {
    std::cerr << "ftmkit: unknown variant '" << variant << "'; expected one of:";
    for (const auto& v : ftm::known_variants()) std::cerr << " " << v;
    std::cerr << "\n";
    return kUsageError;
  }
  if (!variant.empty() && command != "train-lm" && command != "train-ftm") {
    std::cerr << "ftmkit: --variant applies only to train-lm and train-ftm\n";
    return kUsageError;
  }

  try {
    if (command == "gen-data") {
      ftm::gen_data(cfg, std::cout);
    } else if (command == "train-lm") {
      ftm::train_lm(cfg, variant == "base" ? ftm::LmTag::Base : ftm::LmTag::Chatter, std::cout);
    } else if (command == "decode") {
      ftm::decode_data(cfg, std::cout);
    } else if (command == "train-ftm") {
      if (!variant.empty()) {
        ftm::train_ftm(cfg, variant, std::cout);
      } else {
        for (const auto& v : ftm::known_variants()) {
          if (std::find(cfg.variants.begin(), cfg.variants.end(), v) != cfg.variants.end()) {
            ftm::train_ftm(cfg, v, std::cout);
          }
        }
      }
    } else if (command == "eval") {
      ftm::evaluate(cfg, std::cout);
    } else {
      ftm::report(cfg, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "ftmkit: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
