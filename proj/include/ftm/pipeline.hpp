#pragma once

#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>

#include "ftm/config.hpp"
#include "ftm/lattice.hpp"

namespace ftm {

/// A required artifact of an earlier stage is missing.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Run directory layout.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.txt"; }
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path utterances() const { return data() / "utterances.tsv"; }
  std::filesystem::path corpus(LmTag tag, bool heldout) const;
  std::filesystem::path model(LmTag tag) const;
  std::filesystem::path manifest() const { return data() / "manifest.tsv"; }
  std::filesystem::path checkpoint(const std::string& variant) const;
  std::filesystem::path epoch_log(const std::string& variant) const;
  std::filesystem::path cache() const { return root / "cache"; }
  std::filesystem::path eval() const { return root / "eval"; }
  std::filesystem::path summary() const { return eval() / "summary.csv"; }
  std::filesystem::path report() const { return root / "report.md"; }
};

// Pipeline stages. Each writes under cfg.run_dir through temp-file renames
// and logs progress to `log`.

/// Corpora and labeled utterances, then both LMs and the decoded dataset.
void gen_data(const RunConfig& cfg, std::ostream& log);
void train_lm(const RunConfig& cfg, LmTag which, std::ostream& log);
void decode_data(const RunConfig& cfg, std::ostream& log);
void train_ftm(const RunConfig& cfg, const std::string& variant, std::ostream& log);
void evaluate(const RunConfig& cfg, std::ostream& log);
void report(const RunConfig& cfg, std::ostream& log);

/// Every stage in order, training the configured variants.
void run_pipeline(const RunConfig& cfg, std::ostream& log);

/// Human-readable label of a variant for tables.
std::string display_name(const std::string& variant);

}  // namespace ftm
