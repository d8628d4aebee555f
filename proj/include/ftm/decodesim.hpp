#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ftm/lattice.hpp"
#include "ftm/lm.hpp"
#include "ftm/types.hpp"

namespace ftm {

inline const std::vector<std::string> kTriggerPhrase = {"hey", "device"};

struct Utterance {
  std::string id;
  Sentence words;
  Label label = Label::TT;
  Split split = Split::Train;
  int augment_index = 0;
  // Acoustic condition of this rendition: speed is set by augment(),
  // jitter_sigma overrides the confusion model's noise (far-field speech).
  double speed = 1.0;
  std::optional<double> jitter_sigma;

  bool operator==(const Utterance&) const = default;
};

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Word-confusion surrogate for the acoustic model. Each word can be heard
/// as any pooled-vocabulary word within edit distance 2, with base log-score
/// -lambda * distance; decoding adds Gaussian jitter per utterance.
struct ConfusionModel {
  struct Candidate {
    std::string word;
    double base_score = 0.0;
  };

  std::vector<std::string> vocab;
  std::vector<std::vector<Candidate>> confusions;  // parallel to vocab, identity first
  double lambda = 1.5;
  double noise_sigma = 0.3;
  std::uint64_t seed = 0;

  const std::vector<Candidate>& candidates(const std::string& word) const;
};

int edit_distance(const std::string& a, const std::string& b);

ConfusionModel build_confusion_model(std::vector<std::string> vocab, double lambda,
                                     double noise_sigma, std::uint64_t seed);

struct SamplePair {
  std::string utterance_id;
  Label label = Label::TT;
  Lattice lattice_base;
  Lattice lattice_chatter;
};

struct Sample {
  Split split = Split::Train;
  SamplePair pair;
};

struct CorpusSizes {
  double scale = 0.1;          // fraction of the reference split sizes
  int lm_sentences = 4000;     // per domain, for LM training
  int heldout_sentences = 400; // per domain
  double near_miss_rate = 0.1; // FT utterances carrying a near-trigger token
  double far_field_rate = 0.0; // utterances of either label heard at a distance
  double far_field_sigma = 2.0; // their score jitter
};

// Reference split sizes per (label, split) before augmentation.
struct SplitCounts {
  int tt = 0;
  int ft = 0;
};
SplitCounts reference_split_counts(Split split);
SplitCounts scaled_split_counts(Split split, double scale);

struct GeneratedCorpora {
  Corpus in_domain;
  Corpus chatter;
  Corpus in_domain_heldout;
  Corpus chatter_heldout;
  std::vector<Utterance> utterances;  // unaugmented, ordered train, cv, dev, eval
};

GeneratedCorpora gen_corpora(std::uint64_t seed, const CorpusSizes& sizes);

/// Every word the generators can emit, sorted.
std::vector<std::string> pooled_vocabulary();

/// Renditions k=1,2 change speed (0.9/1.1) and re-seed the score jitter;
/// k=0 is the source utterance unchanged.
Utterance augment(const Utterance& u, int k, std::optional<double> sigma = std::nullopt);

struct DecodeOptions {
  std::size_t beam = 8;             // states kept per word position
  std::size_t max_arcs_per_step = 4;  // expansions per state
};

/// Time-synchronous beam search over word positions. A state is the pair
/// (position, LM history); states sharing both merge into one lattice node.
/// The state reached by the reference prefix always survives pruning and
/// takes one beam slot, so the reference word sequence is a lattice path.
Lattice decode(const Utterance& u, const ConfusionModel& cm, const NGramModel& m,
               const DecodeOptions& opts);

struct ManifestEntry {
  std::string id;
  Label label = Label::TT;
  Split split = Split::Train;
  std::string base_lattice_path;
  std::string chatter_lattice_path;
};

std::string write_manifest(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& text);

std::string write_utterances(const std::vector<Utterance>& us);
std::vector<Utterance> read_utterances(const std::string& text);

/// Train/cv utterances expanded to their three renditions, dev/eval as-is.
std::vector<Utterance> expand_augmented(const std::vector<Utterance>& source);

/// Decodes every rendition with both models and writes lattices plus
/// `manifest.tsv` under `data_dir`. Returns the in-memory dataset.
std::vector<Sample> build_dataset(const std::vector<Utterance>& source, const ConfusionModel& cm,
                                  const NGramModel& base_lm, const NGramModel& chatter_lm,
                                  const DecodeOptions& opts, const std::filesystem::path& data_dir,
                                  int threads = 1);

std::vector<Sample> load_dataset(const std::filesystem::path& data_dir);

std::vector<const Sample*> select_split(const std::vector<Sample>& data, Split split);

}  // namespace ftm
