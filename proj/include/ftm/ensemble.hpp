#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "ftm/decodesim.hpp"
#include "ftm/lm.hpp"
#include "ftm/lrnn.hpp"
#include "ftm/lrnn_train.hpp"
#include "ftm/train.hpp"

namespace ftm {

enum class Variant { Ratio, ScoreMerge, EmbedMerge, ParallelFull, Moe };

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);

struct GateParams {
  Eigen::VectorXd w;  // 4H
  double b = 0.0;
};

/// Parameters of a two-lattice classifier. `base` and `chatter` are full
/// single-lattice models; their own heads matter only for SCORE_MERGE,
/// which feeds their outputs (y1, y2) to `head`.
struct EnsembleParams {
  Variant variant = Variant::Ratio;
  LrnnParams base;
  LrnnParams chatter;
  HeadParams<double> head;  // width 2 (SCORE_MERGE), 4H (EMBED_MERGE, PARALLEL_FULL), 2H (MOE)
  GateParams gate;          // MOE only
  DomainPrior prior;        // RATIO only

  int hidden_dim() const { return base.hidden_dim(); }
};

/// Visits the tensors trained end-to-end for the variant: the head for the
/// frozen variants, both encoders plus the head for PARALLEL_FULL, and the
/// gate as well for MOE. RATIO has none.
template <typename Fn>
void visit_tensors(EnsembleParams& p, const std::string& prefix, Fn&& fn) {
  using Map = Eigen::Map<Eigen::VectorXd>;
  if (p.variant == Variant::Ratio) return;
  if (p.variant == Variant::ParallelFull || p.variant == Variant::Moe) {
    visit_tensors(p.base.encoder, prefix + "base.enc.", fn);
    visit_tensors(p.chatter.encoder, prefix + "chatter.enc.", fn);
  }
  visit_tensors(p.head, prefix + "head.", fn);
  if (p.variant == Variant::Moe) {
    fn(prefix + "gate.w", Map(p.gate.w.data(), p.gate.w.size()));
    fn(prefix + "gate.b", Map(&p.gate.b, 1));
  }
}

struct PairSample {
  std::string id;
  Label label = Label::TT;
  PreparedLattice base;
  PreparedLattice chatter;
};

std::vector<PairSample> pair_samples(std::span<const Sample* const> samples, int threads = 1);

double log_evidence(const PreparedLattice& g);

/// log P(in|X) - log P(out|X) from the paired lattice evidences and the
/// class prior; P(X) cancels. Larger means more likely intended.
double ratio_score(const SamplePair& pair, const DomainPrior& prior);
double ratio_score(const PairSample& pair, const DomainPrior& prior);

struct EnsembleOutput {
  double y = 0.5;
  double alpha = 0.5;  // gate weight of the base encoder; MOE only
};

double score_merge_forward(const LrnnParams& base, const LrnnParams& chatter,
                           const HeadParams<double>& head, const PairSample& pair);
double embed_merge_forward(const LrnnParams& base, const LrnnParams& chatter,
                           const HeadParams<double>& head, const PairSample& pair);
/// alpha = sigmoid(w_g . [h1f, h1b, h2f, h2b] + b_g); the head sees
/// [alpha h1f + (1-alpha) h2f, alpha h1b + (1-alpha) h2b].
EnsembleOutput moe_forward(const EnsembleParams& p, const PairSample& pair);

EnsembleOutput ensemble_forward(const EnsembleParams& p, const PairSample& pair);

/// Adds the sample's loss gradient (trainable tensors only) into `grad`.
double ensemble_loss_grad(const EnsembleParams& p, const PairSample& pair, EnsembleParams& grad);

std::vector<ScoredSample> predict_ensemble(const EnsembleParams& p,
                                           const std::vector<PairSample>& pairs, int threads = 1);

// Frozen-encoder outputs cached before head training.
struct EmbeddingRecord {
  std::string id;
  Label label = Label::TT;
  double y_base = 0.0;
  double y_chatter = 0.0;
  Eigen::VectorXd embedding;  // [h1f, h1b, h2f, h2b]
};

std::vector<EmbeddingRecord> compute_embeddings(const LrnnParams& base, const LrnnParams& chatter,
                                                const std::vector<PairSample>& pairs,
                                                int threads = 1);
std::string write_embedding_cache(const std::vector<EmbeddingRecord>& records);
std::vector<EmbeddingRecord> read_embedding_cache(const std::string& bytes);

/// Trains only the head of SCORE_MERGE or EMBED_MERGE on cached records.
FitResult<EnsembleParams> train_frozen_head(Variant variant, const LrnnParams& base,
                                            const LrnnParams& chatter,
                                            const std::vector<EmbeddingRecord>& train_set,
                                            const std::vector<EmbeddingRecord>& cv_set,
                                            int head_hidden, const TrainConfig& cfg);

enum class ParallelInit { Random, Pretrained };

struct ParallelOptions {
  int hidden_dim = 32;
  int head_hidden = 32;
  double encoder_lr_scale = 0.1;  // applied to encoders when starting from pretrained weights
};

EnsembleParams init_ensemble(Variant variant, int hidden_dim, int head_hidden, std::uint64_t seed);

/// End-to-end training of both encoders and the 4H head. PRETRAINED copies
/// the encoders of the given single models.
FitResult<EnsembleParams> parallel_full_train(ParallelInit init, const LrnnParams* base,
                                              const LrnnParams* chatter,
                                              const std::vector<PairSample>& train_set,
                                              const std::vector<PairSample>& cv_set,
                                              const ParallelOptions& opts, const TrainConfig& cfg);

FitResult<EnsembleParams> moe_train(const std::vector<PairSample>& train_set,
                                    const std::vector<PairSample>& cv_set,
                                    const ParallelOptions& opts, const TrainConfig& cfg);

std::string write_ensemble(const EnsembleParams& p);
EnsembleParams read_ensemble(const std::string& text);

}  // namespace ftm
