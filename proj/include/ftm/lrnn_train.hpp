#pragma once

#include <span>
#include <string>
#include <vector>

#include "ftm/decodesim.hpp"
#include "ftm/lrnn.hpp"
#include "ftm/train.hpp"

namespace ftm {

struct LatticeSample {
  std::string id;
  Label label = Label::TT;
  PreparedLattice lattice;
};

/// One side of each pair, prepared for the recurrences, in input order.
std::vector<LatticeSample> lattice_samples(std::span<const Sample* const> samples, LmTag which,
                                           int threads = 1);

FitResult<LrnnParams> train(const LrnnParams& init, const std::vector<LatticeSample>& train_set,
                            const std::vector<LatticeSample>& cv_set, const TrainConfig& cfg);

/// Requires a single-lattice head (input width 2H).
std::vector<ScoredSample> predict_scores(const LrnnParams& p,
                                         const std::vector<LatticeSample>& samples,
                                         int threads = 1);

}  // namespace ftm
