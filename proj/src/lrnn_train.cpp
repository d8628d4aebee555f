#include "ftm/lrnn_train.hpp"

#include <cstdio>

#include "ftm/parallel.hpp"

namespace ftm {

std::vector<LatticeSample> lattice_samples(std::span<const Sample* const> samples, LmTag which,
                                           int threads) {
  std::vector<LatticeSample> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const SamplePair& p = samples[i]->pair;
    out[i] = {p.utterance_id, p.label,
              prepare(which == LmTag::Base ? p.lattice_base : p.lattice_chatter)};
  });
  return out;
}

FitResult<LrnnParams> train(const LrnnParams& init, const std::vector<LatticeSample>& train_set,
                            const std::vector<LatticeSample>& cv_set, const TrainConfig& cfg) {
  if (train_set.empty() || cv_set.empty()) throw std::invalid_argument("training sets must be non-empty");
  if (cfg.epochs < 1) throw std::invalid_argument("epochs must be positive");
  auto loss_grad = [&](const LrnnParams& p, std::size_t i, LrnnParams& grad) {
    const LatticeSample& s = train_set[i];
    return sample_loss_grad(p, {&s.lattice, label_value(s.label)}, grad);
  };
  auto score_cv = [&](const LrnnParams& p) { return predict_scores(p, cv_set, cfg.threads); };
  return fit(init, train_set.size(), loss_grad, score_cv, cfg);
}

std::vector<ScoredSample> predict_scores(const LrnnParams& p,
                                         const std::vector<LatticeSample>& samples, int threads) {
  if (p.head.input_width() != 2 * p.hidden_dim()) {
    throw WidthMismatch("single-lattice scoring needs a head of width 2H");
  }
  std::vector<ScoredSample> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    out[i] = {samples[i].id, samples[i].label, predict(p, samples[i].lattice)};
  });
  return out;
}

std::string write_epoch_log(const std::vector<EpochLog>& log, int best_epoch) {
  std::string out = "epoch\ttrain_loss\tcv_ft\tcv_auc\tselected\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%d\t%.9g\t%.9g\t%.9g\t%d\n", e.epoch, e.train_loss, e.cv_ft,
                  e.cv_auc, e.epoch == best_epoch ? 1 : 0);
    out += buf;
  }
  return out;
}

}  // namespace ftm
