#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "ftm/lrnn.hpp"
#include "ftm/metrics.hpp"
#include "ftm/parallel.hpp"

namespace ftm {

struct TrainConfig {
  int epochs = 8;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 1;
  double target_fs = kTargetFs;  // operating point for epoch selection on cv
  int threads = 1;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double cv_ft = 0.0;
  double cv_auc = 0.0;
};

template <typename P>
struct FitResult {
  P best;
  int best_epoch = 0;
  std::vector<EpochLog> log;
};

class Adam {
 public:
  Adam(Eigen::Index size, const TrainConfig& cfg, Eigen::VectorXd lr_scale)
      : cfg_(cfg), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)),
        scale_(std::move(lr_scale)) {}

  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    const Eigen::ArrayXd update =
        (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
    theta.array() -= cfg_.learning_rate * scale_.array() * update;
  }

 private:
  TrainConfig cfg_;
  Eigen::VectorXd m_, v_, scale_;
  int t_ = 0;
};

/// Minibatch Adam with per-epoch model selection by FT at the target FS on
/// cv (ties keep the earlier epoch).
///
/// `loss_grad(params, i, grad)` adds sample i's loss gradient into `grad`
/// and returns its loss; `score_cv(params)` returns cv scores. Per-sample
/// gradients are reduced in sample order, so results do not depend on the
/// thread count.
template <typename P, typename LossGrad, typename ScoreCv>
FitResult<P> fit(P params, std::size_t n_train, LossGrad&& loss_grad, ScoreCv&& score_cv,
                 const TrainConfig& cfg, Eigen::VectorXd lr_scale = {}) {
  Eigen::VectorXd theta = flatten(params);
  if (lr_scale.size() == 0) lr_scale = Eigen::VectorXd::Ones(theta.size());
  Adam adam(theta.size(), cfg, std::move(lr_scale));
  const P zero = zeros_like(params);

  FitResult<P> result;
  double best_ft = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> perm(n_train);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(cfg.seed);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = perm.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(perm[i - 1], perm[pick(rng)]);
    }
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < n_train; begin += cfg.batch_size) {
      const std::size_t end = std::min(n_train, begin + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t bs = end - begin;
      std::vector<P> grads(bs, zero);
      std::vector<double> losses(bs, 0.0);
      parallel_for(bs, cfg.threads, [&](std::size_t k) {
        losses[k] = loss_grad(params, perm[begin + k], grads[k]);
      });
      Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
      for (std::size_t k = 0; k < bs; ++k) {
        g += flatten(grads[k]);
        loss_sum += losses[k];
      }
      g /= static_cast<double>(bs);
      adam.step(theta, g);
      unflatten(theta, params);
    }

    const std::vector<ScoredSample> cv = score_cv(params);
    const DetCurve curve = det_curve(cv);
    const double cv_ft = rates_at(cv, pick_threshold(curve, cfg.target_fs).threshold).ft;
    result.log.push_back({epoch, loss_sum / static_cast<double>(n_train), cv_ft,
                          auc_region(curve)});
    if (cv_ft < best_ft) {
      best_ft = cv_ft;
      result.best = params;
      result.best_epoch = epoch;
    }
  }
  return result;
}

std::string write_epoch_log(const std::vector<EpochLog>& log, int best_epoch);

}  // namespace ftm
