#include <doctest.h>

#include <cmath>
#include <random>

#include "ftm/ensemble.hpp"
#include "support.hpp"

using namespace ftm;
using namespace ftm::testing;

namespace {

double bce(double y, double label) { return -(label * std::log(y) + (1.0 - label) * std::log(1.0 - y)); }

EnsembleParams random_ensemble(Variant v, int h, int c, std::mt19937_64& rng) {
  EnsembleParams p = init_ensemble(v, h, c, rng());
  randomize(p.base, 0.4, rng);
  randomize(p.chatter, 0.4, rng);
  randomize(p, 0.4, rng);
  p.prior = DomainPrior::from_in_domain(0.3);
  return p;
}

const Variant kTrainable[] = {Variant::ScoreMerge, Variant::EmbedMerge, Variant::ParallelFull, Variant::Moe};

}  // namespace

TEST_CASE("variant names") {
  for (Variant v : {Variant::Ratio, Variant::ScoreMerge, Variant::EmbedMerge, Variant::ParallelFull, Variant::Moe})
    CHECK(parse_variant(to_string(v)) == v);
  CHECK(to_string(Variant::ParallelFull) == "PARALLEL_FULL");
  CHECK_THROWS(parse_variant("ENSEMBLE"));
}

TEST_CASE("likelihood ratio") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const Lattice a = random_lattice(3 + t % 5, t % 4, rng);
    const Lattice b = random_lattice(2 + t % 6, t % 3, rng);
    const DomainPrior prior = DomainPrior::from_in_domain(0.05 + 0.9 * (t % 10) / 10.0);
    const double want = log_evidence(a) + std::log(prior.p_in) - log_evidence(b) - std::log(prior.p_out);
    const SamplePair sp{"x", Label::TT, a, b};
    const PairSample ps{"x", Label::TT, prepare(a), prepare(b)};
    CHECK(ratio_score(sp, prior) == doctest::Approx(want).epsilon(1e-12));
    CHECK(ratio_score(ps, prior) == doctest::Approx(want).epsilon(1e-12));
    // Swapping the lattices and the prior flips the sign.
    const SamplePair swapped{"x", Label::TT, b, a};
    const DomainPrior flipped = DomainPrior::from_in_domain(prior.p_out);
    CHECK(ratio_score(swapped, flipped) == doctest::Approx(-want).epsilon(1e-12));

    EnsembleParams r;
    r.variant = Variant::Ratio;
    r.prior = prior;
    CHECK(ensemble_forward(r, ps).y == doctest::Approx(1.0 / (1.0 + std::exp(-want))));
  }
  EnsembleParams r;
  EnsembleParams g;
  std::mt19937_64 rng2(2);
  CHECK_THROWS(ensemble_loss_grad(r, random_pair("p", Label::TT, rng2), g));
}

TEST_CASE("score merge head sees the two single-model outputs") {
  std::mt19937_64 rng(3);
  EnsembleParams p = random_ensemble(Variant::ScoreMerge, 4, 3, rng);
  REQUIRE(p.head.input_width() == 2);
  // relu(y1) passed straight through: y = sigmoid(y1).
  p.head.w1.setZero();
  p.head.w1(0, 0) = 1.0;
  p.head.b1.setZero();
  p.head.w2.setZero();
  p.head.w2(0) = 1.0;
  p.head.b2 = 0.0;
  for (int t = 0; t < 20; ++t) {
    const PairSample s = random_pair("p", Label::FT, rng);
    const double y1 = predict(p.base, s.base);
    CHECK(score_merge_forward(p.base, p.chatter, p.head, s) == doctest::Approx(1.0 / (1.0 + std::exp(-y1))).epsilon(1e-14));
  }
}

TEST_CASE("embedding merge concatenates both encoders") {
  std::mt19937_64 rng(4);
  const EnsembleParams p = random_ensemble(Variant::EmbedMerge, 3, 5, rng);
  REQUIRE(p.head.input_width() == 12);
  for (int t = 0; t < 10; ++t) {
    const PairSample s = random_pair("p", Label::TT, rng);
    Eigen::VectorXd e(12);
    e << embed(p.base.encoder, s.base).concat(), embed(p.chatter.encoder, s.chatter).concat();
    CHECK(embed_merge_forward(p.base, p.chatter, p.head, s) == doctest::Approx(classify(p.head, e)).epsilon(1e-14));
    CHECK(ensemble_forward(p, s).y == embed_merge_forward(p.base, p.chatter, p.head, s));
  }
  // Antisymmetric head weights cancel when both sides are identical.
  EnsembleParams q = p;
  q.chatter.encoder = q.base.encoder;
  q.head.w1.rightCols(6) = -q.head.w1.leftCols(6);
  const PairSample s = random_pair("p", Label::TT, rng);
  const PairSample same{"p", Label::TT, s.base, s.base};
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(12);
  CHECK(ensemble_forward(q, same).y == doctest::Approx(classify(q.head, zero)).epsilon(1e-12));
}

TEST_CASE("zero heads give one half") {
  std::mt19937_64 rng(5);
  for (Variant v : kTrainable) {
    EnsembleParams p = random_ensemble(v, 4, 3, rng);
    p.head.w1.setZero();
    p.head.w2.setZero();
    p.head.b2 = 0.0;
    CHECK(ensemble_forward(p, random_pair("p", Label::TT, rng)).y == 0.5);
  }
}

TEST_CASE("mixture gate") {
  std::mt19937_64 rng(6);
  EnsembleParams p = random_ensemble(Variant::Moe, 4, 3, rng);
  REQUIRE(p.head.input_width() == 8);
  REQUIRE(p.gate.w.size() == 16);
  const PairSample s = random_pair("p", Label::TT, rng);
  const Eigen::VectorXd e1 = embed(p.base.encoder, s.base).concat();
  const Eigen::VectorXd e2 = embed(p.chatter.encoder, s.chatter).concat();

  EnsembleParams half = p;
  half.gate.w.setZero();
  half.gate.b = 0.0;
  const EnsembleOutput o = moe_forward(half, s);
  CHECK(o.alpha == 0.5);
  CHECK(o.y == doctest::Approx(classify(p.head, Eigen::VectorXd(0.5 * (e1 + e2)))).epsilon(1e-14));

  EnsembleParams hi = half;
  hi.gate.b = 60.0;
  CHECK(moe_forward(hi, s).y == doctest::Approx(classify(p.head, e1)).epsilon(1e-12));
  hi.gate.b = -60.0;
  CHECK(moe_forward(hi, s).y == doctest::Approx(classify(p.head, e2)).epsilon(1e-12));

  // Tied encoders on the same lattice: the gate has no effect.
  EnsembleParams tied = p;
  tied.chatter.encoder = tied.base.encoder;
  const PairSample same{"p", Label::TT, s.base, s.base};
  const double y = moe_forward(tied, same).y;
  for (double b : {-3.0, 0.0, 4.0}) {
    tied.gate.b = b;
    CHECK(moe_forward(tied, same).y == doctest::Approx(y).epsilon(1e-12));
  }
}

TEST_CASE("ensemble gradients match central differences") {
  std::mt19937_64 rng(7);
  for (Variant v : kTrainable) {
    double worst = 0.0;
    for (int t = 0; t < 6; ++t) {
      const EnsembleParams p = random_ensemble(v, 1 + t % 4, 1 + t % 3, rng);
      const PairSample s = random_pair("p", t % 2 ? Label::TT : Label::FT, rng);
      EnsembleParams g = zeros_like(p);
      const double loss = ensemble_loss_grad(p, s, g);
      const double lab = label_value(s.label);
      CHECK(loss == doctest::Approx(bce(ensemble_forward(p, s).y, lab)).epsilon(1e-10));
      const GradCheck gc = check_gradients(p, g, [&](const EnsembleParams& q) {
        return bce(ensemble_forward(q, s).y, lab);
      });
      INFO(to_string(v) << " trial " << t << " worst " << gc.worst);
      CHECK(gc.max_rel_err < 1e-4);
      worst = std::max(worst, gc.max_rel_err);
    }
    MESSAGE(to_string(v) << " max relative gradient error " << worst);
  }
}

TEST_CASE("trainable tensor sets per variant") {
  std::mt19937_64 rng(8);
  auto names = [](EnsembleParams p) {
    std::vector<std::string> out;
    visit_tensors(p, "", [&](const std::string& n, auto) { out.push_back(n); });
    return out;
  };
  auto has_prefix = [](const std::vector<std::string>& v, const std::string& pre) {
    return std::any_of(v.begin(), v.end(), [&](const std::string& n) { return n.rfind(pre, 0) == 0; });
  };
  CHECK(names(init_ensemble(Variant::Ratio, 4, 3, 1)).empty());
  const auto em = names(init_ensemble(Variant::EmbedMerge, 4, 3, 1));
  CHECK(has_prefix(em, "head."));
  CHECK_FALSE(has_prefix(em, "base."));
  const auto pf = names(init_ensemble(Variant::ParallelFull, 4, 3, 1));
  CHECK(has_prefix(pf, "base.enc."));
  CHECK(has_prefix(pf, "chatter.enc."));
  CHECK_FALSE(has_prefix(pf, "gate."));
  CHECK(has_prefix(names(init_ensemble(Variant::Moe, 4, 3, 1)), "gate."));
}

TEST_CASE("pretrained parallel training with frozen encoders") {
  std::mt19937_64 rng(9);
  std::vector<PairSample> tr, cv;
  for (int i = 0; i < 24; ++i) (i < 16 ? tr : cv).push_back(random_pair("p" + std::to_string(i), i % 2 ? Label::TT : Label::FT, rng));
  LrnnParams base = init_params(3, 3, 6, 11), chatter = init_params(3, 3, 6, 12);
  randomize(base, 0.3, rng);
  randomize(chatter, 0.3, rng);
  ParallelOptions opts;
  opts.hidden_dim = 3;
  opts.head_hidden = 4;
  opts.encoder_lr_scale = 0.0;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.01;
  const auto r = parallel_full_train(ParallelInit::Pretrained, &base, &chatter, tr, cv, opts, cfg);
  CHECK(flatten(r.best.base.encoder) == flatten(base.encoder));
  CHECK(flatten(r.best.chatter.encoder) == flatten(chatter.encoder));

  opts.encoder_lr_scale = 0.1;
  const auto moved = parallel_full_train(ParallelInit::Pretrained, &base, &chatter, tr, cv, opts, cfg);
  CHECK(flatten(moved.best.base.encoder) != flatten(base.encoder));
  const auto again = parallel_full_train(ParallelInit::Pretrained, &base, &chatter, tr, cv, opts, cfg);
  CHECK(flatten(again.best) == flatten(moved.best));

  const auto m = moe_train(tr, cv, opts, cfg);
  CHECK(m.best.variant == Variant::Moe);
  CHECK(m.log.size() == 2);
}

TEST_CASE("embedding cache and frozen head training") {
  std::mt19937_64 rng(10);
  const EnsembleParams p = random_ensemble(Variant::EmbedMerge, 3, 4, rng);
  std::vector<PairSample> pairs;
  for (int i = 0; i < 20; ++i) pairs.push_back(random_pair("p" + std::to_string(i), i % 3 ? Label::TT : Label::FT, rng));
  const auto recs = compute_embeddings(p.base, p.chatter, pairs);
  REQUIRE(recs.size() == pairs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(recs[i].id == pairs[i].id);
    CHECK(recs[i].y_base == predict(p.base, pairs[i].base));
    CHECK(recs[i].y_chatter == predict(p.chatter, pairs[i].chatter));
    CHECK(recs[i].embedding.head(6) == embed(p.base.encoder, pairs[i].base).concat());
  }
  const std::string bytes = write_embedding_cache(recs);
  CHECK(bytes.substr(0, 7) == "FTMEMB1");
  const auto back = read_embedding_cache(bytes);
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(back[i].id == recs[i].id);
    CHECK(back[i].label == recs[i].label);
    CHECK(back[i].y_base == recs[i].y_base);
    CHECK(back[i].embedding == recs[i].embedding);
  }
  CHECK_THROWS(read_embedding_cache(bytes.substr(0, bytes.size() - 3)));
  CHECK_THROWS(read_embedding_cache("NOTCACHE"));

  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  const auto frozen = train_frozen_head(Variant::EmbedMerge, p.base, p.chatter, recs, recs, 5, cfg);
  CHECK(frozen.best.head.input_width() == 12);
  // Cached records reproduce the live forward pass.
  for (const auto& s : pairs) {
    const auto& rec = recs[&s - pairs.data()];
    CHECK(classify(frozen.best.head, rec.embedding) == doctest::Approx(ensemble_forward(frozen.best, s).y).epsilon(1e-14));
  }
  const auto sm = train_frozen_head(Variant::ScoreMerge, p.base, p.chatter, recs, recs, 5, cfg);
  CHECK(sm.best.head.input_width() == 2);
}

TEST_CASE("ensemble checkpoint round trip") {
  std::mt19937_64 rng(11);
  for (Variant v : {Variant::Ratio, Variant::ScoreMerge, Variant::EmbedMerge, Variant::ParallelFull, Variant::Moe}) {
    const EnsembleParams p = random_ensemble(v, 3, 2, rng);
    const std::string text = write_ensemble(p);
    CHECK(text.rfind("ENS v1 " + to_string(v) + "\n", 0) == 0);
    const EnsembleParams back = read_ensemble(text);
    CHECK(back.variant == v);
    CHECK(back.prior.p_in == p.prior.p_in);
    CHECK(write_ensemble(back) == text);
    if (v != Variant::Ratio) {
      CHECK(flatten(back) == flatten(p));
      const PairSample s = random_pair("p", Label::TT, rng);
      CHECK(ensemble_forward(back, s).y == ensemble_forward(p, s).y);
    }
  }
  CHECK_THROWS(read_ensemble("ENS v1 NOPE\n"));
}
