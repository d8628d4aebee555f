#include "ftm/ensemble.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <limits>

#include "ftm/checkpoint.hpp"
#include "ftm/parallel.hpp"

namespace ftm {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Ratio: return "RATIO";
    case Variant::ScoreMerge: return "SCORE_MERGE";
    case Variant::EmbedMerge: return "EMBED_MERGE";
    case Variant::ParallelFull: return "PARALLEL_FULL";
    case Variant::Moe: return "MOE";
  }
  return "?";
}

Variant parse_variant(const std::string& text) {
  for (Variant v : {Variant::Ratio, Variant::ScoreMerge, Variant::EmbedMerge,
                    Variant::ParallelFull, Variant::Moe}) {
    if (to_string(v) == text) return v;
  }
  throw std::invalid_argument("unknown ensemble variant '" + text + "'");
}

std::vector<PairSample> pair_samples(std::span<const Sample* const> samples, int threads) {
  std::vector<PairSample> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const SamplePair& p = samples[i]->pair;
    out[i] = {p.utterance_id, p.label, prepare(p.lattice_base), prepare(p.lattice_chatter)};
  });
  return out;
}

double log_evidence(const PreparedLattice& g) {
  std::vector<double> alpha(g.num_nodes, -std::numeric_limits<double>::infinity());
  alpha[g.start] = 0.0;
  for (NodeId v : g.order) {
    for (int a : g.out_arcs[v]) {
      alpha[g.dst[a]] = log_sum_exp(alpha[g.dst[a]], alpha[v] + g.dense(0, a) + g.dense(1, a));
    }
  }
  return alpha[g.end];
}

double ratio_score(const SamplePair& pair, const DomainPrior& prior) {
  return log_evidence(pair.lattice_base) + std::log(prior.p_in) -
         log_evidence(pair.lattice_chatter) - std::log(prior.p_out);
}

double ratio_score(const PairSample& pair, const DomainPrior& prior) {
  return log_evidence(pair.base) + std::log(prior.p_in) - log_evidence(pair.chatter) -
         std::log(prior.p_out);
}

namespace {

Eigen::VectorXd stack(const LatticeEmbedding& a, const LatticeEmbedding& b) {
  Eigen::VectorXd x(4 * a.h_f_end.size());
  x << a.h_f_end, a.h_b_start, b.h_f_end, b.h_b_start;
  return x;
}

void require_width(const HeadParams<double>& head, Eigen::Index width, const char* what) {
  if (head.input_width() != width) {
    throw WidthMismatch(std::string(what) + " head must have width " + std::to_string(width) +
                        ", has " + std::to_string(head.input_width()));
  }
}

struct MoeMix {
  double alpha;
  Eigen::VectorXd stacked;  // [h1f, h1b, h2f, h2b]
  Eigen::VectorXd mixed;    // 2H
};

MoeMix moe_mix(const GateParams& gate, const LatticeEmbedding& e1, const LatticeEmbedding& e2) {
  MoeMix m;
  m.stacked = stack(e1, e2);
  if (gate.w.size() != m.stacked.size()) throw WidthMismatch("gate width must be 4H");
  m.alpha = sigmoid(gate.w.dot(m.stacked) + gate.b);
  const Eigen::Index h = e1.h_f_end.size();
  m.mixed.resize(2 * h);
  m.mixed << m.alpha * e1.h_f_end + (1.0 - m.alpha) * e2.h_f_end,
      m.alpha * e1.h_b_start + (1.0 - m.alpha) * e2.h_b_start;
  return m;
}

}  // namespace

double score_merge_forward(const LrnnParams& base, const LrnnParams& chatter,
                           const HeadParams<double>& head, const PairSample& pair) {
  require_width(head, 2, "SCORE_MERGE");
  Eigen::VectorXd x(2);
  x << predict(base, pair.base), predict(chatter, pair.chatter);
  return classify(head, x);
}

double embed_merge_forward(const LrnnParams& base, const LrnnParams& chatter,
                           const HeadParams<double>& head, const PairSample& pair) {
  require_width(head, 4 * base.hidden_dim(), "EMBED_MERGE");
  return classify(head, stack(embed(base.encoder, pair.base), embed(chatter.encoder, pair.chatter)));
}

EnsembleOutput moe_forward(const EnsembleParams& p, const PairSample& pair) {
  require_width(p.head, 2 * p.hidden_dim(), "MOE");
  const MoeMix m = moe_mix(p.gate, embed(p.base.encoder, pair.base),
                           embed(p.chatter.encoder, pair.chatter));
  return {classify(p.head, m.mixed), m.alpha};
}

EnsembleOutput ensemble_forward(const EnsembleParams& p, const PairSample& pair) {
  switch (p.variant) {
    case Variant::Ratio: return {sigmoid(ratio_score(pair, p.prior))};
    case Variant::ScoreMerge: return {score_merge_forward(p.base, p.chatter, p.head, pair)};
    case Variant::EmbedMerge:
    case Variant::ParallelFull: return {embed_merge_forward(p.base, p.chatter, p.head, pair)};
    case Variant::Moe: return moe_forward(p, pair);
  }
  return {};
}

double ensemble_loss_grad(const EnsembleParams& p, const PairSample& pair, EnsembleParams& grad) {
  const double label = label_value(pair.label);
  const Eigen::Index h = p.hidden_dim();
  switch (p.variant) {
    case Variant::Ratio:
      throw std::invalid_argument("the ratio classifier has no trainable parameters");
    case Variant::ScoreMerge: {
      Eigen::VectorXd x(2);
      x << predict(p.base, pair.base), predict(p.chatter, pair.chatter);
      const HeadCache hc = head_forward(p.head, x);
      head_backward(p.head, hc, sigmoid(hc.logit) - label, grad.head);
      return bce_from_logit(hc.logit, label);
    }
    case Variant::EmbedMerge: {
      const HeadCache hc = head_forward(
          p.head, stack(embed(p.base.encoder, pair.base), embed(p.chatter.encoder, pair.chatter)));
      head_backward(p.head, hc, sigmoid(hc.logit) - label, grad.head);
      return bce_from_logit(hc.logit, label);
    }
    case Variant::ParallelFull: {
      EncoderTrace t1, t2;
      const LatticeEmbedding e1 = embed_traced(p.base.encoder, pair.base, t1);
      const LatticeEmbedding e2 = embed_traced(p.chatter.encoder, pair.chatter, t2);
      const HeadCache hc = head_forward(p.head, stack(e1, e2));
      const Eigen::VectorXd dx = head_backward(p.head, hc, sigmoid(hc.logit) - label, grad.head);
      encoder_backward(p.base.encoder, pair.base, t1, dx.segment(0, h), dx.segment(h, h),
                       grad.base.encoder);
      encoder_backward(p.chatter.encoder, pair.chatter, t2, dx.segment(2 * h, h),
                       dx.segment(3 * h, h), grad.chatter.encoder);
      return bce_from_logit(hc.logit, label);
    }
    case Variant::Moe: {
      EncoderTrace t1, t2;
      const LatticeEmbedding e1 = embed_traced(p.base.encoder, pair.base, t1);
      const LatticeEmbedding e2 = embed_traced(p.chatter.encoder, pair.chatter, t2);
      const MoeMix m = moe_mix(p.gate, e1, e2);
      const HeadCache hc = head_forward(p.head, m.mixed);
      const Eigen::VectorXd dx = head_backward(p.head, hc, sigmoid(hc.logit) - label, grad.head);
      const double a = m.alpha;
      const double d_alpha = dx.segment(0, h).dot(e1.h_f_end - e2.h_f_end) +
                             dx.segment(h, h).dot(e1.h_b_start - e2.h_b_start);
      const double d_gate = d_alpha * a * (1.0 - a);
      grad.gate.w += d_gate * m.stacked;
      grad.gate.b += d_gate;
      const Eigen::VectorXd& wg = p.gate.w;
      encoder_backward(p.base.encoder, pair.base, t1,
                       a * dx.segment(0, h) + d_gate * wg.segment(0, h),
                       a * dx.segment(h, h) + d_gate * wg.segment(h, h), grad.base.encoder);
      encoder_backward(p.chatter.encoder, pair.chatter, t2,
                       (1.0 - a) * dx.segment(0, h) + d_gate * wg.segment(2 * h, h),
                       (1.0 - a) * dx.segment(h, h) + d_gate * wg.segment(3 * h, h),
                       grad.chatter.encoder);
      return bce_from_logit(hc.logit, label);
    }
  }
  return 0.0;
}

std::vector<ScoredSample> predict_ensemble(const EnsembleParams& p,
                                           const std::vector<PairSample>& pairs, int threads) {
  std::vector<ScoredSample> out(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    out[i] = {pairs[i].id, pairs[i].label, ensemble_forward(p, pairs[i]).y};
  });
  return out;
}

std::vector<EmbeddingRecord> compute_embeddings(const LrnnParams& base, const LrnnParams& chatter,
                                                const std::vector<PairSample>& pairs,
                                                int threads) {
  std::vector<EmbeddingRecord> out(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    const LatticeEmbedding e1 = embed(base.encoder, pairs[i].base);
    const LatticeEmbedding e2 = embed(chatter.encoder, pairs[i].chatter);
    out[i] = {pairs[i].id, pairs[i].label, classify(base.head, e1.concat()),
              classify(chatter.head, e2.concat()), stack(e1, e2)};
  });
  return out;
}

namespace {

constexpr char kCacheMagic[8] = {'F', 'T', 'M', 'E', 'M', 'B', '1', '\0'};

template <typename T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& at) {
  if (at + sizeof(T) > in.size()) throw std::runtime_error("truncated embedding cache");
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  at += sizeof(T);
  return v;
}

}  // namespace

std::string write_embedding_cache(const std::vector<EmbeddingRecord>& records) {
  std::string out(kCacheMagic, sizeof(kCacheMagic));
  put<std::uint64_t>(out, records.size());
  for (const auto& r : records) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.id.size()));
    out += r.id;
    put<std::uint8_t>(out, r.label == Label::TT ? 1 : 0);
    put(out, r.y_base);
    put(out, r.y_chatter);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.embedding.size()));
    out.append(reinterpret_cast<const char*>(r.embedding.data()),
               sizeof(double) * static_cast<std::size_t>(r.embedding.size()));
  }
  return out;
}

std::vector<EmbeddingRecord> read_embedding_cache(const std::string& bytes) {
  if (bytes.size() < sizeof(kCacheMagic) ||
      std::memcmp(bytes.data(), kCacheMagic, sizeof(kCacheMagic)) != 0) {
    throw std::runtime_error("not an embedding cache");
  }
  std::size_t at = sizeof(kCacheMagic);
  const auto n = take<std::uint64_t>(bytes, at);
  std::vector<EmbeddingRecord> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    EmbeddingRecord r;
    const auto len = take<std::uint32_t>(bytes, at);
    if (at + len > bytes.size()) throw std::runtime_error("truncated embedding cache");
    r.id = bytes.substr(at, len);
    at += len;
    r.label = take<std::uint8_t>(bytes, at) ? Label::TT : Label::FT;
    r.y_base = take<double>(bytes, at);
    r.y_chatter = take<double>(bytes, at);
    const auto dim = take<std::uint32_t>(bytes, at);
    r.embedding.resize(dim);
    for (std::uint32_t k = 0; k < dim; ++k) r.embedding(k) = take<double>(bytes, at);
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

Eigen::VectorXd frozen_input(Variant v, const EmbeddingRecord& r) {
  if (v == Variant::ScoreMerge) return Eigen::Vector2d(r.y_base, r.y_chatter);
  return r.embedding;
}

}  // namespace

EnsembleParams init_ensemble(Variant variant, int hidden_dim, int head_hidden, std::uint64_t seed) {
  EnsembleParams p;
  p.variant = variant;
  if (variant == Variant::Ratio) return p;
  p.base = init_params(hidden_dim, head_hidden, 2 * hidden_dim, seed + 101);
  p.chatter = init_params(hidden_dim, head_hidden, 2 * hidden_dim, seed + 202);
  const int width = variant == Variant::ScoreMerge ? 2
                    : variant == Variant::Moe      ? 2 * hidden_dim
                                                   : 4 * hidden_dim;
  p.head = init_head(hidden_dim, head_hidden, width, seed);
  if (variant == Variant::Moe) {
    std::mt19937_64 rng(seed ^ 0x6a7e5eedULL);
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(static_cast<double>(hidden_dim)),
                                             1.0 / std::sqrt(static_cast<double>(hidden_dim)));
    p.gate.w.resize(4 * hidden_dim);
    for (Eigen::Index i = 0; i < p.gate.w.size(); ++i) p.gate.w(i) = u(rng);
    p.gate.b = 0.0;
  }
  return p;
}

FitResult<EnsembleParams> train_frozen_head(Variant variant, const LrnnParams& base,
                                            const LrnnParams& chatter,
                                            const std::vector<EmbeddingRecord>& train_set,
                                            const std::vector<EmbeddingRecord>& cv_set,
                                            int head_hidden, const TrainConfig& cfg) {
  if (variant != Variant::ScoreMerge && variant != Variant::EmbedMerge) {
    throw std::invalid_argument("frozen-head training applies to SCORE_MERGE and EMBED_MERGE");
  }
  if (train_set.empty() || cv_set.empty()) throw std::invalid_argument("training sets must be non-empty");
  if (cfg.epochs < 1) throw std::invalid_argument("epochs must be positive");
  const int hdim = base.hidden_dim();
  EnsembleParams p = init_ensemble(variant, hdim, head_hidden, cfg.seed);
  p.base = base;
  p.chatter = chatter;

  auto loss_grad = [&](const HeadParams<double>& head, std::size_t i, HeadParams<double>& grad) {
    const EmbeddingRecord& r = train_set[i];
    const double label = label_value(r.label);
    const HeadCache hc = head_forward(head, frozen_input(variant, r));
    head_backward(head, hc, sigmoid(hc.logit) - label, grad);
    return bce_from_logit(hc.logit, label);
  };
  auto score_cv = [&](const HeadParams<double>& head) {
    std::vector<ScoredSample> out;
    out.reserve(cv_set.size());
    for (const auto& r : cv_set) out.push_back({r.id, r.label, classify(head, frozen_input(variant, r))});
    return out;
  };
  FitResult<HeadParams<double>> fr = fit(p.head, train_set.size(), loss_grad, score_cv, cfg);
  FitResult<EnsembleParams> out;
  p.head = fr.best;
  out.best = p;
  out.best_epoch = fr.best_epoch;
  out.log = std::move(fr.log);
  return out;
}

namespace {

FitResult<EnsembleParams> fit_end_to_end(EnsembleParams init,
                                         const std::vector<PairSample>& train_set,
                                         const std::vector<PairSample>& cv_set,
                                         const TrainConfig& cfg, double encoder_lr_scale) {
  if (train_set.empty() || cv_set.empty()) throw std::invalid_argument("training sets must be non-empty");
  if (cfg.epochs < 1) throw std::invalid_argument("epochs must be positive");
  Eigen::VectorXd scale = flatten(init);
  {
    Eigen::Index at = 0;
    visit_tensors(init, "", [&](const std::string& name, auto m) {
      const bool encoder = name.rfind("base.", 0) == 0 || name.rfind("chatter.", 0) == 0;
      scale.segment(at, m.size()).setConstant(encoder ? encoder_lr_scale : 1.0);
      at += m.size();
    });
  }
  auto loss_grad = [&](const EnsembleParams& p, std::size_t i, EnsembleParams& grad) {
    return ensemble_loss_grad(p, train_set[i], grad);
  };
  auto score_cv = [&](const EnsembleParams& p) { return predict_ensemble(p, cv_set, cfg.threads); };
  return fit(std::move(init), train_set.size(), loss_grad, score_cv, cfg, scale);
}

}  // namespace

FitResult<EnsembleParams> parallel_full_train(ParallelInit init, const LrnnParams* base,
                                              const LrnnParams* chatter,
                                              const std::vector<PairSample>& train_set,
                                              const std::vector<PairSample>& cv_set,
                                              const ParallelOptions& opts, const TrainConfig& cfg) {
  EnsembleParams p = init_ensemble(Variant::ParallelFull, opts.hidden_dim, opts.head_hidden, cfg.seed);
  double scale = 1.0;
  if (init == ParallelInit::Pretrained) {
    if (!base || !chatter) throw std::invalid_argument("pretrained init needs both single models");
    if (base->hidden_dim() != opts.hidden_dim || chatter->hidden_dim() != opts.hidden_dim) {
      throw WidthMismatch("pretrained encoders disagree with the configured hidden size");
    }
    p.base = *base;
    p.chatter = *chatter;
    scale = opts.encoder_lr_scale;
  }
  return fit_end_to_end(std::move(p), train_set, cv_set, cfg, scale);
}

FitResult<EnsembleParams> moe_train(const std::vector<PairSample>& train_set,
                                    const std::vector<PairSample>& cv_set,
                                    const ParallelOptions& opts, const TrainConfig& cfg) {
  EnsembleParams p = init_ensemble(Variant::Moe, opts.hidden_dim, opts.head_hidden, cfg.seed);
  return fit_end_to_end(std::move(p), train_set, cv_set, cfg, 1.0);
}

std::string write_ensemble(const EnsembleParams& p) {
  char buf[96];
  std::string out = "ENS v1 " + to_string(p.variant) + "\n";
  std::snprintf(buf, sizeof(buf), "PRIOR %.17g %.17g\n", p.prior.p_in, p.prior.p_out);
  out += buf;
  if (p.variant == Variant::Ratio) return out;
  out += write_lrnn(p.base);
  out += write_lrnn(p.chatter);
  out += "HEAD " + std::to_string(p.head.input_width()) + "\n";
  visit_tensors(const_cast<HeadParams<double>&>(p.head), "head.",
                [&](const std::string& name, auto m) { append_tensor(out, name, m); });
  if (p.variant == Variant::Moe) {
    out += "GATE\n";
    append_tensor(out, "gate.w", p.gate.w);
    append_tensor(out, "gate.b", Eigen::VectorXd::Constant(1, p.gate.b));
  }
  return out;
}

EnsembleParams read_ensemble(const std::string& text) {
  CheckpointReader r(text);
  auto head = r.next_record();
  if (head.size() != 3 || head[0] != "ENS") throw ParseError(r.line(), "expected ENS header");
  if (head[1] != "v1") throw ParseError(r.line(), "unsupported ensemble version '" + head[1] + "'");
  EnsembleParams p;
  try {
    p.variant = parse_variant(head[2]);
  } catch (const std::invalid_argument& e) {
    throw ParseError(r.line(), e.what());
  }
  const auto prior = r.next_record();
  if (prior.size() != 3 || prior[0] != "PRIOR") throw ParseError(r.line(), "expected PRIOR");
  p.prior = {std::stod(prior[1]), std::stod(prior[2])};
  if (p.variant == Variant::Ratio) return p;
  p.base = r.read_lrnn_block();
  p.chatter = r.read_lrnn_block();
  const auto hh = r.next_record();
  if (hh.size() != 2 || hh[0] != "HEAD") throw ParseError(r.line(), "expected HEAD");
  const int width = std::stoi(hh[1]);
  const Eigen::VectorXd w1 = r.read_tensor("head.w1");
  if (width < 1 || w1.size() % width != 0) throw ParseError(r.line(), "bad head width");
  p.head.w1 = Eigen::Map<const Mat<double>>(w1.data(), w1.size() / width, width);
  p.head.b1 = r.read_tensor("head.b1");
  p.head.w2 = r.read_tensor("head.w2");
  p.head.b2 = r.read_tensor("head.b2")(0);
  if (p.variant == Variant::Moe) {
    const auto g = r.next_record();
    if (g.size() != 1 || g[0] != "GATE") throw ParseError(r.line(), "expected GATE");
    p.gate.w = r.read_tensor("gate.w");
    p.gate.b = r.read_tensor("gate.b")(0);
  }
  return p;
}

}  // namespace ftm
