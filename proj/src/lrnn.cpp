#include "ftm/lrnn.hpp"

#include <charconv>
#include <cstdio>
#include <random>
#include <sstream>

#include "ftm/checkpoint.hpp"
#include "ftm/parallel.hpp"

namespace ftm {

PreparedLattice prepare(const Lattice& l) {
  PreparedLattice g;
  g.order = topological_order(l);  // validates
  g.num_nodes = l.num_nodes;
  g.start = l.start;
  g.end = l.end;
  g.in_arcs.assign(l.num_nodes, {});
  g.out_arcs.assign(l.num_nodes, {});
  const int n = static_cast<int>(l.arcs.size());
  g.dense.resize(3, n);
  g.src.resize(n);
  g.dst.resize(n);
  g.bucket.resize(n);
  for (int a = 0; a < n; ++a) {
    const Arc& arc = l.arcs[a];
    g.src[a] = arc.src;
    g.dst[a] = arc.dst;
    g.in_arcs[arc.dst].push_back(a);
    g.out_arcs[arc.src].push_back(a);
    g.dense(0, a) = arc.features.am_score;
    g.dense(1, a) = arc.features.lm_score;
    g.dense(2, a) = arc.features.duration / kMaxFrames;
    g.bucket[a] = arc.features.word_embed_index;
  }
  return g;
}

Eigen::VectorXd arc_feature_vector(const Arc& a) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kArcFeatureDim);
  f(0) = a.features.am_score;
  f(1) = a.features.lm_score;
  f(2) = a.features.duration / kMaxFrames;
  f(3 + a.features.word_embed_index) = 1.0;
  return f;
}

HeadCache head_forward(const HeadParams<double>& h, const Eigen::VectorXd& e) {
  if (e.size() != h.input_width()) {
    throw WidthMismatch("classifier expects width " + std::to_string(h.input_width()) +
                        ", got " + std::to_string(e.size()));
  }
  HeadCache c;
  c.input = e;
  c.pre = h.w1 * e + h.b1;
  c.hidden = c.pre.cwiseMax(0.0);
  c.logit = h.w2.dot(c.hidden) + h.b2;
  return c;
}

Eigen::VectorXd head_backward(const HeadParams<double>& h, const HeadCache& c, double dz,
                              HeadParams<double>& grad) {
  grad.b2 += dz;
  grad.w2 += dz * c.hidden;
  const Eigen::VectorXd dpre =
      (dz * h.w2).cwiseProduct((c.pre.array() > 0.0).cast<double>().matrix());
  grad.w1.noalias() += dpre * c.input.transpose();
  grad.b1 += dpre;
  return h.w1.transpose() * dpre;
}

LatticeEmbedding embed_traced(const EncoderParams<double>& p, const PreparedLattice& g,
                              EncoderTrace& trace) {
  run_direction(p.fwd, g, true, trace.fwd);
  run_direction(p.bwd, g, false, trace.bwd);
  return {trace.fwd.h[g.end], trace.bwd.h[g.start]};
}

namespace {

void direction_backward(const DirectionParams<double>& p, const PreparedLattice& g, bool forward,
                        const DirectionTrace<double>& tr, const Eigen::VectorXd& d_out,
                        DirectionParams<double>& grad) {
  const int hdim = p.hidden_dim();
  std::vector<Eigen::VectorXd> d_node(g.num_nodes, Eigen::VectorXd::Zero(hdim));
  const NodeId root = forward ? g.start : g.end;
  d_node[forward ? g.end : g.start] = d_out;
  const int n = static_cast<int>(g.order.size());
  Eigen::VectorXd d_pre(hdim);
  // Reverse of the order in which run_direction visited the nodes.
  for (int k = n - 1; k >= 0; --k) {
    const NodeId v = forward ? g.order[k] : g.order[n - 1 - k];
    if (v == root) continue;
    const auto& inputs = forward ? g.in_arcs[v] : g.out_arcs[v];
    const Eigen::VectorXd d_msg = d_node[v] / static_cast<double>(inputs.size());
    for (int a : inputs) {
      const NodeId u = forward ? g.src[a] : g.dst[a];
      d_pre = d_msg.cwiseProduct((1.0 - tr.msg[a].array().square()).matrix());
      grad.w_arc.leftCols<3>().noalias() += d_pre * g.dense.col(a).transpose();
      grad.w_arc.col(3 + g.bucket[a]) += d_pre;
      grad.w_hidden.noalias() += d_pre * tr.h[u].transpose();
      grad.bias += d_pre;
      d_node[u].noalias() += p.w_hidden.transpose() * d_pre;
    }
  }
  grad.h0 += d_node[root];
}

}  // namespace

void encoder_backward(const EncoderParams<double>& p, const PreparedLattice& g,
                      const EncoderTrace& trace, const Eigen::VectorXd& d_hf_end,
                      const Eigen::VectorXd& d_hb_start, EncoderParams<double>& grad) {
  direction_backward(p.fwd, g, true, trace.fwd, d_hf_end, grad.fwd);
  direction_backward(p.bwd, g, false, trace.bwd, d_hb_start, grad.bwd);
}

double sample_loss_grad(const LrnnParams& p, const LabeledLattice& s, LrnnParams& grad) {
  EncoderTrace trace;
  const LatticeEmbedding e = embed_traced(p.encoder, *s.lattice, trace);
  const HeadCache hc = head_forward(p.head, e.concat());
  const double dz = sigmoid(hc.logit) - s.label;
  const Eigen::VectorXd de = head_backward(p.head, hc, dz, grad.head);
  const Eigen::Index hdim = p.hidden_dim();
  encoder_backward(p.encoder, *s.lattice, trace, de.head(hdim), de.tail(hdim), grad.encoder);
  return bce_from_logit(hc.logit, s.label);
}

LossAndGrads loss_and_grads(const LrnnParams& p, std::span<const LabeledLattice> batch,
                            int threads) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grads needs a non-empty batch");
  const LrnnParams zero = zeros_like(p);
  std::vector<LrnnParams> grads(batch.size(), zero);
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), threads,
               [&](std::size_t i) { losses[i] = sample_loss_grad(p, batch[i], grads[i]); });
  Eigen::VectorXd total = Eigen::VectorXd::Zero(flatten(zero).size());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total += flatten(grads[i]);
    loss += losses[i];
  }
  const double n = static_cast<double>(batch.size());
  LossAndGrads out{loss / n, zero};
  unflatten(Eigen::VectorXd(total / n), out.grads);
  return out;
}

double predict(const LrnnParams& p, const PreparedLattice& g) {
  return classify(p.head, embed(p.encoder, g).concat());
}

namespace {

void fill_uniform(Mat<double>& m, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
}

void fill_uniform(Vec<double>& v, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = u(rng);
}

DirectionParams<double> init_direction(int hdim, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hdim));
  DirectionParams<double> d;
  d.w_arc.resize(hdim, kArcFeatureDim);
  d.w_hidden.resize(hdim, hdim);
  fill_uniform(d.w_arc, bound, rng);
  fill_uniform(d.w_hidden, bound, rng);
  d.bias = Vec<double>::Zero(hdim);
  d.h0 = Vec<double>::Zero(hdim);
  return d;
}

}  // namespace

EncoderParams<double> init_encoder(int hidden_dim, std::uint64_t seed) {
  if (hidden_dim < 1) throw std::invalid_argument("hidden_dim must be positive");
  std::mt19937_64 rng(seed);
  EncoderParams<double> e;
  e.fwd = init_direction(hidden_dim, rng);
  e.bwd = init_direction(hidden_dim, rng);
  return e;
}

HeadParams<double> init_head(int hidden_dim, int head_hidden, int input_width,
                             std::uint64_t seed) {
  if (head_hidden < 1 || input_width < 1) throw std::invalid_argument("head sizes must be positive");
  std::mt19937_64 rng(seed ^ 0xa5a5a5a5ULL);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  HeadParams<double> h;
  h.w1.resize(head_hidden, input_width);
  fill_uniform(h.w1, bound, rng);
  h.b1 = Vec<double>::Zero(head_hidden);
  h.w2.resize(head_hidden);
  fill_uniform(h.w2, bound, rng);
  h.b2 = 0.0;
  return h;
}

LrnnParams init_params(int hidden_dim, int head_hidden, int input_width, std::uint64_t seed) {
  return {init_encoder(hidden_dim, seed), init_head(hidden_dim, head_hidden, input_width, seed)};
}

std::string write_lrnn(const LrnnParams& p) {
  std::string out = "LRNN v1 " + std::to_string(p.hidden_dim()) + " " +
                    std::to_string(kArcFeatureDim) + " " +
                    std::to_string(p.head.input_width()) + "\n";
  visit_tensors(const_cast<LrnnParams&>(p), "",
                [&](const std::string& name, auto m) { append_tensor(out, name, m); });
  return out;
}

LrnnParams read_lrnn(const std::string& text) {
  CheckpointReader r(text);
  return r.read_lrnn_block();
}

}  // namespace ftm
