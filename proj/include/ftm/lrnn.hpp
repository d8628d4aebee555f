#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ftm/lattice.hpp"
#include "ftm/metrics.hpp"
#include "ftm/types.hpp"

namespace ftm {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class WidthMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One recurrence direction: m = tanh(w_arc * f + w_hidden * h + bias).
template <typename Scalar>
struct DirectionParams {
  Mat<Scalar> w_arc;     // H x F
  Mat<Scalar> w_hidden;  // H x H
  Vec<Scalar> bias;      // H
  Vec<Scalar> h0;        // H, state at the root node

  int hidden_dim() const { return static_cast<int>(bias.size()); }
};

template <typename Scalar>
struct EncoderParams {
  DirectionParams<Scalar> fwd;
  DirectionParams<Scalar> bwd;

  int hidden_dim() const { return fwd.hidden_dim(); }
};

/// y = sigmoid(w2 . relu(w1 * e + b1) + b2)
template <typename Scalar>
struct HeadParams {
  Mat<Scalar> w1;  // C x input_width
  Vec<Scalar> b1;  // C
  Vec<Scalar> w2;  // C
  Scalar b2 = 0;

  int input_width() const { return static_cast<int>(w1.cols()); }
};

template <typename Scalar>
struct BasicLrnnParams {
  EncoderParams<Scalar> encoder;
  HeadParams<Scalar> head;

  int hidden_dim() const { return encoder.hidden_dim(); }
};

using LrnnParams = BasicLrnnParams<double>;

template <typename Scalar>
struct BasicLatticeEmbedding {
  Vec<Scalar> h_f_end;
  Vec<Scalar> h_b_start;

  Vec<Scalar> concat() const {
    Vec<Scalar> e(h_f_end.size() + h_b_start.size());
    e << h_f_end, h_b_start;
    return e;
  }
};

using LatticeEmbedding = BasicLatticeEmbedding<double>;

// Tensor visitation. fn(name, Eigen::Map<Vec<Scalar>>) sees every trainable
// tensor as a flat vector, in a fixed order.
template <typename Scalar, typename Fn>
void visit_tensors(DirectionParams<Scalar>& p, const std::string& prefix, Fn&& fn) {
  using Map = Eigen::Map<Vec<Scalar>>;
  fn(prefix + "w_arc", Map(p.w_arc.data(), p.w_arc.size()));
  fn(prefix + "w_hidden", Map(p.w_hidden.data(), p.w_hidden.size()));
  fn(prefix + "bias", Map(p.bias.data(), p.bias.size()));
  fn(prefix + "h0", Map(p.h0.data(), p.h0.size()));
}

template <typename Scalar, typename Fn>
void visit_tensors(EncoderParams<Scalar>& p, const std::string& prefix, Fn&& fn) {
  visit_tensors(p.fwd, prefix + "fwd.", fn);
  visit_tensors(p.bwd, prefix + "bwd.", fn);
}

template <typename Scalar, typename Fn>
void visit_tensors(HeadParams<Scalar>& p, const std::string& prefix, Fn&& fn) {
  using Map = Eigen::Map<Vec<Scalar>>;
  fn(prefix + "w1", Map(p.w1.data(), p.w1.size()));
  fn(prefix + "b1", Map(p.b1.data(), p.b1.size()));
  fn(prefix + "w2", Map(p.w2.data(), p.w2.size()));
  fn(prefix + "b2", Map(&p.b2, 1));
}

template <typename Scalar, typename Fn>
void visit_tensors(BasicLrnnParams<Scalar>& p, const std::string& prefix, Fn&& fn) {
  visit_tensors(p.encoder, prefix + "enc.", fn);
  visit_tensors(p.head, prefix + "head.", fn);
}

/// Same shapes as `like`, all zeros.
template <typename P>
P zeros_like(const P& like) {
  P z = like;
  visit_tensors(z, "", [](const std::string&, auto m) { m.setZero(); });
  return z;
}

template <typename P>
Eigen::VectorXd flatten(const P& p) {
  P& mut = const_cast<P&>(p);
  Eigen::Index n = 0;
  visit_tensors(mut, "", [&](const std::string&, auto m) { n += m.size(); });
  Eigen::VectorXd out(n);
  Eigen::Index at = 0;
  visit_tensors(mut, "", [&](const std::string&, auto m) {
    out.segment(at, m.size()) = m;
    at += m.size();
  });
  return out;
}

template <typename P>
void unflatten(const Eigen::VectorXd& v, P& p) {
  Eigen::Index at = 0;
  visit_tensors(p, "", [&](const std::string&, auto m) {
    m = v.segment(at, m.size());
    at += m.size();
  });
}

/// Lattice in the layout the recurrences consume: traversal order,
/// per-node arc lists, and per-arc dense features plus hash bucket.
struct PreparedLattice {
  int num_nodes = 0;
  NodeId start = 0;
  NodeId end = 0;
  std::vector<NodeId> order;
  std::vector<std::vector<int>> in_arcs;
  std::vector<std::vector<int>> out_arcs;
  std::vector<NodeId> src;
  std::vector<NodeId> dst;
  Eigen::Matrix<double, 3, Eigen::Dynamic> dense;  // am, lm, duration / kMaxFrames
  std::vector<int> bucket;

  int num_arcs() const { return static_cast<int>(src.size()); }
};

PreparedLattice prepare(const Lattice& l);

/// Full kArcFeatureDim-wide feature vector of one arc.
Eigen::VectorXd arc_feature_vector(const Arc& a);

template <typename Scalar>
struct DirectionTrace {
  std::vector<Vec<Scalar>> h;    // per node
  std::vector<Vec<Scalar>> msg;  // per arc
};

/// Runs one direction. Forward: root = start, node inputs are incoming arcs.
/// Backward: root = end, inputs are outgoing arcs, reverse topological order.
/// Each non-root node state is the mean of its input messages.
template <typename Scalar>
void run_direction(const DirectionParams<Scalar>& p, const PreparedLattice& g, bool forward,
                   DirectionTrace<Scalar>& tr) {
  const int hdim = p.hidden_dim();
  tr.h.assign(g.num_nodes, Vec<Scalar>::Zero(hdim));
  tr.msg.assign(g.num_arcs(), Vec<Scalar>());
  const NodeId root = forward ? g.start : g.end;
  tr.h[root] = p.h0;
  const int n = static_cast<int>(g.order.size());
  Vec<Scalar> pre(hdim);
  for (int k = 0; k < n; ++k) {
    const NodeId v = forward ? g.order[k] : g.order[n - 1 - k];
    if (v == root) continue;
    const auto& inputs = forward ? g.in_arcs[v] : g.out_arcs[v];
    Vec<Scalar> acc = Vec<Scalar>::Zero(hdim);
    for (int a : inputs) {
      const NodeId u = forward ? g.src[a] : g.dst[a];
      pre.noalias() = p.w_arc.template leftCols<3>() * g.dense.col(a).template cast<Scalar>();
      pre += p.w_arc.col(3 + g.bucket[a]);
      pre.noalias() += p.w_hidden * tr.h[u];
      pre += p.bias;
      tr.msg[a] = pre.array().tanh().matrix();
      acc += tr.msg[a];
    }
    tr.h[v] = acc / static_cast<Scalar>(inputs.size());
  }
}

template <typename Scalar>
BasicLatticeEmbedding<Scalar> embed(const EncoderParams<Scalar>& p, const PreparedLattice& g) {
  DirectionTrace<Scalar> f, b;
  run_direction(p.fwd, g, true, f);
  run_direction(p.bwd, g, false, b);
  return {f.h[g.end], b.h[g.start]};
}

template <typename Scalar>
BasicLatticeEmbedding<Scalar> embed(const BasicLrnnParams<Scalar>& p, const Lattice& l) {
  return embed(p.encoder, prepare(l));
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  using std::exp;
  return z >= 0 ? Scalar(1) / (Scalar(1) + exp(-z)) : exp(z) / (Scalar(1) + exp(z));
}

/// Pre-sigmoid output of the head.
template <typename Scalar>
Scalar head_logit(const HeadParams<Scalar>& h, const Vec<Scalar>& e) {
  if (e.size() != h.input_width()) {
    throw WidthMismatch("classifier expects width " + std::to_string(h.input_width()) +
                        ", got " + std::to_string(e.size()));
  }
  const Vec<Scalar> hidden = (h.w1 * e + h.b1).cwiseMax(Scalar(0));
  return h.w2.dot(hidden) + h.b2;
}

template <typename Scalar>
Scalar classify(const HeadParams<Scalar>& h, const Vec<Scalar>& e) {
  return sigmoid(head_logit(h, e));
}

/// -[label ln y + (1-label) ln(1-y)] evaluated from the logit.
inline double bce_from_logit(double z, double label) {
  const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return softplus - label * z;
}

struct HeadCache {
  Eigen::VectorXd input;
  Eigen::VectorXd pre;  // w1 * e + b1
  Eigen::VectorXd hidden;
  double logit = 0.0;
};

HeadCache head_forward(const HeadParams<double>& h, const Eigen::VectorXd& e);

/// Accumulates head gradients for d(loss)/d(logit) = dz; returns d(loss)/d(input).
Eigen::VectorXd head_backward(const HeadParams<double>& h, const HeadCache& c, double dz,
                              HeadParams<double>& grad);

struct EncoderTrace {
  DirectionTrace<double> fwd;
  DirectionTrace<double> bwd;
};

LatticeEmbedding embed_traced(const EncoderParams<double>& p, const PreparedLattice& g,
                              EncoderTrace& trace);

/// Accumulates encoder gradients given d(loss)/d(h_f(end)) and d(loss)/d(h_b(start)).
void encoder_backward(const EncoderParams<double>& p, const PreparedLattice& g,
                      const EncoderTrace& trace, const Eigen::VectorXd& d_hf_end,
                      const Eigen::VectorXd& d_hb_start, EncoderParams<double>& grad);

struct LabeledLattice {
  const PreparedLattice* lattice = nullptr;
  double label = 0.0;  // 1 for TT
};

/// Adds this sample's loss gradient (unscaled) into `grad`; returns its loss.
double sample_loss_grad(const LrnnParams& p, const LabeledLattice& s, LrnnParams& grad);

struct LossAndGrads {
  double loss = 0.0;
  LrnnParams grads;
};

/// Mean binary cross-entropy over the batch and its exact gradient.
LossAndGrads loss_and_grads(const LrnnParams& p, std::span<const LabeledLattice> batch,
                            int threads = 1);

double predict(const LrnnParams& p, const PreparedLattice& g);

/// Scaled-uniform init: weight matrices U(-1/sqrt(H), 1/sqrt(H)), biases and h0 zero.
LrnnParams init_params(int hidden_dim, int head_hidden, int input_width, std::uint64_t seed);
EncoderParams<double> init_encoder(int hidden_dim, std::uint64_t seed);
HeadParams<double> init_head(int hidden_dim, int head_hidden, int input_width, std::uint64_t seed);

std::string write_lrnn(const LrnnParams& p);
LrnnParams read_lrnn(const std::string& text);

}  // namespace ftm
