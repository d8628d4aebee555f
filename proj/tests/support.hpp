#pragma once

// Random fixtures shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ftm/ensemble.hpp"
#include "ftm/lattice.hpp"
#include "ftm/lrnn.hpp"

namespace ftm::testing {

inline const std::vector<std::string>& toy_words() {
  static const std::vector<std::string> w = {"hey", "device", "play", "music", "stop",
                                             "call", "mom",    "the",  "lights", "on"};
  return w;
}

inline Arc random_arc(NodeId src, NodeId dst, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> score(-6.0, 0.0);
  std::uniform_int_distribution<int> dur(1, 80);
  std::uniform_int_distribution<std::size_t> word(0, toy_words().size() - 1);
  return make_arc(src, dst, toy_words()[word(rng)], score(rng), score(rng), dur(rng));
}

/// Random valid DAG on n >= 2 nodes: node 0 is the start, n-1 the end,
/// every node has a predecessor and a successor, plus `extra` random
/// forward arcs (parallel arcs allowed).
inline Lattice random_lattice(int n, int extra, std::mt19937_64& rng) {
  Lattice l;
  l.utterance_id = "rand";
  l.num_nodes = n;
  l.start = 0;
  l.end = n - 1;
  for (int v = 1; v < n; ++v) {
    std::uniform_int_distribution<int> pred(0, v - 1);
    l.arcs.push_back(random_arc(pred(rng), v, rng));
  }
  for (int v = 1; v < n - 1; ++v) {
    std::uniform_int_distribution<int> succ(v + 1, n - 1);
    l.arcs.push_back(random_arc(v, succ(rng), rng));
  }
  for (int k = 0; k < extra; ++k) {
    std::uniform_int_distribution<int> pick(0, n - 2);
    const int u = pick(rng);
    std::uniform_int_distribution<int> after(u + 1, n - 1);
    l.arcs.push_back(random_arc(u, after(rng), rng));
  }
  return l;
}

inline Lattice random_chain(int arcs, std::mt19937_64& rng) {
  Lattice l;
  l.utterance_id = "chain";
  l.num_nodes = arcs + 1;
  l.start = 0;
  l.end = arcs;
  for (int a = 0; a < arcs; ++a) l.arcs.push_back(random_arc(a, a + 1, rng));
  return l;
}

/// Renames node ids by a random permutation; the graph is unchanged.
inline Lattice relabel(const Lattice& l, std::mt19937_64& rng) {
  std::vector<NodeId> perm(l.num_nodes);
  for (int i = 0; i < l.num_nodes; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  Lattice out = l;
  out.start = perm[l.start];
  out.end = perm[l.end];
  for (auto& a : out.arcs) {
    a.src = perm[a.src];
    a.dst = perm[a.dst];
  }
  return out;
}

/// Randomizes every tensor of `p` (biases and h0 included) in [-r, r].
template <typename P>
void randomize(P& p, double r, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-r, r);
  visit_tensors(p, "", [&](const std::string&, auto m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
  });
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::string worst;
  int checked = 0;
};

/// Compares the analytic gradient with central differences for every
/// scalar parameter. Relative error is |a - n| / max(|a|, |n|, floor).
template <typename P, typename Loss>
GradCheck check_gradients(const P& params, const P& analytic, Loss&& loss, double eps = 1e-5,
                          double floor = 1e-6) {
  GradCheck out;
  const Eigen::VectorXd theta = flatten(params);
  const Eigen::VectorXd grad = flatten(analytic);
  std::vector<std::string> names;
  {
    P tmp = params;
    visit_tensors(tmp, "", [&](const std::string& name, auto m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) names.push_back(name + "[" + std::to_string(i) + "]");
    });
  }
  P probe = params;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd t = theta;
    t(i) = theta(i) + eps;
    unflatten(t, probe);
    const double up = loss(probe);
    t(i) = theta(i) - eps;
    unflatten(t, probe);
    const double down = loss(probe);
    const double numeric = (up - down) / (2.0 * eps);
    const double rel = std::abs(grad(i) - numeric) /
                       std::max({std::abs(grad(i)), std::abs(numeric), floor});
    if (rel > out.max_rel_err) {
      out.max_rel_err = rel;
      out.worst = names[static_cast<std::size_t>(i)];
    }
    ++out.checked;
  }
  return out;
}

/// Plain-loop bidirectional RNN over a chain's arc sequence, written
/// without Eigen expressions or lattice machinery.
struct SequentialBiRnn {
  static std::vector<double> cell(const Mat<double>& wa, const Mat<double>& wh,
                                  const Vec<double>& b, const std::vector<double>& f,
                                  const std::vector<double>& h) {
    const int hd = static_cast<int>(b.size());
    std::vector<double> out(hd);
    for (int r = 0; r < hd; ++r) {
      double s = b(r);
      for (int c = 0; c < static_cast<int>(f.size()); ++c) s += wa(r, c) * f[c];
      for (int c = 0; c < hd; ++c) s += wh(r, c) * h[c];
      out[r] = std::tanh(s);
    }
    return out;
  }

  static std::vector<double> features(const Arc& a) {
    std::vector<double> f(kArcFeatureDim, 0.0);
    f[0] = a.features.am_score;
    f[1] = a.features.lm_score;
    f[2] = a.features.duration / kMaxFrames;
    f[3 + a.features.word_embed_index] = 1.0;
    return f;
  }

  // Returns {h_f after the last arc, h_b after the first arc}.
  static std::pair<std::vector<double>, std::vector<double>> run(const EncoderParams<double>& p,
                                                                 const std::vector<Arc>& seq) {
    std::vector<double> hf(p.fwd.h0.data(), p.fwd.h0.data() + p.fwd.h0.size());
    for (const Arc& a : seq) hf = cell(p.fwd.w_arc, p.fwd.w_hidden, p.fwd.bias, features(a), hf);
    std::vector<double> hb(p.bwd.h0.data(), p.bwd.h0.data() + p.bwd.h0.size());
    for (auto it = seq.rbegin(); it != seq.rend(); ++it)
      hb = cell(p.bwd.w_arc, p.bwd.w_hidden, p.bwd.bias, features(*it), hb);
    return {hf, hb};
  }
};

inline Sample make_sample(const std::string& id, Label label, Lattice base, Lattice chatter) {
  base.utterance_id = id;
  base.lm_tag = LmTag::Base;
  chatter.utterance_id = id;
  chatter.lm_tag = LmTag::Chatter;
  return {Split::Train, {id, label, std::move(base), std::move(chatter)}};
}

inline PairSample random_pair(const std::string& id, Label label, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nodes(2, 7);
  std::uniform_int_distribution<int> extra(0, 5);
  return {id, label, prepare(random_lattice(nodes(rng), extra(rng), rng)),
          prepare(random_lattice(nodes(rng), extra(rng), rng))};
}

}  // namespace ftm::testing
