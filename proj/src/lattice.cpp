#include "ftm/lattice.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <queue>
#include <sstream>

namespace ftm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<std::vector<int>> outgoing_arcs(const Lattice& l) {
  std::vector<std::vector<int>> out(l.num_nodes);
  for (int i = 0; i < static_cast<int>(l.arcs.size()); ++i) out[l.arcs[i].src].push_back(i);
  return out;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  return tokens;
}

template <typename T>
T parse_number(const std::string& tok, int line, const char* field) {
  T value{};
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ParseError(line, std::string("malformed ") + field + " '" + tok + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw ParseError(line, std::string("non-finite ") + field);
  }
  return value;
}

std::string format_g9(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

}  // namespace

std::string to_string(LmTag tag) { return tag == LmTag::Base ? "BASE" : "CHATTER"; }

LmTag parse_lm_tag(const std::string& text) {
  if (text == "BASE") return LmTag::Base;
  if (text == "CHATTER") return LmTag::Chatter;
  throw std::invalid_argument("unknown lm tag '" + text + "'");
}

int word_hash_bucket(const std::string& word) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : word) {
    h ^= c;
    h *= 16777619u;
  }
  return static_cast<int>(h % kWordHashBuckets);
}

double quantize_score(double x) {
  const std::string s = format_g9(x);
  return std::strtod(s.c_str(), nullptr);
}

Arc make_arc(NodeId src, NodeId dst, std::string word, double am, double lm, int duration) {
  Arc a;
  a.src = src;
  a.dst = dst;
  a.features.am_score = am;
  a.features.lm_score = lm;
  a.features.duration = duration;
  a.features.word_embed_index = word_hash_bucket(word);
  a.word = std::move(word);
  return a;
}

void validate(const Lattice& l) {
  using Kind = LatticeError::Kind;
  if (l.num_nodes <= 0 || l.arcs.empty()) {
    throw LatticeError(Kind::EmptyLattice, -1, "lattice '" + l.utterance_id + "' is empty");
  }
  if (l.start < 0 || l.start >= l.num_nodes || l.end < 0 || l.end >= l.num_nodes) {
    throw LatticeError(Kind::DanglingArc, -1, "start/end node out of range");
  }
  if (l.start == l.end) {
    throw LatticeError(Kind::EmptyLattice, l.start, "start and end nodes coincide");
  }
  for (std::size_t i = 0; i < l.arcs.size(); ++i) {
    const Arc& a = l.arcs[i];
    if (a.src < 0 || a.src >= l.num_nodes || a.dst < 0 || a.dst >= l.num_nodes) {
      throw LatticeError(Kind::DanglingArc, static_cast<long>(i),
                         "arc " + std::to_string(i) + " references a missing node");
    }
    if (a.src == a.dst) {
      throw LatticeError(Kind::CycleDetected, a.src,
                         "self-loop at node " + std::to_string(a.src));
    }
  }

  // Kahn's algorithm; leftover nodes sit on or behind a cycle.
  std::vector<int> indeg(l.num_nodes, 0);
  for (const Arc& a : l.arcs) ++indeg[a.dst];
  const auto out = outgoing_arcs(l);
  std::vector<NodeId> stack;
  for (NodeId v = 0; v < l.num_nodes; ++v)
    if (indeg[v] == 0) stack.push_back(v);
  int visited = 0;
  while (!stack.empty()) {
    NodeId v = stack.back();
    stack.pop_back();
    ++visited;
    for (int ai : out[v])
      if (--indeg[l.arcs[ai].dst] == 0) stack.push_back(l.arcs[ai].dst);
  }
  if (visited != l.num_nodes) {
    NodeId culprit = 0;
    while (indeg[culprit] == 0) ++culprit;
    throw LatticeError(Kind::CycleDetected, culprit,
                       "cycle through node " + std::to_string(culprit));
  }

  std::vector<std::vector<NodeId>> in_nodes(l.num_nodes);
  for (const Arc& a : l.arcs) in_nodes[a.dst].push_back(a.src);
  auto reach = [&](NodeId from, bool forward) {
    std::vector<char> seen(l.num_nodes, 0);
    std::vector<NodeId> todo{from};
    seen[from] = 1;
    while (!todo.empty()) {
      NodeId v = todo.back();
      todo.pop_back();
      if (forward) {
        for (int ai : out[v]) {
          NodeId w = l.arcs[ai].dst;
          if (!seen[w]) seen[w] = 1, todo.push_back(w);
        }
      } else {
        for (NodeId w : in_nodes[v])
          if (!seen[w]) seen[w] = 1, todo.push_back(w);
      }
    }
    return seen;
  };
  const auto from_start = reach(l.start, true);
  const auto to_end = reach(l.end, false);
  for (NodeId v = 0; v < l.num_nodes; ++v) {
    if (!from_start[v] || !to_end[v]) {
      throw LatticeError(Kind::UnreachableNode, v,
                         "node " + std::to_string(v) + " is not on a start-end path");
    }
  }
}

std::vector<NodeId> topological_order(const Lattice& l) {
  validate(l);
  std::vector<int> indeg(l.num_nodes, 0);
  for (const Arc& a : l.arcs) ++indeg[a.dst];
  const auto out = outgoing_arcs(l);
  std::priority_queue<NodeId, std::vector<NodeId>, std::greater<>> ready;
  for (NodeId v = 0; v < l.num_nodes; ++v)
    if (indeg[v] == 0) ready.push(v);
  std::vector<NodeId> order;
  order.reserve(l.num_nodes);
  while (!ready.empty()) {
    NodeId v = ready.top();
    ready.pop();
    order.push_back(v);
    for (int ai : out[v])
      if (--indeg[l.arcs[ai].dst] == 0) ready.push(l.arcs[ai].dst);
  }
  return order;
}

std::uint64_t count_paths(const Lattice& l, std::uint64_t cap) {
  const auto order = topological_order(l);
  const auto out = outgoing_arcs(l);
  const std::uint64_t ceiling = cap == std::numeric_limits<std::uint64_t>::max() ? cap : cap + 1;
  std::vector<std::uint64_t> n(l.num_nodes, 0);
  n[l.start] = 1;
  for (NodeId v : order) {
    for (int ai : out[v]) {
      std::uint64_t& d = n[l.arcs[ai].dst];
      d = (ceiling - d < n[v]) ? ceiling : std::min(ceiling, d + n[v]);
    }
  }
  return n[l.end];
}

std::vector<PathHypothesis> enumerate_paths(const Lattice& l, std::uint64_t max_paths) {
  const std::uint64_t total = count_paths(l, max_paths);
  if (total > max_paths) {
    throw LatticeError(LatticeError::Kind::TooManyPaths, -1,
                       "lattice '" + l.utterance_id + "' has more than " +
                           std::to_string(max_paths) + " paths");
  }
  const auto out = outgoing_arcs(l);
  std::vector<PathHypothesis> paths;
  paths.reserve(total);
  PathHypothesis cur;
  std::function<void(NodeId)> walk = [&](NodeId v) {
    if (v == l.end) {
      paths.push_back(cur);
      return;
    }
    const double am0 = cur.am_score;
    const double lm0 = cur.lm_score;
    for (int ai : out[v]) {
      const Arc& a = l.arcs[ai];
      cur.words.push_back(a.word);
      cur.am_score = am0 + a.features.am_score;
      cur.lm_score = lm0 + a.features.lm_score;
      walk(a.dst);
      cur.words.pop_back();
    }
    cur.am_score = am0;
    cur.lm_score = lm0;
  };
  walk(l.start);
  return paths;
}

double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

double log_evidence(const Lattice& l) {
  const auto order = topological_order(l);
  const auto out = outgoing_arcs(l);
  std::vector<double> alpha(l.num_nodes, kNegInf);
  alpha[l.start] = 0.0;
  for (NodeId v : order) {
    for (int ai : out[v]) {
      const Arc& a = l.arcs[ai];
      alpha[a.dst] = log_sum_exp(alpha[a.dst], alpha[v] + a.features.am_score + a.features.lm_score);
    }
  }
  return alpha[l.end];
}

std::string write_lattice(const Lattice& l) {
  validate(l);
  std::string s = "LAT v1 " + l.utterance_id + " " + to_string(l.lm_tag) + " " +
                  std::to_string(l.num_nodes) + " " + std::to_string(l.start) + " " +
                  std::to_string(l.end) + "\n";
  for (const Arc& a : l.arcs) {
    s += "ARC " + std::to_string(a.src) + " " + std::to_string(a.dst) + " " + a.word + " " +
         format_g9(a.features.am_score) + " " + format_g9(a.features.lm_score) + " " +
         std::to_string(a.features.duration) + "\n";
  }
  return s;
}

namespace {

Lattice parse_header(const std::vector<std::string>& t, int line) {
  if (t.size() != 7 || t[0] != "LAT") throw ParseError(line, "expected LAT header");
  if (t[1] != "v1") throw ParseError(line, "unsupported lattice version '" + t[1] + "'");
  Lattice l;
  l.utterance_id = t[2];
  try {
    l.lm_tag = parse_lm_tag(t[3]);
  } catch (const std::invalid_argument& e) {
    throw ParseError(line, e.what());
  }
  l.num_nodes = parse_number<int>(t[4], line, "node count");
  l.start = parse_number<int>(t[5], line, "start node");
  l.end = parse_number<int>(t[6], line, "end node");
  return l;
}

Arc parse_arc(const std::vector<std::string>& t, int line) {
  if (t.size() != 7 || t[0] != "ARC") throw ParseError(line, "expected ARC record");
  const int src = parse_number<int>(t[1], line, "arc source");
  const int dst = parse_number<int>(t[2], line, "arc target");
  const double am = parse_number<double>(t[4], line, "am score");
  const double lm = parse_number<double>(t[5], line, "lm score");
  const int dur = parse_number<int>(t[6], line, "duration");
  if (dur < 0) throw ParseError(line, "negative duration");
  return make_arc(src, dst, t[3], am, lm, dur);
}

}  // namespace

std::vector<Lattice> read_lattices(std::istream& in) {
  std::vector<Lattice> result;
  std::string line;
  int lineno = 0;
  bool open = false;
  auto close = [&] {
    if (open) validate(result.back());
    open = false;
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = split_ws(line);
    if (t.empty()) continue;
    if (t[0] == "LAT") {
      close();
      result.push_back(parse_header(t, lineno));
      open = true;
    } else if (t[0] == "ARC") {
      if (!open) throw ParseError(lineno, "ARC record before LAT header");
      result.back().arcs.push_back(parse_arc(t, lineno));
    } else {
      throw ParseError(lineno, "unknown record '" + t[0] + "'");
    }
  }
  close();
  return result;
}

Lattice read_lattice(const std::string& text) {
  std::istringstream is(text);
  auto all = read_lattices(is);
  if (all.size() != 1) {
    throw ParseError(1, "expected exactly one lattice record, found " + std::to_string(all.size()));
  }
  return std::move(all.front());
}

void write_lattices(std::ostream& out, const std::vector<Lattice>& lattices) {
  for (const auto& l : lattices) out << write_lattice(l);
}

}  // namespace ftm
