#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftm {

enum class LmTag { Base, Chatter };

std::string to_string(LmTag tag);
LmTag parse_lm_tag(const std::string& text);

using NodeId = int;

// Size of the hashed one-hot word block in the arc feature vector.
inline constexpr int kWordHashBuckets = 64;
// Durations are divided by this before entering the feature vector.
inline constexpr double kMaxFrames = 100.0;
// [am_score, lm_score, duration / kMaxFrames, one-hot(word_embed_index)]
inline constexpr int kArcFeatureDim = 3 + kWordHashBuckets;

struct ArcFeatures {
  double am_score = 0.0;  // natural log
  double lm_score = 0.0;  // natural log
  int duration = 1;       // frames
  int word_embed_index = 0;

  bool operator==(const ArcFeatures&) const = default;
};

struct Arc {
  NodeId src = 0;
  NodeId dst = 0;
  std::string word;
  ArcFeatures features;

  bool operator==(const Arc&) const = default;
};

/// Word-hypothesis lattice. Nodes are the integers [0, num_nodes).
struct Lattice {
  std::string utterance_id;
  LmTag lm_tag = LmTag::Base;
  int num_nodes = 0;
  NodeId start = 0;
  NodeId end = 0;
  std::vector<Arc> arcs;

  bool operator==(const Lattice&) const = default;
};

class LatticeError : public std::runtime_error {
 public:
  enum class Kind { CycleDetected, UnreachableNode, DanglingArc, EmptyLattice, TooManyPaths };

  LatticeError(Kind kind, long index, const std::string& what)
      : std::runtime_error(what), kind_(kind), index_(index) {}

  Kind kind() const noexcept { return kind_; }
  // Offending node id (or arc index for DanglingArc); -1 when not applicable.
  long index() const noexcept { return index_; }

 private:
  Kind kind_;
  long index_;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// Stable 32-bit FNV-1a hash of the word folded into [0, kWordHashBuckets).
int word_hash_bucket(const std::string& word);

/// Rounds to the 9 significant digits used by the text format, so that
/// a lattice built from quantized scores survives serialization exactly.
double quantize_score(double x);

Arc make_arc(NodeId src, NodeId dst, std::string word, double am, double lm, int duration);

void validate(const Lattice& l);

/// Kahn order with ascending-id tie-break; start first, end last.
std::vector<NodeId> topological_order(const Lattice& l);

struct PathHypothesis {
  std::vector<std::string> words;
  double am_score = 0.0;
  double lm_score = 0.0;
};

/// Number of start-to-end paths, saturating at `cap + 1`.
std::uint64_t count_paths(const Lattice& l, std::uint64_t cap);

std::vector<PathHypothesis> enumerate_paths(const Lattice& l, std::uint64_t max_paths);

/// log sum over all paths of exp(am + lm), via a forward pass.
double log_evidence(const Lattice& l);

double log_sum_exp(double a, double b);

std::string write_lattice(const Lattice& l);
Lattice read_lattice(const std::string& text);

/// Newline-separated records. Line numbers in errors are file-relative.
std::vector<Lattice> read_lattices(std::istream& in);
void write_lattices(std::ostream& out, const std::vector<Lattice>& lattices);

}  // namespace ftm
