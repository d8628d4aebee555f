#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ftm/lattice.hpp"

namespace ftm {

using Sentence = std::vector<std::string>;
using Corpus = std::vector<Sentence>;

class LmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Prior probabilities of in-domain and out-of-domain usage.
struct DomainPrior {
  double p_in = 0.5;
  double p_out = 0.5;

  static DomainPrior from_in_domain(double p_in);
};

inline constexpr const char* kBos = "<s>";
inline constexpr const char* kEos = "</s>";
inline constexpr const char* kUnk = "<unk>";

/// Back-off n-gram model with interpolated absolute discounting:
///
///   P(w|h) = max(c(h,w) - d, 0) / c(h) + d * N1+(h.) / c(h) * P(w|h')
///
/// where h' drops the oldest word of h. The unigram level interpolates with
/// the uniform distribution over the predictable vocabulary (every token
/// except <s>). Histories never seen in training fall through to h'.
class NGramModel {
 public:
  struct HistoryStats {
    long total = 0;
    std::map<int, long> next;
  };

  NGramModel() = default;

  int order() const { return order_; }
  double discount() const { return discount_; }
  LmTag tag() const { return tag_; }

  const std::vector<std::string>& vocab() const { return vocab_; }
  int vocab_size() const { return static_cast<int>(vocab_.size()); }
  // Tokens that can be predicted: everything except <s>.
  int predictable_size() const { return vocab_size() - 1; }

  int bos_id() const { return 0; }
  int eos_id() const { return 1; }
  int unk_id() const { return 2; }
  /// Vocabulary id, or the <unk> id for out-of-vocabulary words.
  int id(const std::string& word) const;
  bool contains(const std::string& word) const { return index_.count(word) != 0; }

  /// P(word | history); only the last order-1 ids of the history are used.
  double prob(std::span<const int> history, int word) const;
  double log_prob(std::span<const int> history, int word) const;

  /// Counts at level k (1-based), keyed by the (k-1)-token history.
  const std::map<std::vector<int>, HistoryStats>& table(int k) const { return tables_.at(k - 1); }

  friend NGramModel train(const Corpus& corpus, int order, double discount, LmTag tag);
  friend NGramModel uniform_model(const std::vector<std::string>& words, LmTag tag);
  friend NGramModel read_model(const std::string& text);

 private:
  void build_vocab(const std::vector<std::string>& words);
  std::span<const int> truncate(std::span<const int> history) const;

  int order_ = 1;
  double discount_ = 0.4;
  LmTag tag_ = LmTag::Base;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::map<std::vector<int>, HistoryStats>> tables_;
};

NGramModel train(const Corpus& corpus, int order, double discount, LmTag tag);

/// Model without counts: every predictable token gets 1/V.
NGramModel uniform_model(const std::vector<std::string>& words, LmTag tag);

/// Sum of log P(w_t | history) with a leading <s> and a closing </s>.
double logprob(const NGramModel& m, const Sentence& sentence);

/// exp(-total logprob / token count), where the count includes one </s> per sentence.
double perplexity(const NGramModel& m, const Corpus& corpus);

/// Distribution over the whole vocabulary indexed by id; the <s> entry is 0.
std::vector<double> next_word_dist(const NGramModel& m, std::span<const int> history);

std::string write_model(const NGramModel& m);
NGramModel read_model(const std::string& text);

Sentence tokenize(const std::string& line);
Corpus read_corpus(const std::string& text);
std::string write_corpus(const Corpus& corpus);

}  // namespace ftm
