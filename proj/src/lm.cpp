#include "ftm/lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace ftm {

DomainPrior DomainPrior::from_in_domain(double p_in) {
  if (!(p_in > 0.0 && p_in < 1.0)) throw std::invalid_argument("domain prior must lie in (0,1)");
  return DomainPrior{p_in, 1.0 - p_in};
}

void NGramModel::build_vocab(const std::vector<std::string>& words) {
  vocab_ = {kBos, kEos, kUnk};
  std::set<std::string> rest;
  for (const auto& w : words)
    if (w != kBos && w != kEos && w != kUnk) rest.insert(w);
  vocab_.insert(vocab_.end(), rest.begin(), rest.end());
  index_.clear();
  for (int i = 0; i < static_cast<int>(vocab_.size()); ++i) index_.emplace(vocab_[i], i);
}

int NGramModel::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? unk_id() : it->second;
}

std::span<const int> NGramModel::truncate(std::span<const int> history) const {
  const std::size_t keep = static_cast<std::size_t>(order_ - 1);
  return history.size() > keep ? history.last(keep) : history;
}

double NGramModel::prob(std::span<const int> history, int word) const {
  if (word == bos_id()) return 0.0;
  history = truncate(history);
  const double uniform = 1.0 / predictable_size();
  // Walk from the unigram level up to the full history.
  double p = uniform;
  for (std::size_t len = 0; len <= history.size(); ++len) {
    const auto& tab = tables_[len];
    std::vector<int> key(history.end() - len, history.end());
    auto it = tab.find(key);
    if (it == tab.end() || it->second.total == 0) continue;
    const HistoryStats& s = it->second;
    const double total = static_cast<double>(s.total);
    auto c = s.next.find(word);
    const double count = c == s.next.end() ? 0.0 : static_cast<double>(c->second);
    p = std::max(count - discount_, 0.0) / total +
        discount_ * static_cast<double>(s.next.size()) / total * p;
  }
  return p;
}

double NGramModel::log_prob(std::span<const int> history, int word) const {
  return std::log(prob(history, word));
}

NGramModel train(const Corpus& corpus, int order, double discount, LmTag tag) {
  if (corpus.empty()) throw LmError("cannot train a language model on an empty corpus");
  if (order < 1 || order > 4) throw std::invalid_argument("n-gram order must be in 1..4");
  if (!(discount > 0.0 && discount < 1.0)) throw std::invalid_argument("discount must lie in (0,1)");

  NGramModel m;
  m.order_ = order;
  m.discount_ = discount;
  m.tag_ = tag;
  std::vector<std::string> words;
  for (const auto& s : corpus) words.insert(words.end(), s.begin(), s.end());
  m.build_vocab(words);
  m.tables_.assign(order, {});

  for (const auto& s : corpus) {
    std::vector<int> ids{m.bos_id()};
    for (const auto& w : s) ids.push_back(m.id(w));
    ids.push_back(m.eos_id());
    for (std::size_t t = 1; t < ids.size(); ++t) {
      for (int k = 1; k <= order; ++k) {
        const std::size_t hlen = static_cast<std::size_t>(k - 1);
        if (hlen > t) break;
        std::vector<int> key(ids.begin() + (t - hlen), ids.begin() + t);
        auto& stats = m.tables_[k - 1][key];
        ++stats.total;
        ++stats.next[ids[t]];
      }
    }
  }
  return m;
}

NGramModel uniform_model(const std::vector<std::string>& words, LmTag tag) {
  NGramModel m;
  m.order_ = 1;
  m.tag_ = tag;
  m.build_vocab(words);
  m.tables_.assign(1, {});
  return m;
}

double logprob(const NGramModel& m, const Sentence& sentence) {
  std::vector<int> hist{m.bos_id()};
  double total = 0.0;
  for (const auto& w : sentence) {
    const int id = m.id(w);
    total += m.log_prob(hist, id);
    hist.push_back(id);
  }
  total += m.log_prob(hist, m.eos_id());
  return total;
}

double perplexity(const NGramModel& m, const Corpus& corpus) {
  if (corpus.empty()) throw LmError("perplexity of an empty corpus is undefined");
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : corpus) {
    total += logprob(m, s);
    tokens += s.size() + 1;
  }
  return std::exp(-total / static_cast<double>(tokens));
}

std::vector<double> next_word_dist(const NGramModel& m, std::span<const int> history) {
  std::vector<double> dist(m.vocab_size());
  for (int w = 0; w < m.vocab_size(); ++w) dist[w] = m.prob(history, w);
  return dist;
}

std::string write_model(const NGramModel& m) {
  std::ostringstream os;
  char disc[64];
  std::snprintf(disc, sizeof(disc), "%.17g", m.discount());
  os << "NGLM v1 " << to_string(m.tag()) << ' ' << m.order() << ' ' << disc << ' '
     << m.vocab_size() << '\n';
  for (const auto& w : m.vocab()) os << w << '\n';
  for (int k = 1; k <= m.order(); ++k) {
    for (const auto& [hist, stats] : m.table(k)) {
      for (const auto& [w, c] : stats.next) {
        os << "NG " << k;
        for (int h : hist) os << ' ' << m.vocab()[h];
        os << ' ' << m.vocab()[w] << ' ' << c << '\n';
      }
    }
  }
  return os.str();
}

NGramModel read_model(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty()) return true;
    }
    return false;
  };
  if (!next_line()) throw ParseError(1, "empty model file");
  const Sentence head = tokenize(line);
  if (head.size() != 6 || head[0] != "NGLM") throw ParseError(lineno, "expected NGLM header");
  if (head[1] != "v1") throw ParseError(lineno, "unsupported model version '" + head[1] + "'");

  NGramModel m;
  try {
    m.tag_ = parse_lm_tag(head[2]);
    m.order_ = std::stoi(head[3]);
    m.discount_ = std::stod(head[4]);
  } catch (const std::exception& e) {
    throw ParseError(lineno, std::string("bad header field: ") + e.what());
  }
  const int vocab_size = std::stoi(head[5]);
  if (m.order_ < 1 || m.order_ > 4 || vocab_size < 3) throw ParseError(lineno, "bad header values");

  std::vector<std::string> words;
  for (int i = 0; i < vocab_size; ++i) {
    if (!next_line()) throw ParseError(lineno, "truncated vocabulary");
    words.push_back(line);
  }
  m.build_vocab(words);
  if (m.vocab_size() != vocab_size) throw ParseError(lineno, "duplicate vocabulary entries");
  m.tables_.assign(m.order_, {});

  while (next_line()) {
    const Sentence t = tokenize(line);
    if (t.size() < 3 || t[0] != "NG") throw ParseError(lineno, "expected NG record");
    const int k = std::stoi(t[1]);
    if (k < 1 || k > m.order_ || t.size() != static_cast<std::size_t>(k) + 3) {
      throw ParseError(lineno, "malformed NG record");
    }
    std::vector<int> hist;
    for (int i = 0; i < k - 1; ++i) {
      if (!m.contains(t[2 + i])) throw ParseError(lineno, "unknown token '" + t[2 + i] + "'");
      hist.push_back(m.id(t[2 + i]));
    }
    const std::string& w = t[1 + k];
    if (!m.contains(w)) throw ParseError(lineno, "unknown token '" + w + "'");
    long c = 0;
    try {
      c = std::stol(t[2 + k]);
    } catch (const std::exception&) {
      throw ParseError(lineno, "malformed count '" + t[2 + k] + "'");
    }
    if (c <= 0) throw ParseError(lineno, "non-positive count");
    auto& stats = m.tables_[k - 1][hist];
    stats.total += c;
    stats.next[m.id(w)] += c;
  }
  return m;
}

Sentence tokenize(const std::string& line) {
  Sentence out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

Corpus read_corpus(const std::string& text) {
  Corpus c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto s = tokenize(line);
    if (!s.empty()) c.push_back(std::move(s));
  }
  return c;
}

std::string write_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& s : corpus) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ' ';
      out += s[i];
    }
    out += '\n';
  }
  return out;
}

}  // namespace ftm
