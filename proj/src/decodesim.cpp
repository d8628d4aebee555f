#include "ftm/decodesim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "ftm/io.hpp"
#include "ftm/parallel.hpp"

namespace ftm {

namespace {

using Slots = std::map<std::string, std::vector<std::string>>;

// Fillers shared by both grammars. Multi-word fillers are split on spaces.
const Slots& slot_table() {
  static const Slots slots = {
      {"song", {"yesterday", "thunder", "believer", "imagine", "hello", "halo", "roar"}},
      {"artist", {"adele", "queen", "drake", "madonna", "coldplay", "prince", "shakira"}},
      {"genre", {"jazz", "rock", "pop", "blues", "country", "classical", "soul"}},
      {"num", {"one", "two", "three", "five", "six", "ten", "fifteen", "twenty", "thirty"}},
      {"ampm", {"am", "pm"}},
      {"city", {"boston", "paris", "london", "denver", "austin", "seattle", "chicago", "dallas"}},
      {"day", {"today", "tomorrow", "tonight", "on monday", "on friday", "this weekend"}},
      {"name", {"mom", "dad", "alex", "sarah", "john", "emma", "david", "lisa", "denise", "devin"}},
      {"onoff", {"on", "off"}},
      {"appliance", {"lights", "fan", "heater", "tv", "radio", "oven"}},
      {"updown", {"up", "down"}},
      {"task", {"buy milk", "call mom", "pay rent", "walk the dog", "take my pills", "water the plants"}},
      {"activity", {"go out", "eat pizza", "watch a movie", "stay home", "clean the kitchen", "go for a walk"}},
      {"event", {"game", "show", "movie", "news", "match", "concert"}},
      {"food", {"salt", "bread", "water", "butter", "pasta", "coffee", "pizza", "tacos"}},
      {"relation", {"mom", "dad", "brother", "sister", "friend", "boss", "neighbor"}},
      {"thing", {"movie", "dinner", "game", "party", "trip", "book", "gift"}},
      {"adj", {"great", "terrible", "funny", "boring", "amazing", "weird", "nice"}},
      {"object", {"keys", "phone", "remote", "charger", "wallet", "glasses"}},
      {"state", {"broken", "noisy", "loud", "dirty", "cold"}},
      {"howto", {"bake bread", "tie a tie", "play guitar", "fix a fan", "cook rice", "paint a wall"}},
      {"doc", {"report", "photos", "notes", "slides", "invoice"}},
  };
  return slots;
}

// Commands addressed to the assistant; every in-domain sentence is
// "hey device" followed by one of these.
const std::vector<std::string>& command_templates() {
  static const std::vector<std::string> t = {
      "play {song} by {artist}",
      "play some {genre} music",
      "play {artist}",
      "set a timer for {num} minutes",
      "set an alarm for {num} {ampm}",
      "what is the weather in {city}",
      "what is the weather {day}",
      "call {name}",
      "call {name} on speaker",
      "turn {onoff} the {appliance}",
      "turn the volume {updown}",
      "what time is it",
      "remind me to {task} {day}",
      "pause the music",
      "skip this song",
      "send a message to {name}",
      "how is the traffic to {city}",
      "add {food} to my list",
  };
  return t;
}

// Out-of-domain text: conversation, dictation, search queries, and
// requests meant for other devices.
const std::vector<std::string>& chatter_templates() {
  static const std::vector<std::string> t = {
      "i think we should {activity} {day}",
      "did you see the {event} last night",
      "can you pass me the {food}",
      "hey {name} how are you doing",
      "hey {name} did you see the {event}",
      "we are going to {city} {day}",
      "my {relation} said the {thing} was {adj}",
      "that was a {adj} {thing}",
      "i will call you {day}",
      "let me know when you are ready",
      "where did you put the {object}",
      "the {appliance} is {state} again",
      "that is good advice",
      "you decide what we eat {day}",
      "they said the {event} was {adj}",
      "{city} weather {day}",
      "how to {howto}",
      "best {food} near me",
      "{artist} new song",
      "dear {name} thank you for the {thing}",
      "please send me the {doc} by {day}",
      "open the garage door",
      "set the thermostat to {num}",
      "play the radio in the car",
      "turn on the wipers",
      "i do not know what to say",
      "a day at the {thing} with my {relation}",
      "divide the {food} for everyone",
      "hey {name} can you turn {onoff} the {appliance}",
      "hey {name} turn the volume {updown}",
      "hey {name} what time is it",
      "{name} can you play some {genre} music",
      "hey {name} call {relation} {day}",
  };
  return t;
}

// Phrases one token away from the trigger.
const std::vector<Sentence>& near_trigger_phrases() {
  static const std::vector<Sentence> p = {
      {"hay", "device"}, {"hey", "advice"}, {"hey", "devise"},
      {"they", "device"}, {"hey", "divide"}, {"a", "device"},
  };
  return p;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, const std::string& key, std::uint64_t salt) {
  std::uint64_t h = splitmix64(seed ^ 0x5bd1e995ULL);
  for (unsigned char c : key) h = splitmix64(h ^ c);
  return splitmix64(h ^ salt);
}

Sentence expand_template(const std::string& tmpl, std::mt19937_64& rng) {
  Sentence out;
  for (const auto& tok : tokenize(tmpl)) {
    if (tok.size() > 2 && tok.front() == '{' && tok.back() == '}') {
      const std::string name = tok.substr(1, tok.size() - 2);
      const auto& fill = slot_table().at(name);
      std::uniform_int_distribution<std::size_t> pick(0, fill.size() - 1);
      for (auto& w : tokenize(fill[pick(rng)])) out.push_back(std::move(w));
    } else {
      out.push_back(tok);
    }
  }
  return out;
}

Sentence sample_in_domain(std::mt19937_64& rng) {
  const auto& t = command_templates();
  std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
  Sentence s = kTriggerPhrase;
  for (auto& w : expand_template(t[pick(rng)], rng)) s.push_back(std::move(w));
  return s;
}

Sentence sample_chatter(std::mt19937_64& rng) {
  const auto& t = chatter_templates();
  std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
  return expand_template(t[pick(rng)], rng);
}

bool contains_trigger(const Sentence& s) {
  for (std::size_t i = 0; i + 1 < s.size(); ++i)
    if (s[i] == kTriggerPhrase[0] && s[i + 1] == kTriggerPhrase[1]) return true;
  return false;
}

Sentence sample_false_trigger(std::mt19937_64& rng, double near_miss_rate) {
  std::bernoulli_distribution near(near_miss_rate);
  Sentence s;
  do {
    s = sample_chatter(rng);
    if (near(rng)) {
      const auto& p = near_trigger_phrases();
      std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
      Sentence prefixed = p[pick(rng)];
      prefixed.insert(prefixed.end(), s.begin(), s.end());
      s = std::move(prefixed);
    }
  } while (contains_trigger(s));
  return s;
}

template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

std::string join(const Sentence& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ' ';
    out += s[i];
  }
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

std::string to_string(Label label) { return label == Label::TT ? "TT" : "FT"; }

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Cv: return "cv";
    case Split::Dev: return "dev";
    case Split::Eval: return "eval";
  }
  return "?";
}

Label parse_label(const std::string& text) {
  if (text == "TT") return Label::TT;
  if (text == "FT") return Label::FT;
  throw std::invalid_argument("unknown label '" + text + "'");
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "cv") return Split::Cv;
  if (text == "dev") return Split::Dev;
  if (text == "eval") return Split::Eval;
  throw std::invalid_argument("unknown split '" + text + "'");
}

int edit_distance(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

const std::vector<ConfusionModel::Candidate>& ConfusionModel::candidates(
    const std::string& word) const {
  auto it = std::lower_bound(vocab.begin(), vocab.end(), word);
  if (it == vocab.end() || *it != word) {
    throw DecodeError("word '" + word + "' is not in the confusion vocabulary");
  }
  return confusions[static_cast<std::size_t>(it - vocab.begin())];
}

ConfusionModel build_confusion_model(std::vector<std::string> vocab, double lambda,
                                     double noise_sigma, std::uint64_t seed) {
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
  ConfusionModel cm;
  cm.lambda = lambda;
  cm.noise_sigma = noise_sigma;
  cm.seed = seed;
  for (const auto& w : vocab) {
    std::vector<std::pair<int, std::string>> near;
    for (const auto& v : vocab) {
      const int d = edit_distance(w, v);
      if (d <= 2) near.emplace_back(d, v);
    }
    std::sort(near.begin(), near.end());
    std::vector<ConfusionModel::Candidate> set;
    for (const auto& [d, v] : near) set.push_back({v, -lambda * d});
    cm.confusions.push_back(std::move(set));
  }
  cm.vocab = std::move(vocab);
  return cm;
}

SplitCounts reference_split_counts(Split split) {
  switch (split) {
    case Split::Train: return {14225, 6223};
    case Split::Cv: return {1582, 691};
    case Split::Dev: return {5829, 5657};
    case Split::Eval: return {11646, 11316};
  }
  return {};
}

SplitCounts scaled_split_counts(Split split, double scale) {
  const SplitCounts ref = reference_split_counts(split);
  auto scaled = [&](int n) { return std::max(1, static_cast<int>(std::lround(n * scale))); };
  return {scaled(ref.tt), scaled(ref.ft)};
}

std::vector<std::string> pooled_vocabulary() {
  std::set<std::string> words(kTriggerPhrase.begin(), kTriggerPhrase.end());
  auto add_tokens = [&](const std::string& text) {
    for (const auto& w : tokenize(text))
      if (w.front() != '{') words.insert(w);
  };
  for (const auto& t : command_templates()) add_tokens(t);
  for (const auto& t : chatter_templates()) add_tokens(t);
  for (const auto& [name, fill] : slot_table())
    for (const auto& f : fill) add_tokens(f);
  for (const auto& p : near_trigger_phrases())
    for (const auto& w : p) words.insert(w);
  return {words.begin(), words.end()};
}

GeneratedCorpora gen_corpora(std::uint64_t seed, const CorpusSizes& sizes) {
  if (sizes.scale <= 0 || sizes.lm_sentences <= 0 || sizes.heldout_sentences <= 0) {
    throw std::invalid_argument("corpus sizes must be positive");
  }
  if (sizes.far_field_rate < 0.0 || sizes.far_field_rate > 1.0 || sizes.far_field_sigma < 0.0) {
    throw std::invalid_argument("far-field parameters out of range");
  }
  GeneratedCorpora g;
  std::mt19937_64 lm_rng(mix_seed(seed, "lm-corpora", 0));
  for (int i = 0; i < sizes.lm_sentences; ++i) g.in_domain.push_back(sample_in_domain(lm_rng));
  for (int i = 0; i < sizes.lm_sentences; ++i) g.chatter.push_back(sample_chatter(lm_rng));
  for (int i = 0; i < sizes.heldout_sentences; ++i)
    g.in_domain_heldout.push_back(sample_in_domain(lm_rng));
  for (int i = 0; i < sizes.heldout_sentences; ++i)
    g.chatter_heldout.push_back(sample_chatter(lm_rng));

  for (Split split : {Split::Train, Split::Cv, Split::Dev, Split::Eval}) {
    std::mt19937_64 rng(mix_seed(seed, "utterances-" + to_string(split), 0));
    const SplitCounts n = scaled_split_counts(split, sizes.scale);
    std::vector<Utterance> us;
    for (int i = 0; i < n.tt; ++i) us.push_back({"", sample_in_domain(rng), Label::TT, split});
    for (int i = 0; i < n.ft; ++i)
      us.push_back({"", sample_false_trigger(rng, sizes.near_miss_rate), Label::FT, split});
    deterministic_shuffle(us, rng);
    // Own stream, so the far-field draw leaves the word sequences unchanged.
    std::mt19937_64 far_rng(mix_seed(seed, "far-field-" + to_string(split), 0));
    std::bernoulli_distribution far(sizes.far_field_rate);
    for (auto& u : us)
      if (far(far_rng)) u.jitter_sigma = sizes.far_field_sigma;
    for (std::size_t i = 0; i < us.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s-%05zu", to_string(split).c_str(), i);
      us[i].id = buf;
      g.utterances.push_back(std::move(us[i]));
    }
  }
  return g;
}

Utterance augment(const Utterance& u, int k, std::optional<double> sigma) {
  if (u.split != Split::Train && u.split != Split::Cv) {
    throw std::invalid_argument("InvalidSplit: only train and cv utterances are augmented ('" +
                                u.id + "')");
  }
  if (k < 0 || k > 2) throw std::invalid_argument("augmentation index must be 0, 1 or 2");
  Utterance v = u;
  if (k == 0) return v;
  v.id = u.id + "-a" + std::to_string(k);
  v.augment_index = k;
  v.speed = k == 1 ? 0.9 : 1.1;
  if (sigma) v.jitter_sigma = sigma;
  return v;
}

std::vector<Utterance> expand_augmented(const std::vector<Utterance>& source) {
  std::vector<Utterance> out;
  for (const auto& u : source) {
    if (u.split == Split::Train || u.split == Split::Cv) {
      for (int k = 0; k < 3; ++k) out.push_back(augment(u, k));
    } else {
      out.push_back(u);
    }
  }
  return out;
}

Lattice decode(const Utterance& u, const ConfusionModel& cm, const NGramModel& m,
               const DecodeOptions& opts) {
  if (opts.beam < 1) throw std::invalid_argument("beam must be at least 1");
  if (u.words.empty()) throw std::invalid_argument("cannot decode an empty utterance");
  const std::size_t n = u.words.size();
  const std::size_t hist_len = static_cast<std::size_t>(m.order() - 1);

  // Acoustic side depends only on the utterance, so both decoders of a
  // parallel pair see identical candidates, scores and durations.
  struct Cand {
    std::string word;
    int lm_id;
    double am;
  };
  const double sigma = u.jitter_sigma.value_or(cm.noise_sigma);
  std::string source_id = u.id;
  if (u.augment_index > 0) source_id = u.id.substr(0, u.id.rfind("-a"));
  std::mt19937_64 rng(mix_seed(cm.seed, source_id, static_cast<std::uint64_t>(u.augment_index)));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<std::vector<Cand>> cands(n);
  std::vector<int> durations(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& c : cm.candidates(u.words[i])) {
      const double jitter = sigma * noise(rng);
      cands[i].push_back({c.word, m.id(c.word), quantize_score(std::min(0.0, c.base_score + jitter))});
    }
    const double frames = (5.0 + 4.0 * static_cast<double>(u.words[i].size())) * u.speed;
    durations[i] = std::max(1, static_cast<int>(std::lround(frames)));
  }

  using Key = std::vector<int>;
  auto advance = [&](const Key& h, int id) {
    Key next = h;
    next.push_back(id);
    if (next.size() > hist_len) next.erase(next.begin(), next.end() - static_cast<long>(hist_len));
    return next;
  };
  struct PendingArc {
    Key src, dst;
    std::size_t cand;
    double lm;
  };
  struct Layer {
    std::map<Key, double> best;  // Viterbi score per state
    std::vector<PendingArc> arcs;  // arcs leaving this layer
  };

  const Key end_key{-1};
  std::vector<Layer> layers(n + 1);
  Key ref_key = advance({}, m.bos_id());
  layers[0].best[ref_key] = 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    const bool last = i + 1 == n;
    Layer& cur = layers[i];
    Layer& nxt = layers[i + 1];
    for (const auto& [key, score] : cur.best) {
      struct Option {
        std::size_t cand;
        double lm, total;
      };
      std::vector<Option> options;
      for (std::size_t c = 0; c < cands[i].size(); ++c) {
        double lm = m.log_prob(key, cands[i][c].lm_id);
        if (last) lm += m.log_prob(advance(key, cands[i][c].lm_id), m.eos_id());
        lm = quantize_score(lm);
        options.push_back({c, lm, cands[i][c].am + lm});
      }
      std::stable_sort(options.begin(), options.end(),
                       [](const Option& a, const Option& b) { return a.total > b.total; });
      std::vector<Option> keep(options.begin(),
                               options.begin() + std::min(options.size(), opts.max_arcs_per_step));
      if (key == ref_key) {
        // Candidate 0 is the identity: the reference word itself.
        const bool has_identity = std::any_of(keep.begin(), keep.end(),
                                              [](const Option& o) { return o.cand == 0; });
        if (!has_identity) {
          for (const auto& o : options)
            if (o.cand == 0) keep.push_back(o);
        }
      }
      for (const auto& o : keep) {
        Key dst = last ? end_key : advance(key, cands[i][o.cand].lm_id);
        const double s = score + o.total;
        auto [it, fresh] = nxt.best.emplace(dst, s);
        if (!fresh) it->second = std::max(it->second, s);
        cur.arcs.push_back({key, std::move(dst), o.cand, o.lm});
      }
    }

    const Key next_ref = last ? end_key : advance(ref_key, m.id(u.words[i]));
    if (!last && nxt.best.size() > opts.beam) {
      std::vector<std::pair<double, Key>> ranked;
      for (const auto& [k, s] : nxt.best)
        if (k != next_ref) ranked.emplace_back(s, k);
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      std::map<Key, double> kept;
      kept.emplace(next_ref, nxt.best.at(next_ref));
      for (std::size_t r = 0; r < ranked.size() && kept.size() < opts.beam; ++r)
        kept.emplace(ranked[r].second, ranked[r].first);
      nxt.best = std::move(kept);
    }
    if (last && cur.arcs.size() > opts.beam) {
      // All final arcs share the end state, so the beam bounds them directly.
      auto total = [&](const PendingArc& a) { return cur.best.at(a.src) + cands[i][a.cand].am + a.lm; };
      auto is_ref = [&](const PendingArc& a) { return a.src == ref_key && a.cand == 0; };
      std::vector<std::size_t> order(cur.arcs.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return total(cur.arcs[a]) > total(cur.arcs[b]);
      });
      std::vector<bool> keep(cur.arcs.size(), false);
      std::size_t kept = 0;
      for (std::size_t a = 0; a < cur.arcs.size(); ++a) {
        if (is_ref(cur.arcs[a])) {
          keep[a] = true;
          ++kept;
        }
      }
      for (std::size_t r = 0; r < order.size() && kept < opts.beam; ++r) {
        if (!keep[order[r]]) {
          keep[order[r]] = true;
          ++kept;
        }
      }
      std::vector<PendingArc> pruned;
      for (std::size_t a = 0; a < cur.arcs.size(); ++a)
        if (keep[a]) pruned.push_back(std::move(cur.arcs[a]));
      cur.arcs = std::move(pruned);
    }
    if (!nxt.best.count(next_ref)) throw DecodeError("reference state was pruned in '" + u.id + "'");
    std::erase_if(cur.arcs, [&](const PendingArc& a) { return !nxt.best.count(a.dst); });
    ref_key = next_ref;
  }

  // Drop states that cannot reach the end.
  std::vector<std::set<Key>> alive(n + 1);
  alive[n].insert(end_key);
  for (std::size_t i = n; i-- > 0;) {
    std::erase_if(layers[i].arcs, [&](const PendingArc& a) { return !alive[i + 1].count(a.dst); });
    for (const auto& a : layers[i].arcs) alive[i].insert(a.src);
  }
  if (alive[0].empty()) throw DecodeError("EmptyBeam: no surviving path in '" + u.id + "'");

  std::vector<std::map<Key, NodeId>> ids(n + 1);
  NodeId next_id = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& k : alive[i]) ids[i][k] = next_id++;
  ids[n][end_key] = next_id++;

  Lattice l;
  l.utterance_id = u.id;
  l.lm_tag = m.tag();
  l.num_nodes = next_id;
  l.start = 0;
  l.end = next_id - 1;
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& a : layers[i].arcs) {
      const Cand& c = cands[i][a.cand];
      l.arcs.push_back(make_arc(ids[i].at(a.src), ids[i + 1].at(a.dst), c.word, c.am, a.lm,
                                durations[i]));
    }
  }
  std::stable_sort(l.arcs.begin(), l.arcs.end(), [](const Arc& a, const Arc& b) {
    return std::tie(a.src, a.dst, a.word) < std::tie(b.src, b.dst, b.word);
  });
  validate(l);
  return l;
}

std::string write_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out = "id\tlabel\tsplit\tbase_lattice_path\tchatter_lattice_path\n";
  for (const auto& e : entries) {
    out += e.id + '\t' + to_string(e.label) + '\t' + to_string(e.split) + '\t' +
           e.base_lattice_path + '\t' + e.chatter_lattice_path + '\n';
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::string& text) {
  std::vector<ManifestEntry> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || lineno == 1) continue;
    const auto f = split_tabs(line);
    if (f.size() != 5) throw ParseError(lineno, "manifest rows need 5 columns");
    try {
      out.push_back({f[0], parse_label(f[1]), parse_split(f[2]), f[3], f[4]});
    } catch (const std::invalid_argument& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

std::string write_utterances(const std::vector<Utterance>& us) {
  std::string out = "id\tlabel\tsplit\tjitter_sigma\twords\n";
  for (const auto& u : us) {
    char sigma[32] = "-";
    if (u.jitter_sigma) std::snprintf(sigma, sizeof(sigma), "%.17g", *u.jitter_sigma);
    out += u.id + '\t' + to_string(u.label) + '\t' + to_string(u.split) + '\t' + sigma + '\t' +
           join(u.words) + '\n';
  }
  return out;
}

std::vector<Utterance> read_utterances(const std::string& text) {
  std::vector<Utterance> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || lineno == 1) continue;
    const auto f = split_tabs(line);
    if (f.size() != 5) throw ParseError(lineno, "utterance rows need 5 columns");
    try {
      Utterance u{f[0], tokenize(f[4]), parse_label(f[1]), parse_split(f[2])};
      if (f[3] != "-") u.jitter_sigma = std::stod(f[3]);
      out.push_back(std::move(u));
    } catch (const std::invalid_argument& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

std::vector<Sample> build_dataset(const std::vector<Utterance>& source, const ConfusionModel& cm,
                                  const NGramModel& base_lm, const NGramModel& chatter_lm,
                                  const DecodeOptions& opts, const std::filesystem::path& data_dir,
                                  int threads) {
  if (base_lm.tag() != LmTag::Base || chatter_lm.tag() != LmTag::Chatter) {
    throw std::invalid_argument("build_dataset needs a BASE and a CHATTER model");
  }
  const std::vector<Utterance> all = expand_augmented(source);
  std::vector<Sample> samples(all.size());
  parallel_for(all.size(), threads, [&](std::size_t i) {
    const Utterance& u = all[i];
    samples[i].split = u.split;
    samples[i].pair = {u.id, u.label, decode(u, cm, base_lm, opts), decode(u, cm, chatter_lm, opts)};
  });

  std::vector<ManifestEntry> manifest;
  std::map<std::string, std::string> files;
  for (const auto& s : samples) {
    const std::string stem = "lattices/" + to_string(s.split);
    manifest.push_back({s.pair.utterance_id, s.pair.label, s.split, stem + ".base.lat",
                        stem + ".chatter.lat"});
    files[stem + ".base.lat"] += write_lattice(s.pair.lattice_base);
    files[stem + ".chatter.lat"] += write_lattice(s.pair.lattice_chatter);
  }
  for (const auto& [rel, text] : files) write_file_atomic(data_dir / rel, text);
  write_file_atomic(data_dir / "manifest.tsv", write_manifest(manifest));
  return samples;
}

std::vector<Sample> load_dataset(const std::filesystem::path& data_dir) {
  const auto manifest = read_manifest(read_file(data_dir / "manifest.tsv"));
  std::map<std::string, std::unordered_map<std::string, Lattice>> cache;
  auto lookup = [&](const std::string& rel, const std::string& id, LmTag tag) -> Lattice {
    auto it = cache.find(rel);
    if (it == cache.end()) {
      std::istringstream is(read_file(data_dir / rel));
      std::unordered_map<std::string, Lattice> byid;
      for (auto& l : read_lattices(is)) {
        std::string key = l.utterance_id;
        byid.emplace(std::move(key), std::move(l));
      }
      it = cache.emplace(rel, std::move(byid)).first;
    }
    auto rec = it->second.find(id);
    if (rec == it->second.end()) throw std::runtime_error("no lattice for '" + id + "' in " + rel);
    if (rec->second.lm_tag != tag) throw std::runtime_error("lattice tag mismatch for '" + id + "'");
    return rec->second;
  };
  std::vector<Sample> out;
  out.reserve(manifest.size());
  for (const auto& e : manifest) {
    out.push_back({e.split,
                   {e.id, e.label, lookup(e.base_lattice_path, e.id, LmTag::Base),
                    lookup(e.chatter_lattice_path, e.id, LmTag::Chatter)}});
  }
  return out;
}

std::vector<const Sample*> select_split(const std::vector<Sample>& data, Split split) {
  std::vector<const Sample*> out;
  for (const auto& s : data)
    if (s.split == split) out.push_back(&s);
  return out;
}

}  // namespace ftm
