#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <set>

#include "ftm/decodesim.hpp"
#include "ftm/io.hpp"

using namespace ftm;
namespace fs = std::filesystem;

namespace {

CorpusSizes small_sizes() {
  CorpusSizes s;
  s.scale = 0.01;
  s.lm_sentences = 600;
  s.heldout_sentences = 50;
  return s;
}

bool starts_with_trigger(const Sentence& s) {
  return s.size() >= 2 && s[0] == kTriggerPhrase[0] && s[1] == kTriggerPhrase[1];
}

bool contains_trigger(const Sentence& s) {
  for (std::size_t i = 0; i + 1 < s.size(); ++i)
    if (s[i] == kTriggerPhrase[0] && s[i + 1] == kTriggerPhrase[1]) return true;
  return false;
}

// True iff some start-to-end path spells `words`.
bool has_path(const Lattice& l, const Sentence& words) {
  std::function<bool(NodeId, std::size_t)> go = [&](NodeId v, std::size_t i) {
    if (i == words.size()) return v == l.end;
    for (const auto& a : l.arcs)
      if (a.src == v && a.word == words[i] && go(a.dst, i + 1)) return true;
    return false;
  };
  return go(l.start, 0);
}

struct Fixture {
  GeneratedCorpora corpora = gen_corpora(3, small_sizes());
  NGramModel base = train(corpora.in_domain, 3, 0.4, LmTag::Base);
  NGramModel chatter = train(corpora.chatter, 3, 0.4, LmTag::Chatter);
  ConfusionModel cm = build_confusion_model(pooled_vocabulary(), 1.5, 0.3, 3);
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_CASE("generated corpora follow the grammar and split sizes") {
  const auto& g = fixture().corpora;
  const GeneratedCorpora again = gen_corpora(3, small_sizes());
  CHECK(again.utterances == g.utterances);
  CHECK(again.chatter == g.chatter);

  for (const auto& s : g.in_domain) CHECK(starts_with_trigger(s));
  for (const auto& s : g.chatter) CHECK_FALSE(contains_trigger(s));
  std::map<std::pair<Split, Label>, int> counts;
  for (const auto& u : g.utterances) {
    ++counts[{u.split, u.label}];
    if (u.label == Label::TT) {
      CHECK(starts_with_trigger(u.words));
    } else {
      CHECK_FALSE(contains_trigger(u.words));
    }
  }
  for (Split sp : {Split::Train, Split::Cv, Split::Dev, Split::Eval}) {
    const SplitCounts want = scaled_split_counts(sp, 0.01);
    CHECK(counts[{sp, Label::TT}] == want.tt);
    CHECK(counts[{sp, Label::FT}] == want.ft);
  }
  const SplitCounts eval = scaled_split_counts(Split::Eval, 0.1);
  CHECK(eval.tt == 1165);
  CHECK(eval.ft == 1132);
  CHECK(scaled_split_counts(Split::Train, 0.1).tt == 1423);
}

TEST_CASE("far-field draw") {
  CorpusSizes quiet = small_sizes();
  quiet.far_field_rate = 0.0;
  for (const auto& u : gen_corpora(3, quiet).utterances) CHECK_FALSE(u.jitter_sigma.has_value());

  CorpusSizes far = small_sizes();
  far.far_field_rate = 0.4;
  far.far_field_sigma = 2.5;
  const auto plain = gen_corpora(3, quiet).utterances;
  const auto noisy = gen_corpora(3, far).utterances;
  CHECK(gen_corpora(3, far).utterances == noisy);
  REQUIRE(noisy.size() == plain.size());
  std::map<Label, std::pair<int, int>> hits;  // far, total
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    CHECK(noisy[i].id == plain[i].id);
    CHECK(noisy[i].words == plain[i].words);
    CHECK(noisy[i].label == plain[i].label);
    if (noisy[i].jitter_sigma) CHECK(*noisy[i].jitter_sigma == 2.5);
    hits[noisy[i].label].first += noisy[i].jitter_sigma.has_value();
    ++hits[noisy[i].label].second;
  }
  for (const auto& [label, h] : hits) CHECK(std::abs(double(h.first) / h.second - 0.4) < 0.1);
  CHECK(read_utterances(write_utterances(noisy)) == noisy);

  far.far_field_rate = 1.5;
  CHECK_THROWS(gen_corpora(3, far));
}

TEST_CASE("confusion sets") {
  const auto& cm = fixture().cm;
  for (std::size_t i = 0; i < cm.vocab.size(); ++i) {
    const auto& set = cm.confusions[i];
    REQUIRE_FALSE(set.empty());
    CHECK(set.front().word == cm.vocab[i]);
    CHECK(set.front().base_score == 0.0);
    for (const auto& c : set) {
      CHECK(c.base_score <= 0.0);
      CHECK(edit_distance(c.word, cm.vocab[i]) <= 2);
      CHECK(c.base_score == -1.5 * edit_distance(c.word, cm.vocab[i]));
    }
  }
  CHECK(edit_distance("hey", "hay") == 1);
  CHECK(edit_distance("device", "advice") == 2);
  CHECK_THROWS_AS(cm.candidates("zzzzzz"), DecodeError);
}

TEST_CASE("augmentation") {
  const auto& g = fixture().corpora;
  const Utterance& u = g.utterances.front();
  REQUIRE(u.split == Split::Train);
  CHECK(augment(u, 0) == u);
  const Utterance a1 = augment(u, 1);
  const Utterance a2 = augment(u, 2);
  CHECK(a1.words == u.words);
  CHECK(a1.id != u.id);
  CHECK(a1.speed == 0.9);
  CHECK(a2.speed == 1.1);

  const auto& f = fixture();
  const Lattice l1 = decode(a1, f.cm, f.base, {});
  const Lattice l2 = decode(a2, f.cm, f.base, {});
  std::vector<double> am1, am2;
  for (const auto& a : l1.arcs) am1.push_back(a.features.am_score);
  for (const auto& a : l2.arcs) am2.push_back(a.features.am_score);
  CHECK(am1 != am2);

  Utterance dev = u;
  dev.split = Split::Dev;
  CHECK_THROWS_AS(augment(dev, 1), std::invalid_argument);

  const auto expanded = expand_augmented(g.utterances);
  std::map<Split, int> before, after;
  for (const auto& x : g.utterances) ++before[x.split];
  for (const auto& x : expanded) ++after[x.split];
  CHECK(after[Split::Train] == 3 * before[Split::Train]);
  CHECK(after[Split::Cv] == 3 * before[Split::Cv]);
  CHECK(after[Split::Dev] == before[Split::Dev]);
  CHECK(after[Split::Eval] == before[Split::Eval]);
}

TEST_CASE("decode: degenerate beam, full product, determinism") {
  const auto& f = fixture();
  Utterance u{"u-0", {"hey", "device", "turn", "on", "the", "lights"}, Label::TT, Split::Dev};
  const ConfusionModel quiet = build_confusion_model(pooled_vocabulary(), 1.5, 0.0, 1);
  DecodeOptions one;
  one.beam = 1;
  const Lattice lb = decode(u, quiet, f.base, one);
  const Lattice lc = decode(u, quiet, f.chatter, one);
  CHECK(count_paths(lb, 10) == 1);
  CHECK(lb.num_nodes == 7);
  CHECK(has_path(lb, u.words));
  CHECK(count_paths(lc, 10) == 1);
  CHECK(has_path(lc, u.words));
  REQUIRE(lb.arcs.size() == lc.arcs.size());
  bool lm_differs = false;
  for (std::size_t i = 0; i < lb.arcs.size(); ++i) {
    CHECK(lb.arcs[i].src == lc.arcs[i].src);
    CHECK(lb.arcs[i].dst == lc.arcs[i].dst);
    CHECK(lb.arcs[i].features.am_score == lc.arcs[i].features.am_score);
    lm_differs |= lb.arcs[i].features.lm_score != lc.arcs[i].features.lm_score;
  }
  CHECK(lm_differs);

  // Three words with exactly one confusable each, unbounded beam.
  const std::vector<std::string> vocab = {"alpha", "alphx", "bravo", "bravx", "delta", "deltx"};
  const ConfusionModel cm = build_confusion_model(vocab, 1.5, 0.3, 5);
  for (const auto& w : vocab) REQUIRE(cm.candidates(w).size() == 2);
  const NGramModel lm = train({{"alpha", "bravo", "delta"}, {"alphx", "bravx", "deltx"}}, 3, 0.4, LmTag::Base);
  DecodeOptions wide;
  wide.beam = 1000;
  wide.max_arcs_per_step = 10;
  const Utterance v{"v", {"alpha", "bravo", "delta"}, Label::TT, Split::Eval};
  const Lattice full = decode(v, cm, lm, wide);
  CHECK(count_paths(full, 100) == 8);
  CHECK(enumerate_paths(full, 8).size() == 8);
  CHECK(decode(v, cm, lm, wide) == full);
}

TEST_CASE("decoded lattices are valid and contain the reference") {
  const auto& f = fixture();
  for (const auto& u : expand_augmented(f.corpora.utterances)) {
    for (const NGramModel* m : {&f.base, &f.chatter}) {
      const Lattice l = decode(u, f.cm, *m, {});
      CHECK_NOTHROW(validate(l));
      CHECK(has_path(l, u.words));
      CHECK(l.lm_tag == m->tag());
      for (const auto& a : l.arcs) {
        CHECK(a.features.am_score <= 0.0);
        CHECK(a.features.lm_score <= 0.0);
        CHECK(a.features.duration >= 1);
      }
    }
  }
}

TEST_CASE("dataset build, manifest and reload") {
  const auto& f = fixture();
  const fs::path dir = fs::temp_directory_path() / "ftm_test_dataset";
  fs::remove_all(dir);
  const auto built = build_dataset(f.corpora.utterances, f.cm, f.base, f.chatter, {}, dir / "a", 1);
  build_dataset(f.corpora.utterances, f.cm, f.base, f.chatter, {}, dir / "b", 1);
  CHECK(read_file(dir / "a" / "manifest.tsv") == read_file(dir / "b" / "manifest.tsv"));
  CHECK(read_file(dir / "a" / "lattices" / "train.base.lat") ==
        read_file(dir / "b" / "lattices" / "train.base.lat"));

  const auto manifest = read_manifest(read_file(dir / "a" / "manifest.tsv"));
  std::size_t expected = 0;
  for (Split sp : {Split::Train, Split::Cv, Split::Dev, Split::Eval}) {
    const SplitCounts c = scaled_split_counts(sp, 0.01);
    expected += static_cast<std::size_t>(c.tt + c.ft) * (sp == Split::Train || sp == Split::Cv ? 3 : 1);
  }
  CHECK(manifest.size() == expected);

  const auto loaded = load_dataset(dir / "a");
  REQUIRE(loaded.size() == built.size());
  std::set<std::string> ids;
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    ids.insert(loaded[i].pair.utterance_id);
    CHECK(loaded[i].pair.lattice_base == built[i].pair.lattice_base);
    CHECK(loaded[i].pair.lattice_chatter == built[i].pair.lattice_chatter);
    CHECK(loaded[i].pair.lattice_base.lm_tag == LmTag::Base);
    CHECK(loaded[i].pair.lattice_chatter.lm_tag == LmTag::Chatter);
  }
  CHECK(ids.size() == loaded.size());
  CHECK(select_split(loaded, Split::Dev).size() ==
        static_cast<std::size_t>(scaled_split_counts(Split::Dev, 0.01).tt + scaled_split_counts(Split::Dev, 0.01).ft));

  // Parallel decoding gives the same bytes.
  build_dataset(f.corpora.utterances, f.cm, f.base, f.chatter, {}, dir / "c", 3);
  CHECK(read_file(dir / "a" / "lattices" / "eval.chatter.lat") ==
        read_file(dir / "c" / "lattices" / "eval.chatter.lat"));
  fs::remove_all(dir);
}
