#include "ftm/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "ftm/decodesim.hpp"
#include "ftm/ensemble.hpp"
#include "ftm/io.hpp"
#include "ftm/lm.hpp"
#include "ftm/lrnn.hpp"
#include "ftm/lrnn_train.hpp"
#include "ftm/metrics.hpp"

namespace fs = std::filesystem;

namespace ftm {

fs::path RunLayout::corpus(LmTag tag, bool heldout) const {
  return data() / ((heldout ? "heldout." : "corpus.") + std::string(tag == LmTag::Base ? "in_domain" : "chatter") + ".txt");
}

fs::path RunLayout::model(LmTag tag) const {
  return root / "models" / (tag == LmTag::Base ? "base.nglm" : "chatter.nglm");
}

fs::path RunLayout::checkpoint(const std::string& variant) const {
  return root / "ckpt" / (variant + ".ckpt");
}

fs::path RunLayout::epoch_log(const std::string& variant) const {
  return root / "logs" / (variant + ".epochs.tsv");
}

std::string display_name(const std::string& variant) {
  static const std::map<std::string, std::string> names = {
      {"base-single", "BaseLM Bi-LRNN"},
      {"chatter-single", "ChatterLM Bi-LRNN"},
      {"ratio", "Probability ratio"},
      {"score-merge", "Score merge"},
      {"embed-merge", "Embedding merge"},
      {"parallel-full-random", "Parallel Bi-LRNN (random init)"},
      {"parallel-full-pretrained", "Parallel Bi-LRNN (pretrained init)"},
      {"moe", "Mixture of experts"},
  };
  const auto it = names.find(variant);
  return it == names.end() ? variant : it->second;
}

namespace {

// The first command to touch a run directory records its configuration;
// later commands must agree with it.
RunLayout open_run(const RunConfig& cfg) {
  RunLayout run{cfg.run_dir};
  const std::string text = serialize_config(cfg);
  if (fs::exists(run.config())) {
    if (read_file(run.config()) != text) {
      throw std::runtime_error(run.config().string() +
                               " was written with a different configuration; use a fresh run_dir");
    }
  } else {
    write_file_atomic(run.config(), text);
  }
  return run;
}

void require(const fs::path& p, const std::string& stage) {
  if (!fs::exists(p)) {
    throw MissingArtifact("missing " + p.string() + "; run `ftmkit " + stage + "` first");
  }
}

CorpusSizes corpus_sizes(const RunConfig& cfg) {
  CorpusSizes s;
  s.scale = cfg.scale;
  s.lm_sentences = cfg.lm_sentences;
  s.heldout_sentences = cfg.heldout_sentences;
  s.near_miss_rate = cfg.near_miss_rate;
  s.far_field_rate = cfg.far_field_rate;
  s.far_field_sigma = cfg.far_field_sigma;
  return s;
}

ConfusionModel confusion_model(const RunConfig& cfg) {
  return build_confusion_model(pooled_vocabulary(), cfg.confusion_lambda, cfg.confusion_sigma,
                               cfg.seed);
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.epochs = cfg.epochs;
  t.batch_size = cfg.batch_size;
  t.learning_rate = cfg.learning_rate;
  t.beta1 = cfg.beta1;
  t.beta2 = cfg.beta2;
  t.eps = cfg.adam_eps;
  t.seed = cfg.seed;
  t.target_fs = cfg.target_fs;
  t.threads = default_thread_count();
  return t;
}

// Initialization seeds per model, distinct so the two encoders start apart.
std::uint64_t init_seed(const RunConfig& cfg, const std::string& variant) {
  if (variant == "base-single") return cfg.seed * 1000 + 1;
  if (variant == "chatter-single") return cfg.seed * 1000 + 2;
  return cfg.seed * 1000 + 3;
}

const char* tag_name(LmTag t) { return t == LmTag::Base ? "base" : "chatter"; }

NGramModel fit_lm(const RunConfig& cfg, const RunLayout& run, LmTag which, std::ostream& log) {
  require(run.corpus(which, false), "gen-data");
  const Corpus train_text = read_corpus(read_file(run.corpus(which, false)));
  NGramModel m = train(train_text, cfg.lm_order, cfg.lm_discount, which);
  write_file_atomic(run.model(which), write_model(m));
  const Corpus in_held = read_corpus(read_file(run.corpus(LmTag::Base, true)));
  const Corpus out_held = read_corpus(read_file(run.corpus(LmTag::Chatter, true)));
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%s LM: vocab %d, perplexity in-domain %.3f, chatter %.3f\n",
                tag_name(which), m.vocab_size(), perplexity(m, in_held), perplexity(m, out_held));
  log << buf;
  return m;
}

std::vector<Sample> decode_all(const RunConfig& cfg, const RunLayout& run, const NGramModel& base,
                               const NGramModel& chatter, std::ostream& log) {
  const std::vector<Utterance> source = read_utterances(read_file(run.utterances()));
  DecodeOptions opts;
  opts.beam = static_cast<std::size_t>(cfg.beam);
  opts.max_arcs_per_step = static_cast<std::size_t>(cfg.max_arcs_per_step);
  std::vector<Sample> data =
      build_dataset(source, confusion_model(cfg), base, chatter, opts, run.data(), default_thread_count());
  log << "decoded " << data.size() << " lattice pairs\n";
  return data;
}

std::vector<Sample> load_data(const RunLayout& run) {
  require(run.manifest(), "decode");
  return load_dataset(run.data());
}

std::string fnv_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

LrnnParams load_single(const RunLayout& run, const std::string& variant) {
  require(run.checkpoint(variant), "train-ftm --variant " + variant);
  return read_lrnn(read_file(run.checkpoint(variant)));
}

// Embeddings of the frozen single models for one split, reused while both
// single-model checkpoints stay unchanged.
std::vector<EmbeddingRecord> frozen_records(const RunLayout& run, const LrnnParams& base,
                                            const LrnnParams& chatter,
                                            const std::vector<const Sample*>& split,
                                            const std::string& split_name, std::ostream& log) {
  const std::string key = fnv_hex(write_lrnn(base) + write_lrnn(chatter)) + "\n";
  const fs::path file = run.cache() / (split_name + ".emb");
  const fs::path stamp = run.cache() / (split_name + ".key");
  if (fs::exists(file) && fs::exists(stamp) && read_file(stamp) == key) {
    return read_embedding_cache(read_file(file));
  }
  const int threads = default_thread_count();
  const auto records = compute_embeddings(base, chatter, pair_samples(split, threads), threads);
  write_file_atomic(file, write_embedding_cache(records));
  write_file_atomic(stamp, key);
  log << "cached " << records.size() << " " << split_name << " embeddings\n";
  return read_embedding_cache(read_file(file));
}

void log_epochs(const std::vector<EpochLog>& epochs, int best, std::ostream& log) {
  char buf[160];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof(buf), "  epoch %d  loss %.5f  cv FT %.4f  cv AUC %.6f%s\n", e.epoch,
                  e.train_loss, e.cv_ft, e.cv_auc, e.epoch == best ? "  *" : "");
    log << buf;
  }
}

// Scores of one trained variant on a split, in manifest order.
std::vector<ScoredSample> score_variant(const RunLayout& run, const std::string& variant,
                                        const std::vector<const Sample*>& split) {
  const int threads = default_thread_count();
  require(run.checkpoint(variant), "train-ftm --variant " + variant);
  const std::string text = read_file(run.checkpoint(variant));
  if (text.rfind("LRNN", 0) == 0) {
    const LmTag side = variant == "chatter-single" ? LmTag::Chatter : LmTag::Base;
    return predict_scores(read_lrnn(text), lattice_samples(split, side, threads), threads);
  }
  return predict_ensemble(read_ensemble(text), pair_samples(split, threads), threads);
}

std::string scores_tsv(const std::vector<ScoredSample>& scores) {
  std::string out = "id\tlabel\ty\n";
  char buf[64];
  for (const auto& s : scores) {
    std::snprintf(buf, sizeof(buf), "\t%.17g\n", s.y);
    out += s.id + "\t" + to_string(s.label) + buf;
  }
  return out;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * v);
  return buf;
}

std::string relative_reduction(double from, double to) {
  if (from <= 0.0) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * (from - to) / from);
  return buf;
}

}  // namespace

void gen_data(const RunConfig& cfg, std::ostream& log) {
  const RunLayout run = open_run(cfg);
  const GeneratedCorpora g = gen_corpora(cfg.seed, corpus_sizes(cfg));
  write_file_atomic(run.corpus(LmTag::Base, false), write_corpus(g.in_domain));
  write_file_atomic(run.corpus(LmTag::Chatter, false), write_corpus(g.chatter));
  write_file_atomic(run.corpus(LmTag::Base, true), write_corpus(g.in_domain_heldout));
  write_file_atomic(run.corpus(LmTag::Chatter, true), write_corpus(g.chatter_heldout));
  write_file_atomic(run.utterances(), write_utterances(g.utterances));
  log << "generated " << g.utterances.size() << " utterances\n";
  const NGramModel base = fit_lm(cfg, run, LmTag::Base, log);
  const NGramModel chatter = fit_lm(cfg, run, LmTag::Chatter, log);
  decode_all(cfg, run, base, chatter, log);
}

void train_lm(const RunConfig& cfg, LmTag which, std::ostream& log) {
  fit_lm(cfg, open_run(cfg), which, log);
}

void decode_data(const RunConfig& cfg, std::ostream& log) {
  const RunLayout run = open_run(cfg);
  require(run.utterances(), "gen-data");
  require(run.model(LmTag::Base), "train-lm --variant base");
  require(run.model(LmTag::Chatter), "train-lm --variant chatter");
  decode_all(cfg, run, read_model(read_file(run.model(LmTag::Base))),
             read_model(read_file(run.model(LmTag::Chatter))), log);
}

void train_ftm(const RunConfig& cfg, const std::string& variant, std::ostream& log) {
  if (!is_known_variant(variant)) throw std::invalid_argument("unknown variant '" + variant + "'");
  const RunLayout run = open_run(cfg);
  const std::vector<Sample> data = load_data(run);
  const auto train_split = select_split(data, Split::Train);
  const auto cv_split = select_split(data, Split::Cv);
  const TrainConfig tc = train_config(cfg);
  const int threads = tc.threads;
  log << "training " << variant << " on " << train_split.size() << " train / " << cv_split.size()
      << " cv samples\n";

  auto save = [&](const std::string& ckpt, const std::vector<EpochLog>& epochs, int best) {
    write_file_atomic(run.checkpoint(variant), ckpt);
    write_file_atomic(run.epoch_log(variant), write_epoch_log(epochs, best));
    log_epochs(epochs, best, log);
  };

  if (variant == "base-single" || variant == "chatter-single") {
    const LmTag side = variant == "base-single" ? LmTag::Base : LmTag::Chatter;
    const LrnnParams init =
        init_params(cfg.hidden_dim, cfg.head_hidden, 2 * cfg.hidden_dim, init_seed(cfg, variant));
    const auto fr = train(init, lattice_samples(train_split, side, threads),
                          lattice_samples(cv_split, side, threads), tc);
    save(write_lrnn(fr.best), fr.log, fr.best_epoch);
  } else if (variant == "ratio") {
    std::size_t tt = 0;
    for (const Sample* s : train_split) tt += s->pair.label == Label::TT;
    EnsembleParams p;
    p.variant = Variant::Ratio;
    p.prior = DomainPrior::from_in_domain(static_cast<double>(tt) / static_cast<double>(train_split.size()));
    write_file_atomic(run.checkpoint(variant), write_ensemble(p));
    log << "prior p_in = " << p.prior.p_in << "\n";
  } else if (variant == "score-merge" || variant == "embed-merge") {
    const LrnnParams base = load_single(run, "base-single");
    const LrnnParams chatter = load_single(run, "chatter-single");
    const auto tr = frozen_records(run, base, chatter, train_split, "train", log);
    const auto cv = frozen_records(run, base, chatter, cv_split, "cv", log);
    TrainConfig head_cfg = tc;
    head_cfg.seed = init_seed(cfg, variant);
    const auto fr = train_frozen_head(
        variant == "score-merge" ? Variant::ScoreMerge : Variant::EmbedMerge, base, chatter, tr, cv,
        cfg.head_hidden, head_cfg);
    save(write_ensemble(fr.best), fr.log, fr.best_epoch);
  } else {
    const auto tr = pair_samples(train_split, threads);
    const auto cv = pair_samples(cv_split, threads);
    ParallelOptions opts;
    opts.hidden_dim = cfg.hidden_dim;
    opts.head_hidden = cfg.head_hidden;
    opts.encoder_lr_scale = cfg.encoder_lr_scale;
    TrainConfig ens_cfg = tc;
    ens_cfg.seed = init_seed(cfg, variant);
    FitResult<EnsembleParams> fr;
    if (variant == "moe") {
      fr = moe_train(tr, cv, opts, ens_cfg);
    } else if (variant == "parallel-full-random") {
      fr = parallel_full_train(ParallelInit::Random, nullptr, nullptr, tr, cv, opts, ens_cfg);
    } else {
      const LrnnParams base = load_single(run, "base-single");
      const LrnnParams chatter = load_single(run, "chatter-single");
      fr = parallel_full_train(ParallelInit::Pretrained, &base, &chatter, tr, cv, opts, ens_cfg);
    }
    save(write_ensemble(fr.best), fr.log, fr.best_epoch);
  }
}

void evaluate(const RunConfig& cfg, std::ostream& log) {
  const RunLayout run = open_run(cfg);
  for (const auto& v : cfg.variants) require(run.checkpoint(v), "train-ftm --variant " + v);
  const std::vector<Sample> data = load_data(run);
  const auto dev = select_split(data, Split::Dev);
  const auto eval = select_split(data, Split::Eval);

  std::vector<SummaryRow> rows;
  std::vector<std::pair<std::string, DetCurve>> curves;
  std::map<std::string, std::pair<std::vector<ScoredSample>, double>> eval_at_threshold;
  for (const auto& v : cfg.variants) {
    const auto dev_scores = score_variant(run, v, dev);
    const auto eval_scores = score_variant(run, v, eval);
    const FtAtFs r = ft_at_fs(dev_scores, eval_scores, cfg.target_fs);
    const DetCurve curve = det_curve(eval_scores);
    rows.push_back({v, r.ft_eval, auc_region(curve)});
    curves.emplace_back(v, curve);
    write_file_atomic(run.eval() / ("det_" + v + ".csv"), det_csv(curve));
    write_file_atomic(run.eval() / ("scores_" + v + ".dev.tsv"), scores_tsv(dev_scores));
    write_file_atomic(run.eval() / ("scores_" + v + ".eval.tsv"), scores_tsv(eval_scores));
    eval_at_threshold[v] = {eval_scores, r.threshold};
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%-26s FT@FS=%.1f%% %7.3f%%  AUC %.6f%s\n", v.c_str(),
                  100.0 * cfg.target_fs, 100.0 * r.ft_eval, rows.back().auc,
                  r.achievable ? "" : "  (target FS unachievable on dev)");
    log << buf;
  }
  write_file_atomic(run.summary(), summary_csv(rows));
  write_file_atomic(run.eval() / "det.svg", det_svg(curves));
  if (eval_at_threshold.count("base-single") && eval_at_threshold.count("chatter-single")) {
    const auto& a = eval_at_threshold["base-single"];
    const auto& b = eval_at_threshold["chatter-single"];
    const ErrorMatrix m = error_matrix(a.first, b.first, a.second, b.second);
    write_file_atomic(run.eval() / "error_matrix.csv", error_matrix_csv(m, "base", "chatter"));
  }
}

void report(const RunConfig& cfg, std::ostream& log) {
  const RunLayout run{cfg.run_dir};
  std::vector<std::string> missing;
  if (!fs::exists(run.manifest())) missing.push_back("gen-data (or decode): " + run.manifest().string());
  for (const auto& v : cfg.variants) {
    if (!fs::exists(run.checkpoint(v))) {
      missing.push_back("train-ftm --variant " + v + ": " + run.checkpoint(v).string());
    }
  }
  if (!fs::exists(run.summary())) missing.push_back("eval: " + run.summary().string());
  if (!missing.empty()) {
    std::string msg = "cannot build the report; run these stages first:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw MissingArtifact(msg);
  }
  open_run(cfg);
  const auto rows = read_summary_csv(read_file(run.summary()));
  std::map<std::string, double> ft;
  for (const auto& r : rows) ft[r.classifier] = r.ft_at_fs;

  std::ostringstream md;
  md << "# False-trigger mitigation results\n\n";
  md << "FT rate on eval at the dev threshold for FS = " << percent(cfg.target_fs)
     << "; AUC over FS in [0, 1%].\n\n";
  md << "| Classifier | FT at FS=" << percent(cfg.target_fs) << " | AUC |\n|---|---|---|\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.auc);
    md << "| " << display_name(r.classifier) << " | " << percent(r.ft_at_fs) << " | " << buf << " |\n";
  }
  md << "\n## Relative FT reduction\n\n";
  auto reduction = [&](const std::string& from, const std::string& to) {
    if (!ft.count(from) || !ft.count(to)) return;
    md << "- " << display_name(to) << " vs " << display_name(from) << ": "
       << relative_reduction(ft[from], ft[to]) << "\n";
  };
  reduction("base-single", "chatter-single");
  for (const auto& r : rows) {
    if (r.classifier == "base-single" || r.classifier == "chatter-single") continue;
    reduction("base-single", r.classifier);
    reduction("chatter-single", r.classifier);
  }
  const fs::path matrix = run.eval() / "error_matrix.csv";
  if (fs::exists(matrix)) {
    md << "\n## Error matrix (BaseLM vs ChatterLM Bi-LRNN, eval)\n\n```\n" << read_file(matrix) << "```\n";
  }
  write_file_atomic(run.report(), md.str());
  log << md.str();
}

void run_pipeline(const RunConfig& cfg, std::ostream& log) {
  gen_data(cfg, log);
  for (const auto& v : known_variants()) {
    if (std::find(cfg.variants.begin(), cfg.variants.end(), v) != cfg.variants.end()) {
      train_ftm(cfg, v, log);
    }
  }
  evaluate(cfg, log);
  report(cfg, log);
}

}  // namespace ftm
