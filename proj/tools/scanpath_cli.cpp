#include "scanpath/ablation.hpp"
#include "scanpath/binary_io.hpp"
#include "scanpath/eval.hpp"
#include "scanpath/scangen.hpp"
#include "scanpath/synthetic.hpp"
#include "scanpath/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scanpath;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { ok = 0, usage = 1, data = 2, numeric = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string command_line;

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Manifest written next to every artifact: enough to rerun the command.
void write_manifest(const fs::path& path, json extra) {
  extra["command"] = command_line;
  extra["version"] = kVersion;
  write_json(path, extra);
}

fs::path manifest_for_file(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

json config_entry(const json& cfg) { return {{"config", cfg}, {"hash", hex(fnv1a(cfg.dump()))}}; }

std::vector<std::size_t> all_indices(const Corpus& corpus) {
  std::vector<std::size_t> idx(corpus.scanpaths.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

struct FoldSel {
  std::string plan;
  int fold = 0;
};

/// Train and test indices of the selected fold; without a plan, every
/// scanpath is on both sides.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> fold_indices(const Corpus& corpus, const FoldSel& sel) {
  if (sel.plan.empty()) return {all_indices(corpus), all_indices(corpus)};
  const SplitPlan plan = load_split_plan(sel.plan);
  if (sel.fold < 0 || static_cast<std::size_t>(sel.fold) >= plan.folds.size()) {
    throw UsageError("fold " + std::to_string(sel.fold) + " out of range (plan has " +
                     std::to_string(plan.folds.size()) + " folds)");
  }
  const Fold& f = plan.folds[static_cast<std::size_t>(sel.fold)];
  for (auto v : {&f.train, &f.test}) {
    for (std::size_t i : *v) {
      if (i >= corpus.scanpaths.size()) throw DataError("split plan references scanpath " + std::to_string(i) + " beyond the corpus");
    }
  }
  return {f.train, f.test};
}

std::optional<EmbeddingSet> maybe_embeddings(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_embeddings(path);
}

template <class S>
void require_embeddings(const Model<S>& model, const std::optional<EmbeddingSet>& emb) {
  if (!model.config.trainable_embeddings && !emb) {
    throw UsageError("this checkpoint uses frozen embeddings; pass --embeddings FILE");
  }
}

const EmbeddingSet* ptr(const std::optional<EmbeddingSet>& e) { return e ? &*e : nullptr; }

/// Calls fn.template operator()<S>() with S matching the checkpoint precision.
template <class Fn>
int with_checkpoint_precision(const std::string& path, Fn&& fn) {
  return checkpoint_precision(path) == Precision::f32 ? fn.template operator()<float>()
                                                      : fn.template operator()<double>();
}

void add_fold_options(CLI::App* cmd, FoldSel& sel) {
  cmd->add_option("--plan", sel.plan, "split plan JSON (omit to use every scanpath)");
  cmd->add_option("--fold", sel.fold, "fold number, 0-based")->check(CLI::NonNegativeNumber);
}

// ---------------------------------------------------------------------------
// split

struct SplitArgs {
  std::string corpus, kind = "new-sentence", out;
  int folds = 5;
  std::uint64_t seed = 0;
};

int run_split(const SplitArgs& a) {
  const Corpus corpus = load_corpus_dir(a.corpus);
  const SplitPlan plan = make_splits(corpus, parse_split_kind(a.kind), a.folds, a.seed);
  save_split_plan(a.out, plan);
  write_manifest(manifest_for_file(a.out), {{"seed", a.seed}, {"kind", a.kind}, {"folds", a.folds}});
  std::cout << "wrote " << plan.folds.size() << " folds to " << a.out << '\n';
  return ok;
}

// ---------------------------------------------------------------------------
// train / finetune

struct TrainArgs {
  std::string corpus, embeddings, config, train_config, out;
  FoldSel fold;
  bool trainable = false;
  int reader_embedding = 0;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;
};

struct Configs {
  ModelConfig model;
  TrainConfig train;
};

Configs load_configs(const TrainArgs& a) {
  Configs c;
  if (!a.config.empty()) c.model = read_json(a.config).get<ModelConfig>();
  if (!a.train_config.empty()) c.train = read_json(a.train_config).get<TrainConfig>();
  if (a.trainable) c.model.trainable_embeddings = true;
  if (a.reader_embedding) c.model.reader_embedding = a.reader_embedding;
  if (a.seed) c.train.seed = *a.seed;
  if (a.precision) c.train.precision = parse_precision(*a.precision);
  c.model.validate();
  c.train.validate();
  return c;
}

template <class S>
void save_run(const fs::path& dir, const Checkpoint<S>& ckpt, json manifest) {
  fs::create_directories(dir);
  save_checkpoint(dir / "checkpoint.eyckpt", ckpt);
  write_json(dir / "history.json", ckpt.history);
  manifest["model_config"] = config_entry(ckpt.model.config);
  manifest["train_config"] = config_entry(ckpt.train_config);
  manifest["seed"] = ckpt.train_config.seed;
  write_manifest(dir / "manifest.json", std::move(manifest));
}

template <class S>
Checkpoint<S> train_fold(const Corpus& corpus, const std::vector<std::size_t>& train_idx,
                         const std::optional<EmbeddingSet>& emb, const Configs& c) {
  if (!c.model.trainable_embeddings && !emb) throw UsageError("pass --embeddings FILE or --trainable-embeddings");
  return train<S>(corpus, train_idx, ptr(emb), c.model, c.train);
}

template <class S>
void report_training(const Checkpoint<S>& ckpt) {
  std::cout << "epochs " << ckpt.history.epochs.size() << ", best epoch " << ckpt.history.best_epoch
            << ", validation NLL " << std::setprecision(6) << ckpt.history.best_validation_nll << '\n';
}

int run_train(const TrainArgs& a) {
  const Configs c = load_configs(a);
  const Corpus corpus = load_corpus_dir(a.corpus);
  const auto [train_idx, test_idx] = fold_indices(corpus, a.fold);
  const auto emb = maybe_embeddings(a.embeddings);
  json manifest{{"corpus", a.corpus}, {"plan", a.fold.plan}, {"fold", a.fold.fold}};
  if (c.train.precision == Precision::f32) {
    auto ckpt = train_fold<float>(corpus, train_idx, emb, c);
    save_run(a.out, ckpt, manifest);
    report_training(ckpt);
  } else {
    auto ckpt = train_fold<double>(corpus, train_idx, emb, c);
    save_run(a.out, ckpt, manifest);
    report_training(ckpt);
  }
  return ok;
}

struct FinetuneArgs {
  std::string checkpoint, corpus, embeddings, train_config, out;
  std::size_t instances = 0;
  std::uint64_t seed = 0;
};

int run_finetune(const FinetuneArgs& a) {
  const Corpus corpus = load_corpus_dir(a.corpus);
  const auto emb = maybe_embeddings(a.embeddings);
  return with_checkpoint_precision(a.checkpoint, [&]<class S>() {
    const Checkpoint<S> base = load_checkpoint<S>(a.checkpoint);
    require_embeddings(base.model, emb);
    TrainConfig tc = a.train_config.empty() ? base.train_config : read_json(a.train_config).get<TrainConfig>();
    tc.seed = a.seed;
    const Checkpoint<S> tuned = fine_tune(base, corpus, ptr(emb), a.instances, tc);
    save_run(a.out, tuned,
             {{"base_checkpoint", a.checkpoint}, {"corpus", a.corpus}, {"instances", a.instances}});
    if (a.instances > 0) report_training(tuned);
    return static_cast<int>(ok);
  });
}

// ---------------------------------------------------------------------------
// eval / baseline

struct EvalArgs {
  std::string checkpoint, corpus, embeddings, metrics = "nll", out;
  FoldSel fold;
  std::uint64_t seed = 0;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int run_eval(const EvalArgs& a) {
  const Corpus corpus = load_corpus_dir(a.corpus);
  const auto test_idx = fold_indices(corpus, a.fold).second;
  const auto emb = maybe_embeddings(a.embeddings);
  const auto metrics = split_list(a.metrics);
  return with_checkpoint_precision(a.checkpoint, [&]<class S>() {
    const Checkpoint<S> ckpt = load_checkpoint<S>(a.checkpoint);
    require_embeddings(ckpt.model, emb);
    json report{{"checkpoint", a.checkpoint}, {"test_scanpaths", test_idx.size()}, {"max_len", ckpt.model.max_len}};
    for (const auto& m : metrics) {
      if (m == "nll") {
        const auto r = evaluate_nll(ModelPredictor<S>(ckpt, ptr(emb)), corpus, test_idx);
        report["nll"] = r;
        std::cout << "NLL " << r.mean << " ± " << r.standard_error << '\n';
      } else if (m == "nld") {
        const auto r = evaluate_nld(ckpt, corpus, test_idx, ptr(emb), a.seed);
        report["nld"] = r;
        std::cout << "NLD " << r.mean << " ± " << r.standard_error << '\n';
      } else if (m == "multimatch") {
        const auto r = evaluate_multimatch(ckpt, corpus, test_idx, ptr(emb), a.seed);
        report["multimatch"] = r;
        std::cout << "MultiMatch shape " << r.mean.shape << " length " << r.mean.length << " position "
                  << r.mean.position << '\n';
      } else {
        throw UsageError("unknown metric \"" + m + "\" (expected nll, nld, multimatch)");
      }
    }
    write_json(a.out, report);
    write_manifest(manifest_for_file(a.out), {{"seed", a.seed}, {"corpus", a.corpus}, {"plan", a.fold.plan},
                                              {"fold", a.fold.fold}, {"metrics", metrics}});
    return static_cast<int>(ok);
  });
}

struct BaselineArgs {
  std::string kind, corpus, out;
  FoldSel fold;
  double alpha = 0.5;
  int max_len = 0;
};

int run_baseline(const BaselineArgs& a) {
  const Corpus corpus = load_corpus_dir(a.corpus);
  const auto [train_idx, test_idx] = fold_indices(corpus, a.fold);
  const int M = a.max_len > 0 ? a.max_len : corpus_max_length(corpus);
  std::optional<ConstantPredictor> pred;
  if (a.kind == "uniform") {
    pred = uniform_predictor(M);
  } else if (a.kind == "train-label-dist") {
    pred = train_label_predictor(corpus, train_idx, M, a.alpha);
  } else {
    throw UsageError("unknown baseline \"" + a.kind + "\" (expected uniform or train-label-dist)");
  }
  const auto r = evaluate_nll(*pred, corpus, test_idx);
  json report{{"baseline", a.kind}, {"max_len", M}, {"test_scanpaths", test_idx.size()}, {"nll", r}};
  if (a.kind == "train-label-dist") report["alpha"] = a.alpha;
  write_json(a.out, report);
  write_manifest(manifest_for_file(a.out), {{"kind", a.kind}, {"corpus", a.corpus}, {"plan", a.fold.plan},
                                            {"fold", a.fold.fold}, {"alpha", a.alpha}, {"max_len", M}});
  std::cout << "NLL " << r.mean << " ± " << r.standard_error << '\n';
  return ok;
}

// ---------------------------------------------------------------------------
// generate / inspect

struct GenerateArgs {
  std::string checkpoint, sentences, embeddings, reader, out;
  int samples = 1, max_len = 0;
  std::uint64_t seed = 0;
  bool no_mask = false;
};

int run_generate(const GenerateArgs& a) {
  const auto sentences = load_sentences(a.sentences);
  const auto emb = maybe_embeddings(a.embeddings);
  return with_checkpoint_precision(a.checkpoint, [&]<class S>() {
    const Checkpoint<S> ckpt = load_checkpoint<S>(a.checkpoint);
    require_embeddings(ckpt.model, emb);
    GenerateOptions opts;
    opts.max_len = a.max_len;
    opts.mask_invalid = !a.no_mask;
    opts.reader_id = a.reader;
    std::vector<Scanpath> out;
    std::size_t flagged = 0;
    for (std::size_t k = 0; k < sentences.size(); ++k) {
      for (auto& g : generate(sentences[k], ptr(emb), ckpt, a.samples, sample_seed(a.seed, k), opts)) {
        flagged += g.out_of_range ? 1 : 0;
        out.push_back(std::move(g.scanpath));
      }
    }
    write_scanpaths(a.out, out);
    write_manifest(manifest_for_file(a.out), {{"seed", a.seed}, {"samples", a.samples}, {"mask_invalid", !a.no_mask},
                                              {"max_len", a.max_len}, {"checkpoint", a.checkpoint}});
    std::cout << "wrote " << out.size() << " scanpaths";
    if (flagged) std::cout << " (" << flagged << " ended by an out-of-sentence draw)";
    std::cout << '\n';
    return static_cast<int>(ok);
  });
}

struct InspectArgs {
  std::string checkpoint, corpus, embeddings, scanpath_id, buckets, out;
  FoldSel fold;
  double alpha = 0.5;
};

std::size_t find_scanpath(const Corpus& corpus, const std::string& id) {
  const auto colon = id.find(':');
  if (colon == std::string::npos) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(id, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != id.size() || v >= corpus.scanpaths.size()) {
      throw UsageError("--scanpath-id must be a scanpath index below " + std::to_string(corpus.scanpaths.size()) +
                       " or READER:SENTENCE");
    }
    return v;
  }
  const std::string reader = id.substr(0, colon), sentence = id.substr(colon + 1);
  for (std::size_t i = 0; i < corpus.scanpaths.size(); ++i) {
    if (corpus.scanpaths[i].reader_id == reader && corpus.scanpaths[i].sentence_id == sentence) return i;
  }
  throw DataError("no scanpath of reader \"" + reader + "\" on sentence \"" + sentence + "\"");
}

int run_inspect(const InspectArgs& a) {
  if (a.scanpath_id.empty() == a.buckets.empty()) throw UsageError("inspect needs exactly one of --scanpath-id, --buckets");
  const Corpus corpus = load_corpus_dir(a.corpus);
  const auto emb = maybe_embeddings(a.embeddings);
  return with_checkpoint_precision(a.checkpoint, [&]<class S>() {
    const Checkpoint<S> ckpt = load_checkpoint<S>(a.checkpoint);
    require_embeddings(ckpt.model, emb);
    if (!a.scanpath_id.empty()) {
      const Scanpath& sp = corpus.scanpaths.at(find_scanpath(corpus, a.scanpath_id));
      const Sentence& s = corpus.sentence_of(sp);
      write_heatmap_csv(a.out, s, attention_heatmap(s, sp, ptr(emb), ckpt));
      write_manifest(manifest_for_file(a.out), {{"checkpoint", a.checkpoint}, {"scanpath_id", a.scanpath_id}});
      std::cout << "wrote " << sp.fixations.size() + 1 << "x" << s.length() << " heatmap\n";
      return static_cast<int>(ok);
    }
    const auto [train_idx, test_idx] = fold_indices(corpus, a.fold);
    const auto buckets = parse_buckets(a.buckets, ckpt.model.max_len);
    const auto model_table = nll_by_saccade_range(ModelPredictor<S>(ckpt, ptr(emb)), corpus, test_idx, buckets);
    const auto base_table = nll_by_saccade_range(train_label_predictor(corpus, train_idx, ckpt.model.max_len, a.alpha),
                                                 corpus, test_idx, buckets);
    std::ofstream out(a.out);
    if (!out) throw DataError("cannot write " + a.out);
    out << "bucket,steps,model_nll,train_label_dist_nll\n" << std::setprecision(17);
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      out << '"' << model_table.rows[b].label << "\"," << model_table.rows[b].steps << ','
          << model_table.rows[b].mean_nll << ',' << base_table.rows[b].mean_nll << '\n';
    }
    write_manifest(manifest_for_file(a.out), {{"checkpoint", a.checkpoint}, {"buckets", a.buckets},
                                              {"plan", a.fold.plan}, {"fold", a.fold.fold}, {"alpha", a.alpha}});
    std::cout << "wrote " << buckets.size() << " buckets\n";
    return static_cast<int>(ok);
  });
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string policy, out;
  int readers = 10, sentences = 50, embedding_dim = 0;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  const auto policies = load_policies(a.policy);
  const SyntheticCorpus sc = generate_synthetic_corpus(policies, a.readers, a.sentences, a.seed);
  save_corpus_dir(sc.corpus, a.out);
  json info{{"entropy", sc.entropy}, {"scanpath_entropy", sc.scanpath_entropy}};
  write_json(fs::path(a.out) / "policy_entropy.json", info);
  if (a.embedding_dim > 0) {
    write_embeddings(fs::path(a.out) / "embeddings.eyemb", random_embeddings(sc.corpus, a.embedding_dim, a.seed));
  }
  write_manifest(fs::path(a.out) / "manifest.json", {{"seed", a.seed}, {"readers", a.readers},
                                                     {"sentences", a.sentences}, {"policy", read_json(a.policy)},
                                                     {"embedding_dim", a.embedding_dim}});
  std::cout << "wrote " << sc.corpus.scanpaths.size() << " scanpaths, policy entropy " << sc.entropy << " nats\n";
  return ok;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateArgs {
  TrainArgs train;
  std::string grid = "default";
};

template <class S>
int ablate_at(const AblateArgs& a, const Configs& base, const Corpus& corpus, const std::vector<std::size_t>& train_idx,
              const std::vector<std::size_t>& test_idx, const std::optional<EmbeddingSet>& emb) {
  const auto grid = load_ablation_grid(a.grid);
  const fs::path out_dir = a.train.out;
  fs::create_directories(out_dir);
  json rows = json::array();
  std::vector<double> reference;
  std::ofstream table(out_dir / "ablation.csv");
  table << "variant,nll,standard_error,t,p,best_epoch\n" << std::setprecision(10);
  for (const auto& v : grid) {
    Configs c = base;
    c.model = apply_overrides(base.model, v.overrides);
    const Checkpoint<S> ckpt = train_fold<S>(corpus, train_idx, emb, c);
    save_run(out_dir / v.name, ckpt, {{"variant", v.name}, {"overrides", v.overrides}, {"corpus", a.train.corpus},
                                      {"plan", a.train.fold.plan}, {"fold", a.train.fold.fold}});
    const auto r = evaluate_nll(ModelPredictor<S>(ckpt, ptr(emb)), corpus, test_idx);
    json row{{"variant", v.name}, {"overrides", v.overrides}, {"nll", r.mean}, {"standard_error", r.standard_error},
             {"best_epoch", ckpt.history.best_epoch}};
    TTest tt;
    if (reference.empty()) {
      reference = r.per_scanpath;
    } else if (reference.size() >= 2) {
      tt = paired_ttest(r.per_scanpath, reference);
      row["ttest_vs_first"] = tt;
    }
    rows.push_back(row);
    table << v.name << ',' << r.mean << ',' << r.standard_error << ',' << tt.t << ',' << tt.p << ','
          << ckpt.history.best_epoch << '\n';
    std::cout << v.name << ": NLL " << r.mean << " ± " << r.standard_error << '\n';
  }
  write_json(out_dir / "ablation.json", rows);
  write_manifest(out_dir / "manifest.json", {{"grid", a.grid}, {"variants", grid.size()},
                                             {"model_config", config_entry(base.model)},
                                             {"train_config", config_entry(base.train)}, {"seed", base.train.seed}});
  return ok;
}

int run_ablate(const AblateArgs& a) {
  const Configs c = load_configs(a.train);
  const Corpus corpus = load_corpus_dir(a.train.corpus);
  const auto [train_idx, test_idx] = fold_indices(corpus, a.train.fold);
  const auto emb = maybe_embeddings(a.train.embeddings);
  return c.train.precision == Precision::f32 ? ablate_at<float>(a, c, corpus, train_idx, test_idx, emb)
                                             : ablate_at<double>(a, c, corpus, train_idx, test_idx, emb);
}

void add_train_options(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--corpus", a.corpus, "directory with sentences.jsonl and scanpaths.jsonl")->required();
  add_fold_options(cmd, a.fold);
  cmd->add_option("--embeddings", a.embeddings, "EYEMB1 embedding file");
  cmd->add_flag("--trainable-embeddings", a.trainable, "learn a token lookup instead of frozen vectors");
  cmd->add_option("--config", a.config, "model config JSON");
  cmd->add_option("--train-config", a.train_config, "train config JSON");
  cmd->add_option("--reader-embedding", a.reader_embedding, "reader embedding width")
      ->check(CLI::IsMember({0, 16, 32, 64}));
  cmd->add_option("--seed", a.seed, "overrides the train config seed");
  cmd->add_option("--precision", a.precision, "f32 or f64");
  cmd->add_option("--out", a.out, "output directory")->required();
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) command_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"Scanpath prediction: train, evaluate and sample next-fixation models"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Eigen threads")->check(CLI::PositiveNumber);
  app.set_version_flag("--version", kVersion);

  SplitArgs split;
  auto* c_split = app.add_subcommand("split", "write cross-validation folds");
  c_split->add_option("--corpus", split.corpus)->required();
  c_split->add_option("--kind", split.kind)->check(CLI::IsMember({"new-sentence", "new-reader", "new-reader-new-sentence"}));
  c_split->add_option("--folds", split.folds)->check(CLI::PositiveNumber);
  c_split->add_option("--seed", split.seed);
  c_split->add_option("--out", split.out)->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train a model on one fold");
  add_train_options(c_train, tr);

  FinetuneArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "continue training on sampled instances of another corpus");
  c_ft->add_option("--checkpoint", ft.checkpoint)->required()->check(CLI::ExistingFile);
  c_ft->add_option("--corpus", ft.corpus)->required();
  c_ft->add_option("--instances", ft.instances)->required();
  c_ft->add_option("--seed", ft.seed);
  c_ft->add_option("--embeddings", ft.embeddings);
  c_ft->add_option("--train-config", ft.train_config);
  c_ft->add_option("--out", ft.out)->required();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on a fold's test set");
  c_eval->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--corpus", ev.corpus)->required();
  add_fold_options(c_eval, ev.fold);
  c_eval->add_option("--embeddings", ev.embeddings);
  c_eval->add_option("--metrics", ev.metrics, "comma list of nll, nld, multimatch");
  c_eval->add_option("--seed", ev.seed, "sampling seed for nld/multimatch");
  c_eval->add_option("--out", ev.out)->required();

  BaselineArgs bl;
  auto* c_bl = app.add_subcommand("baseline", "evaluate a constant baseline");
  c_bl->add_option("--kind", bl.kind)->required();
  c_bl->add_option("--corpus", bl.corpus)->required();
  add_fold_options(c_bl, bl.fold);
  c_bl->add_option("--alpha", bl.alpha, "additive smoothing for train-label-dist");
  c_bl->add_option("--max-len", bl.max_len, "M (default: longest sentence)");
  c_bl->add_option("--out", bl.out)->required();

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "sample scanpaths for sentences");
  c_gen->add_option("--checkpoint", gen.checkpoint)->required()->check(CLI::ExistingFile);
  c_gen->add_option("--sentences", gen.sentences)->required()->check(CLI::ExistingFile);
  c_gen->add_option("--embeddings", gen.embeddings);
  c_gen->add_option("--samples", gen.samples)->check(CLI::NonNegativeNumber);
  c_gen->add_option("--seed", gen.seed);
  c_gen->add_option("--max-len", gen.max_len, "fixations per path (default 4m)");
  c_gen->add_option("--reader", gen.reader, "reader id for reader-embedding models");
  c_gen->add_flag("--no-mask", gen.no_mask, "sample from the raw distribution");
  c_gen->add_option("--out", gen.out)->required();

  InspectArgs ins;
  auto* c_ins = app.add_subcommand("inspect", "attention heatmap or per-saccade-range NLL");
  c_ins->add_option("--checkpoint", ins.checkpoint)->required()->check(CLI::ExistingFile);
  c_ins->add_option("--corpus", ins.corpus)->required();
  c_ins->add_option("--embeddings", ins.embeddings);
  c_ins->add_option("--scanpath-id", ins.scanpath_id, "scanpath index or READER:SENTENCE");
  c_ins->add_option("--buckets", ins.buckets, "e.g. \"...-3,-2:-1,0,1:3,4:...,eos\"");
  add_fold_options(c_ins, ins.fold);
  c_ins->add_option("--alpha", ins.alpha);
  c_ins->add_option("--out", ins.out)->required();

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "write a synthetic corpus from a planted policy");
  c_syn->add_option("--policy", syn.policy)->required()->check(CLI::ExistingFile);
  c_syn->add_option("--readers", syn.readers)->check(CLI::PositiveNumber);
  c_syn->add_option("--sentences", syn.sentences)->check(CLI::PositiveNumber);
  c_syn->add_option("--seed", syn.seed);
  c_syn->add_option("--embedding-dim", syn.embedding_dim, "also write random embeddings of this width");
  c_syn->add_option("--out", syn.out)->required();

  AblateArgs abl;
  auto* c_abl = app.add_subcommand("ablate", "train and compare an ablation grid");
  add_train_options(c_abl, abl.train);
  c_abl->add_option("--grid", abl.grid, "grid JSON, or default / asymmetric");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version exit 0; every other parse failure is a usage error.
    return app.exit(e) == 0 ? ok : usage;
  }
  Eigen::setNbThreads(threads);

  try {
    if (*c_split) return run_split(split);
    if (*c_train) return run_train(tr);
    if (*c_ft) return run_finetune(ft);
    if (*c_eval) return run_eval(ev);
    if (*c_bl) return run_baseline(bl);
    if (*c_gen) return run_generate(gen);
    if (*c_ins) return run_inspect(ins);
    if (*c_syn) return run_synth(syn);
    if (*c_abl) return run_ablate(abl);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return numeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data;
  } catch (const io::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return data;
  } catch (const MissingEmbedding& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return usage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return data;
  }
  return usage;
}
