#include "scanpath/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace scanpath {

using nlohmann::json;

namespace {

std::string location(const std::filesystem::path& path, std::size_t line) {
  return path.filename().string() + ":" + std::to_string(line);
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw DataError(where + ": unknown key \"" + it.key() + "\"");
  }
}

template <class F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(location(path, lineno) + ": parse error: " + e.what());
    }
    if (!obj.is_object()) throw DataError(location(path, lineno) + ": expected a JSON object");
    try {
      f(obj, location(path, lineno));
    } catch (const json::exception& e) {
      throw DataError(location(path, lineno) + ": " + e.what());
    }
  }
}

}  // namespace

int utf8_length(const std::string& token) {
  int n = 0;
  for (unsigned char c : token) n += (c & 0xC0) != 0x80;
  return n;
}

std::vector<int> Scanpath::word_indices() const {
  std::vector<int> out;
  out.reserve(fixations.size());
  for (const auto& f : fixations) out.push_back(f.word_index);
  return out;
}

const Sentence& Corpus::sentence_of(const Scanpath& s) const {
  auto it = sentences.find(s.sentence_id);
  if (it == sentences.end()) throw DataError("scanpath references unknown sentence_id \"" + s.sentence_id + "\"");
  return it->second;
}

void validate_sentence(const Sentence& s) {
  if (s.tokens.empty()) throw DataError("sentence \"" + s.sentence_id + "\" has no tokens");
  if (s.token_lengths.size() != s.tokens.size()) {
    throw DataError("sentence \"" + s.sentence_id + "\": token_lengths has " + std::to_string(s.token_lengths.size()) +
                    " entries for " + std::to_string(s.tokens.size()) + " tokens");
  }
  for (int len : s.token_lengths) {
    if (len < 1) throw DataError("sentence \"" + s.sentence_id + "\": token length must be >= 1");
  }
}

void validate_scanpath(const Scanpath& sp, const Sentence& s) {
  if (sp.fixations.empty()) throw DataError("scanpath of reader \"" + sp.reader_id + "\" has no fixations");
  const int m = s.length();
  for (const auto& f : sp.fixations) {
    if (f.word_index < 1 || f.word_index > m) {
      throw DataError("fixation word_index " + std::to_string(f.word_index) + " out of range for sentence \"" +
                      s.sentence_id + "\" with m=" + std::to_string(m));
    }
    if (!std::isfinite(f.duration) || f.duration < 0.0) {
      throw DataError("fixation duration must be finite and >= 0 (sentence \"" + s.sentence_id + "\")");
    }
    if (!(f.landing_pos >= 0.0 && f.landing_pos <= 1.0)) {
      throw DataError("fixation landing position must lie in [0, 1] (sentence \"" + s.sentence_id + "\")");
    }
  }
}

void Corpus::validate() const {
  for (const auto& [id, s] : sentences) {
    if (id != s.sentence_id) throw DataError("sentence map key \"" + id + "\" differs from its sentence_id");
    validate_sentence(s);
  }
  for (const auto& sp : scanpaths) validate_scanpath(sp, sentence_of(sp));
}

std::vector<Sentence> load_sentences(const std::filesystem::path& path) {
  std::vector<Sentence> out;
  for_each_line(path, [&](const json& obj, const std::string& where) {
    reject_unknown_keys(obj, {"sentence_id", "tokens", "token_lengths"}, where);
    if (!obj.contains("sentence_id") || !obj.contains("tokens")) {
      throw DataError(where + ": sentence needs \"sentence_id\" and \"tokens\"");
    }
    Sentence s;
    s.sentence_id = obj.at("sentence_id").get<std::string>();
    s.tokens = obj.at("tokens").get<std::vector<std::string>>();
    if (obj.contains("token_lengths")) {
      s.token_lengths = obj.at("token_lengths").get<std::vector<int>>();
    } else {
      for (const auto& t : s.tokens) s.token_lengths.push_back(std::max(1, utf8_length(t)));
    }
    try {
      validate_sentence(s);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    out.push_back(std::move(s));
  });
  return out;
}

std::vector<Scanpath> load_scanpaths(const std::filesystem::path& path) {
  std::vector<Scanpath> out;
  for_each_line(path, [&](const json& obj, const std::string& where) {
    reject_unknown_keys(obj, {"reader_id", "sentence_id", "fixations", "synthetic"}, where);
    if (!obj.contains("reader_id") || !obj.contains("sentence_id") || !obj.contains("fixations")) {
      throw DataError(where + ": scanpath needs \"reader_id\", \"sentence_id\" and \"fixations\"");
    }
    Scanpath sp;
    sp.reader_id = obj.at("reader_id").get<std::string>();
    sp.sentence_id = obj.at("sentence_id").get<std::string>();
    sp.synthetic = obj.value("synthetic", false);
    for (const auto& f : obj.at("fixations")) {
      reject_unknown_keys(f, {"w", "dur", "land"}, where);
      if (!f.contains("w")) throw DataError(where + ": fixation needs \"w\"");
      Fixation fx;
      fx.word_index = f.at("w").get<int>();
      fx.duration = f.value("dur", 0.0);
      fx.landing_pos = f.value("land", 0.0);
      sp.fixations.push_back(fx);
    }
    if (sp.fixations.empty()) throw DataError(where + ": scanpath has no fixations");
    sp.fixations.shrink_to_fit();
    out.push_back(std::move(sp));
  });
  return out;
}

Corpus load_corpus(const std::filesystem::path& sentences_path, const std::filesystem::path& scanpaths_path) {
  Corpus c;
  for (auto& s : load_sentences(sentences_path)) {
    const std::string id = s.sentence_id;
    if (!c.sentences.emplace(id, std::move(s)).second) throw DataError("duplicate sentence_id \"" + id + "\"");
  }
  c.scanpaths = load_scanpaths(scanpaths_path);
  for (std::size_t i = 0; i < c.scanpaths.size(); ++i) {
    const auto& sp = c.scanpaths[i];
    auto it = c.sentences.find(sp.sentence_id);
    if (it == c.sentences.end()) {
      throw DataError(location(scanpaths_path, i + 1) + ": unknown sentence_id \"" + sp.sentence_id + "\"");
    }
    try {
      validate_scanpath(sp, it->second);
    } catch (const DataError& e) {
      throw DataError(location(scanpaths_path, i + 1) + ": " + e.what());
    }
  }
  return c;
}

Corpus load_corpus_dir(const std::filesystem::path& dir) {
  return load_corpus(dir / "sentences.jsonl", dir / "scanpaths.jsonl");
}

void write_sentences(const std::filesystem::path& path, const std::vector<Sentence>& sentences) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : sentences) {
    json obj{{"sentence_id", s.sentence_id}, {"tokens", s.tokens}, {"token_lengths", s.token_lengths}};
    out << obj.dump() << '\n';
  }
}

void write_scanpaths(const std::filesystem::path& path, const std::vector<Scanpath>& scanpaths) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& sp : scanpaths) {
    json fix = json::array();
    for (const auto& f : sp.fixations) fix.push_back({{"w", f.word_index}, {"dur", f.duration}, {"land", f.landing_pos}});
    json obj{{"reader_id", sp.reader_id}, {"sentence_id", sp.sentence_id}, {"fixations", std::move(fix)}};
    if (sp.synthetic) obj["synthetic"] = true;
    out << obj.dump() << '\n';
  }
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& sentences_path,
                 const std::filesystem::path& scanpaths_path) {
  std::vector<Sentence> ss;
  for (const auto& [_, s] : corpus.sentences) ss.push_back(s);
  write_sentences(sentences_path, ss);
  write_scanpaths(scanpaths_path, corpus.scanpaths);
}

void save_corpus_dir(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_corpus(corpus, dir / "sentences.jsonl", dir / "scanpaths.jsonl");
}

// ---------------------------------------------------------------------------

namespace {

void mean_std(const std::vector<double>& xs, double& mean, double& std) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  mean = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  std = std::sqrt(ss / static_cast<double>(xs.size()));
}

}  // namespace

NormStats compute_norm_stats(const Corpus& corpus, std::span<const std::size_t> train_indices) {
  if (train_indices.empty()) throw DataError("compute_norm_stats: empty training set");
  std::vector<double> durations, landings, lengths;
  std::set<std::string> seen;
  for (std::size_t idx : train_indices) {
    const Scanpath& sp = corpus.scanpaths.at(idx);
    for (const auto& f : sp.fixations) {
      durations.push_back(f.duration);
      landings.push_back(f.landing_pos);
    }
    if (seen.insert(sp.sentence_id).second) {
      for (int len : corpus.sentence_of(sp).token_lengths) lengths.push_back(len);
    }
  }
  NormStats s;
  mean_std(durations, s.duration_mean, s.duration_std);
  mean_std(landings, s.landing_mean, s.landing_std);
  mean_std(lengths, s.wordlen_mean, s.wordlen_std);
  return s;
}

double zscore(double value, double mean, double std) {
  if (std == 0.0) return 0.0;
  return (value - mean) / std;
}

void to_json(json& j, const NormStats& s) {
  j = json{{"duration_mean", s.duration_mean}, {"duration_std", s.duration_std},
           {"landing_mean", s.landing_mean},   {"landing_std", s.landing_std},
           {"wordlen_mean", s.wordlen_mean},   {"wordlen_std", s.wordlen_std}};
}

void from_json(const json& j, NormStats& s) {
  j.at("duration_mean").get_to(s.duration_mean);
  j.at("duration_std").get_to(s.duration_std);
  j.at("landing_mean").get_to(s.landing_mean);
  j.at("landing_std").get_to(s.landing_std);
  j.at("wordlen_mean").get_to(s.wordlen_mean);
  j.at("wordlen_std").get_to(s.wordlen_std);
}

// ---------------------------------------------------------------------------

std::string to_string(SplitKind kind) {
  switch (kind) {
    case SplitKind::new_sentence:
      return "new-sentence";
    case SplitKind::new_reader:
      return "new-reader";
    case SplitKind::new_reader_new_sentence:
      return "new-reader-new-sentence";
  }
  return "?";
}

SplitKind parse_split_kind(const std::string& text) {
  std::string t = text;
  std::replace(t.begin(), t.end(), '_', '-');
  if (t == "new-sentence") return SplitKind::new_sentence;
  if (t == "new-reader") return SplitKind::new_reader;
  if (t == "new-reader-new-sentence") return SplitKind::new_reader_new_sentence;
  throw std::invalid_argument("unknown split kind \"" + text + "\"");
}

namespace {

std::vector<std::string> distinct_ids(const Corpus& corpus, bool readers) {
  std::set<std::string> ids;
  for (const auto& sp : corpus.scanpaths) ids.insert(readers ? sp.reader_id : sp.sentence_id);
  return {ids.begin(), ids.end()};
}

}  // namespace

SplitPlan make_splits(const Corpus& corpus, SplitKind kind, int folds, std::uint64_t seed) {
  if (folds < 2) throw std::invalid_argument("make_splits: need at least 2 folds");
  SplitPlan plan;
  plan.kind = kind;
  plan.seed = seed;
  std::mt19937_64 rng(seed);

  if (kind != SplitKind::new_reader_new_sentence) {
    const bool by_reader = kind == SplitKind::new_reader;
    std::vector<std::string> ids = distinct_ids(corpus, by_reader);
    if (static_cast<int>(ids.size()) < folds) {
      throw DataError("make_splits: " + std::to_string(ids.size()) + " distinct " +
                      (by_reader ? "reader" : "sentence") + " IDs for " + std::to_string(folds) + " folds");
    }
    std::shuffle(ids.begin(), ids.end(), rng);
    std::map<std::string, int> fold_of;
    const std::size_t n = ids.size();
    for (int k = 0; k < folds; ++k) {
      const std::size_t lo = n * static_cast<std::size_t>(k) / static_cast<std::size_t>(folds);
      const std::size_t hi = n * static_cast<std::size_t>(k + 1) / static_cast<std::size_t>(folds);
      for (std::size_t i = lo; i < hi; ++i) fold_of[ids[i]] = k;
    }
    plan.folds.resize(static_cast<std::size_t>(folds));
    for (std::size_t i = 0; i < corpus.scanpaths.size(); ++i) {
      const auto& sp = corpus.scanpaths[i];
      const int k = fold_of.at(by_reader ? sp.reader_id : sp.sentence_id);
      for (int f = 0; f < folds; ++f) {
        (f == k ? plan.folds[static_cast<std::size_t>(f)].test : plan.folds[static_cast<std::size_t>(f)].train).push_back(i);
      }
    }
    return plan;
  }

  std::vector<std::string> readers = distinct_ids(corpus, true);
  std::vector<std::string> sentences = distinct_ids(corpus, false);
  auto holdout = [](std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n))));
  };
  if (readers.size() < 2 || sentences.size() < 2) {
    throw DataError("make_splits: new-reader-new-sentence needs at least 2 readers and 2 sentences");
  }
  for (int k = 0; k < folds; ++k) {
    std::shuffle(readers.begin(), readers.end(), rng);
    std::shuffle(sentences.begin(), sentences.end(), rng);
    std::set<std::string> test_readers(readers.begin(), readers.begin() + static_cast<long>(holdout(readers.size())));
    std::set<std::string> test_sentences(sentences.begin(),
                                         sentences.begin() + static_cast<long>(holdout(sentences.size())));
    Fold fold;
    for (std::size_t i = 0; i < corpus.scanpaths.size(); ++i) {
      const bool r = test_readers.count(corpus.scanpaths[i].reader_id) != 0;
      const bool s = test_sentences.count(corpus.scanpaths[i].sentence_id) != 0;
      if (r && s) fold.test.push_back(i);
      if (!r && !s) fold.train.push_back(i);
    }
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

void to_json(json& j, const SplitPlan& p) {
  json folds = json::array();
  for (const auto& f : p.folds) folds.push_back({{"train", f.train}, {"test", f.test}});
  j = json{{"kind", to_string(p.kind)}, {"seed", p.seed}, {"folds", std::move(folds)}};
}

void from_json(const json& j, SplitPlan& p) {
  p.kind = parse_split_kind(j.at("kind").get<std::string>());
  p.seed = j.at("seed").get<std::uint64_t>();
  p.folds.clear();
  for (const auto& f : j.at("folds")) {
    p.folds.push_back({f.at("train").get<std::vector<std::size_t>>(), f.at("test").get<std::vector<std::size_t>>()});
  }
}

SplitPlan load_split_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in).get<SplitPlan>();
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_split_plan(const std::filesystem::path& path, const SplitPlan& plan) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << json(plan).dump(1) << '\n';
}

}  // namespace scanpath
