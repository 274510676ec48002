#pragma once

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scanpath {

/// Raised for malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Sentence {
  std::string sentence_id;
  std::vector<std::string> tokens;
  std::vector<int> token_lengths;

  int length() const { return static_cast<int>(tokens.size()); }
};

struct Fixation {
  int word_index = 1;  // 1-based
  double duration = 0.0;
  double landing_pos = 0.0;
};

struct Scanpath {
  std::string reader_id;
  std::string sentence_id;
  std::vector<Fixation> fixations;
  bool synthetic = false;

  std::vector<int> word_indices() const;
};

struct Corpus {
  std::map<std::string, Sentence> sentences;
  std::vector<Scanpath> scanpaths;

  const Sentence& sentence_of(const Scanpath& s) const;
  /// Throws DataError on the first violated invariant.
  void validate() const;
};

/// Number of UTF-8 code points in `token`.
int utf8_length(const std::string& token);

void validate_sentence(const Sentence& s);
void validate_scanpath(const Scanpath& sp, const Sentence& s);

std::vector<Sentence> load_sentences(const std::filesystem::path& path);
std::vector<Scanpath> load_scanpaths(const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& sentences_path, const std::filesystem::path& scanpaths_path);
/// Reads `dir/sentences.jsonl` and `dir/scanpaths.jsonl`.
Corpus load_corpus_dir(const std::filesystem::path& dir);

void write_sentences(const std::filesystem::path& path, const std::vector<Sentence>& sentences);
void write_scanpaths(const std::filesystem::path& path, const std::vector<Scanpath>& scanpaths);
void save_corpus(const Corpus& corpus, const std::filesystem::path& sentences_path,
                 const std::filesystem::path& scanpaths_path);
void save_corpus_dir(const Corpus& corpus, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Normalisation

struct NormStats {
  double duration_mean = 0.0;
  double duration_std = 0.0;
  double landing_mean = 0.0;
  double landing_std = 0.0;
  double wordlen_mean = 0.0;
  double wordlen_std = 0.0;
};

/// Population statistics over the fixations of the selected scanpaths and the
/// tokens of the distinct sentences they reference.
NormStats compute_norm_stats(const Corpus& corpus, std::span<const std::size_t> train_indices);

/// (value − mean) / std, or 0 when std is 0.
double zscore(double value, double mean, double std);

void to_json(nlohmann::json& j, const NormStats& s);
void from_json(const nlohmann::json& j, NormStats& s);

// ---------------------------------------------------------------------------
// Splits

enum class SplitKind { new_sentence, new_reader, new_reader_new_sentence };

std::string to_string(SplitKind kind);
SplitKind parse_split_kind(const std::string& text);

struct Fold {
  std::vector<std::size_t> train;  // sorted scanpath indices
  std::vector<std::size_t> test;
};

struct SplitPlan {
  SplitKind kind = SplitKind::new_sentence;
  std::uint64_t seed = 0;
  std::vector<Fold> folds;
};

/// new_sentence / new_reader: shuffled IDs cut into `folds` near-equal test
/// blocks. new_reader_new_sentence: `folds` independent resamples that each
/// hold out 20% of readers and 20% of sentences; cross pairs are dropped.
SplitPlan make_splits(const Corpus& corpus, SplitKind kind, int folds, std::uint64_t seed);

void to_json(nlohmann::json& j, const SplitPlan& p);
void from_json(const nlohmann::json& j, SplitPlan& p);
SplitPlan load_split_plan(const std::filesystem::path& path);
void save_split_plan(const std::filesystem::path& path, const SplitPlan& plan);

}  // namespace scanpath
