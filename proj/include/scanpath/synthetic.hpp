#pragma once

#include "scanpath/corpus.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace scanpath {

/// Distribution over the next saccade range, plus end-of-scanpath.
struct MoveDistribution {
  std::map<int, double> ranges;
  double eos = 0.0;
};

/// Planted reading policy: the next move depends only on the class of the
/// currently fixated token. Moves that would leave the sentence are removed and
/// the remainder renormalised; when nothing valid remains the path ends.
struct SyntheticPolicy {
  std::vector<std::string> vocab;
  int min_length = 5;
  int max_length = 10;
  MoveDistribution start{{{1, 1.0}}, 0.0};  // first fixation, taken from virtual position 0
  MoveDistribution fallback;       // tokens without a class
  std::map<std::string, MoveDistribution> token_class;  // token -> distribution
  int max_scanpath_factor = 4;     // paths end after factor·m fixations

  const MoveDistribution& row_for(const std::string& token) const;
  /// Throws DataError when a row does not sum to 1 within 1e-9.
  void validate() const;
};

struct SyntheticCorpus {
  Corpus corpus;
  /// Mean over scanpaths of the per-step generating entropy (nats), counting
  /// the terminating step.
  double entropy = 0.0;
  std::vector<double> scanpath_entropy;  // aligned with corpus.scanpaths
};

/// Every reader reads every sentence. Reader r follows policies[r % size];
/// sentences come from policies[0]'s vocabulary and length range.
SyntheticCorpus generate_synthetic_corpus(const std::vector<SyntheticPolicy>& policies, int n_readers,
                                          int n_sentences, std::uint64_t seed);
SyntheticCorpus generate_synthetic_corpus(const SyntheticPolicy& policy, int n_readers, int n_sentences,
                                          std::uint64_t seed);

/// Entropy (nats) of the renormalised next-move distribution from `current`
/// (0 = before the first fixation) on a sentence of length m.
double move_entropy(const SyntheticPolicy& policy, const Sentence& sentence, int current);

SyntheticPolicy policy_from_json(const nlohmann::json& j);
nlohmann::json policy_to_json(const SyntheticPolicy& p);
/// A file holds either one policy object or {"populations": [policy, ...]}.
std::vector<SyntheticPolicy> load_policies(const std::filesystem::path& path);

}  // namespace scanpath
