#pragma once

#include "scanpath/corpus.hpp"
#include "scanpath/nn/layers.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>

namespace scanpath {

class MissingEmbedding : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Frozen word vectors: contextual ones keyed by (sentence_id, 1-based token
/// index) and non-contextual ones keyed by token string.
struct EmbeddingSet {
  int dim = 0;
  std::map<std::pair<std::string, int>, Eigen::VectorXf> contextual;
  std::map<std::string, Eigen::VectorXf> noncontextual;

  /// Throws unless every vector has `dim` entries.
  void validate() const;
};

/// Sum of the sub-word vectors making up one word.
Eigen::VectorXf aggregate_subwords(std::span<const Eigen::VectorXf> subword_vectors);

EmbeddingSet load_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path, const EmbeddingSet& set);

const Eigen::VectorXf& get_contextual(const EmbeddingSet& set, const std::string& sentence_id, int token_index);
const Eigen::VectorXf& get_noncontextual(const EmbeddingSet& set, const std::string& token);

/// Throws MissingEmbedding naming the first uncovered (sentence, token).
void check_coverage(const EmbeddingSet& set, const Corpus& corpus);

/// Standard-normal vector per token type; each contextual vector repeats its
/// token's vector. Stand-in embeddings for synthetic corpora.
EmbeddingSet random_embeddings(const Corpus& corpus, int dim, std::uint64_t seed);

/// Trainable stand-in for pretrained vectors: one column per token type,
/// shared by the contextual and the non-contextual lookups.
template <class S>
struct TrainableLookup {
  std::map<std::string, int> vocab;
  nn::Matrix<S> table;  // dim × |vocab|

  int index_of(const std::string& token) const {
    auto it = vocab.find(token);
    if (it == vocab.end()) throw MissingEmbedding("no embedding for token \"" + token + "\"");
    return it->second;
  }
};

/// Vocabulary over every token of the corpus, columns initialised from
/// uniform(−0.1, 0.1) with `seed`.
template <class S>
TrainableLookup<S> make_trainable_lookup(const Corpus& corpus, int dim, std::uint64_t seed) {
  TrainableLookup<S> lookup;
  for (const auto& [_, s] : corpus.sentences) {
    for (const auto& t : s.tokens) lookup.vocab.emplace(t, 0);
  }
  int i = 0;
  for (auto& [_, idx] : lookup.vocab) idx = i++;
  lookup.table.resize(dim, static_cast<Eigen::Index>(lookup.vocab.size()));
  nn::Rng rng(seed);
  nn::fill_uniform(lookup.table, 0.1, rng);
  return lookup;
}

template <class S>
nn::Vector<S> get_contextual(const TrainableLookup<S>& lookup, const std::string& token) {
  return lookup.table.col(lookup.index_of(token));
}

template <class S>
nn::Vector<S> get_noncontextual(const TrainableLookup<S>& lookup, const std::string& token) {
  return lookup.table.col(lookup.index_of(token));
}

}  // namespace scanpath
