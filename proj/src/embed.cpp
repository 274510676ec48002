#include "scanpath/embed.hpp"

#include "scanpath/binary_io.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <random>

namespace scanpath {

namespace {

constexpr std::array<char, 8> kMagic{'E', 'Y', 'E', 'M', 'B', '1', '\0', '\0'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void EmbeddingSet::validate() const {
  if (dim <= 0) throw io::FormatError("embedding dim must be positive");
  for (const auto& [key, v] : contextual) {
    if (v.size() != dim) {
      throw io::FormatError("contextual vector for (" + key.first + ", " + std::to_string(key.second) +
                            ") has dim " + std::to_string(v.size()) + ", expected " + std::to_string(dim));
    }
  }
  for (const auto& [tok, v] : noncontextual) {
    if (v.size() != dim) {
      throw io::FormatError("non-contextual vector for \"" + tok + "\" has dim " + std::to_string(v.size()) +
                            ", expected " + std::to_string(dim));
    }
  }
}

Eigen::VectorXf aggregate_subwords(std::span<const Eigen::VectorXf> subword_vectors) {
  if (subword_vectors.empty()) throw std::invalid_argument("aggregate_subwords: no sub-word vectors");
  Eigen::VectorXf out = subword_vectors.front();
  for (std::size_t i = 1; i < subword_vectors.size(); ++i) {
    if (subword_vectors[i].size() != out.size()) {
      throw nn::ShapeError("aggregate_subwords: dim mismatch " + std::to_string(subword_vectors[i].size()) + " vs " +
                           std::to_string(out.size()));
    }
    out += subword_vectors[i];
  }
  return out;
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::FormatError("cannot open " + path.string());
  std::array<char, 8> magic{};
  io::read_bytes(in, magic.data(), magic.size(), "magic");
  if (magic != kMagic) throw io::FormatError(path.string() + ": bad magic, not an EYEMB1 file");
  const auto version = io::read_pod<std::uint32_t>(in, "version");
  if (version != kVersion) throw io::FormatError(path.string() + ": unsupported version " + std::to_string(version));
  EmbeddingSet set;
  set.dim = static_cast<int>(io::read_pod<std::uint32_t>(in, "dim"));
  if (set.dim <= 0) throw io::FormatError(path.string() + ": dim must be positive");
  const auto n_ctx = io::read_pod<std::uint64_t>(in, "contextual count");
  const auto n_tok = io::read_pod<std::uint64_t>(in, "non-contextual count");
  const std::size_t bytes = sizeof(float) * static_cast<std::size_t>(set.dim);
  for (std::uint64_t i = 0; i < n_ctx; ++i) {
    const std::string what = "contextual record " + std::to_string(i);
    std::string sid = io::read_short_string(in, what);
    const auto idx = io::read_pod<std::uint32_t>(in, what);
    Eigen::VectorXf v(set.dim);
    io::read_bytes(in, v.data(), bytes, what);
    set.contextual[{std::move(sid), static_cast<int>(idx)}] = std::move(v);
  }
  for (std::uint64_t i = 0; i < n_tok; ++i) {
    const std::string what = "non-contextual record " + std::to_string(i);
    std::string tok = io::read_short_string(in, what);
    Eigen::VectorXf v(set.dim);
    io::read_bytes(in, v.data(), bytes, what);
    set.noncontextual[std::move(tok)] = std::move(v);
  }
  return set;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingSet& set) {
  set.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io::FormatError("cannot write " + path.string());
  io::write_bytes(out, kMagic.data(), kMagic.size());
  io::write_pod<std::uint32_t>(out, kVersion);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(set.dim));
  io::write_pod<std::uint64_t>(out, set.contextual.size());
  io::write_pod<std::uint64_t>(out, set.noncontextual.size());
  const std::size_t bytes = sizeof(float) * static_cast<std::size_t>(set.dim);
  for (const auto& [key, v] : set.contextual) {
    io::write_short_string(out, key.first);
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(key.second));
    io::write_bytes(out, v.data(), bytes);
  }
  for (const auto& [tok, v] : set.noncontextual) {
    io::write_short_string(out, tok);
    io::write_bytes(out, v.data(), bytes);
  }
}

const Eigen::VectorXf& get_contextual(const EmbeddingSet& set, const std::string& sentence_id, int token_index) {
  auto it = set.contextual.find({sentence_id, token_index});
  if (it == set.contextual.end()) {
    throw MissingEmbedding("no contextual embedding for sentence \"" + sentence_id + "\" token " +
                           std::to_string(token_index));
  }
  return it->second;
}

const Eigen::VectorXf& get_noncontextual(const EmbeddingSet& set, const std::string& token) {
  auto it = set.noncontextual.find(token);
  if (it == set.noncontextual.end()) throw MissingEmbedding("no embedding for token \"" + token + "\"");
  return it->second;
}

void check_coverage(const EmbeddingSet& set, const Corpus& corpus) {
  for (const auto& [id, s] : corpus.sentences) {
    for (int j = 1; j <= s.length(); ++j) {
      get_contextual(set, id, j);
      get_noncontextual(set, s.tokens[static_cast<std::size_t>(j - 1)]);
    }
  }
}

EmbeddingSet random_embeddings(const Corpus& corpus, int dim, std::uint64_t seed) {
  if (dim <= 0) throw std::invalid_argument("random_embeddings: dim must be positive");
  EmbeddingSet set;
  set.dim = dim;
  for (const auto& [_, s] : corpus.sentences) {
    for (const auto& t : s.tokens) set.noncontextual.emplace(t, Eigen::VectorXf());
  }
  nn::Rng rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (auto& [_, v] : set.noncontextual) {
    v.resize(dim);
    for (int k = 0; k < dim; ++k) v(k) = normal(rng);
  }
  for (const auto& [id, s] : corpus.sentences) {
    for (int j = 1; j <= s.length(); ++j) {
      set.contextual[{id, j}] = set.noncontextual.at(s.tokens[static_cast<std::size_t>(j - 1)]);
    }
  }
  return set;
}

}  // namespace scanpath
