#pragma once

#include "scanpath/train.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace scanpath {

struct GenerateOptions {
  int max_len = 0;  // maximum fixations per path; 0 = 4·m
  bool mask_invalid = true;
  std::string reader_id;  // required when the model has a reader embedding
  int batch_size = 256;   // samples advanced together
};

struct GeneratedScanpath {
  Scanpath scanpath;  // synthetic = true, duration and landing 0
  bool out_of_range = false;  // unmasked draw left the sentence; path ended there
  bool truncated = false;     // hit max_len before EOS
};

/// Seed of sample `index` in a run seeded with `seed`.
std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index);

/// Autoregressive sampling. Duration and landing inputs stay 0 throughout.
/// With mask_invalid, classes landing outside [1, m] get probability 0 and the
/// rest (EOS included) are renormalised.
template <class S>
std::vector<GeneratedScanpath> generate(const Sentence& sentence, const EmbeddingSet* embeddings,
                                        const Checkpoint<S>& ckpt, int n_samples, std::uint64_t seed,
                                        const GenerateOptions& options = {});

/// Distribution the sampler uses for the first step (2M+1 entries).
template <class S>
Eigen::VectorXd first_step_distribution(const Sentence& sentence, const EmbeddingSet* embeddings,
                                        const Checkpoint<S>& ckpt, bool mask_invalid = true,
                                        const std::string& reader_id = {});

/// Zeroes classes that would leave [1, m] from `current` and renormalises.
Eigen::VectorXd mask_distribution(const Eigen::VectorXd& probs, int current, int m, int max_len);

/// Teacher-forced attention weights in eval mode: (n+1) × m.
template <class S>
Eigen::MatrixXd attention_heatmap(const Sentence& sentence, const Scanpath& scanpath, const EmbeddingSet* embeddings,
                                  const Checkpoint<S>& ckpt);

/// CSV with the tokens as header and one row per step.
void write_heatmap_csv(const std::filesystem::path& path, const Sentence& sentence, const Eigen::MatrixXd& heatmap);

extern template std::vector<GeneratedScanpath> generate<float>(const Sentence&, const EmbeddingSet*,
                                                               const Checkpoint<float>&, int, std::uint64_t,
                                                               const GenerateOptions&);
extern template std::vector<GeneratedScanpath> generate<double>(const Sentence&, const EmbeddingSet*,
                                                                const Checkpoint<double>&, int, std::uint64_t,
                                                                const GenerateOptions&);
extern template Eigen::VectorXd first_step_distribution<float>(const Sentence&, const EmbeddingSet*,
                                                               const Checkpoint<float>&, bool, const std::string&);
extern template Eigen::VectorXd first_step_distribution<double>(const Sentence&, const EmbeddingSet*,
                                                                const Checkpoint<double>&, bool, const std::string&);
extern template Eigen::MatrixXd attention_heatmap<float>(const Sentence&, const Scanpath&, const EmbeddingSet*,
                                                         const Checkpoint<float>&);
extern template Eigen::MatrixXd attention_heatmap<double>(const Sentence&, const Scanpath&, const EmbeddingSet*,
                                                          const Checkpoint<double>&);

}  // namespace scanpath
