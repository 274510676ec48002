#pragma once

#include "scanpath/corpus.hpp"
#include "scanpath/embed.hpp"
#include "scanpath/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scanpath {

/// Non-finite loss or parameters.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Precision { f32, f64 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& text);

struct TrainConfig {
  double lr = 1e-3;
  int max_epochs = 1000;
  int patience = 20;
  int batch_size = 256;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  Precision precision = Precision::f32;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their current values; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double validation_nll = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 = no epoch run
  double best_validation_nll = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
  std::size_t train_scanpaths = 0;
  std::size_t validation_scanpaths = 0;
};

void to_json(nlohmann::json& j, const TrainHistory& h);
void from_json(const nlohmann::json& j, TrainHistory& h);

template <class S>
struct Checkpoint {
  Model<S> model;
  NormStats norm;
  TrainConfig train_config;
  TrainHistory history;
};

/// Largest sentence length in the corpus; used as M when the config leaves it 0.
int corpus_max_length(const Corpus& corpus);

/// Trains on the scanpaths `train_indices`, holding out a validation slice
/// chosen with the run seed. Returns the best-validation parameters.
template <class S>
Checkpoint<S> train(const Corpus& corpus, std::span<const std::size_t> train_indices, const EmbeddingSet* embeddings,
                    const ModelConfig& model_config, const TrainConfig& train_config);

/// Continues training `base` on `k_instances` scanpaths of `corpus` sampled
/// with train_config.seed, with a fresh optimizer. k = 0 returns `base`.
template <class S>
Checkpoint<S> fine_tune(const Checkpoint<S>& base, const Corpus& corpus, const EmbeddingSet* embeddings,
                        std::size_t k_instances, const TrainConfig& train_config);

/// The scanpath indices fine_tune would draw.
std::vector<std::size_t> sample_instances(std::size_t corpus_size, std::size_t k, std::uint64_t seed);

/// Per-scanpath NLL in eval mode, computed in batches.
template <class S>
std::vector<double> scanpath_nlls(const Model<S>& model, const NormStats& norm, const Corpus& corpus,
                                  std::span<const std::size_t> indices, const EmbeddingSet* embeddings,
                                  int batch_size = 256);

// ---------------------------------------------------------------------------
// EYCKPT1

template <class S>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<S>& ckpt);
/// Reads a checkpoint written at either precision and converts it to S.
template <class S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path);
/// Precision recorded in a checkpoint header.
Precision checkpoint_precision(const std::filesystem::path& path);

extern template Checkpoint<float> train<float>(const Corpus&, std::span<const std::size_t>, const EmbeddingSet*,
                                               const ModelConfig&, const TrainConfig&);
extern template Checkpoint<double> train<double>(const Corpus&, std::span<const std::size_t>, const EmbeddingSet*,
                                                 const ModelConfig&, const TrainConfig&);
extern template Checkpoint<float> fine_tune<float>(const Checkpoint<float>&, const Corpus&, const EmbeddingSet*,
                                                   std::size_t, const TrainConfig&);
extern template Checkpoint<double> fine_tune<double>(const Checkpoint<double>&, const Corpus&, const EmbeddingSet*,
                                                     std::size_t, const TrainConfig&);
extern template std::vector<double> scanpath_nlls<float>(const Model<float>&, const NormStats&, const Corpus&,
                                                         std::span<const std::size_t>, const EmbeddingSet*, int);
extern template std::vector<double> scanpath_nlls<double>(const Model<double>&, const NormStats&, const Corpus&,
                                                          std::span<const std::size_t>, const EmbeddingSet*, int);
extern template void save_checkpoint<float>(const std::filesystem::path&, const Checkpoint<float>&);
extern template void save_checkpoint<double>(const std::filesystem::path&, const Checkpoint<double>&);
extern template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
extern template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace scanpath
