#pragma once

#include "scanpath/scangen.hpp"
#include "scanpath/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace scanpath {

// ---------------------------------------------------------------------------
// Predictors

/// Anything that yields a distribution over the 2M+1 classes at every step of
/// a scanpath (classes × (n+1), one column per step, EOS step last).
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual int max_len() const = 0;
  virtual std::vector<Eigen::MatrixXd> predict(const Corpus& corpus, std::span<const std::size_t> indices) const = 0;
};

/// Same distribution at every step.
class ConstantPredictor : public Predictor {
 public:
  ConstantPredictor(Eigen::VectorXd probs, int max_len);
  int max_len() const override { return max_len_; }
  const Eigen::VectorXd& probs() const { return probs_; }
  std::vector<Eigen::MatrixXd> predict(const Corpus& corpus, std::span<const std::size_t> indices) const override;

 private:
  Eigen::VectorXd probs_;
  int max_len_;
};

/// Teacher-forced model distributions in eval mode.
template <class S>
class ModelPredictor : public Predictor {
 public:
  ModelPredictor(const Checkpoint<S>& ckpt, const EmbeddingSet* embeddings, int batch_size = 256)
      : ckpt_(ckpt), embeddings_(embeddings), batch_size_(batch_size) {}
  int max_len() const override { return ckpt_.model.max_len; }
  std::vector<Eigen::MatrixXd> predict(const Corpus& corpus, std::span<const std::size_t> indices) const override;

 private:
  const Checkpoint<S>& ckpt_;
  const EmbeddingSet* embeddings_;
  int batch_size_;
};

ConstantPredictor uniform_predictor(int max_len);

/// Smoothed frequencies of every target class (EOS included):
/// p_c = (count_c + α) / (N + α·(2M+1)).
Eigen::VectorXd label_distribution(std::span<const int> target_classes, int max_len, double alpha);
/// Train-label-dist baseline over the targets of the given training scanpaths.
ConstantPredictor train_label_predictor(const Corpus& corpus, std::span<const std::size_t> train_indices,
                                        int max_len, double alpha = 0.5);

// ---------------------------------------------------------------------------
// NLL

struct NllReport {
  double mean = 0.0;
  double standard_error = 0.0;
  std::vector<double> per_scanpath;  // aligned with the requested indices
};

/// Per-scanpath mean step NLL (EOS step included), averaged over scanpaths.
/// Throws NumericError when a predicted column does not sum to 1 within 1e-5.
NllReport evaluate_nll(const Predictor& predictor, const Corpus& corpus, std::span<const std::size_t> indices);

/// Sample mean and standard error (sd with n−1, over √n; 0 for n < 2).
std::pair<double, double> mean_and_se(std::span<const double> values);

/// Mean of `values` per distinct key, in key order.
std::vector<double> group_means(std::span<const double> values, std::span<const std::string> keys);

// ---------------------------------------------------------------------------
// Edit distance

int levenshtein(std::span<const int> s, std::span<const int> t);
/// LD(s, t) / max(|s|, |t|). Throws when both are empty.
double nld(std::span<const int> s, std::span<const int> t);

struct NldReport {
  double mean = 0.0;
  double standard_error = 0.0;
  std::vector<double> per_scanpath;
};

/// One generated scanpath per human scanpath on the same sentence.
template <class S>
NldReport evaluate_nld(const Checkpoint<S>& ckpt, const Corpus& corpus, std::span<const std::size_t> indices,
                       const EmbeddingSet* embeddings, std::uint64_t seed, const GenerateOptions& options = {});

/// Pairs each scanpath with a uniformly drawn different scanpath of the same
/// sentence among `indices`. Scanpaths without a partner are skipped; throws
/// DataError when no sentence has two scanpaths.
NldReport human_nld(const Corpus& corpus, std::span<const std::size_t> indices, std::uint64_t seed);

// ---------------------------------------------------------------------------
// MultiMatch reduced to word indices

struct MultiMatch {
  double shape = 0.0;
  double length = 0.0;
  double position = 0.0;
};

/// Saccades v_i = f_{i+1} − f_i aligned by the path through the saccade grid
/// minimising Σ|v − u|; ties broken by step count, then length and position
/// sums, so the measure is symmetric. Both scanpaths need ≥ 2 fixations.
MultiMatch multimatch_1d(std::span<const int> s, std::span<const int> t, int max_len);
MultiMatch multimatch_1d(const Scanpath& s, const Scanpath& t, int max_len);

struct MultiMatchReport {
  MultiMatch mean;
  std::size_t pairs = 0;
  std::size_t skipped = 0;  // pairs with a path of fewer than 2 fixations
};

/// Compares each human scanpath with one generated on the same sentence.
template <class S>
MultiMatchReport evaluate_multimatch(const Checkpoint<S>& ckpt, const Corpus& corpus,
                                     std::span<const std::size_t> indices, const EmbeddingSet* embeddings,
                                     std::uint64_t seed, const GenerateOptions& options = {});

// ---------------------------------------------------------------------------
// Per-saccade-range NLL

struct Bucket {
  std::string label;
  std::vector<int> classes;
};

/// Parses e.g. "...-3,-2:-1,0,1:3,4:...,eos" against M; "all" is one bucket
/// holding every class. The buckets must
/// partition {−M+1, …, M} ∪ {EOS}; throws std::invalid_argument otherwise.
std::vector<Bucket> parse_buckets(const std::string& text, int max_len);

struct BucketRow {
  std::string label;
  std::size_t steps = 0;
  double mean_nll = 0.0;  // NaN when no step falls in the bucket
};

struct BucketTable {
  std::vector<BucketRow> rows;
  double overall_step_mean = 0.0;  // mean over all steps
  std::size_t steps = 0;
};

BucketTable nll_by_saccade_range(const Predictor& predictor, const Corpus& corpus,
                                 std::span<const std::size_t> indices, const std::vector<Bucket>& buckets);

// ---------------------------------------------------------------------------
// Significance

struct TTest {
  double t = 0.0;
  double p = 1.0;
  int df = 0;
  bool degenerate = false;  // zero variance of the differences: t = 0, p = 1
};

/// Paired two-tailed t-test.
TTest paired_ttest(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Reports

void to_json(nlohmann::json& j, const NllReport& r);
void to_json(nlohmann::json& j, const NldReport& r);
void to_json(nlohmann::json& j, const MultiMatch& m);
void to_json(nlohmann::json& j, const MultiMatchReport& r);
void to_json(nlohmann::json& j, const BucketTable& t);
void to_json(nlohmann::json& j, const TTest& t);
void write_bucket_csv(const std::filesystem::path& path, const BucketTable& table);

extern template class ModelPredictor<float>;
extern template class ModelPredictor<double>;
extern template NldReport evaluate_nld<float>(const Checkpoint<float>&, const Corpus&, std::span<const std::size_t>,
                                              const EmbeddingSet*, std::uint64_t, const GenerateOptions&);
extern template NldReport evaluate_nld<double>(const Checkpoint<double>&, const Corpus&, std::span<const std::size_t>,
                                               const EmbeddingSet*, std::uint64_t, const GenerateOptions&);
extern template MultiMatchReport evaluate_multimatch<float>(const Checkpoint<float>&, const Corpus&,
                                                            std::span<const std::size_t>, const EmbeddingSet*,
                                                            std::uint64_t, const GenerateOptions&);
extern template MultiMatchReport evaluate_multimatch<double>(const Checkpoint<double>&, const Corpus&,
                                                             std::span<const std::size_t>, const EmbeddingSet*,
                                                             std::uint64_t, const GenerateOptions&);

}  // namespace scanpath
