#pragma once

#include "scanpath/corpus.hpp"
#include "scanpath/embed.hpp"
#include "scanpath/nn/layers.hpp"
#include "scanpath/nn/ops.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scanpath {

enum class KernelKind { gaussian, none };
enum class WindowMode { local, global };

/// Architecture, ablation switches and attention-window shape.
struct ModelConfig {
  int embed_dim = 16;
  int bilstm_layers = 8;
  int bilstm_units = 64;
  int lstm_layers = 8;
  int lstm_units = 128;
  std::vector<int> dense_units{512, 256, 256, 256};
  double dropout_embed = 0.2;
  double dropout_recurrent = 0.4;
  double dropout_dense = 0.2;

  WindowMode window_mode = WindowMode::local;
  int window_left = 1;   // D_l
  int window_right = 1;  // D_r
  KernelKind kernel = KernelKind::gaussian;
  double kernel_offset = 0.0;  // kernel centre = f_prev + offset
  double sigma_left = 0.5;     // σ for tokens left of the centre
  double sigma_right = 0.5;

  bool use_word_encoder = true;
  bool use_word_length = true;
  bool use_duration = true;
  bool use_landing = true;
  int reader_embedding = 0;  // 0 = off, else embedding width

  int max_sentence_length = 0;  // M; 0 = derive from the training data
  bool trainable_embeddings = false;

  void validate() const;
  int word_dim() const { return 2 * bilstm_units + (use_word_length ? 1 : 0); }
  int fixation_input_dim() const {
    return embed_dim + (use_duration ? 1 : 0) + (use_landing ? 1 : 0) + reader_embedding;
  }
  int decoder_input_dim() const { return (use_word_encoder ? word_dim() : 0) + lstm_units; }
};

/// Reads a config object. Besides every field written by to_json it accepts
/// "window" (sets both sides) and "sigma_scale" (σ_side = scale · D_side,
/// default 0.5) when explicit sigmas are absent. Unknown keys are rejected.
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);

// ---------------------------------------------------------------------------
// Saccade-range classes {−M+1, …, M} ∪ {EOS}

inline int num_classes(int max_len) { return 2 * max_len + 1; }
inline int class_index(int range, int max_len) { return range + max_len - 1; }
inline int eos_class(int max_len) { return 2 * max_len; }
inline int range_of(int cls, int max_len) { return cls - max_len + 1; }

/// Target class per prediction step: f_i − f_{i−1} with f_0 = 0, then EOS.
/// Throws DataError when a range falls outside the class space.
std::vector<int> target_classes(const Scanpath& sp, int max_len);

// ---------------------------------------------------------------------------
// Attention window geometry

struct Window {
  int first = 1;  // inclusive, 1-based
  int last = 0;
  bool empty() const { return last < first; }
};

/// Tokens eligible for attention around `f_prev` in a sentence of length m.
Window attention_window(int f_prev, int m, const ModelConfig& c);
/// Multiplicative kernel for token n; 1 when the kernel is disabled.
double kernel_value(int n, int f_prev, const ModelConfig& c);

// ---------------------------------------------------------------------------

/// Parameters plus the lookup tables that give them meaning.
template <class S>
struct Model {
  ModelConfig config;
  int max_len = 0;  // M
  nn::ParamStore<S> params;
  std::map<std::string, int> readers;  // reader id -> reader-embedding column
  std::map<std::string, int> vocab;    // token -> lookup column (trainable embeddings only)

  int classes() const { return num_classes(max_len); }
  int reader_column(const std::string& reader_id) const;
};

/// Builds and initialises a model. `lookup_corpus` supplies the vocabulary when
/// config.trainable_embeddings is set.
template <class S>
Model<S> make_model(const ModelConfig& config, int max_len, const std::vector<std::string>& readers,
                    const Corpus* lookup_corpus, std::uint64_t seed);

/// Converts parameters to another precision.
template <class To, class From>
Model<To> cast_model(const Model<From>& m) {
  Model<To> out;
  out.config = m.config;
  out.max_len = m.max_len;
  out.readers = m.readers;
  out.vocab = m.vocab;
  for (const auto& [name, p] : m.params) out.params.add(name, p.value.template cast<To>());
  return out;
}

/// Word-Sequence Encoder output for a padded batch: z holds L column blocks of
/// width B, block n being token n+1 of every sentence.
template <class S>
struct EncodedBatch {
  nn::Var<S> z;
  int steps = 0;  // L, the longest sentence in the batch
  std::vector<int> lengths;
};

/// Inputs of one fixation-encoder step across a batch.
struct StepBatch {
  std::vector<int> location;                // f_k, 0 for the start fixation
  std::vector<const std::string*> token;    // fixated token, nullptr for the start fixation or padding
  std::vector<double> duration_z;
  std::vector<double> landing_z;
  std::vector<int> reader;                  // reader-embedding column, -1 when unused
};

template <class S>
struct FixationState {
  std::vector<nn::LstmState<S>> layers;
};

template <class S>
struct AttentionOutput {
  nn::Var<S> pre_kernel;  // window softmax, L × B
  nn::Var<S> weights;     // after the kernel, L × B
};

/// A model bound to one tape for one pass. Holds the dropout mode and RNG.
template <class S>
class Network {
 public:
  Network(nn::Tape<S>& tape, const Model<S>& model, const NormStats& norm, const EmbeddingSet* embeddings,
          nn::Mode mode, nn::Rng& rng);

  EncodedBatch<S> encode_sentences(std::span<const Sentence* const> sentences);
  FixationState<S> initial_state(Eigen::Index batch);
  /// Runs the fixation encoder one step; returns the top hidden state h.
  nn::Var<S> encode_fixation_step(FixationState<S>& state, const StepBatch& step);
  AttentionOutput<S> attention_weights(const nn::Var<S>& h, const EncodedBatch<S>& enc,
                                       const std::vector<int>& f_prev);
  nn::Var<S> context_vector(const nn::Var<S>& weights, const EncodedBatch<S>& enc);
  /// Logits over the 2M+1 classes. `c` is ignored without the word encoder.
  nn::Var<S> decode(const nn::Var<S>& c, const nn::Var<S>& h);

  nn::Tape<S>& tape() { return tape_; }
  const Model<S>& model() const { return model_; }

 private:
  nn::Var<S> param(const std::string& name) { return tape_.parameter(model_.params.at(name)); }
  nn::Var<S> token_columns(const std::vector<const std::string*>& tokens);
  nn::Var<S> contextual_columns(std::span<const Sentence* const> sentences, int position);

  nn::Tape<S>& tape_;
  const Model<S>& model_;
  const NormStats& norm_;
  const EmbeddingSet* embeddings_;
  nn::Mode mode_;
  nn::Rng& rng_;
};

struct ForwardOptions {
  bool keep_probs = false;
  bool keep_attention = false;
};

template <class S>
struct ForwardOutput {
  nn::Var<S> loss;  // mean over scanpaths of the per-scanpath mean step NLL
  std::vector<double> scanpath_nll;
  std::vector<std::vector<int>> targets;
  std::vector<Eigen::MatrixXd> probs;      // per scanpath: classes × steps
  std::vector<Eigen::MatrixXd> attention;  // per scanpath: steps × m
};

/// Teacher-forced pass over a batch of scanpaths; sentences[b] is the sentence
/// of scanpaths[b].
template <class S>
ForwardOutput<S> forward_batch(nn::Tape<S>& tape, const Model<S>& model, std::span<const Sentence* const> sentences,
                               std::span<const Scanpath* const> scanpaths, const NormStats& norm,
                               const EmbeddingSet* embeddings, nn::Mode mode, nn::Rng& rng,
                               ForwardOptions options = {});

template <class S>
ForwardOutput<S> forward_scanpath(nn::Tape<S>& tape, const Model<S>& model, const Sentence& sentence,
                                  const Scanpath& scanpath, const NormStats& norm, const EmbeddingSet* embeddings,
                                  nn::Mode mode, nn::Rng& rng, ForwardOptions options = {}) {
  const Sentence* s = &sentence;
  const Scanpath* p = &scanpath;
  return forward_batch(tape, model, std::span<const Sentence* const>(&s, 1), std::span<const Scanpath* const>(&p, 1),
                       norm, embeddings, mode, rng, options);
}

extern template struct Model<float>;
extern template struct Model<double>;
extern template class Network<float>;
extern template class Network<double>;
extern template Model<float> make_model<float>(const ModelConfig&, int, const std::vector<std::string>&,
                                               const Corpus*, std::uint64_t);
extern template Model<double> make_model<double>(const ModelConfig&, int, const std::vector<std::string>&,
                                                 const Corpus*, std::uint64_t);
extern template ForwardOutput<float> forward_batch<float>(nn::Tape<float>&, const Model<float>&,
                                                          std::span<const Sentence* const>,
                                                          std::span<const Scanpath* const>, const NormStats&,
                                                          const EmbeddingSet*, nn::Mode, nn::Rng&, ForwardOptions);
extern template ForwardOutput<double> forward_batch<double>(nn::Tape<double>&, const Model<double>&,
                                                            std::span<const Sentence* const>,
                                                            std::span<const Scanpath* const>, const NormStats&,
                                                            const EmbeddingSet*, nn::Mode, nn::Rng&, ForwardOptions);

}  // namespace scanpath
