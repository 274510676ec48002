#include "scanpath/scangen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

namespace scanpath {

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finaliser over (seed, index)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Eigen::VectorXd mask_distribution(const Eigen::VectorXd& probs, int current, int m, int max_len) {
  if (probs.size() != num_classes(max_len)) throw nn::ShapeError("mask_distribution: expected 2M+1 probabilities");
  Eigen::VectorXd out = probs;
  Eigen::VectorXd valid = Eigen::VectorXd::Zero(probs.size());
  for (int cls = 0; cls < eos_class(max_len); ++cls) {
    const int loc = current + range_of(cls, max_len);
    if (loc < 1 || loc > m) {
      out(cls) = 0.0;
    } else {
      valid(cls) = 1.0;
    }
  }
  valid(eos_class(max_len)) = 1.0;
  const double total = out.sum();
  if (!(total > 0.0)) return valid / valid.sum();  // every valid class underflowed
  return out / total;
}

namespace {

/// Eval-mode network advancing a batch of samples on one sentence.
template <class S>
class StepRunner {
 public:
  StepRunner(const Sentence& sentence, const EmbeddingSet* embeddings, const Checkpoint<S>& ckpt, int batch,
             int reader_col)
      : sentence_(sentence),
        model_(ckpt.model),
        tape_(false),
        net_(tape_, ckpt.model, ckpt.norm, embeddings, nn::Mode::eval, rng_),
        batch_(batch),
        reader_col_(reader_col) {
    if (model_.config.use_word_encoder) {
      const Sentence* one = &sentence;
      EncodedBatch<S> single = net_.encode_sentences(std::span<const Sentence* const>(&one, 1));
      const auto& z = single.z.value();
      nn::Matrix<S> rep(z.rows(), z.cols() * batch);
      for (Eigen::Index n = 0; n < z.cols(); ++n) rep.middleCols(n * batch, batch) = z.col(n).replicate(1, batch);
      enc_.z = tape_.constant(std::move(rep));
      enc_.steps = single.steps;
      enc_.lengths.assign(static_cast<std::size_t>(batch), sentence.length());
    }
    state_ = net_.initial_state(batch);
  }

  /// Probabilities over the classes (classes × batch) given each sample's
  /// current location.
  Eigen::MatrixXd step(const std::vector<int>& current) {
    StepBatch sb;
    for (int loc : current) {
      sb.location.push_back(loc);
      sb.token.push_back(loc == 0 ? nullptr : &sentence_.tokens[static_cast<std::size_t>(loc - 1)]);
      sb.duration_z.push_back(0.0);
      sb.landing_z.push_back(0.0);
      sb.reader.push_back(reader_col_);
    }
    nn::Var<S> h = net_.encode_fixation_step(state_, sb);
    nn::Var<S> ctx;
    if (model_.config.use_word_encoder) {
      auto att = net_.attention_weights(h, enc_, sb.location);
      ctx = net_.context_vector(att.weights, enc_);
    }
    const auto logits = net_.decode(ctx, h).value().template cast<double>().eval();
    Eigen::MatrixXd probs(logits.rows(), logits.cols());
    for (Eigen::Index b = 0; b < logits.cols(); ++b) {
      const double mx = logits.col(b).maxCoeff();
      auto e = (logits.col(b).array() - mx).exp();
      probs.col(b) = (e / e.sum()).matrix();
    }
    return probs;
  }

 private:
  const Sentence& sentence_;
  const Model<S>& model_;
  nn::Rng rng_{0};
  nn::Tape<S> tape_;
  Network<S> net_;
  EncodedBatch<S> enc_;
  FixationState<S> state_;
  int batch_;
  int reader_col_;
};

template <class S>
void check_sentence(const Sentence& sentence, const Model<S>& model) {
  validate_sentence(sentence);
  if (sentence.length() > model.max_len) {
    throw DataError("sentence \"" + sentence.sentence_id + "\" has " + std::to_string(sentence.length()) +
                    " tokens, more than the model's M=" + std::to_string(model.max_len));
  }
}

template <class S>
int reader_column_for(const Model<S>& model, const std::string& reader_id) {
  if (model.config.reader_embedding == 0) return -1;
  if (reader_id.empty()) throw std::invalid_argument("this model has a reader embedding; a reader id is required");
  return model.reader_column(reader_id);
}

}  // namespace

template <class S>
std::vector<GeneratedScanpath> generate(const Sentence& sentence, const EmbeddingSet* embeddings,
                                        const Checkpoint<S>& ckpt, int n_samples, std::uint64_t seed,
                                        const GenerateOptions& options) {
  const Model<S>& model = ckpt.model;
  check_sentence(sentence, model);
  if (n_samples < 0) throw std::invalid_argument("generate: n_samples must be >= 0");
  if (options.batch_size < 1) throw std::invalid_argument("generate: batch_size must be >= 1");
  const int m = sentence.length();
  const int M = model.max_len;
  const int max_len = options.max_len > 0 ? options.max_len : 4 * m;
  const int reader_col = reader_column_for(model, options.reader_id);

  std::vector<GeneratedScanpath> out;
  out.reserve(static_cast<std::size_t>(n_samples));
  for (int start = 0; start < n_samples; start += options.batch_size) {
    const int batch = std::min(options.batch_size, n_samples - start);
    StepRunner<S> runner(sentence, embeddings, ckpt, batch, reader_col);
    std::vector<nn::Rng> rngs;
    std::vector<GeneratedScanpath> paths(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      rngs.emplace_back(sample_seed(seed, static_cast<std::uint64_t>(start + b)));
      auto& sp = paths[static_cast<std::size_t>(b)].scanpath;
      sp.reader_id = options.reader_id.empty() ? "generated" : options.reader_id;
      sp.sentence_id = sentence.sentence_id;
      sp.synthetic = true;
    }
    std::vector<int> current(static_cast<std::size_t>(batch), 0);
    std::vector<bool> done(static_cast<std::size_t>(batch), false);
    int active = batch;
    while (active > 0) {
      const Eigen::MatrixXd probs = runner.step(current);
      for (int b = 0; b < batch; ++b) {
        const auto ub = static_cast<std::size_t>(b);
        if (done[ub]) continue;
        Eigen::VectorXd p = probs.col(b);
        if (options.mask_invalid) p = mask_distribution(p, current[ub], m, M);
        std::discrete_distribution<int> draw(p.data(), p.data() + p.size());
        const int cls = draw(rngs[ub]);
        GeneratedScanpath& g = paths[ub];
        bool finish = false;
        if (cls == eos_class(M)) {
          finish = true;
        } else {
          const int next = current[ub] + range_of(cls, M);
          if (next < 1 || next > m) {
            g.out_of_range = true;
            finish = true;
          } else {
            g.scanpath.fixations.push_back({next, 0.0, 0.0});
            current[ub] = next;
            if (static_cast<int>(g.scanpath.fixations.size()) >= max_len) {
              g.truncated = true;
              finish = true;
            }
          }
        }
        if (finish) {
          done[ub] = true;
          --active;
        }
      }
    }
    for (auto& g : paths) out.push_back(std::move(g));
  }
  return out;
}

template <class S>
Eigen::VectorXd first_step_distribution(const Sentence& sentence, const EmbeddingSet* embeddings,
                                        const Checkpoint<S>& ckpt, bool mask_invalid, const std::string& reader_id) {
  check_sentence(sentence, ckpt.model);
  StepRunner<S> runner(sentence, embeddings, ckpt, 1, reader_column_for(ckpt.model, reader_id));
  Eigen::VectorXd p = runner.step({0}).col(0);
  return mask_invalid ? mask_distribution(p, 0, sentence.length(), ckpt.model.max_len) : p;
}

template <class S>
Eigen::MatrixXd attention_heatmap(const Sentence& sentence, const Scanpath& scanpath, const EmbeddingSet* embeddings,
                                  const Checkpoint<S>& ckpt) {
  if (!ckpt.model.config.use_word_encoder) {
    throw std::invalid_argument("attention_heatmap: this model has no word encoder, hence no attention");
  }
  nn::Tape<S> tape(false);
  nn::Rng rng(0);
  ForwardOptions opts;
  opts.keep_attention = true;
  auto out = forward_scanpath(tape, ckpt.model, sentence, scanpath, ckpt.norm, embeddings, nn::Mode::eval, rng, opts);
  return out.attention.front();
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

}  // namespace

void write_heatmap_csv(const std::filesystem::path& path, const Sentence& sentence, const Eigen::MatrixXd& heatmap) {
  if (heatmap.cols() != sentence.length()) throw nn::ShapeError("write_heatmap_csv: one column per token expected");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (int j = 0; j < sentence.length(); ++j) {
    out << (j ? "," : "") << csv_field(sentence.tokens[static_cast<std::size_t>(j)]);
  }
  out << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < heatmap.rows(); ++i) {
    for (Eigen::Index j = 0; j < heatmap.cols(); ++j) out << (j ? "," : "") << heatmap(i, j);
    out << '\n';
  }
}

template std::vector<GeneratedScanpath> generate<float>(const Sentence&, const EmbeddingSet*, const Checkpoint<float>&,
                                                        int, std::uint64_t, const GenerateOptions&);
template std::vector<GeneratedScanpath> generate<double>(const Sentence&, const EmbeddingSet*,
                                                         const Checkpoint<double>&, int, std::uint64_t,
                                                         const GenerateOptions&);
template Eigen::VectorXd first_step_distribution<float>(const Sentence&, const EmbeddingSet*, const Checkpoint<float>&,
                                                        bool, const std::string&);
template Eigen::VectorXd first_step_distribution<double>(const Sentence&, const EmbeddingSet*,
                                                         const Checkpoint<double>&, bool, const std::string&);
template Eigen::MatrixXd attention_heatmap<float>(const Sentence&, const Scanpath&, const EmbeddingSet*,
                                                  const Checkpoint<float>&);
template Eigen::MatrixXd attention_heatmap<double>(const Sentence&, const Scanpath&, const EmbeddingSet*,
                                                   const Checkpoint<double>&);

}  // namespace scanpath
