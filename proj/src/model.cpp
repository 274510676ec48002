#include "scanpath/model.hpp"

#include <algorithm>
#include <cmath>

namespace scanpath {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (embed_dim < 1) fail("embed_dim must be >= 1");
  if (bilstm_layers < 1 || bilstm_units < 1) fail("word encoder needs >= 1 layer and unit");
  if (lstm_layers < 1 || lstm_units < 1) fail("fixation encoder needs >= 1 layer and unit");
  if (dense_units.size() != 4) fail("dense_units must list exactly 4 layers");
  for (int u : dense_units) {
    if (u < 1) fail("dense layer widths must be >= 1");
  }
  for (double r : {dropout_embed, dropout_recurrent, dropout_dense}) {
    if (!(r >= 0.0 && r < 1.0)) fail("dropout rates must lie in [0, 1)");
  }
  if (window_left < 0 || window_right < 0) fail("window sizes must be >= 0");
  if (window_mode == WindowMode::local && window_left == 0 && window_right == 0) {
    fail("a local window needs D_l or D_r > 0");
  }
  if (kernel == KernelKind::gaussian && !(sigma_left > 0.0 && sigma_right > 0.0)) {
    fail("gaussian kernel needs sigma_left and sigma_right > 0");
  }
  if (reader_embedding < 0) fail("reader_embedding must be >= 0");
  if (max_sentence_length < 0) fail("max_sentence_length must be >= 0");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"embed_dim", c.embed_dim},
           {"bilstm_layers", c.bilstm_layers},
           {"bilstm_units", c.bilstm_units},
           {"lstm_layers", c.lstm_layers},
           {"lstm_units", c.lstm_units},
           {"dense_units", c.dense_units},
           {"dropout_embed", c.dropout_embed},
           {"dropout_recurrent", c.dropout_recurrent},
           {"dropout_dense", c.dropout_dense},
           {"window_mode", c.window_mode == WindowMode::local ? "local" : "global"},
           {"window_left", c.window_left},
           {"window_right", c.window_right},
           {"kernel", c.kernel == KernelKind::gaussian ? "gaussian" : "none"},
           {"kernel_offset", c.kernel_offset},
           {"sigma_left", c.sigma_left},
           {"sigma_right", c.sigma_right},
           {"use_word_encoder", c.use_word_encoder},
           {"use_word_length", c.use_word_length},
           {"use_duration", c.use_duration},
           {"use_landing", c.use_landing},
           {"reader_embedding", c.reader_embedding},
           {"max_sentence_length", c.max_sentence_length},
           {"trainable_embeddings", c.trainable_embeddings}};
}

void from_json(const json& j, ModelConfig& c) {
  static const char* known[] = {"embed_dim",        "bilstm_layers",     "bilstm_units",     "lstm_layers",
                                "lstm_units",       "dense_units",       "dropout_embed",    "dropout_recurrent",
                                "dropout_dense",    "window_mode",       "window",           "window_left",
                                "window_right",     "kernel",            "kernel_offset",    "sigma_left",
                                "sigma_right",      "sigma_scale",       "use_word_encoder", "use_word_length",
                                "use_duration",     "use_landing",       "reader_embedding", "max_sentence_length",
                                "trainable_embeddings"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return it.key() == k; }) ==
        std::end(known)) {
      throw std::invalid_argument("model config: unknown key \"" + it.key() + "\"");
    }
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("embed_dim", c.embed_dim);
  get("bilstm_layers", c.bilstm_layers);
  get("bilstm_units", c.bilstm_units);
  get("lstm_layers", c.lstm_layers);
  get("lstm_units", c.lstm_units);
  get("dense_units", c.dense_units);
  get("dropout_embed", c.dropout_embed);
  get("dropout_recurrent", c.dropout_recurrent);
  get("dropout_dense", c.dropout_dense);
  if (j.contains("window_mode")) {
    const auto m = j.at("window_mode").get<std::string>();
    if (m != "local" && m != "global") throw std::invalid_argument("model config: window_mode must be local|global");
    c.window_mode = m == "local" ? WindowMode::local : WindowMode::global;
  }
  if (j.contains("window")) {
    c.window_left = c.window_right = j.at("window").get<int>();
  }
  get("window_left", c.window_left);
  get("window_right", c.window_right);
  if (j.contains("kernel")) {
    const auto k = j.at("kernel").get<std::string>();
    if (k != "gaussian" && k != "none") throw std::invalid_argument("model config: kernel must be gaussian|none");
    c.kernel = k == "gaussian" ? KernelKind::gaussian : KernelKind::none;
  }
  get("kernel_offset", c.kernel_offset);
  const bool reshaped = j.contains("window") || j.contains("window_left") || j.contains("window_right") ||
                        j.contains("sigma_scale");
  const double scale = j.value("sigma_scale", 0.5);
  if (j.contains("sigma_left")) {
    j.at("sigma_left").get_to(c.sigma_left);
  } else if (reshaped) {
    c.sigma_left = scale * c.window_left;
  }
  if (j.contains("sigma_right")) {
    j.at("sigma_right").get_to(c.sigma_right);
  } else if (reshaped) {
    c.sigma_right = scale * c.window_right;
  }
  get("use_word_encoder", c.use_word_encoder);
  get("use_word_length", c.use_word_length);
  get("use_duration", c.use_duration);
  get("use_landing", c.use_landing);
  get("reader_embedding", c.reader_embedding);
  get("max_sentence_length", c.max_sentence_length);
  get("trainable_embeddings", c.trainable_embeddings);
}

// ---------------------------------------------------------------------------

std::vector<int> target_classes(const Scanpath& sp, int max_len) {
  std::vector<int> out;
  out.reserve(sp.fixations.size() + 1);
  int prev = 0;
  for (const auto& f : sp.fixations) {
    const int r = f.word_index - prev;
    if (r < -max_len + 1 || r > max_len) {
      throw DataError("saccade range " + std::to_string(r) + " outside the class space {" +
                      std::to_string(-max_len + 1) + ".." + std::to_string(max_len) + "}");
    }
    out.push_back(class_index(r, max_len));
    prev = f.word_index;
  }
  out.push_back(eos_class(max_len));
  return out;
}

Window attention_window(int f_prev, int m, const ModelConfig& c) {
  if (c.window_mode == WindowMode::global) return {1, m};
  return {std::max(1, f_prev - c.window_left), std::min(m, f_prev + c.window_right)};
}

double kernel_value(int n, int f_prev, const ModelConfig& c) {
  if (c.kernel == KernelKind::none) return 1.0;
  const double d = static_cast<double>(n) - (static_cast<double>(f_prev) + c.kernel_offset);
  const double sigma = d < 0.0 ? c.sigma_left : c.sigma_right;
  return std::exp(-(d * d) / (2.0 * sigma * sigma));
}

template <class S>
int Model<S>::reader_column(const std::string& reader_id) const {
  auto it = readers.find(reader_id);
  if (it == readers.end()) throw DataError("reader \"" + reader_id + "\" has no reader embedding");
  return it->second;
}

namespace {

std::string word_layer(int l, bool forward) {
  return "word_encoder." + std::to_string(l) + (forward ? ".forward" : ".backward");
}
std::string fixation_layer(int l) { return "fixation_encoder." + std::to_string(l); }
std::string dense_layer(int k) { return "decoder.dense" + std::to_string(k); }

nn::LstmSpec lstm_spec(const std::string& prefix, int in, int hidden) {
  return {prefix + ".w_ih", prefix + ".w_hh", prefix + ".bias", in, hidden};
}

}  // namespace

template <class S>
Model<S> make_model(const ModelConfig& config, int max_len, const std::vector<std::string>& readers,
                    const Corpus* lookup_corpus, std::uint64_t seed) {
  config.validate();
  if (max_len < 1) throw std::invalid_argument("make_model: M must be >= 1");
  Model<S> model;
  model.config = config;
  model.max_len = max_len;
  nn::Rng rng(seed);

  if (config.trainable_embeddings) {
    if (lookup_corpus == nullptr) throw std::invalid_argument("make_model: trainable embeddings need a corpus");
    auto lookup = make_trainable_lookup<S>(*lookup_corpus, config.embed_dim, rng());
    model.vocab = std::move(lookup.vocab);
    model.params.add("token_lookup", std::move(lookup.table));
  }
  if (config.use_word_encoder) {
    for (int l = 0; l < config.bilstm_layers; ++l) {
      const int in = l == 0 ? config.embed_dim : 2 * config.bilstm_units;
      nn::init_lstm(model.params, word_layer(l, true), in, config.bilstm_units, rng);
      nn::init_lstm(model.params, word_layer(l, false), in, config.bilstm_units, rng);
    }
    nn::Matrix<S> wa(config.lstm_units, config.word_dim());
    nn::fill_uniform(wa, 1.0 / std::sqrt(static_cast<double>(config.word_dim())), rng);
    model.params.add("attention.w_a", std::move(wa));
  }
  for (int l = 0; l < config.lstm_layers; ++l) {
    const int in = l == 0 ? config.fixation_input_dim() : config.lstm_units;
    nn::init_lstm(model.params, fixation_layer(l), in, config.lstm_units, rng);
  }
  nn::Matrix<S> pos(config.embed_dim, max_len + 1);
  nn::fill_uniform(pos, 0.1, rng);
  model.params.add("position_embedding", std::move(pos));
  if (config.reader_embedding > 0) {
    if (readers.empty()) throw std::invalid_argument("make_model: reader embedding needs at least one reader");
    int col = 0;
    for (const auto& r : readers) {
      if (model.readers.emplace(r, col).second) ++col;
    }
    nn::Matrix<S> table(config.reader_embedding, col);
    nn::fill_uniform(table, 0.1, rng);
    model.params.add("reader_embedding", std::move(table));
  }
  int in = config.decoder_input_dim();
  for (int k = 0; k < 4; ++k) {
    nn::init_dense(model.params, dense_layer(k), in, config.dense_units[static_cast<std::size_t>(k)], rng);
    in = config.dense_units[static_cast<std::size_t>(k)];
  }
  nn::init_dense(model.params, "decoder.head", in, num_classes(max_len), rng);
  return model;
}

// ---------------------------------------------------------------------------
// Network

template <class S>
Network<S>::Network(nn::Tape<S>& tape, const Model<S>& model, const NormStats& norm, const EmbeddingSet* embeddings,
                    nn::Mode mode, nn::Rng& rng)
    : tape_(tape), model_(model), norm_(norm), embeddings_(embeddings), mode_(mode), rng_(rng) {
  if (!model.config.trainable_embeddings) {
    if (embeddings == nullptr) throw std::invalid_argument("model needs an embedding set (or trainable embeddings)");
    if (embeddings->dim != model.config.embed_dim) {
      throw std::invalid_argument("embedding dim " + std::to_string(embeddings->dim) + " differs from model embed_dim " +
                                  std::to_string(model.config.embed_dim));
    }
  }
}

template <class S>
nn::Var<S> Network<S>::token_columns(const std::vector<const std::string*>& tokens) {
  const int dim = model_.config.embed_dim;
  if (model_.config.trainable_embeddings) {
    std::vector<int> idx;
    idx.reserve(tokens.size());
    for (const auto* t : tokens) {
      if (t == nullptr) {
        idx.push_back(-1);
        continue;
      }
      auto it = model_.vocab.find(*t);
      if (it == model_.vocab.end()) throw MissingEmbedding("no embedding for token \"" + *t + "\"");
      idx.push_back(it->second);
    }
    return nn::gather_cols(param("token_lookup"), idx);
  }
  nn::Matrix<S> m = nn::Matrix<S>::Zero(dim, static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t b = 0; b < tokens.size(); ++b) {
    if (tokens[b] != nullptr) m.col(static_cast<Eigen::Index>(b)) = get_noncontextual(*embeddings_, *tokens[b]).cast<S>();
  }
  return tape_.constant(std::move(m));
}

template <class S>
nn::Var<S> Network<S>::contextual_columns(std::span<const Sentence* const> sentences, int position) {
  const int dim = model_.config.embed_dim;
  if (model_.config.trainable_embeddings) {
    std::vector<const std::string*> tokens;
    for (const Sentence* s : sentences) {
      tokens.push_back(position <= s->length() ? &s->tokens[static_cast<std::size_t>(position - 1)] : nullptr);
    }
    return token_columns(tokens);
  }
  nn::Matrix<S> m = nn::Matrix<S>::Zero(dim, static_cast<Eigen::Index>(sentences.size()));
  for (std::size_t b = 0; b < sentences.size(); ++b) {
    const Sentence* s = sentences[b];
    if (position <= s->length()) {
      m.col(static_cast<Eigen::Index>(b)) = get_contextual(*embeddings_, s->sentence_id, position).cast<S>();
    }
  }
  return tape_.constant(std::move(m));
}

template <class S>
EncodedBatch<S> Network<S>::encode_sentences(std::span<const Sentence* const> sentences) {
  const ModelConfig& c = model_.config;
  if (!c.use_word_encoder) throw std::logic_error("encode_sentences: the word encoder is disabled");
  if (sentences.empty()) throw nn::ShapeError("encode_sentences: empty batch");
  EncodedBatch<S> enc;
  for (const Sentence* s : sentences) {
    enc.lengths.push_back(s->length());
    enc.steps = std::max(enc.steps, s->length());
  }
  const auto batch = static_cast<Eigen::Index>(sentences.size());
  std::vector<nn::Var<S>> seq;
  for (int j = 1; j <= enc.steps; ++j) {
    seq.push_back(nn::dropout(contextual_columns(sentences, j), c.dropout_embed, mode_, rng_));
  }
  std::vector<nn::BiLstmLayer<S>> layers;
  for (int l = 0; l < c.bilstm_layers; ++l) {
    const int in = l == 0 ? c.embed_dim : 2 * c.bilstm_units;
    layers.push_back({nn::bind(tape_, model_.params, lstm_spec(word_layer(l, true), in, c.bilstm_units)),
                      nn::bind(tape_, model_.params, lstm_spec(word_layer(l, false), in, c.bilstm_units))});
  }
  std::vector<nn::Var<S>> out =
      nn::run_bilstm(tape_, seq, layers, enc.lengths, nn::RecurrentDropout{c.dropout_recurrent, mode_}, rng_);
  if (c.use_word_length) {
    for (int j = 1; j <= enc.steps; ++j) {
      nn::Matrix<S> len = nn::Matrix<S>::Zero(1, batch);
      for (Eigen::Index b = 0; b < batch; ++b) {
        const Sentence* s = sentences[static_cast<std::size_t>(b)];
        if (j <= s->length()) {
          len(0, b) = static_cast<S>(
              zscore(s->token_lengths[static_cast<std::size_t>(j - 1)], norm_.wordlen_mean, norm_.wordlen_std));
        }
      }
      auto& zj = out[static_cast<std::size_t>(j - 1)];
      zj = nn::concat_rows<S>({zj, tape_.constant(std::move(len))});
    }
  }
  enc.z = nn::hstack(out);
  return enc;
}

template <class S>
FixationState<S> Network<S>::initial_state(Eigen::Index batch) {
  FixationState<S> st;
  for (int l = 0; l < model_.config.lstm_layers; ++l) {
    st.layers.push_back(nn::zero_state(tape_, model_.config.lstm_units, batch));
  }
  return st;
}

template <class S>
nn::Var<S> Network<S>::encode_fixation_step(FixationState<S>& state, const StepBatch& step) {
  const ModelConfig& c = model_.config;
  const auto batch = static_cast<Eigen::Index>(step.location.size());
  if (step.token.size() != step.location.size() || step.duration_z.size() != step.location.size() ||
      step.landing_z.size() != step.location.size()) {
    throw nn::ShapeError("encode_fixation_step: ragged step batch");
  }
  for (int loc : step.location) {
    if (loc < 0 || loc > model_.max_len) {
      throw DataError("fixation location " + std::to_string(loc) + " exceeds the position table (M=" +
                      std::to_string(model_.max_len) + ")");
    }
  }
  nn::Var<S> x = token_columns(step.token) + nn::gather_cols(param("position_embedding"), step.location);
  std::vector<nn::Var<S>> parts{x};
  if (c.use_duration) {
    nn::Matrix<S> d(1, batch);
    for (Eigen::Index b = 0; b < batch; ++b) d(0, b) = static_cast<S>(step.duration_z[static_cast<std::size_t>(b)]);
    parts.push_back(tape_.constant(std::move(d)));
  }
  if (c.use_landing) {
    nn::Matrix<S> d(1, batch);
    for (Eigen::Index b = 0; b < batch; ++b) d(0, b) = static_cast<S>(step.landing_z[static_cast<std::size_t>(b)]);
    parts.push_back(tape_.constant(std::move(d)));
  }
  if (c.reader_embedding > 0) {
    if (step.reader.size() != step.location.size()) throw nn::ShapeError("encode_fixation_step: missing reader columns");
    parts.push_back(nn::gather_cols(param("reader_embedding"), step.reader));
  }
  nn::Var<S> in = parts.size() == 1 ? x : nn::concat_rows(parts);
  std::vector<nn::LstmVars<S>> layers;
  for (int l = 0; l < c.lstm_layers; ++l) {
    const int width = l == 0 ? c.fixation_input_dim() : c.lstm_units;
    layers.push_back(nn::bind(tape_, model_.params, lstm_spec(fixation_layer(l), width, c.lstm_units)));
  }
  return nn::lstm_stack_step(in, state.layers, layers, nn::RecurrentDropout{c.dropout_recurrent, mode_}, rng_);
}

template <class S>
AttentionOutput<S> Network<S>::attention_weights(const nn::Var<S>& h, const EncodedBatch<S>& enc,
                                                 const std::vector<int>& f_prev) {
  const ModelConfig& c = model_.config;
  const auto batch = static_cast<Eigen::Index>(enc.lengths.size());
  if (static_cast<Eigen::Index>(f_prev.size()) != batch || h.cols() != batch) {
    throw nn::ShapeError("attention_weights: batch mismatch");
  }
  nn::Var<S> q = nn::matmul_tn(param("attention.w_a"), h);
  nn::Var<S> scores = nn::block_scores(q, enc.z);
  nn::Matrix<S> mask = nn::Matrix<S>::Zero(enc.steps, batch);
  nn::Matrix<S> kernel = nn::Matrix<S>::Zero(enc.steps, batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const int m = enc.lengths[static_cast<std::size_t>(b)];
    const int f = f_prev[static_cast<std::size_t>(b)];
    if (f < 0 || f > m) throw DataError("attention: previous fixation " + std::to_string(f) + " outside [0, m]");
    const Window w = attention_window(f, m, c);
    for (int n = w.first; n <= w.last; ++n) {
      mask(n - 1, b) = S(1);
      kernel(n - 1, b) = static_cast<S>(kernel_value(n, f, c));
    }
  }
  AttentionOutput<S> out;
  out.pre_kernel = nn::masked_softmax(scores, mask);
  out.weights = c.kernel == KernelKind::gaussian ? nn::cmul_const(out.pre_kernel, kernel) : out.pre_kernel;
  return out;
}

template <class S>
nn::Var<S> Network<S>::context_vector(const nn::Var<S>& weights, const EncodedBatch<S>& enc) {
  return nn::block_combine(weights, enc.z);
}

template <class S>
nn::Var<S> Network<S>::decode(const nn::Var<S>& c, const nn::Var<S>& h) {
  const ModelConfig& cfg = model_.config;
  nn::Var<S> x = cfg.use_word_encoder ? nn::concat_rows<S>({c, h}) : h;
  for (int k = 0; k < 4; ++k) {
    x = nn::dropout(x, cfg.dropout_dense, mode_, rng_);
    const std::string name = dense_layer(k);
    x = nn::relu(nn::affine(param(name + ".weight"), x, param(name + ".bias")));
  }
  return nn::affine(param("decoder.head.weight"), x, param("decoder.head.bias"));
}

// ---------------------------------------------------------------------------

template <class S>
ForwardOutput<S> forward_batch(nn::Tape<S>& tape, const Model<S>& model, std::span<const Sentence* const> sentences,
                               std::span<const Scanpath* const> scanpaths, const NormStats& norm,
                               const EmbeddingSet* embeddings, nn::Mode mode, nn::Rng& rng, ForwardOptions options) {
  if (sentences.size() != scanpaths.size() || sentences.empty()) {
    throw nn::ShapeError("forward_batch: need one sentence per scanpath");
  }
  const ModelConfig& c = model.config;
  const int M = model.max_len;
  const std::size_t batch = scanpaths.size();

  ForwardOutput<S> out;
  int steps = 0;
  std::vector<int> reader_col(batch, -1);
  for (std::size_t b = 0; b < batch; ++b) {
    const Sentence& s = *sentences[b];
    const Scanpath& sp = *scanpaths[b];
    if (sp.sentence_id != s.sentence_id) throw DataError("forward_batch: scanpath/sentence mismatch");
    if (s.length() > M) {
      throw DataError("sentence \"" + s.sentence_id + "\" has " + std::to_string(s.length()) +
                      " tokens, more than the model's M=" + std::to_string(M));
    }
    validate_scanpath(sp, s);
    out.targets.push_back(target_classes(sp, M));
    steps = std::max(steps, static_cast<int>(out.targets.back().size()));
    if (c.reader_embedding > 0) reader_col[b] = model.reader_column(sp.reader_id);
  }

  Network<S> net(tape, model, norm, embeddings, mode, rng);
  EncodedBatch<S> enc;
  if (c.use_word_encoder) enc = net.encode_sentences(sentences);
  FixationState<S> state = net.initial_state(static_cast<Eigen::Index>(batch));

  out.scanpath_nll.assign(batch, 0.0);
  if (options.keep_probs) {
    for (std::size_t b = 0; b < batch; ++b) {
      out.probs.emplace_back(num_classes(M), static_cast<Eigen::Index>(out.targets[b].size()));
    }
  }
  if (options.keep_attention) {
    for (std::size_t b = 0; b < batch; ++b) {
      out.attention.push_back(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out.targets[b].size()),
                                                    sentences[b]->length()));
    }
  }

  nn::Var<S> loss;
  const S inv_batch = S(1) / static_cast<S>(batch);
  for (int t = 0; t < steps; ++t) {
    StepBatch step;
    std::vector<int> targets(batch, 0);
    std::vector<S> weights(batch, S(0));
    for (std::size_t b = 0; b < batch; ++b) {
      const Scanpath& sp = *scanpaths[b];
      const int n_steps = static_cast<int>(out.targets[b].size());
      int loc = 0;
      const std::string* tok = nullptr;
      double dz = 0.0, lz = 0.0;
      if (t < n_steps) {
        if (t > 0) {
          const Fixation& f = sp.fixations[static_cast<std::size_t>(t - 1)];
          loc = f.word_index;
          tok = &sentences[b]->tokens[static_cast<std::size_t>(loc - 1)];
          dz = zscore(f.duration, norm.duration_mean, norm.duration_std);
          lz = zscore(f.landing_pos, norm.landing_mean, norm.landing_std);
        }
        targets[b] = out.targets[b][static_cast<std::size_t>(t)];
        weights[b] = inv_batch / static_cast<S>(n_steps);
      }
      step.location.push_back(loc);
      step.token.push_back(tok);
      step.duration_z.push_back(dz);
      step.landing_z.push_back(lz);
      step.reader.push_back(reader_col[b]);
    }
    nn::Var<S> h = net.encode_fixation_step(state, step);
    nn::Var<S> ctx;
    AttentionOutput<S> att;
    if (c.use_word_encoder) {
      att = net.attention_weights(h, enc, step.location);
      ctx = net.context_vector(att.weights, enc);
    }
    nn::Var<S> logits = net.decode(ctx, h);
    nn::Var<S> term = nn::softmax_nll(logits, targets, weights);
    loss = loss.valid() ? loss + term : term;

    const auto& lv = logits.value();
    for (std::size_t b = 0; b < batch; ++b) {
      if (weights[b] == S(0)) continue;
      const auto col = lv.col(static_cast<Eigen::Index>(b));
      const S mx = col.maxCoeff();
      const S lse = mx + std::log((col.array() - mx).exp().sum());
      out.scanpath_nll[b] += static_cast<double>(lse - col(targets[b]));
      if (options.keep_probs) {
        out.probs[b].col(t) = (col.array() - lse).exp().matrix().template cast<double>();
      }
      if (options.keep_attention && c.use_word_encoder) {
        const int m = sentences[b]->length();
        out.attention[b].row(t) =
            att.weights.value().col(static_cast<Eigen::Index>(b)).head(m).transpose().template cast<double>();
      }
    }
  }
  for (std::size_t b = 0; b < batch; ++b) out.scanpath_nll[b] /= static_cast<double>(out.targets[b].size());
  out.loss = loss;
  return out;
}

template struct Model<float>;
template struct Model<double>;
template class Network<float>;
template class Network<double>;
template Model<float> make_model<float>(const ModelConfig&, int, const std::vector<std::string>&, const Corpus*,
                                        std::uint64_t);
template Model<double> make_model<double>(const ModelConfig&, int, const std::vector<std::string>&, const Corpus*,
                                          std::uint64_t);
template ForwardOutput<float> forward_batch<float>(nn::Tape<float>&, const Model<float>&,
                                                   std::span<const Sentence* const>, std::span<const Scanpath* const>,
                                                   const NormStats&, const EmbeddingSet*, nn::Mode, nn::Rng&,
                                                   ForwardOptions);
template ForwardOutput<double> forward_batch<double>(nn::Tape<double>&, const Model<double>&,
                                                     std::span<const Sentence* const>,
                                                     std::span<const Scanpath* const>, const NormStats&,
                                                     const EmbeddingSet*, nn::Mode, nn::Rng&, ForwardOptions);

}  // namespace scanpath
