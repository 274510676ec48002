#include "scanpath/train.hpp"

#include "scanpath/binary_io.hpp"
#include "scanpath/nn/adam.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace scanpath {

using nlohmann::json;

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& text) {
  if (text == "f32" || text == "float" || text == "32") return Precision::f32;
  if (text == "f64" || text == "double" || text == "64") return Precision::f64;
  throw std::invalid_argument("unknown precision \"" + text + "\" (expected f32 or f64)");
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train config: lr must be finite and >= 0");
  if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
  if (patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("train config: validation_fraction must lie in (0, 1)");
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr", c.lr},
           {"max_epochs", c.max_epochs},
           {"patience", c.patience},
           {"batch_size", c.batch_size},
           {"validation_fraction", c.validation_fraction},
           {"seed", c.seed},
           {"precision", to_string(c.precision)}};
}

void from_json(const json& j, TrainConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const std::array<const char*, 7> known{"lr",   "max_epochs", "patience", "batch_size", "validation_fraction",
                                                  "seed", "precision"};
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
      throw std::invalid_argument("train config: unknown key \"" + it.key() + "\"");
    }
  }
  if (j.contains("lr")) j.at("lr").get_to(c.lr);
  if (j.contains("max_epochs")) j.at("max_epochs").get_to(c.max_epochs);
  if (j.contains("patience")) j.at("patience").get_to(c.patience);
  if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
  if (j.contains("validation_fraction")) j.at("validation_fraction").get_to(c.validation_fraction);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("precision")) c.precision = parse_precision(j.at("precision").get<std::string>());
}

void to_json(json& j, const TrainHistory& h) {
  json epochs = json::array();
  for (const auto& e : h.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation_nll", e.validation_nll}});
  }
  j = json{{"epochs", epochs},
           {"best_epoch", h.best_epoch},
           {"best_validation_nll", std::isfinite(h.best_validation_nll) ? json(h.best_validation_nll) : json(nullptr)},
           {"stopped_early", h.stopped_early},
           {"train_scanpaths", h.train_scanpaths},
           {"validation_scanpaths", h.validation_scanpaths}};
}

void from_json(const json& j, TrainHistory& h) {
  h = TrainHistory{};
  for (const auto& e : j.at("epochs")) {
    h.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("validation_nll").get<double>()});
  }
  h.best_epoch = j.at("best_epoch").get<int>();
  const auto& best = j.at("best_validation_nll");
  h.best_validation_nll = best.is_null() ? std::numeric_limits<double>::infinity() : best.get<double>();
  h.stopped_early = j.at("stopped_early").get<bool>();
  h.train_scanpaths = j.value("train_scanpaths", std::size_t{0});
  h.validation_scanpaths = j.value("validation_scanpaths", std::size_t{0});
}

int corpus_max_length(const Corpus& corpus) {
  int m = 0;
  for (const auto& [_, s] : corpus.sentences) m = std::max(m, s.length());
  return m;
}

std::vector<std::size_t> sample_instances(std::size_t corpus_size, std::size_t k, std::uint64_t seed) {
  if (k > corpus_size) {
    throw std::invalid_argument("cannot sample " + std::to_string(k) + " instances from " +
                                std::to_string(corpus_size) + " scanpaths");
  }
  std::vector<std::size_t> all(corpus_size);
  std::iota(all.begin(), all.end(), std::size_t{0});
  nn::Rng rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

namespace {

struct Batch {
  std::vector<const Sentence*> sentences;
  std::vector<const Scanpath*> scanpaths;
};

Batch make_batch(const Corpus& corpus, std::span<const std::size_t> indices) {
  Batch b;
  for (std::size_t i : indices) {
    const Scanpath& sp = corpus.scanpaths.at(i);
    b.scanpaths.push_back(&sp);
    b.sentences.push_back(&corpus.sentence_of(sp));
  }
  return b;
}

void check_lengths(const Corpus& corpus, std::span<const std::size_t> indices, int max_len) {
  for (std::size_t i : indices) {
    const Sentence& s = corpus.sentence_of(corpus.scanpaths.at(i));
    if (s.length() > max_len) {
      throw DataError("sentence \"" + s.sentence_id + "\" has " + std::to_string(s.length()) +
                      " tokens, more than the model's M=" + std::to_string(max_len));
    }
  }
}

template <class S>
bool all_finite(const nn::ParamStore<S>& params) {
  for (const auto& [_, p] : params) {
    if (!p.value.allFinite()) return false;
  }
  return true;
}

/// Shared optimisation loop for train and fine_tune.
template <class S>
void fit(Checkpoint<S>& ckpt, const Corpus& corpus, std::vector<std::size_t> pool, const EmbeddingSet* embeddings,
         const TrainConfig& cfg) {
  nn::Rng rng(cfg.seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<std::size_t> train_idx, val_idx;
  if (pool.size() == 1) {
    train_idx = val_idx = pool;
  } else {
    auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(pool.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, pool.size() - 1);
    val_idx.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
  }
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  TrainHistory& hist = ckpt.history;
  hist = TrainHistory{};
  hist.train_scanpaths = train_idx.size();
  hist.validation_scanpaths = val_idx.size();

  Model<S>& model = ckpt.model;
  nn::AdamState<S> adam;
  adam.lr = cfg.lr;
  nn::ParamStore<S> best = model.params;
  model.params.zero_grad();
  int since_best = 0;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += bs, ++batch_no) {
      const std::size_t end = std::min(train_idx.size(), start + bs);
      std::span<const std::size_t> slice(train_idx.data() + start, end - start);
      Batch b = make_batch(corpus, slice);
      nn::Tape<S> tape;
      auto out = forward_batch<S>(tape, model, b.sentences, b.scanpaths, ckpt.norm, embeddings, nn::Mode::train, rng);
      const double loss = static_cast<double>(out.loss.value()(0, 0));
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no + 1));
      }
      tape.backward(out.loss);
      nn::adam_step(model.params, adam);
      model.params.zero_grad();
      if (!all_finite(model.params)) {
        throw NumericError("non-finite parameters after epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no + 1));
      }
      loss_sum += loss * static_cast<double>(end - start);
    }
    const auto val = scanpath_nlls(model, ckpt.norm, corpus, val_idx, embeddings, cfg.batch_size);
    const double val_nll = std::accumulate(val.begin(), val.end(), 0.0) / static_cast<double>(val.size());
    if (!std::isfinite(val_nll)) throw NumericError("non-finite validation NLL at epoch " + std::to_string(epoch));
    hist.epochs.push_back({epoch, loss_sum / static_cast<double>(train_idx.size()), val_nll});
    if (val_nll < hist.best_validation_nll) {
      hist.best_validation_nll = val_nll;
      hist.best_epoch = epoch;
      best = model.params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      hist.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  model.params = std::move(best);
  model.params.zero_grad();
}

}  // namespace

template <class S>
std::vector<double> scanpath_nlls(const Model<S>& model, const NormStats& norm, const Corpus& corpus,
                                  std::span<const std::size_t> indices, const EmbeddingSet* embeddings,
                                  int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("scanpath_nlls: batch_size must be >= 1");
  std::vector<double> out;
  out.reserve(indices.size());
  nn::Rng rng(0);  // unused in eval mode
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < indices.size(); start += bs) {
    const std::size_t end = std::min(indices.size(), start + bs);
    Batch b = make_batch(corpus, indices.subspan(start, end - start));
    nn::Tape<S> tape(false);
    auto fo = forward_batch<S>(tape, model, b.sentences, b.scanpaths, norm, embeddings, nn::Mode::eval, rng);
    out.insert(out.end(), fo.scanpath_nll.begin(), fo.scanpath_nll.end());
  }
  return out;
}

template <class S>
Checkpoint<S> train(const Corpus& corpus, std::span<const std::size_t> train_indices, const EmbeddingSet* embeddings,
                    const ModelConfig& model_config, const TrainConfig& train_config) {
  train_config.validate();
  model_config.validate();
  if (train_indices.empty()) throw DataError("train: the fold's training set is empty");
  const int max_len = model_config.max_sentence_length > 0 ? model_config.max_sentence_length
                                                           : corpus_max_length(corpus);
  check_lengths(corpus, train_indices, max_len);
  if (embeddings != nullptr && !model_config.trainable_embeddings) check_coverage(*embeddings, corpus);

  std::vector<std::string> readers;
  for (std::size_t i : train_indices) readers.push_back(corpus.scanpaths.at(i).reader_id);
  std::sort(readers.begin(), readers.end());
  readers.erase(std::unique(readers.begin(), readers.end()), readers.end());

  Checkpoint<S> ckpt;
  ckpt.train_config = train_config;
  ckpt.norm = compute_norm_stats(corpus, train_indices);
  ckpt.model = make_model<S>(model_config, max_len, readers, &corpus, train_config.seed ^ 0x5eedULL);
  fit(ckpt, corpus, std::vector<std::size_t>(train_indices.begin(), train_indices.end()), embeddings, train_config);
  return ckpt;
}

template <class S>
Checkpoint<S> fine_tune(const Checkpoint<S>& base, const Corpus& corpus, const EmbeddingSet* embeddings,
                        std::size_t k_instances, const TrainConfig& train_config) {
  train_config.validate();
  if (k_instances == 0) return base;
  const auto picked = sample_instances(corpus.scanpaths.size(), k_instances, train_config.seed);
  check_lengths(corpus, picked, base.model.max_len);
  Checkpoint<S> ckpt = base;
  ckpt.train_config = train_config;
  fit(ckpt, corpus, picked, embeddings, train_config);
  return ckpt;
}

// ---------------------------------------------------------------------------
// EYCKPT1

namespace {

constexpr std::array<char, 8> kCkptMagic{'E', 'Y', 'C', 'K', 'P', 'T', '1', '\0'};
constexpr std::uint32_t kCkptVersion = 1;

json read_header(std::istream& in, const std::string& where) {
  std::array<char, 8> magic{};
  io::read_bytes(in, magic.data(), magic.size(), "magic");
  if (magic != kCkptMagic) throw io::FormatError(where + ": bad magic, not an EYCKPT1 file");
  const auto version = io::read_pod<std::uint32_t>(in, "version");
  if (version != kCkptVersion) {
    throw io::FormatError(where + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCkptVersion) + ")");
  }
  const auto len = io::read_pod<std::uint64_t>(in, "config length");
  std::string text(len, '\0');
  io::read_bytes(in, text.data(), len, "config JSON");
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw io::FormatError(where + ": corrupt config JSON: " + e.what());
  }
}

/// Parameter names and shapes implied by a config, M, reader and vocab counts.
std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> expected_shapes(const ModelConfig& config, int max_len,
                                                                            const std::vector<std::string>& readers,
                                                                            std::size_t vocab_size) {
  ModelConfig c = config;
  c.trainable_embeddings = false;
  const Model<double> skeleton = make_model<double>(c, max_len, readers, nullptr, 0);
  std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> shapes;
  for (const auto& [name, p] : skeleton.params) shapes[name] = {p.value.rows(), p.value.cols()};
  if (config.trainable_embeddings) {
    shapes["token_lookup"] = {config.embed_dim, static_cast<Eigen::Index>(vocab_size)};
  }
  return shapes;
}

template <class T, class S>
nn::Matrix<S> read_tensor_data(std::istream& in, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  nn::Matrix<T> m(rows, cols);
  io::read_bytes(in, m.data(), sizeof(T) * static_cast<std::size_t>(m.size()), what);
  return m.template cast<S>();
}

}  // namespace

Precision checkpoint_precision(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::FormatError("cannot open " + path.string());
  return parse_precision(read_header(in, path.string()).at("precision").get<std::string>());
}

template <class S>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<S>& ckpt) {
  const Precision prec = std::is_same_v<S, float> ? Precision::f32 : Precision::f64;
  json header{{"model_config", ckpt.model.config},
              {"norm", ckpt.norm},
              {"max_len", ckpt.model.max_len},
              {"train_config", ckpt.train_config},
              {"history", ckpt.history},
              {"precision", to_string(prec)},
              {"readers", ckpt.model.readers},
              {"vocab", ckpt.model.vocab}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io::FormatError("cannot write " + path.string());
  io::write_bytes(out, kCkptMagic.data(), kCkptMagic.size());
  io::write_pod<std::uint32_t>(out, kCkptVersion);
  io::write_pod<std::uint64_t>(out, text.size());
  io::write_bytes(out, text.data(), text.size());
  io::write_pod<std::uint64_t>(out, ckpt.model.params.size());
  for (const auto& [name, p] : ckpt.model.params) {
    io::write_short_string(out, name);
    io::write_pod<std::uint8_t>(out, 2);
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rows()));
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.cols()));
    io::write_bytes(out, p.value.data(), sizeof(S) * static_cast<std::size_t>(p.value.size()));
  }
  if (!out) throw io::FormatError("write failed for " + path.string());
}

template <class S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::FormatError("cannot open " + where);
  const json header = read_header(in, where);

  Checkpoint<S> ckpt;
  Model<S>& model = ckpt.model;
  try {
    header.at("model_config").get_to(model.config);
    model.config.validate();
    model.max_len = header.at("max_len").get<int>();
    header.at("norm").get_to(ckpt.norm);
    header.at("train_config").get_to(ckpt.train_config);
    header.at("history").get_to(ckpt.history);
    header.at("readers").get_to(model.readers);
    header.at("vocab").get_to(model.vocab);
  } catch (const json::exception& e) {
    throw io::FormatError(where + ": malformed checkpoint header: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw io::FormatError(where + ": " + e.what());
  }
  const Precision prec = parse_precision(header.at("precision").get<std::string>());

  std::vector<std::string> readers(model.readers.size());
  for (const auto& [id, col] : model.readers) {
    if (col < 0 || static_cast<std::size_t>(col) >= readers.size()) {
      throw io::FormatError(where + ": reader column out of range for \"" + id + "\"");
    }
    readers[static_cast<std::size_t>(col)] = id;
  }
  const auto shapes = expected_shapes(model.config, model.max_len, readers, model.vocab.size());
  std::vector<std::string> order;
  for (const auto& [name, _] : shapes) order.push_back(name);

  const auto count = io::read_pod<std::uint64_t>(in, "tensor count");
  if (count != shapes.size()) {
    throw io::FormatError(where + ": checkpoint holds " + std::to_string(count) + " tensors, the config implies " +
                          std::to_string(shapes.size()));
  }
  for (std::size_t t = 0; t < order.size(); ++t) {
    const std::string what = "tensor \"" + order[t] + "\"";
    const std::string name = io::read_short_string(in, what);
    auto it = shapes.find(name);
    if (it == shapes.end()) throw io::FormatError(where + ": unexpected tensor \"" + name + "\"");
    const auto rank = io::read_pod<std::uint8_t>(in, what);
    if (rank != 2) throw io::FormatError(where + ": tensor \"" + name + "\" has rank " + std::to_string(rank));
    const auto rows = static_cast<Eigen::Index>(io::read_pod<std::uint32_t>(in, what));
    const auto cols = static_cast<Eigen::Index>(io::read_pod<std::uint32_t>(in, what));
    if (rows != it->second.first || cols != it->second.second) {
      throw io::FormatError(where + ": tensor \"" + name + "\" has shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", the config implies " + std::to_string(it->second.first) + "x" +
                            std::to_string(it->second.second));
    }
    const std::string data_what = "tensor \"" + name + "\" data";
    model.params.add(name, prec == Precision::f32 ? read_tensor_data<float, S>(in, rows, cols, data_what)
                                                  : read_tensor_data<double, S>(in, rows, cols, data_what));
  }
  return ckpt;
}

template Checkpoint<float> train<float>(const Corpus&, std::span<const std::size_t>, const EmbeddingSet*,
                                        const ModelConfig&, const TrainConfig&);
template Checkpoint<double> train<double>(const Corpus&, std::span<const std::size_t>, const EmbeddingSet*,
                                          const ModelConfig&, const TrainConfig&);
template Checkpoint<float> fine_tune<float>(const Checkpoint<float>&, const Corpus&, const EmbeddingSet*, std::size_t,
                                            const TrainConfig&);
template Checkpoint<double> fine_tune<double>(const Checkpoint<double>&, const Corpus&, const EmbeddingSet*,
                                              std::size_t, const TrainConfig&);
template std::vector<double> scanpath_nlls<float>(const Model<float>&, const NormStats&, const Corpus&,
                                                  std::span<const std::size_t>, const EmbeddingSet*, int);
template std::vector<double> scanpath_nlls<double>(const Model<double>&, const NormStats&, const Corpus&,
                                                   std::span<const std::size_t>, const EmbeddingSet*, int);
template void save_checkpoint<float>(const std::filesystem::path&, const Checkpoint<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const Checkpoint<double>&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace scanpath
