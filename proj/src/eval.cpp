#include "scanpath/eval.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <tuple>

namespace scanpath {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Predictors

ConstantPredictor::ConstantPredictor(Eigen::VectorXd probs, int max_len) : probs_(std::move(probs)), max_len_(max_len) {
  if (probs_.size() != num_classes(max_len)) {
    throw nn::ShapeError("constant predictor: expected " + std::to_string(num_classes(max_len)) + " probabilities");
  }
}

std::vector<Eigen::MatrixXd> ConstantPredictor::predict(const Corpus& corpus,
                                                        std::span<const std::size_t> indices) const {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto steps = static_cast<Eigen::Index>(corpus.scanpaths.at(i).fixations.size() + 1);
    out.push_back(probs_.replicate(1, steps));
  }
  return out;
}

template <class S>
std::vector<Eigen::MatrixXd> ModelPredictor<S>::predict(const Corpus& corpus,
                                                        std::span<const std::size_t> indices) const {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(indices.size());
  nn::Rng rng(0);
  ForwardOptions opts;
  opts.keep_probs = true;
  const auto bs = static_cast<std::size_t>(std::max(1, batch_size_));
  for (std::size_t start = 0; start < indices.size(); start += bs) {
    const std::size_t end = std::min(indices.size(), start + bs);
    std::vector<const Sentence*> sentences;
    std::vector<const Scanpath*> scanpaths;
    for (std::size_t k = start; k < end; ++k) {
      const Scanpath& sp = corpus.scanpaths.at(indices[k]);
      scanpaths.push_back(&sp);
      sentences.push_back(&corpus.sentence_of(sp));
    }
    nn::Tape<S> tape(false);
    auto fo = forward_batch<S>(tape, ckpt_.model, sentences, scanpaths, ckpt_.norm, embeddings_, nn::Mode::eval, rng,
                               opts);
    for (auto& p : fo.probs) out.push_back(std::move(p));
  }
  return out;
}

ConstantPredictor uniform_predictor(int max_len) {
  if (max_len < 1) throw std::invalid_argument("uniform predictor: M must be >= 1");
  const int c = num_classes(max_len);
  return ConstantPredictor(Eigen::VectorXd::Constant(c, 1.0 / c), max_len);
}

Eigen::VectorXd label_distribution(std::span<const int> target_classes, int max_len, double alpha) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("label distribution: alpha must be >= 0");
  if (target_classes.empty()) throw std::invalid_argument("label distribution: no training targets");
  const int c = num_classes(max_len);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(c);
  for (int t : target_classes) {
    if (t < 0 || t >= c) throw std::out_of_range("label distribution: class " + std::to_string(t) + " out of range");
    counts(t) += 1.0;
  }
  const double denom = static_cast<double>(target_classes.size()) + alpha * c;
  return (counts.array() + alpha).matrix() / denom;
}

ConstantPredictor train_label_predictor(const Corpus& corpus, std::span<const std::size_t> train_indices, int max_len,
                                        double alpha) {
  std::vector<int> targets;
  for (std::size_t i : train_indices) {
    const auto t = target_classes(corpus.scanpaths.at(i), max_len);
    targets.insert(targets.end(), t.begin(), t.end());
  }
  return ConstantPredictor(label_distribution(targets, max_len, alpha), max_len);
}

// ---------------------------------------------------------------------------
// NLL

std::pair<double, double> mean_and_se(std::span<const double> values) {
  if (values.empty()) return {std::numeric_limits<double>::quiet_NaN(), 0.0};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

std::vector<double> group_means(std::span<const double> values, std::span<const std::string> keys) {
  if (values.size() != keys.size()) throw std::invalid_argument("group_means: values/keys size mismatch");
  std::map<std::string, std::pair<double, int>> acc;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& [sum, n] = acc[keys[i]];
    sum += values[i];
    ++n;
  }
  std::vector<double> out;
  for (const auto& [_, sn] : acc) out.push_back(sn.first / sn.second);
  return out;
}

namespace {

/// Step NLLs and target classes of every requested scanpath.
struct StepLosses {
  std::vector<std::vector<double>> nll;
  std::vector<std::vector<int>> targets;
};

StepLosses step_losses(const Predictor& predictor, const Corpus& corpus, std::span<const std::size_t> indices) {
  const int M = predictor.max_len();
  const auto probs = predictor.predict(corpus, indices);
  if (probs.size() != indices.size()) throw std::logic_error("predictor returned the wrong number of scanpaths");
  StepLosses out;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Scanpath& sp = corpus.scanpaths.at(indices[k]);
    auto targets = target_classes(sp, M);
    const Eigen::MatrixXd& p = probs[k];
    if (p.rows() != num_classes(M) || p.cols() != static_cast<Eigen::Index>(targets.size())) {
      throw nn::ShapeError("predictor output for scanpath " + std::to_string(indices[k]) + " has shape " +
                           std::to_string(p.rows()) + "x" + std::to_string(p.cols()));
    }
    std::vector<double> nll;
    for (Eigen::Index t = 0; t < p.cols(); ++t) {
      const double total = p.col(t).sum();
      if (!(std::abs(total - 1.0) <= 1e-5) || (p.col(t).array() < 0.0).any()) {
        throw NumericError("predictor distribution at step " + std::to_string(t) + " of scanpath " +
                           std::to_string(indices[k]) + " is not normalised (sum " + std::to_string(total) + ")");
      }
      nll.push_back(-std::log(p(targets[static_cast<std::size_t>(t)], t)));
    }
    out.nll.push_back(std::move(nll));
    out.targets.push_back(std::move(targets));
  }
  return out;
}

}  // namespace

NllReport evaluate_nll(const Predictor& predictor, const Corpus& corpus, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("evaluate_nll: no scanpaths to evaluate");
  const StepLosses losses = step_losses(predictor, corpus, indices);
  NllReport r;
  for (const auto& steps : losses.nll) {
    r.per_scanpath.push_back(std::accumulate(steps.begin(), steps.end(), 0.0) / static_cast<double>(steps.size()));
  }
  std::tie(r.mean, r.standard_error) = mean_and_se(r.per_scanpath);
  return r;
}

// ---------------------------------------------------------------------------
// Edit distance

int levenshtein(std::span<const int> s, std::span<const int> t) {
  std::vector<int> prev(t.size() + 1), cur(t.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= s.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= t.size(); ++j) {
      const int sub = prev[j - 1] + (s[i - 1] == t[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[t.size()];
}

double nld(std::span<const int> s, std::span<const int> t) {
  const std::size_t longest = std::max(s.size(), t.size());
  if (longest == 0) throw std::invalid_argument("nld: both sequences are empty");
  return static_cast<double>(levenshtein(s, t)) / static_cast<double>(longest);
}

namespace {

/// One generated scanpath per requested scanpath, aligned with `indices`.
/// Samples are drawn per (sentence, reader) group so a sentence is encoded once.
template <class S>
std::vector<GeneratedScanpath> generate_matching(const Checkpoint<S>& ckpt, const Corpus& corpus,
                                                 std::span<const std::size_t> indices, const EmbeddingSet* embeddings,
                                                 std::uint64_t seed, const GenerateOptions& options) {
  const bool per_reader = ckpt.model.config.reader_embedding > 0;
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Scanpath& sp = corpus.scanpaths.at(indices[k]);
    groups[{sp.sentence_id, per_reader ? sp.reader_id : std::string()}].push_back(k);
  }
  std::vector<GeneratedScanpath> out(indices.size());
  std::uint64_t ordinal = 0;
  for (const auto& [key, members] : groups) {
    GenerateOptions opts = options;
    if (per_reader) opts.reader_id = key.second;
    auto samples = generate(corpus.sentences.at(key.first), embeddings, ckpt, static_cast<int>(members.size()),
                            sample_seed(seed, ordinal++), opts);
    for (std::size_t i = 0; i < members.size(); ++i) out[members[i]] = std::move(samples[i]);
  }
  return out;
}

NldReport summarise(std::vector<double> values) {
  NldReport r;
  r.per_scanpath = std::move(values);
  std::tie(r.mean, r.standard_error) = mean_and_se(r.per_scanpath);
  return r;
}

}  // namespace

template <class S>
NldReport evaluate_nld(const Checkpoint<S>& ckpt, const Corpus& corpus, std::span<const std::size_t> indices,
                       const EmbeddingSet* embeddings, std::uint64_t seed, const GenerateOptions& options) {
  if (indices.empty()) throw std::invalid_argument("evaluate_nld: no scanpaths to evaluate");
  const auto generated = generate_matching(ckpt, corpus, indices, embeddings, seed, options);
  std::vector<double> values;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    values.push_back(nld(corpus.scanpaths.at(indices[k]).word_indices(), generated[k].scanpath.word_indices()));
  }
  return summarise(std::move(values));
}

NldReport human_nld(const Corpus& corpus, std::span<const std::size_t> indices, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_sentence;
  for (std::size_t i : indices) by_sentence[corpus.scanpaths.at(i).sentence_id].push_back(i);
  nn::Rng rng(seed);
  std::vector<double> values;
  for (std::size_t i : indices) {
    const auto& peers = by_sentence[corpus.scanpaths.at(i).sentence_id];
    if (peers.size() < 2) continue;
    std::uniform_int_distribution<std::size_t> pick(0, peers.size() - 2);
    std::size_t j = pick(rng);
    const auto self = static_cast<std::size_t>(std::find(peers.begin(), peers.end(), i) - peers.begin());
    if (j >= self) ++j;
    values.push_back(nld(corpus.scanpaths.at(i).word_indices(), corpus.scanpaths.at(peers[j]).word_indices()));
  }
  if (values.empty()) throw DataError("human_nld: no sentence has two or more scanpaths");
  return summarise(std::move(values));
}

// ---------------------------------------------------------------------------
// MultiMatch

MultiMatch multimatch_1d(std::span<const int> s, std::span<const int> t, int max_len) {
  if (s.size() < 2 || t.size() < 2) throw std::invalid_argument("multimatch_1d: scanpaths need >= 2 fixations");
  if (max_len < 2) throw std::invalid_argument("multimatch_1d: M must be >= 2");
  const std::size_t a = s.size() - 1, b = t.size() - 1;
  auto v = [&](std::size_t i) { return s[i + 1] - s[i]; };
  auto u = [&](std::size_t j) { return t[j + 1] - t[j]; };
  // (shape cost, steps, length sum, position sum): lexicographic, additive.
  using Cost = std::tuple<long, long, long, long>;
  auto node = [&](std::size_t i, std::size_t j) -> Cost {
    return {std::abs(v(i) - u(j)), 1, std::abs(std::abs(v(i)) - std::abs(u(j))), std::abs(s[i] - t[j])};
  };
  auto plus = [](const Cost& x, const Cost& y) -> Cost {
    return {std::get<0>(x) + std::get<0>(y), std::get<1>(x) + std::get<1>(y), std::get<2>(x) + std::get<2>(y),
            std::get<3>(x) + std::get<3>(y)};
  };
  std::vector<std::vector<Cost>> c(a, std::vector<Cost>(b));
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (i == 0 && j == 0) {
        c[i][j] = node(i, j);
        continue;
      }
      std::optional<Cost> best;
      if (i > 0) best = c[i - 1][j];
      if (j > 0 && (!best || c[i][j - 1] < *best)) best = c[i][j - 1];
      if (i > 0 && j > 0 && c[i - 1][j - 1] < *best) best = c[i - 1][j - 1];
      c[i][j] = plus(*best, node(i, j));
    }
  }
  const auto [shape, steps, len, pos] = c[a - 1][b - 1];
  const double n = static_cast<double>(steps);
  const double span = static_cast<double>(max_len - 1);
  auto clamp01 = [](double x) { return std::clamp(x, 0.0, 1.0); };
  return {clamp01(1.0 - (static_cast<double>(shape) / n) / (2.0 * span)),
          clamp01(1.0 - (static_cast<double>(len) / n) / span), clamp01(1.0 - (static_cast<double>(pos) / n) / span)};
}

MultiMatch multimatch_1d(const Scanpath& s, const Scanpath& t, int max_len) {
  return multimatch_1d(s.word_indices(), t.word_indices(), max_len);
}

template <class S>
MultiMatchReport evaluate_multimatch(const Checkpoint<S>& ckpt, const Corpus& corpus,
                                     std::span<const std::size_t> indices, const EmbeddingSet* embeddings,
                                     std::uint64_t seed, const GenerateOptions& options) {
  const auto generated = generate_matching(ckpt, corpus, indices, embeddings, seed, options);
  MultiMatchReport r;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Scanpath& human = corpus.scanpaths.at(indices[k]);
    const Scanpath& gen = generated[k].scanpath;
    if (human.fixations.size() < 2 || gen.fixations.size() < 2) {
      ++r.skipped;
      continue;
    }
    const MultiMatch m = multimatch_1d(human, gen, ckpt.model.max_len);
    r.mean.shape += m.shape;
    r.mean.length += m.length;
    r.mean.position += m.position;
    ++r.pairs;
  }
  if (r.pairs > 0) {
    const double n = static_cast<double>(r.pairs);
    r.mean.shape /= n;
    r.mean.length /= n;
    r.mean.position /= n;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Buckets

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

int parse_bound(const std::string& text, const std::string& item) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw std::invalid_argument("bucket \"" + item + "\": cannot parse \"" + text + "\"");
  return v;
}

}  // namespace

std::vector<Bucket> parse_buckets(const std::string& text, int max_len) {
  const int lo_all = -max_len + 1, hi_all = max_len;
  std::vector<Bucket> out;
  std::vector<int> seen(static_cast<std::size_t>(num_classes(max_len)), 0);
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string item = trim(text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    pos = comma == std::string::npos ? text.size() + 1 : comma + 1;
    if (item.empty()) throw std::invalid_argument("bucket list has an empty entry");
    Bucket b{item, {}};
    if (item == "eos" || item == "EOS") {
      b.classes.push_back(eos_class(max_len));
    } else if (item == "all") {
      for (int c = 0; c < num_classes(max_len); ++c) b.classes.push_back(c);
    } else {
      int lo = 0, hi = 0;
      const std::size_t colon = item.find(':');
      if (colon != std::string::npos) {
        const std::string l = trim(item.substr(0, colon)), h = trim(item.substr(colon + 1));
        lo = l == "..." ? lo_all : parse_bound(l, item);
        hi = h == "..." ? hi_all : parse_bound(h, item);
      } else if (item.rfind("...", 0) == 0) {
        lo = lo_all;
        hi = parse_bound(item.substr(3), item);
      } else if (item.size() > 3 && item.compare(item.size() - 3, 3, "...") == 0) {
        lo = parse_bound(item.substr(0, item.size() - 3), item);
        hi = hi_all;
      } else {
        lo = hi = parse_bound(item, item);
      }
      if (lo < lo_all || hi > hi_all) {
        throw std::invalid_argument("bucket \"" + item + "\" reaches outside the ranges " + std::to_string(lo_all) +
                                    ".." + std::to_string(hi_all));
      }
      if (lo > hi) throw std::invalid_argument("bucket \"" + item + "\" is empty for M=" + std::to_string(max_len));
      for (int r = lo; r <= hi; ++r) b.classes.push_back(class_index(r, max_len));
    }
    for (int c : b.classes) {
      if (seen[static_cast<std::size_t>(c)]++) {
        throw std::invalid_argument("buckets overlap at " +
                                    (c == eos_class(max_len) ? std::string("eos") : std::to_string(range_of(c, max_len))));
      }
    }
    out.push_back(std::move(b));
  }
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c]) {
      const int cls = static_cast<int>(c);
      throw std::invalid_argument("buckets do not cover " + (cls == eos_class(max_len)
                                                                 ? std::string("eos")
                                                                 : "range " + std::to_string(range_of(cls, max_len))));
    }
  }
  return out;
}

BucketTable nll_by_saccade_range(const Predictor& predictor, const Corpus& corpus,
                                 std::span<const std::size_t> indices, const std::vector<Bucket>& buckets) {
  const int M = predictor.max_len();
  std::vector<int> bucket_of(static_cast<std::size_t>(num_classes(M)), -1);
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    for (int c : buckets[b].classes) {
      if (c < 0 || c >= num_classes(M) || bucket_of[static_cast<std::size_t>(c)] != -1) {
        throw std::invalid_argument("buckets do not partition the class space");
      }
      bucket_of[static_cast<std::size_t>(c)] = static_cast<int>(b);
    }
  }
  if (std::find(bucket_of.begin(), bucket_of.end(), -1) != bucket_of.end()) {
    throw std::invalid_argument("buckets do not partition the class space");
  }
  const StepLosses losses = step_losses(predictor, corpus, indices);
  std::vector<double> sums(buckets.size(), 0.0);
  std::vector<std::size_t> counts(buckets.size(), 0);
  BucketTable table;
  double total = 0.0;
  for (std::size_t k = 0; k < losses.nll.size(); ++k) {
    for (std::size_t t = 0; t < losses.nll[k].size(); ++t) {
      const auto b = static_cast<std::size_t>(bucket_of[static_cast<std::size_t>(losses.targets[k][t])]);
      sums[b] += losses.nll[k][t];
      ++counts[b];
      total += losses.nll[k][t];
      ++table.steps;
    }
  }
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    table.rows.push_back({buckets[b].label, counts[b],
                          counts[b] ? sums[b] / static_cast<double>(counts[b])
                                    : std::numeric_limits<double>::quiet_NaN()});
  }
  table.overall_step_mean = table.steps ? total / static_cast<double>(table.steps) : 0.0;
  return table;
}

// ---------------------------------------------------------------------------

TTest paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_ttest: samples differ in length");
  if (a.size() < 2) throw std::invalid_argument("paired_ttest: need at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double n = static_cast<double>(d.size());
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  TTest r;
  r.df = static_cast<int>(d.size()) - 1;
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0)) {
    r.degenerate = true;
    return r;
  }
  r.t = mean / (sd / std::sqrt(n));
  const boost::math::students_t dist(static_cast<double>(r.df));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

// ---------------------------------------------------------------------------

namespace {

json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

}  // namespace

void to_json(json& j, const NllReport& r) {
  json per = json::array();
  for (double x : r.per_scanpath) per.push_back(number(x));
  j = json{{"mean", number(r.mean)}, {"standard_error", number(r.standard_error)}, {"per_scanpath", per}};
}

void to_json(json& j, const NldReport& r) {
  j = json{{"mean", number(r.mean)}, {"standard_error", number(r.standard_error)}, {"per_scanpath", r.per_scanpath}};
}

void to_json(json& j, const MultiMatch& m) {
  j = json{{"shape", m.shape}, {"length", m.length}, {"position", m.position}};
}

void to_json(json& j, const MultiMatchReport& r) {
  j = json{{"mean", r.mean}, {"pairs", r.pairs}, {"skipped", r.skipped}};
}

void to_json(json& j, const BucketTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) rows.push_back({{"bucket", r.label}, {"steps", r.steps}, {"mean_nll", number(r.mean_nll)}});
  j = json{{"buckets", rows}, {"overall_step_mean", number(t.overall_step_mean)}, {"steps", t.steps}};
}

void to_json(json& j, const TTest& t) {
  j = json{{"t", t.t}, {"p", t.p}, {"df", t.df}, {"degenerate", t.degenerate}};
}

void write_bucket_csv(const std::filesystem::path& path, const BucketTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "bucket,steps,mean_nll\n" << std::setprecision(17);
  for (const auto& r : table.rows) out << '"' << r.label << "\"," << r.steps << ',' << r.mean_nll << '\n';
}

template class ModelPredictor<float>;
template class ModelPredictor<double>;
template NldReport evaluate_nld<float>(const Checkpoint<float>&, const Corpus&, std::span<const std::size_t>,
                                       const EmbeddingSet*, std::uint64_t, const GenerateOptions&);
template NldReport evaluate_nld<double>(const Checkpoint<double>&, const Corpus&, std::span<const std::size_t>,
                                        const EmbeddingSet*, std::uint64_t, const GenerateOptions&);
template MultiMatchReport evaluate_multimatch<float>(const Checkpoint<float>&, const Corpus&,
                                                     std::span<const std::size_t>, const EmbeddingSet*, std::uint64_t,
                                                     const GenerateOptions&);
template MultiMatchReport evaluate_multimatch<double>(const Checkpoint<double>&, const Corpus&,
                                                      std::span<const std::size_t>, const EmbeddingSet*,
                                                      std::uint64_t, const GenerateOptions&);

}  // namespace scanpath
