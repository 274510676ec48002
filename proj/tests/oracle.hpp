#pragma once

// Reference implementations used only by the tests. They share no code with
// the library's tape, ops or Network: plain Eigen loops over one scanpath.

#include "scanpath/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Lstm {
  MatrixXd w_ih, w_hh;
  VectorXd b;
};

inline Lstm lstm_params(const scanpath::Model<double>& m, const std::string& prefix) {
  return {m.params.at(prefix + ".w_ih").value, m.params.at(prefix + ".w_hh").value,
          m.params.at(prefix + ".bias").value.col(0)};
}

/// One textbook LSTM step, gate blocks (i, f, g, o).
inline void lstm_step(const Lstm& p, const VectorXd& x, VectorXd& h, VectorXd& c) {
  const auto H = h.size();
  VectorXd z = p.w_ih * x + p.w_hh * h + p.b;
  VectorXd hn(H), cn(H);
  for (Eigen::Index k = 0; k < H; ++k) {
    const double i = sigmoid(z(k));
    const double f = sigmoid(z(H + k));
    const double g = std::tanh(z(2 * H + k));
    const double o = sigmoid(z(3 * H + k));
    cn(k) = f * c(k) + i * g;
    hn(k) = o * std::tanh(cn(k));
  }
  h = hn;
  c = cn;
}

inline double zscore(double v, double mean, double sd) { return sd == 0.0 ? 0.0 : (v - mean) / sd; }

struct Inputs {
  const scanpath::Sentence* sentence = nullptr;
  const scanpath::Scanpath* scanpath = nullptr;
  const scanpath::EmbeddingSet* embeddings = nullptr;  // null: trainable lookup
  scanpath::NormStats norm;
};

inline VectorXd token_vector(const scanpath::Model<double>& m, const Inputs& in, const std::string& token,
                             int contextual_index) {
  if (m.config.trainable_embeddings) {
    return m.params.at("token_lookup").value.col(m.vocab.at(token));
  }
  if (contextual_index > 0) {
    return scanpath::get_contextual(*in.embeddings, in.sentence->sentence_id, contextual_index).cast<double>();
  }
  return scanpath::get_noncontextual(*in.embeddings, token).cast<double>();
}

struct Result {
  std::vector<VectorXd> log_probs;  // per step
  std::vector<VectorXd> attention;  // per step, length m (empty without word encoder)
  double nll = 0.0;                 // per-scanpath mean
};

/// Eval-mode forward pass over one scanpath.
inline Result forward(const scanpath::Model<double>& m, const Inputs& in) {
  const auto& cfg = m.config;
  const auto& s = *in.sentence;
  const auto& sp = *in.scanpath;
  const int len = s.length();
  const int M = m.max_len;

  // word encoder
  std::vector<VectorXd> z;
  if (cfg.use_word_encoder) {
    std::vector<VectorXd> seq;
    for (int j = 1; j <= len; ++j) seq.push_back(token_vector(m, in, s.tokens[j - 1], j));
    for (int l = 0; l < cfg.bilstm_layers; ++l) {
      const Lstm fw = lstm_params(m, "word_encoder." + std::to_string(l) + ".forward");
      const Lstm bw = lstm_params(m, "word_encoder." + std::to_string(l) + ".backward");
      std::vector<VectorXd> f(len), b(len);
      VectorXd h = VectorXd::Zero(cfg.bilstm_units), c = h;
      for (int j = 0; j < len; ++j) {
        lstm_step(fw, seq[j], h, c);
        f[j] = h;
      }
      h.setZero();
      c.setZero();
      for (int j = len - 1; j >= 0; --j) {
        lstm_step(bw, seq[j], h, c);
        b[j] = h;
      }
      for (int j = 0; j < len; ++j) {
        VectorXd cat(2 * cfg.bilstm_units);
        cat << f[j], b[j];
        seq[j] = cat;
      }
    }
    for (int j = 0; j < len; ++j) {
      if (cfg.use_word_length) {
        VectorXd cat(seq[j].size() + 1);
        cat << seq[j], zscore(s.token_lengths[j], in.norm.wordlen_mean, in.norm.wordlen_std);
        z.push_back(cat);
      } else {
        z.push_back(seq[j]);
      }
    }
  }

  std::vector<Lstm> fix;
  for (int l = 0; l < cfg.lstm_layers; ++l) fix.push_back(lstm_params(m, "fixation_encoder." + std::to_string(l)));
  std::vector<VectorXd> hs(cfg.lstm_layers, VectorXd::Zero(cfg.lstm_units)), cs = hs;

  const auto targets = scanpath::target_classes(sp, M);
  Result r;
  const MatrixXd& pos = m.params.at("position_embedding").value;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    int loc = 0;
    double dz = 0.0, lz = 0.0;
    VectorXd x = VectorXd::Zero(cfg.embed_dim);
    if (t > 0) {
      const auto& f = sp.fixations[t - 1];
      loc = f.word_index;
      x = token_vector(m, in, s.tokens[loc - 1], 0);
      dz = zscore(f.duration, in.norm.duration_mean, in.norm.duration_std);
      lz = zscore(f.landing_pos, in.norm.landing_mean, in.norm.landing_std);
    }
    x += pos.col(loc);
    std::vector<double> extra;
    if (cfg.use_duration) extra.push_back(dz);
    if (cfg.use_landing) extra.push_back(lz);
    VectorXd input(x.size() + static_cast<Eigen::Index>(extra.size()) + cfg.reader_embedding);
    input.head(x.size()) = x;
    for (std::size_t e = 0; e < extra.size(); ++e) input(x.size() + static_cast<Eigen::Index>(e)) = extra[e];
    if (cfg.reader_embedding > 0) {
      input.tail(cfg.reader_embedding) = m.params.at("reader_embedding").value.col(m.readers.at(sp.reader_id));
    }
    VectorXd cur = input;
    for (int l = 0; l < cfg.lstm_layers; ++l) {
      lstm_step(fix[l], cur, hs[l], cs[l]);
      cur = hs[l];
    }
    const VectorXd h = cur;

    VectorXd dec_in;
    if (cfg.use_word_encoder) {
      const MatrixXd& wa = m.params.at("attention.w_a").value;
      int lo = 1, hi = len;
      if (cfg.window_mode == scanpath::WindowMode::local) {
        lo = std::max(1, loc - cfg.window_left);
        hi = std::min(len, loc + cfg.window_right);
      }
      VectorXd a = VectorXd::Zero(len);
      if (lo <= hi) {
        double mx = -1e300;
        for (int n = lo; n <= hi; ++n) mx = std::max(mx, h.dot(wa * z[n - 1]));
        double tot = 0.0;
        for (int n = lo; n <= hi; ++n) {
          a(n - 1) = std::exp(h.dot(wa * z[n - 1]) - mx);
          tot += a(n - 1);
        }
        a /= tot;
        if (cfg.kernel == scanpath::KernelKind::gaussian) {
          for (int n = lo; n <= hi; ++n) {
            const double d = n - (loc + cfg.kernel_offset);
            const double sg = d < 0 ? cfg.sigma_left : cfg.sigma_right;
            a(n - 1) *= std::exp(-d * d / (2 * sg * sg));
          }
        }
      }
      VectorXd ctx = VectorXd::Zero(z.front().size());
      for (int n = 1; n <= len; ++n) ctx += a(n - 1) * z[n - 1];
      r.attention.push_back(a);
      dec_in.resize(ctx.size() + h.size());
      dec_in << ctx, h;
    } else {
      dec_in = h;
    }
    VectorXd y = dec_in;
    for (int k = 0; k < 4; ++k) {
      const std::string n = "decoder.dense" + std::to_string(k);
      y = (m.params.at(n + ".weight").value * y + m.params.at(n + ".bias").value.col(0)).cwiseMax(0.0);
    }
    VectorXd logits = m.params.at("decoder.head.weight").value * y + m.params.at("decoder.head.bias").value.col(0);
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    VectorXd lp = logits.array() - lse;
    r.nll -= lp(targets[t]);
    r.log_probs.push_back(lp);
  }
  r.nll /= static_cast<double>(targets.size());
  return r;
}

/// Levenshtein distance straight from the recursive definition, memoised so
/// lengths up to ~10 stay cheap.
inline int levenshtein_recursive(const std::vector<int>& s, std::size_t i, const std::vector<int>& t, std::size_t j,
                                 std::vector<std::vector<int>>& memo) {
  if (i == s.size()) return static_cast<int>(t.size() - j);
  if (j == t.size()) return static_cast<int>(s.size() - i);
  int& slot = memo[i][j];
  if (slot >= 0) return slot;
  const int sub = levenshtein_recursive(s, i + 1, t, j + 1, memo) + (s[i] == t[j] ? 0 : 1);
  const int del = levenshtein_recursive(s, i + 1, t, j, memo) + 1;
  const int ins = levenshtein_recursive(s, i, t, j + 1, memo) + 1;
  return slot = std::min({sub, del, ins});
}

inline int levenshtein_recursive(const std::vector<int>& s, const std::vector<int>& t) {
  std::vector<std::vector<int>> memo(s.size() + 1, std::vector<int>(t.size() + 1, -1));
  return levenshtein_recursive(s, 0, t, 0, memo);
}

/// Two-tailed p-value of Student's t: I_x(df/2, 1/2) with x = df/(df + t²).
/// The incomplete beta is B(a, b) minus the upper tail ∫_x^1 w^(a-1)(1-w)^(-1/2) dw,
/// which the substitution w = 1 - v² turns into the smooth ∫_0^√(1-x) 2(1-v²)^(a-1) dv,
/// integrated with composite Simpson.
inline double student_t_two_tailed(double t, int df) {
  const double a = df / 2.0;
  const double x = df / (df + t * t);
  const double full_beta = std::exp(std::lgamma(a) + std::lgamma(0.5) - std::lgamma(a + 0.5));
  const double vmax = std::sqrt(1.0 - x);
  const int n = 20000;
  const double h = vmax / n;
  auto f = [&](double v) { return 2.0 * std::pow(1.0 - v * v, a - 1.0); };
  double s = f(0.0) + f(vmax);
  for (int k = 1; k < n; ++k) s += f(k * h) * (k % 2 ? 4.0 : 2.0);
  const double tail = s * h / 3.0;
  return (full_beta - tail) / full_beta;
}

/// Train-label-dist cross-entropy by direct counting: smoothed class
/// frequencies over the training targets, then the per-scanpath mean step NLL
/// of the test scanpaths, averaged.
inline double label_dist_nll(const scanpath::Corpus& c, const std::vector<std::size_t>& train,
                             const std::vector<std::size_t>& test, int M, double alpha) {
  const int classes = 2 * M + 1;
  std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
  double total = 0;
  for (auto i : train) {
    int prev = 0;
    for (const auto& f : c.scanpaths[i].fixations) {
      counts[static_cast<std::size_t>(f.word_index - prev + M - 1)] += 1;
      prev = f.word_index;
      total += 1;
    }
    counts[static_cast<std::size_t>(2 * M)] += 1;
    total += 1;
  }
  auto nll = [&](std::size_t cls) { return -std::log((counts[cls] + alpha) / (total + alpha * classes)); };
  double expect = 0.0;
  for (auto i : test) {
    const auto& fx = c.scanpaths[i].fixations;
    double sum = 0.0;
    int prev = 0;
    for (const auto& f : fx) {
      sum += nll(static_cast<std::size_t>(f.word_index - prev + M - 1));
      prev = f.word_index;
    }
    sum += nll(static_cast<std::size_t>(2 * M));
    expect += sum / static_cast<double>(fx.size() + 1);
  }
  return expect / static_cast<double>(test.size());
}

/// Textbook paired t statistic: t = mean(d) / (sd(d) / √n), d = a − b.
inline double paired_t(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  return mean / (std::sqrt(ss / (n - 1)) / std::sqrt(n));
}

}  // namespace oracle
