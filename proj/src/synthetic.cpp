#include "scanpath/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <random>

namespace scanpath {

using nlohmann::json;

namespace {

struct Outcome {
  bool eos;
  int range;
  double p;
};

/// Valid outcomes from `current`, renormalised. Empty when nothing is valid.
std::vector<Outcome> valid_moves(const MoveDistribution& row, int current, int m) {
  std::vector<Outcome> out;
  double total = 0.0;
  for (const auto& [r, p] : row.ranges) {
    const int next = current + r;
    if (p > 0.0 && next >= 1 && next <= m) {
      out.push_back({false, r, p});
      total += p;
    }
  }
  // The end-of-scanpath class is not valid before the first fixation.
  if (row.eos > 0.0 && current > 0) {
    out.push_back({true, 0, row.eos});
    total += row.eos;
  }
  for (auto& o : out) o.p /= total;
  return out;
}

double entropy_of(const std::vector<Outcome>& moves) {
  double h = 0.0;
  for (const auto& o : moves) {
    if (o.p > 0.0) h -= o.p * std::log(o.p);
  }
  return h;
}

const MoveDistribution& row_at(const SyntheticPolicy& policy, const Sentence& s, int current) {
  if (current == 0) return policy.start;
  return policy.row_for(s.tokens[static_cast<std::size_t>(current - 1)]);
}

MoveDistribution parse_moves(const json& j, const std::string& where) {
  MoveDistribution d;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const double p = it.value().get<double>();
    if (!(p >= 0.0)) throw DataError(where + ": negative probability");
    if (it.key() == "eos") {
      d.eos = p;
    } else {
      std::size_t used = 0;
      int r = 0;
      try {
        r = std::stoi(it.key(), &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != it.key().size()) throw DataError(where + ": bad move key \"" + it.key() + "\"");
      d.ranges[r] = p;
    }
  }
  return d;
}

json moves_to_json(const MoveDistribution& d) {
  json j = json::object();
  for (const auto& [r, p] : d.ranges) j[std::to_string(r)] = p;
  if (d.eos > 0.0) j["eos"] = d.eos;
  return j;
}

void check_row(const MoveDistribution& d, const std::string& name) {
  double total = d.eos;
  for (const auto& [_, p] : d.ranges) total += p;
  if (std::abs(total - 1.0) > 1e-9) {
    throw DataError("policy row \"" + name + "\" sums to " + std::to_string(total) + ", expected 1");
  }
}

}  // namespace

const MoveDistribution& SyntheticPolicy::row_for(const std::string& token) const {
  auto it = token_class.find(token);
  return it == token_class.end() ? fallback : it->second;
}

void SyntheticPolicy::validate() const {
  if (vocab.empty()) throw DataError("policy vocabulary is empty");
  if (min_length < 1 || max_length < min_length) throw DataError("policy length range is invalid");
  if (max_scanpath_factor < 1) throw DataError("policy max_scanpath_factor must be >= 1");
  check_row(start, "start");
  check_row(fallback, "default");
  for (const auto& [tok, row] : token_class) check_row(row, tok);
}

double move_entropy(const SyntheticPolicy& policy, const Sentence& sentence, int current) {
  return entropy_of(valid_moves(row_at(policy, sentence, current), current, sentence.length()));
}

SyntheticCorpus generate_synthetic_corpus(const std::vector<SyntheticPolicy>& policies, int n_readers,
                                          int n_sentences, std::uint64_t seed) {
  if (policies.empty()) throw std::invalid_argument("generate_synthetic_corpus: no policy");
  if (n_readers < 1 || n_sentences < 1) throw std::invalid_argument("generate_synthetic_corpus: need readers and sentences");
  for (const auto& p : policies) p.validate();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const SyntheticPolicy& base = policies.front();
  std::uniform_int_distribution<int> len_dist(base.min_length, base.max_length);
  std::uniform_int_distribution<std::size_t> tok_dist(0, base.vocab.size() - 1);

  SyntheticCorpus out;
  std::vector<std::string> sentence_ids;
  for (int s = 0; s < n_sentences; ++s) {
    Sentence sent;
    sent.sentence_id = "s" + std::to_string(s);
    const int m = len_dist(rng);
    for (int j = 0; j < m; ++j) {
      sent.tokens.push_back(base.vocab[tok_dist(rng)]);
      sent.token_lengths.push_back(std::max(1, utf8_length(sent.tokens.back())));
    }
    sentence_ids.push_back(sent.sentence_id);
    out.corpus.sentences.emplace(sent.sentence_id, std::move(sent));
  }

  double total_entropy = 0.0;
  for (int r = 0; r < n_readers; ++r) {
    const SyntheticPolicy& policy = policies[static_cast<std::size_t>(r) % policies.size()];
    for (const auto& sid : sentence_ids) {
      const Sentence& sent = out.corpus.sentences.at(sid);
      const int m = sent.length();
      const int cap = policy.max_scanpath_factor * m;
      Scanpath sp;
      sp.reader_id = "r" + std::to_string(r);
      sp.sentence_id = sid;
      int current = 0;
      double h_sum = 0.0;
      int steps = 0;
      while (true) {
        ++steps;
        if (static_cast<int>(sp.fixations.size()) >= cap) break;  // forced end, zero entropy
        auto moves = valid_moves(row_at(policy, sent, current), current, m);
        if (moves.empty()) break;
        h_sum += entropy_of(moves);
        double u = unit(rng);
        const Outcome* pick = &moves.back();
        for (const auto& o : moves) {
          if (u < o.p) {
            pick = &o;
            break;
          }
          u -= o.p;
        }
        if (pick->eos) break;
        current += pick->range;
        Fixation f;
        f.word_index = current;
        f.duration = std::round(150.0 + 150.0 * unit(rng));
        f.landing_pos = unit(rng);
        sp.fixations.push_back(f);
      }
      if (sp.fixations.empty()) {
        throw DataError("synthetic policy produced an empty scanpath; the start row must not allow ending");
      }
      const double h = h_sum / static_cast<double>(steps);
      out.scanpath_entropy.push_back(h);
      total_entropy += h;
      out.corpus.scanpaths.push_back(std::move(sp));
    }
  }
  out.entropy = total_entropy / static_cast<double>(out.corpus.scanpaths.size());
  return out;
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticPolicy& policy, int n_readers, int n_sentences,
                                          std::uint64_t seed) {
  return generate_synthetic_corpus(std::vector<SyntheticPolicy>{policy}, n_readers, n_sentences, seed);
}

SyntheticPolicy policy_from_json(const json& j) {
  SyntheticPolicy p;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k != "vocab" && k != "vocab_size" && k != "min_length" && k != "max_length" && k != "start" &&
        k != "default" && k != "classes" && k != "max_scanpath_factor") {
      throw DataError("policy: unknown key \"" + k + "\"");
    }
  }
  if (j.contains("vocab")) {
    p.vocab = j.at("vocab").get<std::vector<std::string>>();
  } else {
    const int n = j.value("vocab_size", 12);
    for (int i = 0; i < n; ++i) p.vocab.push_back("t" + std::to_string(i));
  }
  p.min_length = j.value("min_length", 5);
  p.max_length = j.value("max_length", 10);
  p.max_scanpath_factor = j.value("max_scanpath_factor", 4);
  p.start = j.contains("start") ? parse_moves(j.at("start"), "start") : MoveDistribution{{{1, 1.0}}, 0.0};
  if (!j.contains("default")) throw DataError("policy: missing \"default\" row");
  p.fallback = parse_moves(j.at("default"), "default");
  if (j.contains("classes")) {
    for (const auto& c : j.at("classes")) {
      MoveDistribution d = parse_moves(c.at("moves"), "classes");
      for (const auto& tok : c.at("tokens")) p.token_class[tok.get<std::string>()] = d;
    }
  }
  p.validate();
  return p;
}

json policy_to_json(const SyntheticPolicy& p) {
  json classes = json::array();
  for (const auto& [tok, d] : p.token_class) classes.push_back({{"tokens", {tok}}, {"moves", moves_to_json(d)}});
  return json{{"vocab", p.vocab},
              {"min_length", p.min_length},
              {"max_length", p.max_length},
              {"start", moves_to_json(p.start)},
              {"default", moves_to_json(p.fallback)},
              {"classes", classes},
              {"max_scanpath_factor", p.max_scanpath_factor}};
}

std::vector<SyntheticPolicy> load_policies(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    json j = json::parse(in);
    std::vector<SyntheticPolicy> out;
    if (j.contains("populations")) {
      for (const auto& p : j.at("populations")) out.push_back(policy_from_json(p));
    } else {
      out.push_back(policy_from_json(j));
    }
    return out;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace scanpath
