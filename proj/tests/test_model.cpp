#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracle.hpp"
#include "scanpath/nn/grad_check.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace scanpath;
using testutil::tiny_config;

namespace {

constexpr int kMaxLen = 5;

struct Fixture {
  Corpus corpus = testutil::small_corpus();
  EmbeddingSet emb;
  NormStats norm;
  std::vector<std::string> readers;

  explicit Fixture(int dim = 4) {
    emb = testutil::distinct_embeddings(corpus, dim, 11);
    const auto all = testutil::iota(corpus.scanpaths.size());
    norm = compute_norm_stats(corpus, all);
    readers = testutil::readers_of(corpus);
  }

  Model<double> model(const ModelConfig& c, std::uint64_t seed = 3) const {
    return make_model<double>(c, kMaxLen, readers, &corpus, seed);
  }
  const EmbeddingSet* embeddings(const ModelConfig& c) const { return c.trainable_embeddings ? nullptr : &emb; }

  ForwardOutput<double> run(nn::Tape<double>& tape, const Model<double>& m, const std::vector<std::size_t>& idx,
                            ForwardOptions opt = {}, nn::Mode mode = nn::Mode::eval, std::uint64_t seed = 0) const {
    std::vector<const Sentence*> s;
    std::vector<const Scanpath*> p;
    for (auto i : idx) {
      p.push_back(&corpus.scanpaths[i]);
      s.push_back(&corpus.sentence_of(corpus.scanpaths[i]));
    }
    nn::Rng rng(seed);
    return forward_batch<double>(tape, m, s, p, norm, embeddings(m.config), mode, rng, opt);
  }

  oracle::Result reference(const Model<double>& m, std::size_t i) const {
    const auto& sp = corpus.scanpaths[i];
    return oracle::forward(m, {&corpus.sentence_of(sp), &sp, embeddings(m.config), norm});
  }
};

/// Named ablation configurations that together exercise every optional path.
std::vector<std::pair<std::string, ModelConfig>> variants() {
  std::vector<std::pair<std::string, ModelConfig>> out;
  auto add = [&](const std::string& name, auto edit) {
    ModelConfig c = tiny_config();
    edit(c);
    out.emplace_back(name, c);
  };
  add("full", [](ModelConfig&) {});
  add("no word length", [](ModelConfig& c) { c.use_word_length = false; });
  add("no duration, no landing", [](ModelConfig& c) { c.use_duration = c.use_landing = false; });
  add("no kernel", [](ModelConfig& c) { c.kernel = KernelKind::none; });
  add("global window", [](ModelConfig& c) { c.window_mode = WindowMode::global; });
  add("global, no kernel", [](ModelConfig& c) {
    c.window_mode = WindowMode::global;
    c.kernel = KernelKind::none;
  });
  add("no word encoder", [](ModelConfig& c) { c.use_word_encoder = false; });
  add("asymmetric shifted", [](ModelConfig& c) {
    c.window_left = 1;
    c.window_right = 2;
    c.kernel_offset = 1;
    c.sigma_left = 0.7;
    c.sigma_right = 1.3;
  });
  add("reader embedding", [](ModelConfig& c) { c.reader_embedding = 3; });
  add("trainable embeddings", [](ModelConfig& c) { c.trainable_embeddings = true; });
  return out;
}

double max_abs(const Eigen::MatrixXd& a) { return a.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("class indexing") {
  CHECK(num_classes(11) == 23);
  CHECK(class_index(1, 11) == 11);
  CHECK(class_index(-3, 11) == 7);
  CHECK(eos_class(11) == 22);
  for (int c = 0; c < 22; ++c) CHECK(class_index(range_of(c, 11), 11) == c);
  CHECK(range_of(0, 11) == -10);
  CHECK(range_of(21, 11) == 11);
}

TEST_CASE("target classes") {
  const auto one = testutil::path("r", "s", {3});
  const auto t = target_classes(one, 5);
  CHECK(t == std::vector<int>{class_index(3, 5), eos_class(5)});
  const auto back = testutil::path("r", "s", {4, 2, 2});
  CHECK(target_classes(back, 5) == std::vector<int>{class_index(4, 5), class_index(-2, 5), class_index(0, 5), 10});
  CHECK_THROWS_AS(target_classes(testutil::path("r", "s", {6}), 5), DataError);
  CHECK_THROWS_AS(target_classes(testutil::path("r", "s", {5, 1}), 3), DataError);
}

TEST_CASE("attention window geometry") {
  ModelConfig c;
  CHECK(attention_window(3, 6, c).first == 2);
  CHECK(attention_window(3, 6, c).last == 4);
  CHECK(attention_window(1, 6, c).first == 1);
  CHECK(attention_window(6, 6, c).last == 6);
  // The start fixation sees only token 1.
  CHECK(attention_window(0, 6, c).first == 1);
  CHECK(attention_window(0, 6, c).last == 1);
  c.window_mode = WindowMode::global;
  CHECK(attention_window(3, 6, c).first == 1);
  CHECK(attention_window(3, 6, c).last == 6);

  ModelConfig k;
  CHECK(kernel_value(3, 3, k) == 1.0);
  CHECK(kernel_value(4, 3, k) == doctest::Approx(std::exp(-2.0)));
  k.sigma_left = 1.0;
  k.sigma_right = 2.0;
  CHECK(kernel_value(2, 3, k) == doctest::Approx(std::exp(-0.5)));
  CHECK(kernel_value(4, 3, k) == doctest::Approx(std::exp(-1.0 / 8.0)));
  k.kernel_offset = 1.0;
  CHECK(kernel_value(4, 3, k) == 1.0);
  k.kernel = KernelKind::none;
  CHECK(kernel_value(9, 3, k) == 1.0);
}

TEST_CASE("config validation and json") {
  ModelConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  ModelConfig bad = c;
  bad.window_left = bad.window_right = 0;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.sigma_left = 0;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.dense_units = {8, 8, 8};
  CHECK_THROWS(bad.validate());

  nlohmann::json j = c;
  ModelConfig back;
  from_json(j, back);
  CHECK(nlohmann::json(back).dump() == j.dump());

  ModelConfig w;
  from_json(nlohmann::json{{"window", 2}}, w);
  CHECK(w.window_left == 2);
  CHECK(w.window_right == 2);
  CHECK(w.sigma_left == 1.0);
  from_json(nlohmann::json{{"window_left", 1}, {"window_right", 3}, {"sigma_scale", 2.0}}, w);
  CHECK(w.sigma_left == 2.0);
  CHECK(w.sigma_right == 6.0);
  CHECK_THROWS(from_json(nlohmann::json{{"windw", 2}}, w));
}

TEST_CASE("forward pass matches the independent oracle for every variant") {
  const Fixture fx;
  for (const auto& [name, cfg] : variants()) {
    INFO(name);
    const auto m = fx.model(cfg);
    for (std::size_t i = 0; i < fx.corpus.scanpaths.size(); ++i) {
      nn::Tape<double> tape(false);
      const auto out = fx.run(tape, m, {i}, {true, true});
      const auto ref = fx.reference(m, i);
      CHECK(std::abs(out.scanpath_nll[0] - ref.nll) < 1e-10);
      REQUIRE(out.probs[0].cols() == static_cast<Eigen::Index>(ref.log_probs.size()));
      for (std::size_t t = 0; t < ref.log_probs.size(); ++t) {
        const Eigen::VectorXd p = ref.log_probs[t].array().exp();
        CHECK(max_abs(out.probs[0].col(static_cast<Eigen::Index>(t)) - p) < 1e-10);
        CHECK(std::abs(out.probs[0].col(static_cast<Eigen::Index>(t)).sum() - 1.0) < 1e-6);
        if (cfg.use_word_encoder) {
          CHECK(max_abs(out.attention[0].row(static_cast<Eigen::Index>(t)).transpose() - ref.attention[t]) < 1e-10);
        }
      }
    }
  }
}

TEST_CASE("a minimal fixed-weight model matches the oracle") {
  ModelConfig c;
  c.embed_dim = 2;
  c.bilstm_layers = c.lstm_layers = 1;
  c.bilstm_units = c.lstm_units = 2;
  c.dense_units = {2, 2, 2, 2};
  Corpus corpus;
  corpus.sentences.emplace("s", testutil::sentence("s", {"one", "two", "three"}));
  corpus.scanpaths = {testutil::path("r", "s", {1, 3, 2, 3})};
  const auto emb = testutil::distinct_embeddings(corpus, 2, 4);
  const auto norm = compute_norm_stats(corpus, testutil::iota(1));
  const auto m = make_model<double>(c, 3, {"r"}, nullptr, 8);
  nn::Tape<double> tape(false);
  nn::Rng rng(0);
  const auto out = forward_scanpath<double>(tape, m, corpus.sentences.at("s"), corpus.scanpaths[0], norm, &emb,
                                            nn::Mode::eval, rng);
  const auto ref = oracle::forward(m, {&corpus.sentences.at("s"), &corpus.scanpaths[0], &emb, norm});
  CHECK(std::abs(out.scanpath_nll[0] - ref.nll) < 1e-10);
  CHECK(out.loss.value()(0, 0) == doctest::Approx(ref.nll).epsilon(1e-12));
}

TEST_CASE("batched forward equals one scanpath at a time") {
  const Fixture fx;
  for (const auto& [name, cfg] : variants()) {
    INFO(name);
    const auto m = fx.model(cfg);
    const auto all = testutil::iota(fx.corpus.scanpaths.size());
    nn::Tape<double> tape(false);
    const auto batched = fx.run(tape, m, all, {true, true});
    double mean = 0.0;
    for (std::size_t i = 0; i < all.size(); ++i) {
      nn::Tape<double> t1(false);
      const auto single = fx.run(t1, m, {i}, {true, true});
      CHECK(std::abs(batched.scanpath_nll[i] - single.scanpath_nll[0]) < 1e-12);
      CHECK(max_abs(batched.probs[i] - single.probs[0]) < 1e-12);
      if (cfg.use_word_encoder) CHECK(max_abs(batched.attention[i] - single.attention[0]) < 1e-12);
      mean += single.scanpath_nll[0];
    }
    mean /= static_cast<double>(all.size());
    CHECK(batched.loss.value()(0, 0) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("zero head weights give the uniform distribution") {
  const Fixture fx;
  auto m = fx.model(tiny_config());
  m.params.at("decoder.head.weight").value.setZero();
  m.params.at("decoder.head.bias").value.setZero();
  nn::Tape<double> tape(false);
  const auto out = fx.run(tape, m, testutil::iota(6), {true, false});
  for (double nll : out.scanpath_nll) CHECK(nll == doctest::Approx(std::log(2.0 * kMaxLen + 1)).epsilon(1e-14));
  CHECK(std::abs(out.probs[0](0, 0) - 1.0 / 11.0) < 1e-15);
  // A single fixation gives exactly two prediction steps.
  CHECK(out.probs[5].cols() == 2);
}

TEST_CASE("zero alignment weights give closed-form attention") {
  const Fixture fx;
  ModelConfig c = tiny_config();
  auto m = fx.model(c);
  m.params.at("attention.w_a").value.setZero();
  nn::Tape<double> tape(false);
  // Scanpath 0 reads (1, 2, 4, 3, 5) on a 5-token sentence; step 2 has f_prev = 2.
  const auto out = fx.run(tape, m, {0}, {false, true});
  const Eigen::RowVectorXd row = out.attention[0].row(2);
  const double side = std::exp(-2.0) / 3.0;
  CHECK(row(0) == doctest::Approx(side));
  CHECK(row(1) == doctest::Approx(1.0 / 3.0));
  CHECK(row(2) == doctest::Approx(side));
  CHECK(row(3) == 0.0);
  CHECK(row(4) == 0.0);
  // Step 0 comes from the start fixation: only token 1 is inside the window.
  CHECK(out.attention[0](0, 0) == doctest::Approx(std::exp(-2.0)));

  m.config.kernel = KernelKind::none;
  nn::Tape<double> t2(false);
  const auto flat = fx.run(t2, m, {0}, {false, true});
  for (int n = 0; n < 3; ++n) CHECK(flat.attention[0](2, n) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("disabled inputs do not influence the output") {
  const Fixture fx;
  SUBCASE("no word encoder ignores contextual embeddings") {
    ModelConfig c = tiny_config();
    c.use_word_encoder = false;
    const auto m = fx.model(c);
    Fixture other;
    for (auto& [_, v] : other.emb.contextual) v *= -3.0f;
    nn::Tape<double> a(false), b(false);
    const auto x = fx.run(a, m, {0, 1}, {true, false});
    const auto y = other.run(b, m, {0, 1}, {true, false});
    CHECK(x.probs[0] == y.probs[0]);
    CHECK(x.probs[1] == y.probs[1]);
  }
  SUBCASE("no duration ignores durations") {
    ModelConfig c = tiny_config();
    c.use_duration = false;
    Fixture other;
    for (auto& sp : other.corpus.scanpaths) {
      for (auto& f : sp.fixations) f.duration *= 1.7;
    }
    other.norm.duration_mean += 10;
    const auto m = fx.model(c);
    nn::Tape<double> a(false), b(false);
    CHECK(fx.run(a, m, {0}, {true, false}).probs[0] == other.run(b, m, {0}, {true, false}).probs[0]);
  }
}

TEST_CASE("eval mode is deterministic and train mode applies dropout") {
  const Fixture fx;
  const auto m = fx.model(tiny_config());
  nn::Tape<double> a(false), b(false), c(false);
  const auto x = fx.run(a, m, {0, 3}, {true, false}, nn::Mode::eval, 1);
  const auto y = fx.run(b, m, {0, 3}, {true, false}, nn::Mode::eval, 2);
  CHECK(x.probs[0] == y.probs[0]);
  const auto z = fx.run(c, m, {0, 3}, {true, false}, nn::Mode::train, 1);
  CHECK(x.probs[0] != z.probs[0]);
}

TEST_CASE("inputs outside the model's range are rejected") {
  const Fixture fx;
  auto c = tiny_config();
  const auto small = make_model<double>(c, 4, fx.readers, nullptr, 1);
  nn::Tape<double> tape(false);
  CHECK_THROWS_WITH_AS(fx.run(tape, small, {0}), doctest::Contains("M=4"), DataError);
  c.reader_embedding = 2;
  const auto m = fx.model(c);
  Fixture other;
  other.corpus.scanpaths[0].reader_id = "stranger";
  CHECK_THROWS_AS(other.run(tape, m, {0}), DataError);
  Fixture wrong_dim(3);
  CHECK_THROWS(wrong_dim.run(tape, fx.model(tiny_config()), {0}));
}

TEST_CASE("parameter layout") {
  const Fixture fx;
  auto c = tiny_config();
  c.reader_embedding = 3;
  const auto m = fx.model(c);
  CHECK(m.params.at("position_embedding").value.rows() == c.embed_dim);
  CHECK(m.params.at("position_embedding").value.cols() == kMaxLen + 1);
  CHECK(m.params.at("reader_embedding").value.cols() == 2);
  CHECK(m.params.at("attention.w_a").value.rows() == c.lstm_units);
  CHECK(m.params.at("attention.w_a").value.cols() == c.word_dim());
  CHECK(m.params.at("decoder.head.weight").value.rows() == 2 * kMaxLen + 1);
  CHECK(m.params.at("fixation_encoder.0.w_ih").value.cols() == c.fixation_input_dim());
  // Position rows are distinct, so identical tokens at different locations differ.
  const auto& pos = m.params.at("position_embedding").value;
  CHECK(max_abs(pos.col(1) - pos.col(2)) > 0);
  const auto again = fx.model(c);
  for (const auto& [name, p] : m.params) CHECK(again.params.at(name).value == p.value);
}

TEST_CASE("full model gradients match finite differences") {
  const Fixture fx;
  for (const auto& [name, cfg] : variants()) {
    INFO(name);
    auto m = fx.model(cfg);
    // Zero-initialised biases can place ReLU pre-activations exactly on the
    // kink when a whole input column is zero; move them off it.
    nn::Rng jitter(9);
    for (auto& [pname, p] : m.params) {
      if (pname.rfind("decoder.", 0) == 0 && pname.find(".bias") != std::string::npos) nn::fill_uniform(p.value, 0.1, jitter);
    }
    auto loss = [&](nn::Tape<double>& tape) {
      nn::Rng rng(5);
      std::vector<const Sentence*> s;
      std::vector<const Scanpath*> p;
      for (std::size_t i : {0, 3, 5}) {
        p.push_back(&fx.corpus.scanpaths[i]);
        s.push_back(&fx.corpus.sentence_of(fx.corpus.scanpaths[i]));
      }
      return forward_batch<double>(tape, m, s, p, fx.norm, fx.embeddings(cfg), nn::Mode::train, rng).loss;
    };
    const auto report = nn::grad_check(loss, m.params, 1e-4);
    for (const auto& g : report.groups) {
      INFO(g.name);
      CHECK(g.max_rel_error < 1e-4);
    }
  }
}
