#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "scanpath/binary_io.hpp"
#include "scanpath/train.hpp"
#include "test_util.hpp"

#include <cmath>
#include <fstream>

using namespace scanpath;
using testutil::tiny_config;

namespace {

struct Data {
  SyntheticCorpus synth;
  EmbeddingSet emb;

  Data() {
    SyntheticPolicy p;
    p.vocab = {"a", "b", "c", "d"};
    p.min_length = 3;
    p.max_length = 6;
    p.fallback = {{{1, 0.7}, {2, 0.2}, {-1, 0.1}}, 0.0};
    synth = generate_synthetic_corpus(p, 4, 12, 21);
    emb = random_embeddings(synth.corpus, 4, 2);
  }
  const Corpus& corpus() const { return synth.corpus; }
  std::vector<std::size_t> all() const { return testutil::iota(synth.corpus.scanpaths.size()); }
};

TrainConfig quick(int epochs = 3) {
  TrainConfig t;
  t.max_epochs = epochs;
  t.patience = 2;
  t.batch_size = 8;
  t.lr = 5e-3;
  t.seed = 4;
  return t;
}

template <class S>
bool same_params(const Model<S>& a, const Model<S>& b) {
  if (a.params.size() != b.params.size()) return false;
  for (const auto& [name, p] : a.params) {
    if (!b.params.contains(name) || b.params.at(name).value != p.value) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("train config validation and json") {
  TrainConfig t;
  CHECK(t.lr == 1e-3);
  CHECK(t.max_epochs == 1000);
  CHECK(t.patience == 20);
  CHECK(t.batch_size == 256);
  CHECK_NOTHROW(t.validate());
  TrainConfig bad = t;
  bad.patience = 0;
  CHECK_THROWS(bad.validate());
  bad = t;
  bad.validation_fraction = 1.0;
  CHECK_THROWS(bad.validate());
  bad = t;
  bad.lr = std::nan("");
  CHECK_THROWS(bad.validate());

  t.precision = Precision::f64;
  t.seed = 77;
  nlohmann::json j = t;
  TrainConfig back;
  from_json(j, back);
  CHECK(nlohmann::json(back).dump() == j.dump());
  CHECK_THROWS(from_json(nlohmann::json{{"learning_rate", 1}}, back));
  CHECK(parse_precision("f32") == Precision::f32);
  CHECK_THROWS(parse_precision("f16"));
}

TEST_CASE("a zero learning rate with patience 1 stops after two epochs") {
  const Data d;
  TrainConfig t = quick(50);
  t.lr = 0.0;
  t.patience = 1;
  const auto all = d.all();
  const auto ck = train<double>(d.corpus(), all, &d.emb, tiny_config(), t);
  CHECK(ck.history.epochs.size() == 2);
  CHECK(ck.history.stopped_early);
  CHECK(ck.history.best_epoch == 1);
  CHECK(ck.history.epochs[0].validation_nll == ck.history.epochs[1].validation_nll);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const Data d;
  const auto all = d.all();
  const auto a = train<float>(d.corpus(), all, &d.emb, tiny_config(), quick());
  const auto b = train<float>(d.corpus(), all, &d.emb, tiny_config(), quick());
  REQUIRE(a.history.epochs.size() == b.history.epochs.size());
  for (std::size_t e = 0; e < a.history.epochs.size(); ++e) {
    CHECK(a.history.epochs[e].train_loss == b.history.epochs[e].train_loss);
    CHECK(a.history.epochs[e].validation_nll == b.history.epochs[e].validation_nll);
  }
  CHECK(same_params(a.model, b.model));
  TrainConfig other = quick();
  other.seed = 5;
  const auto c = train<float>(d.corpus(), all, &d.emb, tiny_config(), other);
  CHECK(!same_params(a.model, c.model));
}

TEST_CASE("early stopping keeps the best epoch") {
  const Data d;
  TrainConfig t = quick(12);
  t.lr = 0.05;  // large enough to make validation NLL wander
  t.patience = 3;
  const auto all = d.all();
  const auto ck = train<double>(d.corpus(), all, &d.emb, tiny_config(), t);
  const auto& h = ck.history;
  REQUIRE(h.best_epoch >= 1);
  const double best = h.epochs[static_cast<std::size_t>(h.best_epoch - 1)].validation_nll;
  CHECK(best == h.best_validation_nll);
  for (const auto& e : h.epochs) {
    if (e.epoch > h.best_epoch) CHECK(best <= e.validation_nll);
  }
  if (h.stopped_early) CHECK(static_cast<int>(h.epochs.size()) == h.best_epoch + t.patience);
  CHECK(h.train_scanpaths + h.validation_scanpaths == all.size());
  CHECK(h.validation_scanpaths == 5);  // round(0.1 · 48)
  CHECK_THROWS_AS(train<double>(d.corpus(), std::vector<std::size_t>{}, &d.emb, tiny_config(), t), DataError);
}

TEST_CASE("training reduces the loss") {
  const Data d;
  TrainConfig t = quick(8);
  t.lr = 1e-2;
  t.patience = 8;
  const auto all = d.all();
  const auto ck = train<double>(d.corpus(), all, &d.emb, tiny_config(), t);
  CHECK(ck.history.best_validation_nll < ck.history.epochs.front().validation_nll);
  CHECK(ck.history.epochs.back().train_loss < ck.history.epochs.front().train_loss);
}

TEST_CASE("a non-finite loss names the epoch and batch") {
  Data d;
  for (auto& [_, v] : d.emb.contextual) v(0) = std::numeric_limits<float>::quiet_NaN();
  const auto all = d.all();
  CHECK_THROWS_WITH_AS(train<double>(d.corpus(), all, &d.emb, tiny_config(), quick()),
                       doctest::Contains("epoch 1, batch 1"), NumericError);
}

TEST_CASE("fine-tuning") {
  const Data d;
  const auto all = d.all();
  const auto base = train<double>(d.corpus(), all, &d.emb, tiny_config(), quick(2));
  const auto same = fine_tune(base, d.corpus(), &d.emb, 0, quick());
  CHECK(same_params(same.model, base.model));
  const auto tuned = fine_tune(base, d.corpus(), &d.emb, 16, quick(2));
  CHECK(!same_params(tuned.model, base.model));
  CHECK(tuned.norm.duration_mean == base.norm.duration_mean);

  const auto s1 = sample_instances(48, 16, 9);
  CHECK(s1 == sample_instances(48, 16, 9));
  CHECK(s1.size() == 16);
  CHECK(std::is_sorted(s1.begin(), s1.end()));
  CHECK(std::adjacent_find(s1.begin(), s1.end()) == s1.end());
  CHECK_THROWS(sample_instances(4, 5, 0));
}

TEST_CASE("batched evaluation matches one scanpath at a time") {
  const Data d;
  const auto all = d.all();
  const auto c64 = train<double>(d.corpus(), all, &d.emb, tiny_config(), quick(1));
  const auto b64 = scanpath_nlls(c64.model, c64.norm, d.corpus(), all, &d.emb, 7);
  const auto s64 = scanpath_nlls(c64.model, c64.norm, d.corpus(), all, &d.emb, 1);
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(std::abs(b64[i] - s64[i]) < 1e-10);

  const auto c32 = train<float>(d.corpus(), all, &d.emb, tiny_config(), quick(1));
  const auto b32 = scanpath_nlls(c32.model, c32.norm, d.corpus(), all, &d.emb, 256);
  const auto s32 = scanpath_nlls(c32.model, c32.norm, d.corpus(), all, &d.emb, 1);
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(std::abs(b32[i] - s32[i]) < 1e-5);

  // Adding a scanpath on a longer sentence pads the batch; the others stay put.
  std::size_t shortest = 0, longest = 0;
  for (std::size_t i : all) {
    const int m = d.corpus().sentence_of(d.corpus().scanpaths[i]).length();
    if (m < d.corpus().sentence_of(d.corpus().scanpaths[shortest]).length()) shortest = i;
    if (m > d.corpus().sentence_of(d.corpus().scanpaths[longest]).length()) longest = i;
  }
  const std::vector<std::size_t> alone{shortest}, padded{shortest, longest};
  const double x = scanpath_nlls(c64.model, c64.norm, d.corpus(), alone, &d.emb)[0];
  const double y = scanpath_nlls(c64.model, c64.norm, d.corpus(), padded, &d.emb)[0];
  CHECK(std::abs(x - y) < 1e-10);
}

TEST_CASE("checkpoints round-trip bit for bit") {
  const Data d;
  const auto all = d.all();
  const auto dir = testutil::scratch("ckpt_roundtrip");
  ModelConfig cfg = tiny_config();
  cfg.reader_embedding = 2;

  const auto c32 = train<float>(d.corpus(), all, &d.emb, cfg, quick(1));
  save_checkpoint(dir / "a.eyckpt", c32);
  CHECK(checkpoint_precision(dir / "a.eyckpt") == Precision::f32);
  const auto back32 = load_checkpoint<float>(dir / "a.eyckpt");
  CHECK(same_params(back32.model, c32.model));
  CHECK(back32.model.readers == c32.model.readers);
  CHECK(back32.model.max_len == c32.model.max_len);
  CHECK(nlohmann::json(back32.model.config).dump() == nlohmann::json(c32.model.config).dump());
  CHECK(nlohmann::json(back32.history).dump() == nlohmann::json(c32.history).dump());
  CHECK(std::memcmp(&back32.norm, &c32.norm, sizeof(NormStats)) == 0);
  CHECK(scanpath_nlls(back32.model, back32.norm, d.corpus(), all, &d.emb) ==
        scanpath_nlls(c32.model, c32.norm, d.corpus(), all, &d.emb));

  // A 32-bit checkpoint loads exactly into 64-bit parameters.
  const auto widened = load_checkpoint<double>(dir / "a.eyckpt");
  CHECK(same_params(widened.model, cast_model<double>(c32.model)));

  ModelConfig lookup = tiny_config();
  lookup.trainable_embeddings = true;
  const auto c64 = train<double>(d.corpus(), all, nullptr, lookup, quick(1));
  save_checkpoint(dir / "b.eyckpt", c64);
  const auto back64 = load_checkpoint<double>(dir / "b.eyckpt");
  CHECK(same_params(back64.model, c64.model));
  CHECK(back64.model.vocab == c64.model.vocab);
  CHECK(scanpath_nlls(back64.model, back64.norm, d.corpus(), all, nullptr) ==
        scanpath_nlls(c64.model, c64.norm, d.corpus(), all, nullptr));
}

TEST_CASE("damaged checkpoints are rejected with a useful message") {
  const Data d;
  const auto all = d.all();
  const auto dir = testutil::scratch("ckpt_bad");
  const auto ck = train<double>(d.corpus(), all, &d.emb, tiny_config(), quick(1));
  save_checkpoint(dir / "c.eyckpt", ck);
  std::string bytes;
  {
    std::ifstream in(dir / "c.eyckpt", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto rewrite = [&](const std::string& b) {
    std::ofstream out(dir / "x.eyckpt", std::ios::binary | std::ios::trunc);
    out << b;
  };
  SUBCASE("truncation names the tensor being read") {
    // Tensors are written in name order, so the cut lands in the last name.
    const std::string last = "\"" + std::prev(ck.model.params.end())->first + "\"";
    rewrite(bytes.substr(0, bytes.size() - 8));
    CHECK_THROWS_WITH_AS(load_checkpoint<double>(dir / "x.eyckpt"), doctest::Contains(last.c_str()),
                         io::FormatError);
    // Cut in the middle of the first tensor record.
    const auto pos = bytes.find("attention.w_a");
    REQUIRE(pos != std::string::npos);
    rewrite(bytes.substr(0, pos + 20));
    CHECK_THROWS_WITH_AS(load_checkpoint<double>(dir / "x.eyckpt"), doctest::Contains("\"attention.w_a\""),
                         io::FormatError);
  }
  SUBCASE("bad magic and version") {
    std::string b = bytes;
    b[1] = 'Z';
    rewrite(b);
    CHECK_THROWS_WITH_AS(load_checkpoint<double>(dir / "x.eyckpt"), doctest::Contains("magic"), io::FormatError);
    b = bytes;
    b[8] = 2;
    rewrite(b);
    CHECK_THROWS_WITH_AS(load_checkpoint<double>(dir / "x.eyckpt"), doctest::Contains("version"), io::FormatError);
  }
  SUBCASE("a tensor shape that disagrees with the config") {
    const auto pos = bytes.find("attention.w_a");
    std::string b = bytes;
    b[pos + 13 + 1] = static_cast<char>(b[pos + 13 + 1] + 1);  // rows field after the rank byte
    rewrite(b);
    CHECK_THROWS_WITH_AS(load_checkpoint<double>(dir / "x.eyckpt"), doctest::Contains("shape"), io::FormatError);
  }
}

TEST_CASE("sentences longer than M are rejected") {
  const Data d;
  Corpus c = d.corpus();
  std::vector<std::string> tokens(11, "a");
  c.sentences.emplace("eleven", testutil::sentence("eleven", tokens));
  c.scanpaths.push_back(testutil::path("r0", "eleven", {1, 2, 3}));
  const auto emb = random_embeddings(c, 4, 2);
  const auto all = testutil::iota(c.scanpaths.size());
  const auto ck = train<double>(c, all, &emb, tiny_config(), quick(1));
  CHECK(ck.model.max_len == 11);

  Corpus longer = c;
  tokens.push_back("b");
  longer.sentences.emplace("twelve", testutil::sentence("twelve", tokens));
  longer.scanpaths = {testutil::path("r0", "twelve", {1, 12})};
  const auto emb2 = random_embeddings(longer, 4, 2);
  const std::vector<std::size_t> one{0};
  CHECK_THROWS_WITH_AS(scanpath_nlls(ck.model, ck.norm, longer, one, &emb2), doctest::Contains("M=11"), DataError);
  CHECK_THROWS_AS(fine_tune(ck, longer, &emb2, 1, quick(1)), DataError);
}
