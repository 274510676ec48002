#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracle.hpp"
#include "scanpath/nn/adam.hpp"
#include "scanpath/nn/grad_check.hpp"
#include "scanpath/nn/layers.hpp"

#include <cmath>
#include <random>

using namespace scanpath::nn;
using Md = Matrix<double>;

namespace {

Md random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double bound = 1.0) {
  Md m(r, c);
  fill_uniform(m, bound, rng);
  return m;
}

/// Scalar probe ⟨out, W⟩ with a fixed random W so every output entry matters.
Var<double> probe(const Var<double>& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  return dot(out, out.tape()->constant(random_matrix(out.rows(), out.cols(), rng)));
}

void check(const LossClosure& f, ParamStore<double>& store) {
  const auto report = grad_check(f, store, 1e-6);
  for (const auto& g : report.groups) {
    INFO(g.name);
    CHECK(g.max_rel_error < 1e-6);
  }
}

}  // namespace

TEST_CASE("elementwise and linear ops pass the gradient check") {
  Rng rng(1);
  ParamStore<double> p;
  p.add("a", random_matrix(3, 4, rng));
  p.add("b", random_matrix(3, 4, rng));
  p.add("w", random_matrix(5, 3, rng));
  p.add("v", random_matrix(3, 5, rng));
  p.add("bias", random_matrix(5, 1, rng));
  p.add("x", random_matrix(3, 2, rng));
  const Md k = random_matrix(3, 4, rng);

  SUBCASE("matmul and matmul_tn") {
    check([&](Tape<double>& t) { return probe(matmul(t.parameter(p.at("w")), t.parameter(p.at("a")))); }, p);
    check([&](Tape<double>& t) { return probe(matmul_tn(t.parameter(p.at("v")), t.parameter(p.at("a")))); }, p);
  }
  SUBCASE("add, sub, cmul, cmul_const, scale") {
    check([&](Tape<double>& t) {
      auto a = t.parameter(p.at("a"));
      auto b = t.parameter(p.at("b"));
      return probe(scale(cmul(a + b, a - b), 0.7) + cmul_const(b, k));
    }, p);
  }
  SUBCASE("affine and add_bias") {
    check([&](Tape<double>& t) {
      auto w = t.parameter(p.at("w"));
      auto x = t.parameter(p.at("x"));
      auto b = t.parameter(p.at("bias"));
      return probe(affine(w, x, b) + add_bias(matmul(w, x), b));
    }, p);
  }
  SUBCASE("tanh and sigmoid") {
    check([&](Tape<double>& t) {
      auto a = t.parameter(p.at("a"));
      return probe(cmul(scanpath::nn::tanh(a), sigmoid(a)));
    }, p);
  }
  SUBCASE("sum and dot") {
    check([&](Tape<double>& t) {
      auto a = t.parameter(p.at("a"));
      auto b = t.parameter(p.at("b"));
      return sum(cmul(a, a)) + dot(a, b);
    }, p);
  }
}

TEST_CASE("relu gradient away from the kink") {
  Rng rng(2);
  ParamStore<double> p;
  Md a = random_matrix(4, 3, rng);
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    if (std::abs(a.data()[k]) < 0.05) a.data()[k] = 0.3;
  }
  p.add("a", a);
  check([&](Tape<double>& t) { return probe(relu(t.parameter(p.at("a")))); }, p);
}

TEST_CASE("softmax family passes the gradient check") {
  Rng rng(3);
  ParamStore<double> p;
  p.add("a", random_matrix(5, 3, rng, 2.0));
  Md mask = Md::Ones(5, 3);
  mask(0, 0) = 0;
  mask(4, 1) = 0;
  mask(2, 2) = 0;
  check([&](Tape<double>& t) { return probe(softmax(t.parameter(p.at("a")))); }, p);
  check([&](Tape<double>& t) { return probe(masked_softmax(t.parameter(p.at("a")), mask)); }, p);
  check([&](Tape<double>& t) {
    return softmax_nll(t.parameter(p.at("a")), std::vector<int>{1, 4, 0}, std::vector<double>{0.5, 0.0, 2.0});
  }, p);
}

TEST_CASE("structural ops pass the gradient check") {
  Rng rng(4);
  ParamStore<double> p;
  p.add("a", random_matrix(3, 4, rng));
  p.add("b", random_matrix(2, 4, rng));
  p.add("c", random_matrix(3, 2, rng));
  p.add("q", random_matrix(3, 2, rng));
  p.add("z", random_matrix(3, 6, rng));
  p.add("w", random_matrix(3, 2, rng));
  Vector<double> f(4);
  f << 0.5, -1.0, 2.0, 0.0;

  check([&](Tape<double>& t) { return probe(concat_rows<double>({t.parameter(p.at("a")), t.parameter(p.at("b"))})); }, p);
  check([&](Tape<double>& t) { return probe(hstack<double>({t.parameter(p.at("a")), t.parameter(p.at("c"))})); }, p);
  check([&](Tape<double>& t) { return probe(slice_rows(t.parameter(p.at("a")), 1, 2)); }, p);
  check([&](Tape<double>& t) { return probe(gather_cols(t.parameter(p.at("a")), {3, -1, 0, 3, 1})); }, p);
  check([&](Tape<double>& t) { return probe(scale_cols(t.parameter(p.at("a")), f)); }, p);
  check([&](Tape<double>& t) { return probe(block_scores(t.parameter(p.at("q")), t.parameter(p.at("z")))); }, p);
  check([&](Tape<double>& t) { return probe(block_combine(t.parameter(p.at("w")), t.parameter(p.at("z")))); }, p);
}

TEST_CASE("ops compute the values they document") {
  Tape<double> t;
  Md q(2, 2), z(2, 4), w(2, 2);
  q << 1, 2, 3, 4;
  z << 1, 2, 3, 4, 5, 6, 7, 8;
  w << 0.5, 1, 2, 0;
  auto s = block_scores(t.constant(q), t.constant(z)).value();
  // out(n, b) = q(:, b) · z(:, n·2 + b)
  CHECK(s(0, 0) == doctest::Approx(1 * 1 + 3 * 5));
  CHECK(s(1, 1) == doctest::Approx(2 * 4 + 4 * 8));
  auto c = block_combine(t.constant(w), t.constant(z)).value();
  CHECK(c(0, 0) == doctest::Approx(0.5 * 1 + 2 * 3));
  CHECK(c(1, 1) == doctest::Approx(1 * 6 + 0 * 8));

  Md logits(3, 1);
  logits << 1.0, 2.0, 3.0;
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(softmax_nll(t.constant(logits), 0).value()(0, 0) == doctest::Approx(lse - 1.0).epsilon(1e-14));

  Md mask = Md::Zero(3, 1);
  auto all_masked = masked_softmax(t.constant(logits), mask).value();
  CHECK(all_masked.isZero(0.0));
  mask(1, 0) = 1;
  auto single = masked_softmax(t.constant(logits), mask).value();
  CHECK(single(1, 0) == 1.0);
  CHECK(single(0, 0) == 0.0);

  auto g = gather_cols(t.constant(z), {-1, 2}).value();
  CHECK(g.col(0).isZero(0.0));
  CHECK(g(1, 1) == 7);
}

TEST_CASE("shape errors and misuse are reported") {
  Tape<double> t;
  auto a = t.variable(Md::Ones(2, 3));
  auto b = t.variable(Md::Ones(3, 2));
  CHECK_THROWS_AS(a + b, ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(t.backward(a), ShapeError);
  CHECK_THROWS_AS(gather_cols(a, {3}), ShapeError);
  CHECK_THROWS_AS(softmax_nll(t.variable(Md::Ones(3, 1)), 3), std::out_of_range);
  Tape<double> eval(false);
  auto s = sum(eval.variable(Md::Ones(2, 2)));
  CHECK_THROWS_AS(eval.backward(s), std::logic_error);
  ParamStore<double> p;
  p.add("x", Md::Ones(1, 1));
  CHECK_THROWS(p.add("x", Md::Ones(1, 1)));
  CHECK_THROWS_AS(p.at("y"), std::out_of_range);
}

TEST_CASE("lstm cell matches the textbook recurrence and its gradient") {
  Rng rng(5);
  ParamStore<double> p;
  const auto spec = init_lstm(p, "cell", 3, 4, rng);
  fill_uniform(p.at(spec.bias).value, 0.5, rng);
  const Md x = random_matrix(3, 1, rng);
  const Md h0 = random_matrix(4, 1, rng);
  const Md c0 = random_matrix(4, 1, rng);

  Tape<double> t;
  auto vars = bind(t, p, spec);
  auto st = lstm_cell(t.constant(x), t.constant(h0), t.constant(c0), vars);
  oracle::Lstm ref{p.at(spec.w_ih).value, p.at(spec.w_hh).value, p.at(spec.bias).value.col(0)};
  Eigen::VectorXd h = h0.col(0), c = c0.col(0);
  oracle::lstm_step(ref, x.col(0), h, c);
  CHECK((st.h.value().col(0) - h).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((st.c.value().col(0) - c).cwiseAbs().maxCoeff() < 1e-14);

  p.add("x", x);
  p.add("h0", h0);
  p.add("c0", c0);
  check([&](Tape<double>& tp) {
    auto v = bind(tp, p, spec);
    auto s1 = lstm_cell(tp.parameter(p.at("x")), tp.parameter(p.at("h0")), tp.parameter(p.at("c0")), v);
    auto s2 = lstm_cell(tp.parameter(p.at("x")), s1.h, s1.c, v);
    return probe(concat_rows<double>({s2.h, s2.c}));
  }, p);
}

TEST_CASE("bidirectional lstm ignores padding") {
  Rng rng(6);
  ParamStore<double> p;
  std::vector<LstmSpec> fw, bw;
  for (int l = 0; l < 2; ++l) {
    const int in = l == 0 ? 3 : 4;
    fw.push_back(init_lstm(p, "l" + std::to_string(l) + ".f", in, 2, rng));
    bw.push_back(init_lstm(p, "l" + std::to_string(l) + ".b", in, 2, rng));
  }
  // Column 0 has 2 valid steps, column 1 has 4; column 0's padding is garbage.
  std::vector<Md> steps;
  for (int j = 0; j < 4; ++j) steps.push_back(random_matrix(3, 2, rng, 5.0));

  auto run = [&](Tape<double>& t, const std::vector<Md>& xs, const std::vector<int>& lens) {
    std::vector<BiLstmLayer<double>> layers;
    for (int l = 0; l < 2; ++l) layers.push_back({bind(t, p, fw[l]), bind(t, p, bw[l])});
    std::vector<Var<double>> seq;
    for (const auto& x : xs) seq.push_back(t.constant(x));
    Rng r(0);
    return run_bilstm(t, seq, layers, lens, RecurrentDropout{}, r);
  };
  Tape<double> t1;
  auto padded = run(t1, steps, {2, 4});
  std::vector<Md> alone;
  for (int j = 0; j < 2; ++j) alone.push_back(steps[j].col(0));
  Tape<double> t2;
  auto single = run(t2, alone, {2});
  for (int j = 0; j < 2; ++j) {
    CHECK((padded[j].value().col(0) - single[j].value().col(0)).cwiseAbs().maxCoeff() < 1e-14);
  }
  std::vector<Md> full;
  for (int j = 0; j < 4; ++j) full.push_back(steps[j].col(1));
  Tape<double> t3;
  auto longer = run(t3, full, {4});
  for (int j = 0; j < 4; ++j) {
    CHECK((padded[j].value().col(1) - longer[j].value().col(0)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("dropout keeps the expected fraction and is inert in eval mode") {
  Tape<double> t;
  auto x = t.variable(Md::Ones(200, 200));
  Rng rng(7);
  CHECK(dropout(x, 0.5, Mode::eval, rng).id() == x.id());
  CHECK(dropout(x, 0.0, Mode::train, rng).id() == x.id());
  const Md y = dropout(x, 0.5, Mode::train, rng).value();
  const double kept = (y.array() != 0.0).cast<double>().mean();
  CHECK(kept == doctest::Approx(0.5).epsilon(0.02));
  CHECK(y.maxCoeff() == doctest::Approx(2.0));
  CHECK(y.mean() == doctest::Approx(1.0).epsilon(0.02));
  CHECK_THROWS(dropout(x, 1.0, Mode::train, rng));
}

TEST_CASE("adam step matches the bias-corrected update by hand") {
  ParamStore<double> p;
  p.add("w", (Md(1, 2) << 1.0, -2.0).finished());
  AdamState<double> st;
  st.lr = 0.1;
  const double g1[2] = {0.5, -3.0};
  const double g2[2] = {-1.0, 0.25};
  double m[2] = {0, 0}, v[2] = {0, 0}, w[2] = {1.0, -2.0};
  for (int step = 1; step <= 2; ++step) {
    const double* g = step == 1 ? g1 : g2;
    p.at("w").grad = (Md(1, 2) << g[0], g[1]).finished();
    adam_step(p, st);
    for (int k = 0; k < 2; ++k) {
      m[k] = 0.9 * m[k] + 0.1 * g[k];
      v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
      const double mh = m[k] / (1 - std::pow(0.9, step));
      const double vh = v[k] / (1 - std::pow(0.999, step));
      w[k] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(p.at("w").value(0, 0) == doctest::Approx(w[0]).epsilon(1e-14));
    CHECK(p.at("w").value(0, 1) == doctest::Approx(w[1]).epsilon(1e-14));
  }
  // The first step moves every weight by almost exactly lr.
  CHECK(std::abs(p.at("w").value(0, 0) - 1.0) < 0.2);
}

TEST_CASE("gradient flows through a repeated parameter binding") {
  ParamStore<double> p;
  p.add("a", (Md(1, 1) << 3.0).finished());
  Tape<double> t;
  auto a1 = t.parameter(p.at("a"));
  auto a2 = t.parameter(p.at("a"));
  CHECK(a1.id() == a2.id());
  t.backward(cmul(a1, a2));
  CHECK(p.at("a").grad(0, 0) == doctest::Approx(6.0));
}
