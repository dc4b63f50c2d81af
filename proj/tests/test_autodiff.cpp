#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "gloss/autodiff.hpp"
#include "gloss/nn.hpp"
#include "gloss/rng.hpp"

using namespace gloss;
using ad::Param;
using ad::Tape;
using ad::Var;
using ad::Vec;

namespace {

// Central finite differences of `forward` against the analytic gradients
// written into each param by one backward pass.
void check_gradients(std::vector<Param*> params, const std::function<double()>& forward,
                     const std::function<Var(Tape&)>& build, double step = 1e-6,
                     double tol = 1e-6) {
  Tape t;
  Var loss = build(t);
  REQUIRE(t.dim(loss) == 1);
  for (Param* p : params) p->zero_grad();
  t.backward(loss);

  for (Param* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double saved = p->value[i];
      p->value[i] = saved + step;
      double up = forward();
      p->value[i] = saved - step;
      double down = forward();
      p->value[i] = saved;
      double fd = (up - down) / (2 * step);
      double analytic = p->grad[i];
      double err = std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
      INFO(p->name << "[" << i << "]: analytic " << analytic << " vs fd " << fd);
      CHECK(err < tol);
    }
  }
}

Vec random_vec(Rng& rng, int n, double scale = 1.0) {
  Vec v(n);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return v;
}

}  // namespace

TEST_CASE("affine and matvec values") {
  Tape t;
  Param w("w", 2, 3);
  w.value = {1, 2, 3, 4, 5, 6};
  Param b("b", 2);
  b.value = {10, 20};
  Var x = t.input({1, 0, -1});
  Var y = t.affine(w, b, x);
  CHECK(t.val(y) == Vec{1 - 3 + 10, 4 - 6 + 20});
  Var z = t.matvec(w, x);
  CHECK(t.val(z) == Vec{-2, -2});
}

TEST_CASE("softmax and log_softmax agree and normalize") {
  Tape t;
  Var x = t.input({0.3, -1.2, 2.0, 0.0});
  Vec p = t.val(t.softmax(x));
  Vec lp = t.val(t.log_softmax(x));
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sum += p[i];
    CHECK(std::abs(std::log(p[i]) - lp[i]) < 1e-12);
  }
  CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("logaddexp is stable for extreme inputs") {
  Tape t;
  Var big = t.logaddexp(t.constant(1000.0), t.constant(1000.0));
  CHECK(t.scalar(big) == Catch::Approx(1000.0 + std::log(2.0)));
  Var lop = t.logaddexp(t.constant(-1000.0), t.constant(3.0));
  CHECK(t.scalar(lop) == Catch::Approx(3.0).margin(1e-12));
}

TEST_CASE("row and column sums") {
  Tape t;
  Var a = t.input({1, 2, 3, 4, 5, 6});  // 2x3
  CHECK(t.val(t.row_sums(a, 2, 3)) == Vec{6, 15});
  CHECK(t.val(t.col_sums(a, 2, 3)) == Vec{5, 7, 9});
}

TEST_CASE("every elementwise and shape op passes a finite-difference check") {
  Rng rng(11);
  Param a("a", 5);
  a.value = random_vec(rng, 5);
  Param b("b", 5);
  b.value = random_vec(rng, 5);

  auto build = [&](Tape& t) {
    Var va = t.param_vector(a);
    Var vb = t.param_vector(b);
    Var mixed = t.add(t.mul(t.tanh_(va), t.sigmoid_(vb)), t.scale(t.sub(va, vb), 0.3));
    mixed = t.offset(mixed, {0.1, -0.2, 0.3, 0.0, 0.05});
    Var joined = t.concat(mixed, t.exp_(t.slice(va, 1, 2)));
    Var picked = t.gather({t.pick(joined, 0), t.pick(joined, 3), t.pick(joined, 6)});
    Var weights = t.softmax(picked);
    Var ws = t.weighted_sum(weights, {t.slice(joined, 0, 2), t.slice(joined, 2, 2),
                                      t.slice(joined, 4, 2)});
    return t.add(t.dot(ws, t.slice(vb, 0, 2)), t.nll(mixed, 2));
  };
  auto forward = [&]() {
    Tape t;
    return t.scalar(build(t));
  };
  check_gradients({&a, &b}, forward, build);
}

TEST_CASE("scalar mixture ops pass a finite-difference check") {
  Rng rng(12);
  Param a("a", 6);
  a.value = random_vec(rng, 6);

  auto build = [&](Tape& t) {
    Var va = t.param_vector(a);
    Var s1 = t.pick(va, 0);
    Var s2 = t.pick(va, 3);
    Var lae = t.logaddexp(t.scale(s1, 2.0), s2);
    Var mix = t.lincomb({s1, s2, lae},
                        {t.slice(va, 0, 2), t.slice(va, 2, 2), t.slice(va, 4, 2)});
    Var scaled = t.mul_scalar(mix, t.recip_clamped(t.sum_scalars({s1, s2}), 1e-8));
    Var cmix = t.lincomb_const({0.25, 0.75}, {scaled, t.slice(va, 1, 2)});
    return t.dot(cmix, cmix);
  };
  auto forward = [&]() {
    Tape t;
    return t.scalar(build(t));
  };
  check_gradients({&a}, forward, build);
}

TEST_CASE("embedding rows receive sparse gradients") {
  Rng rng(13);
  Param emb("emb", 4, 3);
  emb.value = random_vec(rng, 12);

  auto build = [&](Tape& t) {
    Var r0 = t.embedding_row(emb, 0);
    Var r2 = t.embedding_row(emb, 2);
    return t.dot(t.tanh_(r0), r2);
  };
  auto forward = [&]() {
    Tape t;
    return t.scalar(build(t));
  };
  check_gradients({&emb}, forward, build);

  // Row 1 and 3 untouched.
  Tape t;
  emb.zero_grad();
  t.backward(build(t));
  for (int c = 0; c < 3; ++c) {
    CHECK(emb.grad[1 * 3 + c] == 0.0);
    CHECK(emb.grad[3 * 3 + c] == 0.0);
  }
}

TEST_CASE("lstm step and bilstm pass finite-difference checks") {
  Rng rng(14);
  nn::LstmParams cell("cell", 3, 4);
  cell.init(rng);
  nn::BiLstmParams rnn("rnn", 2, 3, 2);
  rnn.init(rng);
  std::vector<Vec> xs = {random_vec(rng, 3), random_vec(rng, 3), random_vec(rng, 3)};

  auto build = [&](Tape& t) {
    nn::LstmState s = nn::lstm_initial(t, 4);
    for (const Vec& x : xs) s = nn::lstm_step(t, cell, t.input(x), s);
    Var probe = s.h;

    std::vector<Var> inputs;
    for (const Vec& x : xs) inputs.push_back(t.input(x));
    nn::BiLstmOutput out = nn::bilstm(t, rnn, inputs);
    Var acc = t.dot(out.final_state(t), out.final_state(t));
    for (Var v : out.states) acc = t.add(acc, t.dot(v, t.tanh_(v)));
    return t.add(acc, t.dot(probe, probe));
  };
  auto forward = [&]() {
    Tape t;
    return t.scalar(build(t));
  };
  std::vector<Param*> params;
  cell.collect(params);
  rnn.collect(params);
  check_gradients(params, forward, build, 1e-6, 2e-6);
}

TEST_CASE("backward accumulates into shared subexpressions") {
  Param a("a", 1);
  a.value = {0.7};
  Tape t;
  Var x = t.param_vector(a);
  Var y = t.mul(x, x);     // x^2
  Var z = t.add(y, t.mul(y, x));  // x^2 + x^3
  a.zero_grad();
  t.backward(z);
  CHECK(a.grad[0] == Catch::Approx(2 * 0.7 + 3 * 0.7 * 0.7));
}

TEST_CASE("dropout masks scale by the keep probability and are deterministic") {
  Rng rng1(5), rng2(5);
  Tape t;
  Var x = t.input(Vec(1000, 1.0));
  Var d1 = nn::dropout(t, x, 0.25, &rng1);
  Var d2 = nn::dropout(t, x, 0.25, &rng2);
  CHECK(t.val(d1) == t.val(d2));
  double mean = 0.0;
  for (double v : t.val(d1)) {
    CHECK((v == 0.0 || v == Catch::Approx(1.0 / 0.75)));
    mean += v;
  }
  mean /= 1000.0;
  CHECK(mean == Catch::Approx(1.0).margin(0.08));
  CHECK(t.val(nn::dropout(t, x, 0.0, &rng1)) == Vec(1000, 1.0));
  CHECK(t.val(nn::dropout(t, x, 0.5, nullptr)) == Vec(1000, 1.0));
}

TEST_CASE("parameter initialization is deterministic under the seed") {
  Rng r1(42), r2(42), r3(43);
  Param p1("p", 8, 8), p2("p", 8, 8), p3("p", 8, 8);
  p1.init_xavier(r1);
  p2.init_xavier(r2);
  p3.init_xavier(r3);
  CHECK(p1.value == p2.value);
  CHECK(p1.value != p3.value);
}
