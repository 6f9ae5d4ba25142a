#include <cmath>
#include <limits>
#include <random>

#include "cade/adam.hpp"
#include "cade/autodiff.hpp"
#include "cade/error.hpp"
#include "cade/layers.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cade;
using cade::testing::check_gradients;
using cade::testing::random_param;

namespace {

Tensor2 bias_row(std::initializer_list<double> v) { return Tensor2{v}; }

}  // namespace

TEST_CASE("affine_forward reference cases") {
  const Tensor2 eye{{1, 0}, {0, 1}};
  const Tensor2 id_out = affine_forward(Tensor2{{1, 2}}, eye, bias_row({0, 0}), Activation::kNone);
  CHECK(id_out == Tensor2{{1, 2}});
  const Tensor2 relu_out =
      affine_forward(Tensor2{{-1, 3}}, eye, bias_row({0, 0}), Activation::kRelu);
  CHECK(relu_out == Tensor2{{0, 3}});
  const Tensor2 sig = affine_forward(Tensor2{{0}}, Tensor2{{1}}, bias_row({0}), Activation::kSigmoid);
  CHECK(sig(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("affine_forward rejects bad shapes and non-finite input") {
  const Tensor2 w{{1, 0}, {0, 1}};
  CHECK_THROWS_AS(affine_forward(Tensor2{{1, 2, 3}}, w, bias_row({0, 0}), Activation::kNone),
                  DimensionError);
  CHECK_THROWS_AS(affine_forward(Tensor2{{1, 2}}, w, bias_row({0}), Activation::kNone),
                  DimensionError);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(affine_forward(Tensor2{{nan, 1}}, w, bias_row({0, 0}), Activation::kNone),
                  NumericError);
  Tape tape;
  Var x = tape.constant(Tensor2{{1.0, std::numeric_limits<double>::infinity()}});
  CHECK_THROWS_AS(affine_forward(x, tape.constant(w), tape.constant(bias_row({0, 0})),
                                 Activation::kRelu),
                  NumericError);
}

TEST_CASE("gradients of simple scalar functions") {
  auto w = std::make_shared<Parameter>("w", Tensor2::scalar(3.0));
  ParamSet ps;
  ps.add(w);
  {
    Tape tape;
    Var l = square(tape.param(w));
    tape.backward(l);
    CHECK(tape.gradients(ps).at("w").item() == doctest::Approx(6.0).epsilon(1e-12));
  }
  w->assign(Tensor2::scalar(0.0));
  {
    Tape tape;
    Var l = sigmoid(tape.param(w));
    tape.backward(l);
    CHECK(tape.gradients(ps).at("w").item() == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("untouched parameters get zero gradient and non-finite losses are rejected") {
  auto a = std::make_shared<Parameter>("a", Tensor2::scalar(2.0));
  auto b = std::make_shared<Parameter>("b", Tensor2(2, 3, 1.0));
  ParamSet ps;
  ps.add(a);
  ps.add(b);
  Tape tape;
  Var l = square(tape.param(a));
  tape.backward(l);
  const GradSet g = tape.gradients(ps);
  CHECK(g.at("b") == Tensor2(2, 3, 0.0));

  Tape bad;
  Var overflow = exp(scale(bad.param(a), 1000.0));  // exp(2000) = inf
  CHECK_THROWS_AS(bad.backward(sum(overflow)), NumericError);
}

TEST_CASE("ParamSet identifiers are unique and shapes immutable") {
  ParamSet ps;
  auto p = std::make_shared<Parameter>("x", Tensor2(2, 2));
  ps.add(p);
  ps.add(p);  // same object: no-op
  CHECK(ps.size() == 1);
  CHECK_THROWS_AS(ps.add(std::make_shared<Parameter>("x", Tensor2(2, 2))), ConfigError);
  CHECK_THROWS_AS(p->assign(Tensor2(3, 2)), DimensionError);
}

TEST_CASE("every tape op matches central finite differences") {
  std::mt19937_64 eng(11);
  auto a = random_param("a", 3, 4, eng);
  auto b = random_param("b", 3, 4, eng);
  auto w = random_param("w", 4, 2, eng);
  auto bias = random_param("bias", 1, 4, eng);
  auto pos = std::make_shared<Parameter>("pos", Tensor2(3, 4));
  for (std::size_t i = 0; i < pos->value().size(); ++i) {
    pos->mutable_value()[i] = 0.5 + std::abs(a->value()[i]);
  }
  ParamSet ps;
  for (const auto& p : {a, b, w, bias, pos}) ps.add(p);

  const std::vector<std::pair<const char*, std::function<Var(Tape&)>>> cases = {
      {"matmul", [&](Tape& t) { return sum(square(matmul(t.param(a), t.param(w)))); }},
      {"add_bias", [&](Tape& t) { return sum(square(add_bias(t.param(a), t.param(bias)))); }},
      {"add/sub/mul",
       [&](Tape& t) {
         return sum(mul(add(t.param(a), t.param(b)), sub(t.param(a), scale(t.param(b), 0.3))));
       }},
      {"add_scalar", [&](Tape& t) { return sum(square(add_scalar(t.param(a), 0.7))); }},
      {"relu", [&](Tape& t) { return sum(mul(relu(t.param(a)), t.param(b))); }},
      {"sigmoid", [&](Tape& t) { return sum(mul(sigmoid(t.param(a)), t.param(b))); }},
      {"tanh", [&](Tape& t) { return sum(mul(tanh(t.param(a)), t.param(b))); }},
      {"exp", [&](Tape& t) { return mean(exp(scale(t.param(a), 0.5))); }},
      {"log", [&](Tape& t) { return sum(log(t.param(pos))); }},
      {"clamp", [&](Tape& t) { return sum(mul(clamp(t.param(a), -0.5, 0.5), t.param(b))); }},
      {"max_all", [&](Tape& t) { return max_all(mul(t.param(a), t.param(b))); }},
      {"mean_rows", [&](Tape& t) { return sum(square(mean_rows(t.param(a)))); }},
      {"row_norms", [&](Tape& t) { return sum(row_norms(t.param(a))); }},
      {"concat_rows",
       [&](Tape& t) { return sum(square(concat_rows({t.param(a), t.param(b)}))); }},
      {"concat_cols",
       [&](Tape& t) { return sum(mul(concat_cols({t.param(a), t.param(b)}),
                                     concat_cols({t.param(b), t.param(a)}))); }},
      {"slice_cols", [&](Tape& t) { return sum(square(slice_cols(t.param(a), 1, 2))); }},
      {"slice_rows", [&](Tape& t) { return sum(square(slice_rows(t.param(a), 1, 2))); }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    const auto r = check_gradients(ps, fn);
    CAPTURE(r.worst);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("random three-layer net matches finite differences") {
  Rng rng(5);
  Dense l1("l1", 5, 7, Activation::kRelu, rng);
  Dense l2("l2", 7, 4, Activation::kTanh, rng);
  Dense l3("l3", 4, 1, Activation::kSigmoid, rng);
  ParamSet ps;
  for (const auto* l : {&l1, &l2, &l3}) l->register_params(ps);
  const Tensor2 x = rng.normal_tensor(6, 5);
  const auto r = check_gradients(ps, [&](Tape& t) {
    Var h = l3.forward(t, l2.forward(t, l1.forward(t, t.constant(x))));
    return mean(log(h));
  });
  CAPTURE(r.worst);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("tied parameters receive summed gradients") {
  auto w = std::make_shared<Parameter>("w", Tensor2{{2.0}});
  ParamSet ps;
  ps.add(w);
  Tape tape;
  // Two uses of the same parameter: d/dw (w^2 + 3w) = 2w + 3.
  Var l = add(square(tape.param(w)), scale(tape.param(w), 3.0));
  tape.backward(l);
  CHECK(tape.gradients(ps).at("w").item() == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("Adam first step, zero-gradient fixpoint and two constant steps") {
  auto p = std::make_shared<Parameter>("p", Tensor2::scalar(1.0));
  ParamSet ps;
  ps.add(p);
  AdamState st(ps, AdamOptions{});
  const GradSet g1{{"p", Tensor2::scalar(1.0)}};
  adam_step(ps, g1, st);
  CHECK(st.step == 1);
  // Bias correction makes the first step exactly lr * g / (|g| + eps).
  CHECK(p->value().item() == doctest::Approx(1.0 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-14));
  CHECK(p->value().item() == doctest::Approx(0.999).epsilon(1e-6));

  // Second step with g = 1: m = 0.19, v = 0.001999, both corrected to 1.
  const double after_one = p->value().item();
  adam_step(ps, g1, st);
  CHECK(p->value().item() < after_one);
  CHECK(p->value().item() == doctest::Approx(1.0 - 2e-3 / (1.0 + 1e-8)).epsilon(1e-13));

  auto q = std::make_shared<Parameter>("q", Tensor2{{0.3, -2.0}});
  ParamSet qs;
  qs.add(q);
  AdamState sq(qs, AdamOptions{});
  for (int i = 0; i < 5; ++i) adam_step(qs, GradSet{{"q", Tensor2(1, 2, 0.0)}}, sq);
  CHECK(q->value() == Tensor2{{0.3, -2.0}});
}

TEST_CASE("adam_step is deterministic and validates its inputs") {
  auto make = [] {
    auto p = std::make_shared<Parameter>("p", Tensor2{{0.5, -1.5, 2.0}});
    ParamSet ps;
    ps.add(p);
    return std::pair{p, ps};
  };
  auto [p1, s1] = make();
  auto [p2, s2] = make();
  AdamState a1(s1, AdamOptions{}), a2(s2, AdamOptions{});
  const GradSet g{{"p", Tensor2{{0.1, -0.4, 3.0}}}};
  for (int i = 0; i < 3; ++i) {
    adam_step(s1, g, a1);
    adam_step(s2, g, a2);
  }
  CHECK(p1->value() == p2->value());
  CHECK(a1 == a2);

  CHECK_THROWS_AS(adam_step(s1, GradSet{{"p", Tensor2(1, 2)}}, a1), DimensionError);
  CHECK_THROWS_AS(
      adam_step(s1, GradSet{{"p", Tensor2{{0.0, std::numeric_limits<double>::infinity(), 0.0}}}},
                a1),
      NumericError);
  CHECK_THROWS_AS(AdamState(AdamOptions{1e-3, 1.0, 0.999, 1e-8}), ConfigError);
}

TEST_CASE("sigmoid stays finite and inside [0, 1] for extreme inputs") {
  Tape tape;
  Var s = sigmoid(tape.constant(Tensor2{{-800.0, -40.0, 0.0, 40.0, 800.0}}));
  CHECK(s.value().all_finite());
  for (double v : s.value().values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}
