#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cva/gradcheck.hpp"
#include "cva/rng.hpp"
#include "cva/tape.hpp"
#include "support.hpp"

using namespace cva;
using testsupport::random_matrix;
using testsupport::random_vector;

TEST_CASE("softmax examples") {
  auto p = softmax(Tensor::vector({1, 1, 1}));
  for (double x : p.data()) CHECK(x == doctest::Approx(1.0 / 3).epsilon(1e-15));

  p = softmax(Tensor::vector({0, std::log(2.0)}));
  CHECK(p[0] == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(2.0 / 3).epsilon(1e-14));

  CHECK_THROWS_AS(softmax(Tensor(Shape{})), std::invalid_argument);
}

TEST_CASE("softmax stays normalised and positive for large inputs") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = random_vector(1 + rng.below(20), rng, 1e3);
    const auto p = softmax(x);
    const double s = std::accumulate(p.data().begin(), p.data().end(), 0.0);
    CHECK(std::abs(s - 1.0) <= 1e-12);
    for (double v : p.data()) CHECK(v >= 0.0);
  }
  // moderate inputs: strictly positive
  const auto p = softmax(Tensor::vector({-30, 0, 30}));
  for (double v : p.data()) CHECK(v > 0.0);
}

TEST_CASE("softmax shift invariance") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = random_vector(7, rng, 5.0);
    const double c = rng.uniform(-100, 100);
    auto y = x;
    for (auto& v : y.data()) v += c;
    CHECK(testsupport::max_abs_diff(softmax(x).data(), softmax(y).data()) <= 1e-12);
  }
}

TEST_CASE("outer product") {
  const auto m = outer_product(Tensor::vector({1, 2}), Tensor::vector({3, 4}));
  CHECK(m == Tensor::matrix({{3, 4}, {6, 8}}));
  const auto z = outer_product(Tensor::vector({0, 0, 0}), Tensor::vector({5, 6}));
  for (double x : z.data()) CHECK(x == 0.0);

  Rng rng(3);
  const auto a = random_vector(3, rng), b = random_vector(4, rng);
  const auto ab = outer_product(a, b), ba = outer_product(b, a);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(ab(i, j) == ba(j, i));
}

TEST_CASE("affine") {
  CHECK(affine(Tensor::vector({5, 7}), Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({0, 0})) ==
        Tensor::vector({5, 7}));
  CHECK(affine(Tensor::vector({9, 9}), Tensor::matrix({{0, 0}, {0, 0}}), Tensor::vector({1, 2})) ==
        Tensor::vector({1, 2}));
  CHECK(affine(Tensor::vector({2, 3}), Tensor::matrix({{1, 1}}), Tensor::vector({0})) == Tensor::vector({5}));

  try {
    affine(Tensor::vector({1, 2, 3}), Tensor::matrix({{1, 1}}), Tensor::vector({0}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1x2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
  CHECK_THROWS_AS(affine(Tensor::vector({1, 2}), Tensor::matrix({{1, 1}}), Tensor::vector({0, 0})), ShapeError);
}

TEST_CASE("mean over rows") {
  CHECK(mean_over_rows(Tensor::matrix({{1, 2}, {3, 4}})) == Tensor::vector({2, 3}));
  CHECK(mean_over_rows(Tensor::matrix({{5, -1, 2}})) == Tensor::vector({5, -1, 2}));
  CHECK(mean_over_rows(Tensor::matrix({{0.5, 2}, {0.5, 2}, {0.5, 2}})) == Tensor::vector({0.5, 2}));
  CHECK_THROWS_AS(mean_over_rows(Tensor::vector({1, 2})), ShapeError);
}

TEST_CASE("tensor construction rejects bad shapes") {
  CHECK_THROWS_AS(Tensor::matrix(2, 3, {1, 2, 3}), ShapeError);
  CHECK_THROWS(Tensor(Shape{0, 3}));
  CHECK_THROWS(Tensor::matrix(0, 0, {}));
  CHECK(Tensor::vector({1, 2, 3}).rank() == 1);
  CHECK_FALSE(Tensor::vector({1, NAN}).all_finite());
  CHECK_THROWS_AS(require_finite(Tensor::vector({INFINITY}), "x"), NumericError);
}

TEST_CASE("finite_difference_check on closed forms") {
  Tensor x = Tensor::vector({3.0});
  Tensor g = Tensor::vector({6.0});
  auto r = finite_difference_check([&] { return x[0] * x[0]; }, {{"x", &x, &g}}, 1e-5);
  CHECK(r.max_rel_error <= 1e-8);
  CHECK(x[0] == 3.0);  // restored

  Tensor y = Tensor::vector({1.0, -2.0, 0.5});
  Tensor gy = Tensor::vector({2.0, -1.0, 4.0});
  r = finite_difference_check([&] { return 2 * y[0] - y[1] + 4 * y[2] + 7; }, {{"y", &y, &gy}});
  CHECK(r.max_rel_error <= 1e-9);

  // a wrong analytic gradient is reported with its name and index
  Tensor bad = Tensor::vector({2.0, -1.0, 5.0});
  r = finite_difference_check([&] { return 2 * y[0] - y[1] + 4 * y[2]; }, {{"y", &y, &bad}});
  CHECK(r.worst_name == "y");
  CHECK(r.worst_index == 2);
  CHECK(r.max_rel_error == doctest::Approx(0.2));

  CHECK_THROWS_AS(finite_difference_check([&] { return x[0]; }, {{"x", &x, &g}}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(finite_difference_check([&] { return x[0]; }, {{"x", &x, &g}}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(finite_difference_check([&] { return std::log(x[0] - 3.0); }, {{"x", &x, &g}}), NumericError);
}

TEST_CASE("backward basics") {
  ad::Tape tape;
  auto x = tape.variable(Tensor::vector({3.0}));
  auto loss = ad::sum(ad::mul(x, x));
  tape.backward(loss);
  CHECK(tape.grad(x)[0] == doctest::Approx(6.0));
  // buffers are re-zeroed, not accumulated
  tape.backward(loss);
  CHECK(tape.grad(x)[0] == doctest::Approx(6.0));

  ad::Tape t2;
  auto p = t2.variable(Tensor::vector({1.0, 2.0}));
  auto c = t2.constant(Tensor::vector({4.0}));
  auto unrelated = ad::sum(c);
  t2.backward(unrelated);
  CHECK(t2.grad(p) == Tensor::vector({0.0, 0.0}));

  ad::Tape t3;
  auto v = t3.variable(Tensor::vector({1.0, 2.0}));
  CHECK_THROWS_AS(t3.backward(ad::tanh(v)), std::invalid_argument);
}

TEST_CASE("ops reject shape mismatches") {
  ad::Tape t;
  auto a = t.variable(Tensor::vector({1, 2}));
  auto b = t.variable(Tensor::vector({1, 2, 3}));
  auto m = t.variable(Tensor::matrix({{1, 2}, {3, 4}}));
  CHECK_THROWS_AS(ad::add(a, b), ShapeError);
  CHECK_THROWS_AS(ad::mul(a, b), ShapeError);
  CHECK_THROWS_AS(ad::add_row(m, b), ShapeError);
  CHECK_THROWS_AS(ad::mul_row(m, b), ShapeError);
  CHECK_THROWS_AS(ad::scale_rows(m, b), ShapeError);
  CHECK_THROWS_AS(ad::affine(m, b), ShapeError);
  CHECK_THROWS_AS(ad::weighted_sum_rows(b, m, 1.0), ShapeError);
  CHECK_THROWS_AS(ad::cross_entropy(a, 2), std::invalid_argument);
  CHECK_THROWS_AS(ad::embed(m, 2), std::out_of_range);
}

namespace {

// Builds a scalar loss from one primitive applied to random leaves, and checks
// the tape gradient of every leaf against central differences.
double check_primitive(const std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>& build,
                       std::vector<Tensor> leaves) {
  std::vector<Tensor> grads(leaves.size());
  Rng rng(99);
  // random projection so the loss touches every output coordinate differently
  std::optional<Tensor> proj;
  auto loss_of = [&](ad::Tape& tape, std::vector<ad::Var>& vars) {
    const auto out = build(tape, vars);
    if (out.value().rank() == 0) return out;
    if (!proj) {
      std::vector<double> w(out.value().size());
      for (auto& x : w) x = rng.uniform(-1, 1);
      proj = Tensor(out.value().shape(), w);
    }
    return ad::sum(ad::mask_mul(out, *proj));
  };
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (auto& l : leaves) vars.push_back(tape.parameter(l));
    const auto loss = loss_of(tape, vars);
    tape.backward(loss);
    for (std::size_t i = 0; i < leaves.size(); ++i) grads[i] = tape.grad(vars[i]);
  }
  std::vector<GradTarget> targets;
  for (std::size_t i = 0; i < leaves.size(); ++i) targets.push_back({"leaf" + std::to_string(i), &leaves[i], &grads[i]});
  return finite_difference_check(
             [&] {
               ad::Tape tape;
               std::vector<ad::Var> vars;
               for (auto& l : leaves) vars.push_back(tape.parameter(l));
               return loss_of(tape, vars).value()[0];
             },
             targets)
      .max_rel_error;
}

}  // namespace

TEST_CASE("every primitive's backward matches finite differences") {
  Rng rng(5);
  auto M = [&](std::size_t r, std::size_t c) { return random_matrix(r, c, rng); };
  auto V = [&](std::size_t n) { return random_vector(n, rng); };
  using VS = std::vector<ad::Var>;

  SUBCASE("affine vector") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::affine(v[0], v[1], v[2]); }, {M(3, 4), V(4), V(3)}) < 1e-7); }
  SUBCASE("affine rows") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::affine(v[0], v[1], v[2]); }, {M(3, 4), M(5, 4), V(3)}) < 1e-7); }
  SUBCASE("affine no bias") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::affine(v[0], v[1]); }, {M(2, 4), M(3, 4)}) < 1e-7); }
  SUBCASE("outer") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::outer(v[0], v[1]); }, {V(3), V(4)}) < 1e-7); }
  SUBCASE("tanh") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::tanh(v[0]); }, {M(2, 3)}) < 1e-7); }
  SUBCASE("sigmoid") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::sigmoid(v[0]); }, {V(5)}) < 1e-7); }
  SUBCASE("mul") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::mul(v[0], v[1]); }, {V(4), V(4)}) < 1e-7); }
  SUBCASE("mul aliased") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::mul(v[0], v[0]); }, {V(4)}) < 1e-7); }
  SUBCASE("add") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::add(v[0], v[1]); }, {M(2, 2), M(2, 2)}) < 1e-7); }
  SUBCASE("one_minus") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::one_minus(v[0]); }, {V(3)}) < 1e-7); }
  SUBCASE("add_row") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::add_row(v[0], v[1]); }, {M(3, 4), V(4)}) < 1e-7); }
  SUBCASE("mul_row") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::mul_row(v[0], v[1]); }, {M(3, 4), V(4)}) < 1e-7); }
  SUBCASE("scale_rows") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::scale_rows(v[0], v[1]); }, {M(3, 4), V(3)}) < 1e-7); }
  SUBCASE("add_scalar") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::add_scalar(v[0], v[1]); }, {V(4), Tensor::scalar(0.3)}) < 1e-7); }
  SUBCASE("softmax") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::softmax(v[0]); }, {V(6)}) < 1e-7); }
  SUBCASE("mean_rows") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::mean_rows(v[0]); }, {M(4, 3)}) < 1e-7); }
  SUBCASE("weighted_sum_rows") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::weighted_sum_rows(v[0], v[1], 0.25); }, {V(4), M(4, 3)}) < 1e-7); }
  SUBCASE("embed") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::embed(v[0], 2); }, {M(4, 3)}) < 1e-7); }
  SUBCASE("cross_entropy") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::cross_entropy(v[0], 1); }, {V(5)}) < 1e-7); }
  SUBCASE("sum") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::sum(v[0]); }, {M(2, 3)}) < 1e-7); }
  SUBCASE("mask_mul") { CHECK(check_primitive([](ad::Tape&, VS& v) { return ad::mask_mul(v[0], Tensor::vector({0, 2, 1})); }, {V(3)}) < 1e-7); }
  SUBCASE("composed graph") {
    CHECK(check_primitive(
              [](ad::Tape&, VS& v) {
                auto h = ad::tanh(ad::affine(v[0], v[1], v[2]));
                auto p = ad::softmax(ad::add(h, ad::sigmoid(h)));
                return ad::cross_entropy(ad::mul(p, h), 0);
              },
              {M(4, 3), V(3), V(4)}) < 1e-6);
  }
}

TEST_CASE("cross entropy gradient is p minus one-hot") {
  ad::Tape tape;
  auto z = tape.variable(Tensor::vector({0.3, -1.2, 2.0, 0.1}));
  tape.backward(ad::cross_entropy(z, 2));
  const auto p = softmax(z.value());
  for (std::size_t i = 0; i < 4; ++i) CHECK(tape.grad(z)[i] == doctest::Approx(p[i] - (i == 2 ? 1.0 : 0.0)));
}

TEST_CASE("corrupted backward rule is caught") {
  ad::testing::corrupt_backward(ad::Op::Tanh, 1.5);
  Rng rng(8);
  const double err = check_primitive([](ad::Tape&, std::vector<ad::Var>& v) { return ad::tanh(v[0]); },
                                     {random_vector(4, rng)});
  ad::testing::reset_backward_faults();
  CHECK(err > 1e-2);
}

TEST_CASE("rng streams are deterministic and distinct") {
  Rng a(7, "init"), b(7, "init"), c(7, "shuffle"), d(8, "init");
  const auto x = a.next();
  CHECK(x == b.next());
  CHECK(x != c.next());
  CHECK(x != d.next());
  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK((v >= 0.0 && v < 1.0));
    CHECK(u.below(6) < 6);
  }
}
