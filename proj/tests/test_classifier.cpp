#include <doctest.h>

#include <cmath>

#include "cva/classifier.hpp"
#include "cva/model.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace cva;
using testsupport::max_abs_diff;

namespace {

struct Head {
  ParameterStore store;
  ClassifierParams c;
};

Head make_head(std::size_t D, std::size_t H, std::size_t Hf, std::size_t A, std::uint64_t seed, double scale = 0.5) {
  Head h;
  Rng rng(seed);
  h.c = ClassifierParams::create(h.store, {D, H, Hf, A}, rng);
  for (auto& e : h.store.entries())
    for (auto& x : e.value.data()) x = rng.uniform(-scale, scale);
  return h;
}

}  // namespace

TEST_CASE("zero parameters predict uniformly") {
  auto h = make_head(6, 4, 5, 7, 1);
  for (auto& e : h.store.entries()) e.value.fill(0.0);
  Rng rng(1);
  const auto p = predict_answer(h.store, h.c, testsupport::random_vector(6, rng), testsupport::random_vector(4, rng));
  for (double x : p.p.data()) CHECK(x == doctest::Approx(1.0 / 7));
  CHECK(p.argmax == 0);
}

TEST_CASE("classifier matches the scalar-loop oracle") {
  Rng rng(3);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto h = make_head(5, 4, 6, 3 + seed % 5, seed, 1.0);
    const auto v = testsupport::random_vector(5, rng, 2.0), Q = testsupport::random_vector(4, rng);
    const auto p = predict_answer(h.store, h.c, v, Q);
    CHECK(max_abs_diff(p.p, oracle::classifier_probs(h.store, oracle::vec(v), oracle::vec(Q))) <= 1e-12);
    double total = 0.0;
    for (double x : p.p.data()) total += x;
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  CHECK(argmax_lowest(std::vector<double>{0.2, 0.4, 0.4}) == 1);
  CHECK(argmax_lowest(std::vector<double>{1, 1, 1}) == 0);
  CHECK(AnswerDistribution::from_logits(Tensor::vector({3, 1, 3})).argmax == 0);
}

TEST_CASE("softmax of extreme logits stays finite") {
  const auto p = AnswerDistribution::from_logits(Tensor::vector({1000, 0, -1000}));
  CHECK(p.p.all_finite());
  CHECK(p.p[0] == doctest::Approx(1.0));
  CHECK(cross_entropy_from_logits(Tensor::vector({1000, 0, -1000}), 2) == doctest::Approx(2000.0));
}

TEST_CASE("cross entropy") {
  const auto logits = Tensor::vector({0.3, -1.2, 2.0, 0.0});
  const auto p = AnswerDistribution::from_logits(logits);
  for (std::size_t y = 0; y < 4; ++y) {
    CHECK(cross_entropy(p, y) == doctest::Approx(-std::log(p.p[y])).epsilon(1e-12));
    CHECK(cross_entropy_from_logits(logits, y) == doctest::Approx(cross_entropy(p, y)).epsilon(1e-12));
  }
  CHECK(cross_entropy(AnswerDistribution::from_probabilities(Tensor::vector({0.25, 0.75})), 1) ==
        doctest::Approx(-std::log(0.75)));
  CHECK_THROWS_AS(cross_entropy(p, 4), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy_from_logits(logits, 9), std::invalid_argument);
}

TEST_CASE("classifier shape errors") {
  auto h = make_head(6, 4, 5, 3, 2);
  CHECK_THROWS_AS(predict_answer(h.store, h.c, Tensor(Shape{5}), Tensor(Shape{4})), ShapeError);
  CHECK_THROWS_AS(predict_answer(h.store, h.c, Tensor(Shape{6}), Tensor(Shape{3})), ShapeError);
}

TEST_CASE("classifier gradients pass finite differences") {
  auto h = make_head(6, 4, 5, 7, 4);
  Rng rng(4);
  const auto v = testsupport::random_vector(6, rng), Q = testsupport::random_vector(4, rng);
  const auto mask = Tensor::vector({2, 0, 2, 2, 0});
  for (const Tensor* m : {static_cast<const Tensor*>(nullptr), &mask}) {
    const auto r = testsupport::param_gradcheck(h.store, [&](Bound& p) {
      auto& tape = p.tape();
      return ad::cross_entropy(answer_logits(p, h.c, tape.constant(v), tape.constant(Q), m), 3);
    });
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("dropout mask zeroes hidden units") {
  auto h = make_head(3, 2, 4, 3, 5);
  Rng rng(5);
  const auto v = testsupport::random_vector(3, rng), Q = testsupport::random_vector(2, rng);
  ad::Tape tape;
  Bound p(tape, h.store);
  const auto zero = Tensor(Shape{4});
  const auto logits = answer_logits(p, h.c, tape.constant(v), tape.constant(Q), &zero);
  // with every hidden unit dropped only the output bias remains
  CHECK(max_abs_diff(logits.value().data(), h.store[h.c.b_p].value.data()) == 0.0);
}

TEST_CASE("full-scale classifier shapes") {
  const auto mc = ModelConfig::full(100, 2000);
  CHECK(mc.channels == 2048);
  CHECK(mc.hidden == 1024);
  CHECK(mc.fused_hidden == 1024);
  ParameterStore store;
  Rng rng(0);
  const auto c = ClassifierParams::create(store, {mc.channels, mc.hidden, mc.fused_hidden, mc.answers}, rng);
  CHECK(store[c.W_v].value.shape() == Shape{1024, 2048});
  CHECK(store[c.W_h].value.shape() == Shape{2000, 1024});
  const auto p = predict_answer(store, c, Tensor(Shape{2048}, 0.01), Tensor(Shape{1024}, 0.01));
  CHECK(p.p.size() == 2000);
}
