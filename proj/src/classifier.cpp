#include "cva/classifier.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cva {

ClassifierParams ClassifierParams::create(ParameterStore& store, const ClassifierDims& d, Rng& rng) {
  ClassifierParams c;
  c.W_v = store.add("classifier.W_v", init_uniform({d.fused, d.channels}, d.channels, d.fused, rng));
  c.W_q = store.add("classifier.W_q", init_uniform({d.fused, d.question}, d.question, d.fused, rng));
  c.b_h = store.add("classifier.b_h", Tensor(Shape{d.fused}));
  c.W_h = store.add("classifier.W_h", init_uniform({d.answers, d.fused}, d.fused, d.answers, rng));
  c.b_p = store.add("classifier.b_p", Tensor(Shape{d.answers}));
  return c;
}

std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

AnswerDistribution AnswerDistribution::from_logits(const Tensor& logits) {
  AnswerDistribution d;
  d.p = softmax(logits);
  d.argmax = argmax_lowest(logits.data());
  return d;
}

AnswerDistribution AnswerDistribution::from_probabilities(Tensor p) {
  if (p.rank() != 1) throw ShapeError("answer distribution must be a vector", p.shape(), Shape{});
  AnswerDistribution d;
  d.argmax = argmax_lowest(p.data());
  d.p = std::move(p);
  return d;
}

ad::Var answer_logits(Bound& p, const ClassifierParams& c, ad::Var attended, ad::Var Q, const Tensor* hidden_mask) {
  using namespace ad;
  Var h = tanh(add(affine(p(c.W_v), attended, p(c.b_h)), affine(p(c.W_q), Q)));
  if (hidden_mask) h = mask_mul(h, *hidden_mask);
  return affine(p(c.W_h), h, p(c.b_p));
}

AnswerDistribution predict_answer(const ParameterStore& store, const ClassifierParams& c, const Tensor& attended,
                                  const Tensor& Q) {
  ad::Tape tape;
  Bound p(tape, store);
  return AnswerDistribution::from_logits(answer_logits(p, c, tape.constant(attended), tape.constant(Q)).value());
}

double cross_entropy(const AnswerDistribution& p, std::size_t label) {
  if (label >= p.p.size())
    throw std::invalid_argument("label " + std::to_string(label) + " out of range for " + std::to_string(p.p.size()) +
                                " answers");
  const double q = p.p[label];
  return q >= 1.0 ? 0.0 : -std::log(q);
}

double cross_entropy_from_logits(const Tensor& logits, std::size_t label) {
  ad::Tape tape;
  return ad::cross_entropy(tape.constant(logits), label).value()[0];
}

}  // namespace cva
