#pragma once

#include "cva/params.hpp"

namespace cva {

struct ClassifierDims {
  std::size_t channels = 32;  // D
  std::size_t question = 64;  // H
  std::size_t fused = 64;     // H_f
  std::size_t answers = 2;    // A
};

/// h = tanh(W_v v + W_q Q + b_h); p = softmax(W_h h + b_p).
struct ClassifierParams {
  ParamId W_v, W_q, b_h, W_h, b_p;
  static ClassifierParams create(ParameterStore& store, const ClassifierDims& dims, Rng& rng);
};

/// Probability over the answer vocabulary. `argmax` is the lowest index among maxima.
struct AnswerDistribution {
  Tensor p;
  std::size_t argmax = 0;

  static AnswerDistribution from_logits(const Tensor& logits);
  static AnswerDistribution from_probabilities(Tensor p);
};

/// Lowest index of the maximum entry.
std::size_t argmax_lowest(std::span<const double> v);

/// Pre-softmax scores. `hidden_mask`, when given, multiplies h (dropout).
ad::Var answer_logits(Bound& p, const ClassifierParams& c, ad::Var attended, ad::Var Q,
                      const Tensor* hidden_mask = nullptr);

AnswerDistribution predict_answer(const ParameterStore& store, const ClassifierParams& c, const Tensor& attended,
                                  const Tensor& Q);

/// -log p[label]. Throws invalid_argument for an out-of-range label.
double cross_entropy(const AnswerDistribution& p, std::size_t label);
/// -log softmax(logits)[label] through log-sum-exp.
double cross_entropy_from_logits(const Tensor& logits, std::size_t label);

}  // namespace cva
