#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "cva/params.hpp"
#include "cva/vocab.hpp"

namespace cva {

struct EncoderDims {
  std::size_t vocab = 0;
  std::size_t embed = 16;
  std::size_t hidden = 64;
  std::size_t max_length = 26;
};

/// Token ids q_1..q_T of one question.
struct QuestionTokens {
  std::vector<std::size_t> ids;

  /// Throws VocabularyError naming the first out-of-range position, or
  /// invalid_argument for an empty or over-long question.
  void validate(std::size_t vocab_size, std::size_t max_length) const;
};

/// Embedding table and GRU weights:
///   z = sigmoid(W_z x + U_z h + b_z)
///   r = sigmoid(W_r x + U_r h + b_r)
///   c = tanh(W_h x + U_h (r * h) + b_h)
///   h' = z * h + (1 - z) * c
struct EncoderParams {
  ParamId W_e, W_z, U_z, b_z, W_r, U_r, b_r, W_h, U_h, b_h;
  EncoderDims dims;

  static EncoderParams create(ParameterStore& store, const EncoderDims& dims, Rng& rng);
};

std::vector<ad::Var> embed_tokens(Bound& p, const EncoderParams& enc, const QuestionTokens& tokens);
ad::Var gru_step(Bound& p, const EncoderParams& enc, ad::Var x, ad::Var h_prev);
/// Folds gru_step over the question from a zero state and returns h_T.
ad::Var encode_question(Bound& p, const EncoderParams& enc, const QuestionTokens& tokens);

// Value-level forms.
std::vector<Tensor> embed_tokens(const ParameterStore& store, const EncoderParams& enc, const QuestionTokens& tokens);
Tensor gru_step(const ParameterStore& store, const EncoderParams& enc, const Tensor& x, const Tensor& h_prev);
Tensor encode_question(const ParameterStore& store, const EncoderParams& enc, const QuestionTokens& tokens);

/// Reads "token v_1 ... v_E" lines into the rows of `table` for tokens present
/// in `vocab`; other rows keep their current values. Returns rows replaced.
std::size_t load_pretrained_embeddings(std::istream& is, const Vocabulary& vocab, Tensor& table);

}  // namespace cva
