#include "cva/encoder.hpp"

#include <istream>
#include <sstream>
#include <string>

namespace cva {

void QuestionTokens::validate(std::size_t vocab_size, std::size_t max_length) const {
  if (ids.empty()) throw std::invalid_argument("question has no tokens");
  if (ids.size() > max_length)
    throw std::invalid_argument("question length " + std::to_string(ids.size()) + " exceeds maximum " +
                                std::to_string(max_length));
  for (std::size_t t = 0; t < ids.size(); ++t)
    if (ids[t] >= vocab_size)
      throw VocabularyError("token id " + std::to_string(ids[t]) + " at position " + std::to_string(t) +
                                " is outside vocabulary of size " + std::to_string(vocab_size),
                            t);
}

EncoderParams EncoderParams::create(ParameterStore& store, const EncoderDims& d, Rng& rng) {
  if (d.vocab == 0 || d.embed == 0 || d.hidden == 0) throw std::invalid_argument("encoder dimensions must be positive");
  EncoderParams p;
  p.dims = d;
  // One-hot inputs activate a single row, so the table is scaled as a fan-in-1 map.
  p.W_e = store.add("encoder.W_e", init_uniform({d.vocab, d.embed}, 1, d.embed, rng));
  auto gate = [&](const char* tag, ParamId& W, ParamId& U, ParamId& b) {
    W = store.add(std::string("encoder.W_") + tag, init_uniform({d.hidden, d.embed}, d.embed, d.hidden, rng));
    U = store.add(std::string("encoder.U_") + tag, init_uniform({d.hidden, d.hidden}, d.hidden, d.hidden, rng));
    b = store.add(std::string("encoder.b_") + tag, Tensor(Shape{d.hidden}));
  };
  gate("z", p.W_z, p.U_z, p.b_z);
  gate("r", p.W_r, p.U_r, p.b_r);
  gate("h", p.W_h, p.U_h, p.b_h);
  return p;
}

std::vector<ad::Var> embed_tokens(Bound& p, const EncoderParams& enc, const QuestionTokens& tokens) {
  const Tensor& table = p.store()[enc.W_e].value;
  tokens.validate(table.rows(), enc.dims.max_length);
  std::vector<ad::Var> xs;
  xs.reserve(tokens.ids.size());
  const ad::Var W_e = p(enc.W_e);
  for (auto id : tokens.ids) xs.push_back(ad::embed(W_e, id));
  return xs;
}

ad::Var gru_step(Bound& p, const EncoderParams& enc, ad::Var x, ad::Var h_prev) {
  using namespace ad;
  const Var z = sigmoid(add(affine(p(enc.W_z), x, p(enc.b_z)), affine(p(enc.U_z), h_prev)));
  const Var r = sigmoid(add(affine(p(enc.W_r), x, p(enc.b_r)), affine(p(enc.U_r), h_prev)));
  const Var cand = tanh(add(affine(p(enc.W_h), x, p(enc.b_h)), affine(p(enc.U_h), mul(r, h_prev))));
  return add(mul(z, h_prev), mul(one_minus(z), cand));
}

ad::Var encode_question(Bound& p, const EncoderParams& enc, const QuestionTokens& tokens) {
  const auto xs = embed_tokens(p, enc, tokens);
  const std::size_t hidden = p.store()[enc.b_z].value.size();
  ad::Var h = p.tape().constant(Tensor(Shape{hidden}));
  for (const auto& x : xs) h = gru_step(p, enc, x, h);
  return h;
}

std::vector<Tensor> embed_tokens(const ParameterStore& store, const EncoderParams& enc, const QuestionTokens& tokens) {
  ad::Tape tape;
  Bound p(tape, store);
  std::vector<Tensor> out;
  for (const auto& v : embed_tokens(p, enc, tokens)) out.push_back(v.value());
  return out;
}

Tensor gru_step(const ParameterStore& store, const EncoderParams& enc, const Tensor& x, const Tensor& h_prev) {
  ad::Tape tape;
  Bound p(tape, store);
  return gru_step(p, enc, tape.constant(x), tape.constant(h_prev)).value();
}

Tensor encode_question(const ParameterStore& store, const EncoderParams& enc, const QuestionTokens& tokens) {
  ad::Tape tape;
  Bound p(tape, store);
  return encode_question(p, enc, tokens).value();
}

std::size_t load_pretrained_embeddings(std::istream& is, const Vocabulary& vocab, Tensor& table) {
  if (table.rank() != 2 || table.rows() != vocab.size())
    throw ShapeError("embedding table does not match vocabulary", table.shape(), Shape{vocab.size()});
  const std::size_t dim = table.cols();
  std::string line;
  std::size_t line_no = 0, replaced = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    std::vector<double> values;
    double v;
    while (ls >> v) values.push_back(v);
    if (!ls.eof()) throw FormatError("malformed number in embedding file", line_no);
    if (values.size() != dim)
      throw FormatError("embedding for '" + token + "' has " + std::to_string(values.size()) + " values, expected " +
                            std::to_string(dim),
                        line_no);
    if (!vocab.contains(token)) continue;
    auto row = table.row(vocab.id(token));
    std::copy(values.begin(), values.end(), row.begin());
    ++replaced;
  }
  return replaced;
}

}  // namespace cva
