#include "cva/model.hpp"

#include <stdexcept>

namespace cva {

ModelConfig ModelConfig::desk(std::size_t question_vocab, std::size_t answers, std::size_t channels) {
  ModelConfig c;
  c.question_vocab = question_vocab;
  c.answers = answers;
  c.channels = channels;
  return c;
}

ModelConfig ModelConfig::full(std::size_t question_vocab, std::size_t answers, std::size_t channels) {
  ModelConfig c;
  c.question_vocab = question_vocab;
  c.answers = answers;
  c.channels = channels;
  c.embed = 300;
  c.hidden = 1024;
  c.attention_hidden = 1024;
  c.fused_hidden = 1024;
  return c;
}

ModelConfig ModelConfig::profile(const std::string& name, std::size_t question_vocab, std::size_t answers,
                                 std::size_t channels) {
  if (name == "desk") return desk(question_vocab, answers, channels);
  if (name == "full") return full(question_vocab, answers, channels);
  throw std::invalid_argument("unknown profile '" + name + "' (valid: desk, full)");
}

Model Model::create(const ModelConfig& config, std::uint64_t seed) {
  Model m;
  m.config_ = config;
  Rng rng(seed, "init");
  m.encoder_ = EncoderParams::create(
      m.store_, EncoderDims{config.question_vocab, config.embed, config.hidden, config.max_length}, rng);
  const AttentionDims ad{config.channels, config.hidden, config.attention_hidden};
  if (uses_channel(config.variant)) m.attention_.channel = ChannelAttentionParams::create(m.store_, ad, rng);
  if (uses_spatial(config.variant)) m.attention_.spatial = SpatialAttentionParams::create(m.store_, ad, rng);
  m.attention_.fusion = config.fusion;
  m.attention_.channel_scale = config.channel_scale;
  m.classifier_ = ClassifierParams::create(
      m.store_, ClassifierDims{config.channels, config.hidden, config.fused_hidden, config.answers}, rng);
  return m;
}

ad::Var Model::encode(Bound& p, const QuestionTokens& tokens) const { return encode_question(p, encoder_, tokens); }

AttentionOutput Model::attend(Bound& p, ad::Var V, ad::Var Q) const {
  if (V.value().rank() != 2 || V.value().cols() != config_.channels)
    throw ShapeError("region features do not match model channels", V.value().shape(), Shape{0, config_.channels});
  return cva::attend(config_.variant, p, attention_, V, Q);
}

ad::Var Model::logits(Bound& p, ad::Var V, ad::Var Q, const Tensor* hidden_mask) const {
  return answer_logits(p, classifier_, attend(p, V, Q).output, Q, hidden_mask);
}

AnswerDistribution Model::predict(const RegionFeatureMap& V, const QuestionTokens& tokens) const {
  ad::Tape tape;
  Bound p(tape, store_);
  const auto Q = encode(p, tokens);
  return AnswerDistribution::from_logits(logits(p, tape.constant(V.matrix()), Q).value());
}

}  // namespace cva
