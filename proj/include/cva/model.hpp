#pragma once

#include <cstdint>
#include <string>

#include "cva/attention.hpp"
#include "cva/classifier.hpp"
#include "cva/encoder.hpp"

namespace cva {

/// Architecture of one pipeline. Parameter groups not used by `variant` are
/// not allocated.
struct ModelConfig {
  Variant variant = Variant::CVA;
  SpatialFusion fusion = SpatialFusion::Literal;
  ChannelScale channel_scale = ChannelScale::Plain;
  std::size_t question_vocab = 2;
  std::size_t answers = 2;
  std::size_t channels = 32;          // D
  std::size_t embed = 16;             // E
  std::size_t hidden = 64;            // H
  std::size_t attention_hidden = 32;  // h_a
  std::size_t fused_hidden = 64;      // H_f
  std::size_t max_length = 26;

  /// Laptop-sized dimensions: E=16, H=64, h_a=32, H_f=64.
  static ModelConfig desk(std::size_t question_vocab, std::size_t answers, std::size_t channels);
  /// Published dimensions: E=300, H=h_a=H_f=1024.
  static ModelConfig full(std::size_t question_vocab, std::size_t answers, std::size_t channels = 2048);
  static ModelConfig profile(const std::string& name, std::size_t question_vocab, std::size_t answers,
                             std::size_t channels);
};

class Model {
 public:
  /// Fresh parameters from the "init" sub-stream of `seed`.
  static Model create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const EncoderParams& encoder() const { return encoder_; }
  const AttentionParams& attention() const { return attention_; }
  const ClassifierParams& classifier() const { return classifier_; }

  ad::Var encode(Bound& p, const QuestionTokens& tokens) const;
  /// Attention pipeline + classifier for an encoded question.
  ad::Var logits(Bound& p, ad::Var V, ad::Var Q, const Tensor* hidden_mask = nullptr) const;
  AttentionOutput attend(Bound& p, ad::Var V, ad::Var Q) const;

  /// Eval-mode prediction.
  AnswerDistribution predict(const RegionFeatureMap& V, const QuestionTokens& tokens) const;

 private:
  ModelConfig config_;
  ParameterStore store_;
  EncoderParams encoder_{};
  AttentionParams attention_;
  ClassifierParams classifier_{};
};

}  // namespace cva
