#include "cva/evaluate.hpp"

namespace cva {

std::vector<std::string> predict_answers(const Model& model, const FeatureContainer& features,
                                         const std::vector<VqaExample>& examples, const Vocabularies& vocab) {
  std::vector<std::string> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    const RegionFeatureMap V(features.at(e.image_id));
    const auto p = model.predict(V, QuestionTokens{vocab.questions.encode(e.question)});
    out.push_back(vocab.answers.token(p.argmax));
  }
  return out;
}

EvalReport evaluate(const Model& model, const FeatureContainer& features, const std::vector<VqaExample>& examples,
                    const Vocabularies& vocab, const Taxonomy* taxonomy) {
  const auto answers = predict_answers(model, features, examples, vocab);
  std::vector<Prediction> preds;
  preds.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i)
    preds.push_back({answers[i], examples[i].human_answers, question_type(examples[i].question)});
  return summarize(preds, taxonomy);
}

}  // namespace cva
