#pragma once

#include <vector>

#include "cva/data.hpp"
#include "cva/metrics.hpp"
#include "cva/model.hpp"

namespace cva {

/// Eval-mode forward pass (no dropout) over every example, scored with
/// consensus accuracy, per-type accuracy and, given a taxonomy, WUPS.
EvalReport evaluate(const Model& model, const FeatureContainer& features, const std::vector<VqaExample>& examples,
                    const Vocabularies& vocab, const Taxonomy* taxonomy = nullptr);

/// Answer strings the model predicts for `examples`, in order.
std::vector<std::string> predict_answers(const Model& model, const FeatureContainer& features,
                                         const std::vector<VqaExample>& examples, const Vocabularies& vocab);

}  // namespace cva
