#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cva/classifier.hpp"

namespace cva {

/// Lowercase, trim, and collapse internal whitespace runs.
std::string normalize_answer(const std::string& s);

/// Consensus accuracy min(#matching humans / 3, 1) over exactly ten answers.
double vqa_accuracy(const std::string& predicted, const std::vector<std::string>& human_answers);

/// Rooted answer tree. Depth of the root is 1.
class Taxonomy {
 public:
  /// Edges are (parent, child). Throws invalid_argument unless the edges form
  /// a single rooted tree.
  static Taxonomy from_edges(const std::vector<std::pair<std::string, std::string>>& edges);
  /// "parent<TAB>child" per line.
  static Taxonomy read(std::istream& is);
  static Taxonomy load(const std::string& path);

  bool contains(const std::string& term) const { return index_.count(normalize_answer(term)) != 0; }
  std::size_t depth(const std::string& term) const;
  /// Lowest common ancestor of two known terms.
  std::string lca(const std::string& a, const std::string& b) const;
  const std::string& root() const { return names_.at(root_); }
  std::size_t size() const { return names_.size(); }

 private:
  std::size_t id(const std::string& term) const;

  std::vector<std::string> names_;
  std::vector<long> parent_;
  std::vector<std::size_t> depth_;
  std::map<std::string, std::size_t> index_;
  std::size_t root_ = 0;
};

struct WupResult {
  double score = 0.0;
  bool unknown = false;  // at least one term was absent from the taxonomy
};

/// 2 depth(lca) / (depth(a) + depth(b)). A term missing from the taxonomy
/// scores 1 against an identical string and 0 otherwise.
WupResult wup_similarity_ex(const std::string& a, const std::string& b, const Taxonomy& taxonomy);
double wup_similarity(const std::string& a, const std::string& b, const Taxonomy& taxonomy);

/// Similarity with scores below `threshold` multiplied by 0.1.
double thresholded_wup(const std::string& a, const std::string& b, const Taxonomy& taxonomy, double threshold);

/// Mean thresholded similarity over aligned prediction/truth pairs.
double wups_score(const std::vector<std::string>& predictions, const std::vector<std::string>& truths,
                  const Taxonomy& taxonomy, double threshold);

/// Choice with the highest probability; ties go to the lowest answer index.
std::size_t multiple_choice_pick(const AnswerDistribution& p, const std::vector<std::size_t>& choices);

struct TypeScore {
  std::size_t count = 0;
  double accuracy = 0.0;
};

struct EvalReport {
  std::size_t count = 0;
  double accuracy = 0.0;
  std::map<std::string, TypeScore> per_type;
  std::optional<double> wups_09;
  std::optional<double> wups_00;
  std::size_t unknown_terms = 0;  // comparisons that used the unknown-term fallback
};

/// One scored example as fed to `summarize`.
struct Prediction {
  std::string predicted;
  std::vector<std::string> human_answers;
  std::string type;
};

/// Aggregates in input order. WUPS per example is the best thresholded
/// similarity against any human answer, which keeps
/// WUPS@0.0 >= WUPS@0.9 >= consensus accuracy.
EvalReport summarize(const std::vector<Prediction>& predictions, const Taxonomy* taxonomy);

/// Aligned plain-text table.
void write_report_text(const EvalReport& r, std::ostream& os);
/// "metric,name,value" rows.
void write_report_csv(const EvalReport& r, std::ostream& os);

}  // namespace cva
