#include "cva/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "cva/data.hpp"

namespace cva {

namespace {
constexpr double kBelowThresholdFactor = 0.1;
}

std::string normalize_answer(const std::string& s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

double vqa_accuracy(const std::string& predicted, const std::vector<std::string>& human_answers) {
  if (human_answers.size() != kHumanAnswers)
    throw std::invalid_argument("consensus accuracy needs exactly 10 human answers, got " +
                                std::to_string(human_answers.size()));
  const std::string p = normalize_answer(predicted);
  const auto matches = std::count_if(human_answers.begin(), human_answers.end(),
                                     [&](const std::string& h) { return normalize_answer(h) == p; });
  return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

Taxonomy Taxonomy::from_edges(const std::vector<std::pair<std::string, std::string>>& edges) {
  Taxonomy t;
  auto intern = [&](const std::string& raw) {
    const std::string name = normalize_answer(raw);
    if (name.empty()) throw std::invalid_argument("taxonomy has an empty term");
    auto [it, inserted] = t.index_.emplace(name, t.names_.size());
    if (inserted) {
      t.names_.push_back(name);
      t.parent_.push_back(-1);
    }
    return it->second;
  };
  for (const auto& [parent, child] : edges) {
    const auto p = intern(parent);
    const auto c = intern(child);
    if (p == c) throw std::invalid_argument("taxonomy self-loop at '" + t.names_[p] + "'");
    if (t.parent_[c] >= 0 && static_cast<std::size_t>(t.parent_[c]) != p)
      throw std::invalid_argument("taxonomy term '" + t.names_[c] + "' has two parents");
    t.parent_[c] = static_cast<long>(p);
  }
  if (t.names_.empty()) throw std::invalid_argument("taxonomy is empty");
  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < t.names_.size(); ++i)
    if (t.parent_[i] < 0) roots.push_back(i);
  if (roots.size() != 1) throw std::invalid_argument("taxonomy must have exactly one root, found " + std::to_string(roots.size()));
  t.root_ = roots.front();
  t.depth_.assign(t.names_.size(), 0);
  for (std::size_t i = 0; i < t.names_.size(); ++i) {
    std::size_t d = 1;
    std::size_t cur = i;
    while (t.parent_[cur] >= 0) {
      cur = static_cast<std::size_t>(t.parent_[cur]);
      if (++d > t.names_.size()) throw std::invalid_argument("taxonomy contains a cycle through '" + t.names_[i] + "'");
    }
    t.depth_[i] = d;
  }
  return t;
}

Taxonomy Taxonomy::read(std::istream& is) {
  std::vector<std::pair<std::string, std::string>> edges;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw FormatError("taxonomy line must be parent<TAB>child", line_no);
    edges.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return from_edges(edges);
}

Taxonomy Taxonomy::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read taxonomy file " + path);
  return read(is);
}

std::size_t Taxonomy::id(const std::string& term) const {
  auto it = index_.find(normalize_answer(term));
  if (it == index_.end()) throw std::out_of_range("term '" + term + "' is not in the taxonomy");
  return it->second;
}

std::size_t Taxonomy::depth(const std::string& term) const { return depth_[id(term)]; }

std::string Taxonomy::lca(const std::string& a, const std::string& b) const {
  std::size_t x = id(a), y = id(b);
  while (depth_[x] > depth_[y]) x = static_cast<std::size_t>(parent_[x]);
  while (depth_[y] > depth_[x]) y = static_cast<std::size_t>(parent_[y]);
  while (x != y) {
    x = static_cast<std::size_t>(parent_[x]);
    y = static_cast<std::size_t>(parent_[y]);
  }
  return names_[x];
}

WupResult wup_similarity_ex(const std::string& a, const std::string& b, const Taxonomy& taxonomy) {
  if (!taxonomy.contains(a) || !taxonomy.contains(b))
    return {normalize_answer(a) == normalize_answer(b) ? 1.0 : 0.0, true};
  const double common = static_cast<double>(taxonomy.depth(taxonomy.lca(a, b)));
  return {2.0 * common / static_cast<double>(taxonomy.depth(a) + taxonomy.depth(b)), false};
}

double wup_similarity(const std::string& a, const std::string& b, const Taxonomy& taxonomy) {
  return wup_similarity_ex(a, b, taxonomy).score;
}

double thresholded_wup(const std::string& a, const std::string& b, const Taxonomy& taxonomy, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("WUPS threshold must lie in [0, 1]");
  const double s = wup_similarity(a, b, taxonomy);
  return s < threshold ? kBelowThresholdFactor * s : s;
}

double wups_score(const std::vector<std::string>& predictions, const std::vector<std::string>& truths,
                  const Taxonomy& taxonomy, double threshold) {
  if (predictions.size() != truths.size())
    throw std::invalid_argument("WUPS needs equally many predictions and truths (" +
                                std::to_string(predictions.size()) + " vs " + std::to_string(truths.size()) + ")");
  if (predictions.empty()) throw std::invalid_argument("WUPS over an empty list");
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    total += thresholded_wup(predictions[i], truths[i], taxonomy, threshold);
  return total / static_cast<double>(predictions.size());
}

std::size_t multiple_choice_pick(const AnswerDistribution& p, const std::vector<std::size_t>& choices) {
  if (choices.empty()) throw std::invalid_argument("multiple choice needs at least one choice");
  std::optional<std::size_t> best;
  for (auto c : choices) {
    if (c >= p.p.size())
      throw std::invalid_argument("choice " + std::to_string(c) + " outside answer vocabulary of size " +
                                  std::to_string(p.p.size()));
    if (!best || p.p[c] > p.p[*best] || (p.p[c] == p.p[*best] && c < *best)) best = c;
  }
  return *best;
}

EvalReport summarize(const std::vector<Prediction>& predictions, const Taxonomy* taxonomy) {
  if (predictions.empty()) throw std::invalid_argument("cannot evaluate an empty dataset");
  EvalReport r;
  double acc = 0.0, w09 = 0.0, w00 = 0.0;
  std::map<std::string, double> type_acc;
  for (const auto& p : predictions) {
    const double a = vqa_accuracy(p.predicted, p.human_answers);
    acc += a;
    auto& ts = r.per_type[p.type];
    ++ts.count;
    type_acc[p.type] += a;
    if (taxonomy) {
      double best09 = 0.0, best00 = 0.0;
      std::set<std::string> seen;
      for (const auto& h : p.human_answers) {
        if (!seen.insert(normalize_answer(h)).second) continue;
        const auto w = wup_similarity_ex(p.predicted, h, *taxonomy);
        if (w.unknown) ++r.unknown_terms;
        best00 = std::max(best00, w.score);
        best09 = std::max(best09, w.score < 0.9 ? kBelowThresholdFactor * w.score : w.score);
      }
      w09 += best09;
      w00 += best00;
    }
  }
  const double n = static_cast<double>(predictions.size());
  r.count = predictions.size();
  r.accuracy = acc / n;
  for (auto& [type, ts] : r.per_type) ts.accuracy = type_acc[type] / static_cast<double>(ts.count);
  if (taxonomy) {
    r.wups_09 = w09 / n;
    r.wups_00 = w00 / n;
  }
  return r;
}

void write_report_text(const EvalReport& r, std::ostream& os) {
  const auto flags = os.flags();
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(20) << "metric" << std::right << std::setw(10) << "value" << std::setw(8) << "count"
     << '\n';
  os << std::left << std::setw(20) << "accuracy" << std::right << std::setw(10) << r.accuracy << std::setw(8) << r.count
     << '\n';
  for (const auto& [type, ts] : r.per_type)
    os << std::left << std::setw(20) << ("accuracy[" + type + "]") << std::right << std::setw(10) << ts.accuracy
       << std::setw(8) << ts.count << '\n';
  if (r.wups_09 && r.wups_00) {
    os << std::left << std::setw(20) << "wups@0.9" << std::right << std::setw(10) << *r.wups_09 << std::setw(8)
       << r.count << '\n';
    os << std::left << std::setw(20) << "wups@0.0" << std::right << std::setw(10) << *r.wups_00 << std::setw(8)
       << r.count << '\n';
    if (r.unknown_terms)
      os << "note: " << r.unknown_terms << " comparisons involved terms missing from the taxonomy\n";
  } else {
    os << "note: no taxonomy given; WUPS omitted\n";
  }
  os.flags(flags);
}

void write_report_csv(const EvalReport& r, std::ostream& os) {
  const auto flags = os.flags();
  os << std::setprecision(17);
  os << "metric,name,value\n";
  os << "accuracy,all," << r.accuracy << '\n';
  os << "count,all," << r.count << '\n';
  for (const auto& [type, ts] : r.per_type) {
    os << "accuracy," << type << ',' << ts.accuracy << '\n';
    os << "count," << type << ',' << ts.count << '\n';
  }
  if (r.wups_09 && r.wups_00) {
    os << "wups,0.9," << *r.wups_09 << '\n';
    os << "wups,0.0," << *r.wups_00 << '\n';
    os << "unknown_terms,all," << r.unknown_terms << '\n';
  }
  os.flags(flags);
}

}  // namespace cva
