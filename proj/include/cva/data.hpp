#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cva/tensor.hpp"
#include "cva/vocab.hpp"

namespace cva {

inline constexpr std::size_t kHumanAnswers = 10;

struct FeatureRecord {
  std::string image_id;
  Tensor features;  // K x D
};

/// Region feature maps keyed by image id. Ids are unique and D is uniform;
/// K may differ between records.
class FeatureContainer {
 public:
  void add(std::string image_id, Tensor features);
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  /// 0 when empty.
  std::size_t channels() const { return records_.empty() ? 0 : records_.front().features.cols(); }
  const std::vector<FeatureRecord>& records() const { return records_; }
  const Tensor& at(const std::string& image_id) const;
  bool contains(const std::string& image_id) const { return index_.count(image_id) != 0; }

 private:
  std::vector<FeatureRecord> records_;
  std::map<std::string, std::size_t> index_;
};

/// Binary container: "CVAF", u32 version (1), u32 count, then per record
/// u16 id length, id bytes, u32 K, u32 D, K*D little-endian f32 row-major.
void write_features(const FeatureContainer& c, std::ostream& os);
FeatureContainer read_features(std::istream& is);
void save_features(const FeatureContainer& c, const std::string& path);
FeatureContainer load_features(const std::string& path);

struct VqaExample {
  std::string image_id;
  std::vector<std::string> question;
  std::vector<std::string> human_answers;  // exactly kHumanAnswers
  std::size_t label = 0;

  void validate() const;
};

/// Most frequent answer after normalisation; ties go to the lexicographically smallest.
std::string select_target(const std::vector<std::string>& human_answers);

/// Question type for per-type breakdowns: the word after a leading
/// "what"/"how"/"which" ("what color ..." -> "color"), else the first word.
std::string question_type(const std::vector<std::string>& question);

/// One example per line: image_id TAB question tokens TAB 10 comma-separated
/// answers TAB label.
void write_examples(const std::vector<VqaExample>& examples, std::ostream& os);
std::vector<VqaExample> read_examples(std::istream& is);
void save_examples(const std::vector<VqaExample>& examples, const std::string& path);
std::vector<VqaExample> load_examples(const std::string& path);

struct Vocabularies {
  Vocabulary questions;
  Vocabulary answers;
};

/// Sorted vocabularies with "<unk>" at id 0. The answer vocabulary keeps the
/// `answer_cap` most frequent targets (ties lexicographic) before sorting.
Vocabularies build_vocab(const std::vector<VqaExample>& examples, std::size_t answer_cap = 2000);

/// Re-derives every label from the answer vocabulary (unknown targets map to 0).
void assign_labels(std::vector<VqaExample>& examples, const Vocabulary& answers);

enum class ToyTask { Spatial, Channel, Mixed };
ToyTask parse_task(const std::string& name);
std::string to_string(ToyTask t);

struct ToySpec {
  ToyTask task = ToyTask::Spatial;
  std::size_t size = 2000;
  std::size_t test_size = 500;
  std::size_t regions = 6;    // K
  std::size_t channels = 32;  // D
  std::size_t colors = 5;     // C, also values per attribute family
  std::uint64_t seed = 0;
  double amplitude = 1.0;
  double noise = 0.1;
};

/// Channel layout of generated features. Blocks are [offset, offset + width).
struct ToyLayout {
  std::size_t id_offset = 0, id_width = 0;
  std::size_t color_offset = 0, color_width = 0;
  std::vector<std::size_t> family_offsets;
  std::size_t family_width = 0;
};

ToyLayout toy_layout(const ToySpec& spec);

/// Identity, colour and attribute blocks hold +-1 codes: symbol s is row s + 1
/// of a Sylvester Hadamard matrix with the constant column dropped.
std::size_t code_width(std::size_t symbols);
double code_sign(std::size_t symbol, std::size_t bit);

const std::vector<std::string>& color_names();
const std::vector<std::string>& family_names();
const std::vector<std::string>& family_values(std::size_t family);
std::string region_token(std::size_t id);

struct ToyDataset {
  ToyLayout layout;
  FeatureContainer features;
  std::vector<VqaExample> train;
  std::vector<VqaExample> test;
  Vocabularies vocab;
  std::vector<std::pair<std::string, std::string>> taxonomy;  // parent, child
};

/// Deterministic per spec. Spatial: each region carries an identity code and a
/// colour code; the queried colour is uniform over the colours present, so the
/// region mean says little about the answer. Channel: attribute values are
/// repeated in every region. Mixed: both feature sets, half the questions each.
ToyDataset generate_toy_dataset(const ToySpec& spec);

}  // namespace cva
