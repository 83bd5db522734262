#include "cva/data.hpp"

#include <bit>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cva/binary_io.hpp"
#include "cva/metrics.hpp"
#include "cva/rng.hpp"

namespace cva {

namespace {

constexpr std::uint32_t kFeatureVersion = 1;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void FeatureContainer::add(std::string image_id, Tensor features) {
  if (image_id.empty() || image_id.size() > 0xffff) throw std::invalid_argument("image id must be 1..65535 bytes");
  if (features.rank() != 2) throw ShapeError("features for '" + image_id + "' must be K x D", features.shape(), {});
  if (!records_.empty() && features.cols() != channels())
    throw ShapeError("channel count differs for '" + image_id + "'", features.shape(), records_.front().features.shape());
  require_finite(features, "region features");
  if (!index_.emplace(image_id, records_.size()).second)
    throw std::invalid_argument("duplicate image id '" + image_id + "'");
  records_.push_back({std::move(image_id), std::move(features)});
}

const Tensor& FeatureContainer::at(const std::string& image_id) const {
  auto it = index_.find(image_id);
  if (it == index_.end()) throw std::out_of_range("no features for image '" + image_id + "'");
  return records_[it->second].features;
}

void write_features(const FeatureContainer& c, std::ostream& os) {
  io::BinaryWriter w(os);
  w.bytes("CVAF", 4);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(c.size()));
  for (const auto& r : c.records()) {
    w.u16(static_cast<std::uint16_t>(r.image_id.size()));
    w.bytes(r.image_id.data(), r.image_id.size());
    w.u32(static_cast<std::uint32_t>(r.features.rows()));
    w.u32(static_cast<std::uint32_t>(r.features.cols()));
    for (double v : r.features.data()) w.f32(static_cast<float>(v));
  }
}

FeatureContainer read_features(std::istream& is) {
  io::BinaryReader r(is);
  r.expect_magic("CVAF");
  const auto version_at = r.offset();
  const auto version = r.u32("version");
  if (version != kFeatureVersion)
    throw VersionError("unsupported feature container version " + std::to_string(version), version_at);
  const auto count = r.u32("record count");
  FeatureContainer c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto record_at = r.offset();
    const auto id_len = r.u16("id length");
    std::string id = r.str(id_len, "image id");
    const auto K = r.u32("region count");
    const auto D = r.u32("channel count");
    if (K == 0 || D == 0) throw FormatError("record '" + id + "' has an empty feature map", record_at);
    std::vector<double> data(static_cast<std::size_t>(K) * D);
    for (auto& v : data) v = r.f32("feature payload");
    try {
      c.add(std::move(id), Tensor(Shape{K, D}, std::move(data)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string(e.what()) + " (at offset " + std::to_string(record_at) + ")");
    } catch (const NumericError& e) {
      throw FormatError(e.what(), record_at);
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last record", r.offset());
  return c;
}

void save_features(const FeatureContainer& c, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write feature file " + path);
  write_features(c, os);
}

FeatureContainer load_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read feature file " + path);
  return read_features(is);
}

void VqaExample::validate() const {
  if (image_id.empty()) throw std::invalid_argument("example has no image id");
  if (question.empty()) throw std::invalid_argument("example '" + image_id + "' has no question tokens");
  if (human_answers.size() != kHumanAnswers)
    throw std::invalid_argument("example '" + image_id + "' has " + std::to_string(human_answers.size()) +
                                " human answers, expected 10");
}

std::string select_target(const std::vector<std::string>& human_answers) {
  std::map<std::string, std::size_t> counts;
  for (const auto& a : human_answers) ++counts[normalize_answer(a)];
  std::string best;
  std::size_t best_count = 0;
  for (const auto& [answer, n] : counts)  // map order = lexicographic, so ties keep the smallest
    if (n > best_count) {
      best = answer;
      best_count = n;
    }
  return best;
}

std::string question_type(const std::vector<std::string>& question) {
  if (question.empty()) return "other";
  const std::string first = normalize_answer(question[0]);
  if ((first == "what" || first == "how" || first == "which") && question.size() > 1) return normalize_answer(question[1]);
  return first;
}

void write_examples(const std::vector<VqaExample>& examples, std::ostream& os) {
  for (const auto& e : examples) {
    e.validate();
    os << e.image_id << '\t';
    for (std::size_t i = 0; i < e.question.size(); ++i) os << (i ? " " : "") << e.question[i];
    os << '\t';
    for (std::size_t i = 0; i < e.human_answers.size(); ++i) {
      if (e.human_answers[i].find_first_of(",\t\n") != std::string::npos)
        throw std::invalid_argument("answer '" + e.human_answers[i] + "' contains a separator");
      os << (i ? "," : "") << e.human_answers[i];
    }
    os << '\t' << e.label << '\n';
  }
}

std::vector<VqaExample> read_examples(std::istream& is) {
  std::vector<VqaExample> out;
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 4) throw FormatError("expected 4 tab-separated fields", line_no);
    VqaExample e;
    e.image_id = fields[0];
    e.question = split_whitespace(fields[1]);
    e.human_answers = split(fields[2], ',');
    try {
      std::size_t pos = 0;
      e.label = std::stoull(fields[3], &pos);
      if (pos != fields[3].size()) throw std::invalid_argument("label");
      e.validate();
    } catch (const std::exception& ex) {
      throw FormatError(std::string("invalid example: ") + ex.what(), line_no);
    }
    out.push_back(std::move(e));
  }
  return out;
}

void save_examples(const std::vector<VqaExample>& examples, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write dataset file " + path);
  write_examples(examples, os);
}

std::vector<VqaExample> load_examples(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read dataset file " + path);
  return read_examples(is);
}

Vocabularies build_vocab(const std::vector<VqaExample>& examples, std::size_t answer_cap) {
  if (examples.empty()) throw std::invalid_argument("cannot build vocabularies from an empty corpus");
  std::map<std::string, std::size_t> words, answers;
  for (const auto& e : examples) {
    for (const auto& t : e.question) ++words[t];
    ++answers[select_target(e.human_answers)];
  }
  std::vector<std::string> q{Vocabulary::kUnknown};
  for (const auto& [w, n] : words)
    if (w != Vocabulary::kUnknown) q.push_back(w);

  std::vector<std::pair<std::string, std::size_t>> ranked(answers.begin(), answers.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > answer_cap) ranked.resize(answer_cap);
  std::vector<std::string> kept;
  for (const auto& [a, n] : ranked)
    if (a != Vocabulary::kUnknown) kept.push_back(a);
  std::sort(kept.begin(), kept.end());
  std::vector<std::string> a{Vocabulary::kUnknown};
  a.insert(a.end(), kept.begin(), kept.end());
  return {Vocabulary(std::move(q)), Vocabulary(std::move(a))};
}

void assign_labels(std::vector<VqaExample>& examples, const Vocabulary& answers) {
  for (auto& e : examples) e.label = answers.id(select_target(e.human_answers));
}

ToyTask parse_task(const std::string& name) {
  if (name == "spatial") return ToyTask::Spatial;
  if (name == "channel") return ToyTask::Channel;
  if (name == "mixed") return ToyTask::Mixed;
  throw std::invalid_argument("unknown task '" + name + "' (valid: spatial, channel, mixed)");
}

std::string to_string(ToyTask t) {
  switch (t) {
    case ToyTask::Spatial: return "spatial";
    case ToyTask::Channel: return "channel";
    case ToyTask::Mixed: return "mixed";
  }
  return "?";
}

const std::vector<std::string>& color_names() {
  static const std::vector<std::string> names{"red", "green", "blue", "yellow", "purple", "orange", "white", "black"};
  return names;
}

const std::vector<std::string>& family_names() {
  static const std::vector<std::string> names{"shape", "size", "material"};
  return names;
}

const std::vector<std::string>& family_values(std::size_t family) {
  static const std::vector<std::vector<std::string>> values{
      {"circle", "square", "triangle", "star", "hexagon", "cross", "heart", "ring"},
      {"tiny", "small", "medium", "large", "huge", "giant", "narrow", "wide"},
      {"metal", "wood", "glass", "stone", "cloth", "paper", "rubber", "plastic"},
  };
  return values.at(family);
}

namespace {
constexpr double kAllColorsRate = 0.4;
}

std::string region_token(std::size_t id) { return "obj" + std::to_string(id); }

std::size_t code_width(std::size_t symbols) {
  std::size_t n = 2;
  while (n < symbols + 1) n *= 2;
  return n - 1;
}

double code_sign(std::size_t symbol, std::size_t bit) {
  return std::popcount((symbol + 1) & (bit + 1)) % 2 == 0 ? 1.0 : -1.0;
}

ToyLayout toy_layout(const ToySpec& spec) {
  if (spec.size == 0) throw std::invalid_argument("toy dataset size must be >= 1");
  if (spec.regions < 2) throw std::invalid_argument("toy tasks need at least 2 regions (K >= 2)");
  if (spec.channels < 8) throw std::invalid_argument("toy tasks need at least 8 channels (D >= 8)");
  if (spec.colors < 2 || spec.colors > color_names().size())
    throw std::invalid_argument("colour count must lie in [2, 8]");
  ToyLayout l;
  std::size_t used = 0;
  if (spec.task != ToyTask::Channel) {
    l.id_offset = 0;
    l.id_width = code_width(spec.regions);
    l.color_width = code_width(spec.colors);
    l.color_offset = l.id_width;
    used = l.id_width + l.color_width;
    if (used > spec.channels)
      throw std::invalid_argument("D=" + std::to_string(spec.channels) + " cannot hold " + std::to_string(l.id_width) +
                                  " identity and " + std::to_string(l.color_width) + " colour channels");
  }
  if (spec.task != ToyTask::Spatial) {
    l.family_width = code_width(spec.colors);
    const std::size_t fit = std::min<std::size_t>(family_names().size(), (spec.channels - used) / l.family_width);
    if (fit == 0) throw std::invalid_argument("D is too small for any attribute family");
    for (std::size_t f = 0; f < fit; ++f) l.family_offsets.push_back(used + f * l.family_width);
  }
  return l;
}

namespace {

struct ImageDraw {
  Tensor features;
  VqaExample example;
};

ImageDraw draw_image(const ToySpec& spec, const ToyLayout& l, Rng& rng, std::string image_id) {
  const std::size_t K = spec.regions, D = spec.channels;
  Tensor V(Shape{K, D});
  std::vector<char> signal(K * D, 0);
  auto write_code = [&](std::size_t k, std::size_t offset, std::size_t width, std::size_t symbol) {
    for (std::size_t b = 0; b < width; ++b) {
      V(k, offset + b) = spec.amplitude * code_sign(symbol, b);
      signal[k * D + offset + b] = 1;
    }
  };

  bool spatial_question = spec.task == ToyTask::Spatial;
  if (spec.task == ToyTask::Mixed) spatial_question = rng.below(2) == 0;

  std::string answer;
  std::vector<std::string> question;
  if (spec.task != ToyTask::Channel) {
    // ids are a permutation. m distinct colours (min(C, K), or one fewer with
    // probability 0.6) each appear once; spare regions repeat one of them.
    // The asked colour is uniform over the m present.
    std::vector<std::size_t> ids(K);
    for (std::size_t k = 0; k < K; ++k) ids[k] = k;
    rng.shuffle(ids.begin(), ids.end());
    std::vector<std::size_t> palette(spec.colors);
    for (std::size_t c = 0; c < spec.colors; ++c) palette[c] = c;
    rng.shuffle(palette.begin(), palette.end());
    std::size_t m = std::min(spec.colors, K);
    if (m > 2 && rng.uniform() >= kAllColorsRate) --m;
    std::vector<std::size_t> colors(palette.begin(), palette.begin() + static_cast<long>(m));
    while (colors.size() < K) colors.push_back(palette[rng.below(m)]);
    rng.shuffle(colors.begin(), colors.end());
    for (std::size_t k = 0; k < K; ++k) {
      write_code(k, l.id_offset, l.id_width, ids[k]);
      write_code(k, l.color_offset, l.color_width, colors[k]);
    }
    const std::size_t asked = palette[rng.below(m)];
    std::vector<std::size_t> holders;
    for (std::size_t k = 0; k < K; ++k)
      if (colors[k] == asked) holders.push_back(k);
    const std::size_t target = holders[rng.below(holders.size())];
    if (spatial_question) {
      answer = color_names()[colors[target]];
      question = {"what", "color", "is", "object", region_token(ids[target])};
    }
  }
  if (spec.task != ToyTask::Spatial) {
    std::vector<std::size_t> values(l.family_offsets.size());
    for (std::size_t f = 0; f < values.size(); ++f) {
      values[f] = rng.below(spec.colors);
      for (std::size_t k = 0; k < K; ++k) write_code(k, l.family_offsets[f], l.family_width, values[f]);
    }
    const std::size_t family = rng.below(values.size());
    if (!spatial_question) {
      answer = family_values(family)[values[family]];
      question = {"what", family_names()[family], "are", "the", "objects"};
    }
  }
  for (std::size_t i = 0; i < K * D; ++i)
    if (!signal[i]) V[i] = rng.uniform(-spec.noise, spec.noise);
  // Stored as f32 on disk; keep memory and disk identical.
  for (auto& v : V.data()) v = static_cast<double>(static_cast<float>(v));

  ImageDraw d{std::move(V), {}};
  d.example.image_id = std::move(image_id);
  d.example.question = std::move(question);
  d.example.human_answers.assign(kHumanAnswers, answer);
  return d;
}

std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%06zu", prefix, i);
  return buf;
}

}  // namespace

ToyDataset generate_toy_dataset(const ToySpec& spec) {
  ToyDataset ds;
  ds.layout = toy_layout(spec);
  Rng rng(spec.seed, "data", static_cast<std::uint64_t>(spec.task));
  auto emit = [&](const char* prefix, std::size_t n, std::vector<VqaExample>& out) {
    for (std::size_t i = 0; i < n; ++i) {
      auto d = draw_image(spec, ds.layout, rng, numbered(prefix, i));
      ds.features.add(d.example.image_id, std::move(d.features));
      out.push_back(std::move(d.example));
    }
  };
  emit("train", spec.size, ds.train);
  emit("test", spec.test_size, ds.test);

  std::vector<VqaExample> all = ds.train;
  all.insert(all.end(), ds.test.begin(), ds.test.end());
  ds.vocab = build_vocab(all);
  assign_labels(ds.train, ds.vocab.answers);
  assign_labels(ds.test, ds.vocab.answers);

  ds.taxonomy.emplace_back("entity", "color");
  for (std::size_t c = 0; c < spec.colors; ++c) ds.taxonomy.emplace_back("color", color_names()[c]);
  if (!ds.layout.family_offsets.empty()) {
    ds.taxonomy.emplace_back("entity", "attribute");
    for (std::size_t f = 0; f < ds.layout.family_offsets.size(); ++f) {
      ds.taxonomy.emplace_back("attribute", family_names()[f]);
      for (std::size_t v = 0; v < spec.colors; ++v) ds.taxonomy.emplace_back(family_names()[f], family_values(f)[v]);
    }
  }
  return ds;
}

}  // namespace cva
