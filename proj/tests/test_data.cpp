#include <doctest.h>

#include <algorithm>
#include <map>
#include <sstream>

#include "cva/data.hpp"
#include "support.hpp"

using namespace cva;

namespace {

std::string feature_bytes(const FeatureContainer& c) {
  std::ostringstream os;
  write_features(c, os);
  return os.str();
}

std::string example_text(const std::vector<VqaExample>& e) {
  std::ostringstream os;
  write_examples(e, os);
  return os.str();
}

// Symbol whose code best matches channels [offset, offset + width) of `row`.
std::size_t decode(std::span<const double> row, std::size_t offset, std::size_t width, std::size_t symbols) {
  std::size_t best = 0;
  double best_score = -1e300;
  for (std::size_t s = 0; s < symbols; ++s) {
    double score = 0.0;
    for (std::size_t b = 0; b < width; ++b) score += row[offset + b] * code_sign(s, b);
    if (score > best_score) {
      best_score = score;
      best = s;
    }
  }
  return best;
}

std::size_t index_of(const std::vector<std::string>& v, const std::string& s) {
  return static_cast<std::size_t>(std::find(v.begin(), v.end(), s) - v.begin());
}

// Reads the answer off the features: locate the named region by its identity
// code, then decode its colour; attribute questions decode the family block of
// any region (or of the region mean when `mean_only`).
std::string rule_answer(const ToySpec& spec, const ToyLayout& l, const Tensor& V, const VqaExample& e,
                        bool mean_only) {
  const auto u = mean_over_rows(V);
  if (e.question[1] == "color") {
    if (mean_only) return color_names()[decode(u.data(), l.color_offset, l.color_width, spec.colors)];
    const std::size_t id = std::stoul(e.question.back().substr(3));
    for (std::size_t k = 0; k < V.rows(); ++k)
      if (decode(V.row(k), l.id_offset, l.id_width, spec.regions) == id)
        return color_names()[decode(V.row(k), l.color_offset, l.color_width, spec.colors)];
    return "";
  }
  const std::size_t f = index_of(family_names(), e.question[1]);
  const auto src = mean_only ? u.data() : V.row(0);
  return family_values(f)[decode(src, l.family_offsets.at(f), l.family_width, spec.colors)];
}

double rule_accuracy(const ToySpec& spec, bool mean_only, bool shuffle_regions = false) {
  const auto ds = generate_toy_dataset(spec);
  Rng rng(spec.seed, "test-shuffle");
  std::size_t hits = 0, total = 0;
  for (const auto* split : {&ds.train, &ds.test})
    for (const auto& e : *split) {
      Tensor V = ds.features.at(e.image_id);
      if (shuffle_regions) {
        std::vector<std::size_t> perm(V.rows());
        for (std::size_t k = 0; k < perm.size(); ++k) perm[k] = k;
        rng.shuffle(perm.begin(), perm.end());
        Tensor P(V.shape());
        for (std::size_t k = 0; k < perm.size(); ++k)
          for (std::size_t d = 0; d < V.cols(); ++d) P(k, d) = V(perm[k], d);
        V = P;
      }
      hits += rule_answer(spec, ds.layout, V, e, mean_only) == e.human_answers[0];
      ++total;
    }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("feature container round trip") {
  FeatureContainer c;
  c.add("img-a", Tensor::matrix({{1.5, -2}, {0.25, 8}}));
  c.add("img-b", Tensor::matrix({{3, 4}}));
  const auto bytes = feature_bytes(c);
  CHECK(bytes.substr(0, 4) == "CVAF");
  std::istringstream is(bytes);
  const auto back = read_features(is);
  CHECK(back.size() == 2);
  CHECK(back.at("img-a") == c.at("img-a"));
  CHECK(back.at("img-b").rows() == 1);
  CHECK(feature_bytes(back) == bytes);
  CHECK(back.channels() == 2);
  CHECK_THROWS(back.at("missing"));
}

TEST_CASE("feature container validation") {
  FeatureContainer c;
  c.add("x", Tensor::matrix({{1, 2}}));
  CHECK_THROWS_AS(c.add("x", Tensor::matrix({{1, 2}})), std::invalid_argument);
  CHECK_THROWS_AS(c.add("y", Tensor::matrix({{1, 2, 3}})), ShapeError);
  CHECK_THROWS(c.add("z", Tensor::matrix({{1, NAN}})));

  const auto bytes = feature_bytes(c);
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    std::istringstream t(bytes.substr(0, cut));
    try {
      read_features(t);
      FAIL("expected FormatError at cut " << cut);
    } catch (const FormatError& e) {
      CHECK(e.offset() <= cut);
    }
  }
  auto v = bytes;
  v[4] = 7;
  std::istringstream vs(v);
  CHECK_THROWS_AS(read_features(vs), VersionError);
  std::istringstream magic("CVAX" + bytes.substr(4));
  CHECK_THROWS_AS(read_features(magic), FormatError);

  // a duplicate id in the file is rejected
  FeatureContainer d;
  d.add("ab", Tensor::matrix({{1, 2}}));
  d.add("cd", Tensor::matrix({{1, 2}}));
  auto dup = feature_bytes(d);
  const auto at = dup.rfind("cd");
  dup[at] = 'a';
  dup[at + 1] = 'b';
  std::istringstream ds(dup);
  CHECK_THROWS_AS(read_features(ds), std::invalid_argument);
}

TEST_CASE("example lines round trip") {
  VqaExample e{"img-1", {"what", "color", "is", "it"}, std::vector<std::string>(10, "red"), 3};
  e.human_answers[4] = "dark red";
  const auto text = example_text({e});
  CHECK(std::count(text.begin(), text.end(), '\t') == 3);
  std::istringstream is(text);
  const auto back = read_examples(is);
  REQUIRE(back.size() == 1);
  CHECK(back[0].image_id == "img-1");
  CHECK(back[0].question == e.question);
  CHECK(back[0].human_answers == e.human_answers);
  CHECK(back[0].label == 3);

  VqaExample nine = e;
  nine.human_answers.pop_back();
  CHECK_THROWS_AS(nine.validate(), std::invalid_argument);
  std::istringstream broken("img\twhat\tred,red\t0\n");
  CHECK_THROWS(read_examples(broken));
}

TEST_CASE("target selection and question types") {
  std::vector<std::string> a{"Red", "blue", " red", "blue", "green", "red", "blue", "x", "y", "z"};
  CHECK(select_target(a) == "blue");  // 3 each after normalisation; lexicographic tie-break
  a[7] = "RED";
  CHECK(select_target(a) == "red");
  CHECK(question_type({"what", "color", "is", "object", "obj1"}) == "color");
  CHECK(question_type({"how", "many", "dogs"}) == "many");
  CHECK(question_type({"is", "it", "raining"}) == "is");
}

TEST_CASE("vocabulary") {
  std::vector<VqaExample> ex{
      {"a", {"what", "color", "zebra"}, std::vector<std::string>(10, "red"), 0},
      {"b", {"what", "apple"}, std::vector<std::string>(10, "blue"), 0},
      {"c", {"what", "apple"}, std::vector<std::string>(10, "blue"), 0},
  };
  const auto v = build_vocab(ex);
  CHECK(v.questions.token(0) == "<unk>");
  CHECK(v.questions.tokens() == std::vector<std::string>{"<unk>", "apple", "color", "what", "zebra"});
  CHECK(v.answers.tokens() == std::vector<std::string>{"<unk>", "blue", "red"});
  CHECK(v.questions.id("missing") == 0);
  CHECK(v.questions.encode({"zebra", "nope"}) == std::vector<std::size_t>{4, 0});
  CHECK(build_vocab(ex).questions == v.questions);

  const auto capped = build_vocab(ex, 1);
  CHECK(capped.answers.tokens() == std::vector<std::string>{"<unk>", "blue"});
  assign_labels(ex, capped.answers);
  CHECK(ex[0].label == 0);
  CHECK(ex[1].label == 1);

  std::stringstream ss;
  v.questions.write(ss);
  CHECK(Vocabulary::read(ss) == v.questions);
  CHECK_THROWS(Vocabulary({"a", "a"}));
}

TEST_CASE("hadamard codes") {
  CHECK(code_width(5) == 7);
  CHECK(code_width(6) == 7);
  CHECK(code_width(7) == 7);
  CHECK(code_width(8) == 15);
  CHECK(code_width(1) == 1);
  for (std::size_t n : {2u, 5u, 6u, 8u}) {
    const auto w = code_width(n);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        double dot = 0.0;
        for (std::size_t i = 0; i < w; ++i) dot += code_sign(a, i) * code_sign(b, i);
        CHECK(dot == (a == b ? static_cast<double>(w) : -1.0));
      }
  }
}

TEST_CASE("toy layouts") {
  ToySpec s;
  const auto sp = toy_layout(s);
  CHECK(sp.id_width == 7);
  CHECK(sp.color_offset == 7);
  CHECK(sp.family_offsets.empty());
  s.task = ToyTask::Channel;
  const auto ch = toy_layout(s);
  CHECK(ch.id_width == 0);
  CHECK(ch.family_offsets == std::vector<std::size_t>{0, 7, 14});
  s.task = ToyTask::Mixed;
  const auto mi = toy_layout(s);
  CHECK(mi.family_offsets == std::vector<std::size_t>{14, 21});

  ToySpec bad;
  bad.size = 0;
  CHECK_THROWS_AS(toy_layout(bad), std::invalid_argument);
  bad = ToySpec{};
  bad.regions = 1;
  CHECK_THROWS_AS(generate_toy_dataset(bad), std::invalid_argument);
  bad = ToySpec{};
  bad.channels = 7;
  CHECK_THROWS_AS(generate_toy_dataset(bad), std::invalid_argument);
  bad = ToySpec{};
  bad.channels = 12;
  CHECK_THROWS_AS(generate_toy_dataset(bad), std::invalid_argument);
  CHECK(parse_task("mixed") == ToyTask::Mixed);
  CHECK_THROWS_AS(parse_task("both"), std::invalid_argument);
}

TEST_CASE("generator is deterministic per seed") {
  ToySpec s;
  s.task = ToyTask::Mixed;
  s.size = 200;
  s.test_size = 50;
  const auto a = generate_toy_dataset(s), b = generate_toy_dataset(s);
  CHECK(feature_bytes(a.features) == feature_bytes(b.features));
  CHECK(example_text(a.train) == example_text(b.train));
  CHECK(example_text(a.test) == example_text(b.test));
  CHECK(a.vocab.questions == b.vocab.questions);
  s.seed = 1;
  CHECK(feature_bytes(generate_toy_dataset(s).features) != feature_bytes(a.features));
}

TEST_CASE("generated examples are well formed") {
  ToySpec s;
  s.task = ToyTask::Mixed;
  s.size = 400;
  s.test_size = 100;
  const auto ds = generate_toy_dataset(s);
  CHECK(ds.train.size() == 400);
  CHECK(ds.test.size() == 100);
  CHECK(ds.features.size() == 500);
  std::map<std::string, std::size_t> types;
  for (const auto& e : ds.train) {
    e.validate();
    CHECK(std::all_of(e.human_answers.begin(), e.human_answers.end(),
                      [&](const std::string& a) { return a == e.human_answers[0]; }));
    CHECK(ds.vocab.answers.token(e.label) == e.human_answers[0]);
    const auto& V = ds.features.at(e.image_id);
    CHECK(V.rows() == 6);
    CHECK(V.cols() == 32);
    ++types[e.question[1] == "color" ? "spatial" : "channel"];
  }
  CHECK(types["spatial"] > 150);
  CHECK(types["channel"] > 150);
}

TEST_CASE("rule-based decoder reads every spatial answer") {
  ToySpec s;
  CHECK(rule_accuracy(s, false) == 1.0);
  s.regions = 9;
  s.colors = 8;
  s.channels = 40;
  s.size = 300;
  CHECK(rule_accuracy(s, false) == 1.0);
}

TEST_CASE("region means alone are near chance on the spatial task") {
  ToySpec s;
  s.size = 10000;
  s.test_size = 100;
  const double acc = rule_accuracy(s, true);
  CHECK(std::abs(acc - 1.0 / static_cast<double>(s.colors)) <= 0.05);
}

TEST_CASE("channel task is solvable from region means and ignores region order") {
  ToySpec s;
  s.task = ToyTask::Channel;
  s.size = 1000;
  CHECK(rule_accuracy(s, true) == 1.0);
  CHECK(rule_accuracy(s, false, true) == 1.0);
  s.task = ToyTask::Mixed;
  CHECK(rule_accuracy(s, false) == 1.0);
}
