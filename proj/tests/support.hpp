#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cva/data.hpp"
#include "cva/gradcheck.hpp"
#include "cva/model.hpp"
#include "cva/rng.hpp"
#include "cva/train.hpp"

namespace testsupport {

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const cva::Tensor& a, const std::vector<double>& b) { return max_abs_diff(a.data(), b); }

inline cva::Tensor random_matrix(std::size_t r, std::size_t c, cva::Rng& rng, double scale = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return cva::Tensor::matrix(r, c, std::move(v));
}

inline cva::Tensor random_vector(std::size_t n, cva::Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return cva::Tensor::vector(std::move(v));
}

struct Tiny {
  std::size_t K = 4, D = 8, E = 6, H = 8, h_a = 8, H_f = 8, A = 5, vocab = 7;
};

inline cva::ModelConfig tiny_config(cva::Variant v, const Tiny& t = {},
                                    cva::SpatialFusion f = cva::SpatialFusion::Literal,
                                    cva::ChannelScale s = cva::ChannelScale::Plain) {
  cva::ModelConfig mc;
  mc.variant = v;
  mc.fusion = f;
  mc.channel_scale = s;
  mc.question_vocab = t.vocab;
  mc.answers = t.A;
  mc.channels = t.D;
  mc.embed = t.E;
  mc.hidden = t.H;
  mc.attention_hidden = t.h_a;
  mc.fused_hidden = t.H_f;
  mc.max_length = 8;
  return mc;
}

/// Model with every parameter (biases included) drawn from U(-scale, scale).
inline cva::Model random_model(const cva::ModelConfig& mc, std::uint64_t seed, double scale = 0.5) {
  auto m = cva::Model::create(mc, seed);
  cva::Rng rng(seed, "test-params");
  for (auto& e : m.params().entries())
    for (auto& x : e.value.data()) x = rng.uniform(-scale, scale);
  return m;
}

inline std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("cva-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

/// Finite-difference check of every store entry against the tape gradient of
/// the scalar built by `loss`.
inline cva::GradCheckResult param_gradcheck(cva::ParameterStore& store,
                                            const std::function<cva::ad::Var(cva::Bound&)>& loss) {
  {
    cva::ad::Tape tape;
    cva::Bound p(tape, store);
    const auto l = loss(p);
    tape.backward(l);
    std::vector<cva::Tensor> g;
    for (const auto& e : store.entries()) g.emplace_back(e.value.shape());
    p.accumulate(g);
    for (std::size_t i = 0; i < g.size(); ++i) store[i].grad = std::move(g[i]);
  }
  std::vector<cva::GradTarget> targets;
  for (auto& e : store.entries()) targets.push_back({e.name, &e.value, &e.grad});
  return cva::finite_difference_check(
      [&] {
        cva::ad::Tape tape;
        cva::Bound p(tape, store);
        return loss(p).value()[0];
      },
      targets);
}

/// Small generated dataset with a desk-profile model sized for it.
struct ToyFixture {
  cva::ToyDataset data;
  std::vector<cva::EncodedExample> train;

  explicit ToyFixture(cva::ToyTask task = cva::ToyTask::Spatial, std::size_t size = 96, std::uint64_t seed = 3) {
    cva::ToySpec spec;
    spec.task = task;
    spec.size = size;
    spec.test_size = 32;
    spec.seed = seed;
    data = cva::generate_toy_dataset(spec);
    train = cva::encode_examples(data.train, data.features, data.vocab.questions);
  }

  cva::ModelConfig model_config(const cva::TrainConfig& c) const {
    auto mc = cva::ModelConfig::desk(data.vocab.questions.size(), data.vocab.answers.size(), data.features.channels());
    mc.variant = c.variant;
    mc.fusion = c.fusion;
    mc.channel_scale = c.channel_scale;
    return mc;
  }
};

const std::vector<cva::Variant> kAllVariants{cva::Variant::CA, cva::Variant::RA, cva::Variant::CVA,
                                             cva::Variant::CVA_V};

}  // namespace testsupport
