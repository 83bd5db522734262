#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "cva/data.hpp"
#include "cva/encoder.hpp"
#include "cva/model.hpp"

namespace cva {

/// Optimiser, regularisation and architecture-profile settings. Defaults are
/// tuned for the desk profile; full-scale runs typically use batch_size 256.
struct TrainConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  double clip_norm = 10.0;
  double dropout = 0.5;
  std::uint64_t seed = 0;
  std::string profile = "desk";
  Variant variant = Variant::CVA;
  SpatialFusion fusion = SpatialFusion::Joint;
  ChannelScale channel_scale = ChannelScale::Dimension;

  void validate() const;
  /// Sets one field from its textual key; throws invalid_argument on an
  /// unknown key or unparsable value.
  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_map() const;
};

/// Flat "key = value" lines; '#' starts a comment. Values override `base`.
TrainConfig read_config(std::istream& is, TrainConfig base = {});
TrainConfig load_config(const std::string& path, TrainConfig base = {});
void write_config(const TrainConfig& c, std::ostream& os);

/// Adam with bias correction on every entry of `store`, then gradients are
/// zeroed and `store.step` advances. A non-finite gradient aborts before any
/// parameter changes, with a NumericError naming the parameter.
void adam_step(ParameterStore& store, const TrainConfig& config);

/// Rescales all gradients by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the pre-clip norm.
double clip_gradients(ParameterStore& store, double max_norm);

enum class Mode { Train, Eval };

/// Inverted dropout: zero with probability `rate`, survivors scaled by
/// 1 / (1 - rate). Identity in eval mode.
Tensor apply_dropout(const Tensor& x, double rate, Mode mode, Rng& rng);
/// The multiplicative mask apply_dropout would use for a length-n vector.
Tensor dropout_mask(std::size_t n, double rate, Rng& rng);

/// An example resolved against a feature container and question vocabulary.
struct EncodedExample {
  const Tensor* features = nullptr;
  QuestionTokens tokens;
  std::size_t label = 0;
};

std::vector<EncodedExample> encode_examples(const std::vector<VqaExample>& examples, const FeatureContainer& features,
                                            const Vocabulary& questions);

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double accuracy = 0.0;  // training-mode argmax accuracy
  std::size_t steps = 0;
};

/// Mean loss over `batch` with gradients accumulated (as a batch mean) into
/// the store's gradient buffers. `dropout_key` seeds the per-example masks.
struct BatchResult {
  double loss_sum = 0.0;
  std::size_t correct = 0;
};
BatchResult accumulate_batch(Model& model, const std::vector<EncodedExample>& data,
                             const std::vector<std::size_t>& batch, const TrainConfig& config, Mode mode);

/// One pass over shuffled batches: forward, loss, backward, clip, Adam.
/// The shuffle depends only on (seed, epoch); dropout on (seed, step, example).
EpochStats train_epoch(Model& model, const std::vector<EncodedExample>& data, const TrainConfig& config,
                       std::size_t epoch);

std::size_t steps_per_epoch(std::size_t examples, std::size_t batch_size);

/// Runs epochs from the one implied by `store.step` up to `config.epochs`, so
/// a restored checkpoint resumes where it stopped.
std::vector<EpochStats> fit(Model& model, const std::vector<EncodedExample>& data, const TrainConfig& config,
                            const std::function<void(const EpochStats&)>& on_epoch = {});

/// Binary checkpoint: "CVAC", u32 version, u32 count, then `count` entries of
/// values, then of first moments, then of second moments (each entry: u16 name
/// length, name, u8 rank, u32 dims, little-endian f64 payload), then u64 step.
void write_checkpoint(const ParameterStore& store, std::ostream& os);
ParameterStore read_checkpoint(std::istream& is);
void save_checkpoint(const ParameterStore& store, const std::string& path);
ParameterStore load_checkpoint(const std::string& path);

/// Copies values, moments and step into `model`. Every parameter must be
/// present with the same shape; a mismatch raises ShapeError naming it.
void restore(Model& model, const ParameterStore& checkpoint);

}  // namespace cva
