#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cva/data.hpp"
#include "cva/metrics.hpp"
#include "cva/train.hpp"

namespace cva::cli {

/// Process exit codes.
enum ExitCode : int { kOk = 0, kUsage = 1, kIo = 2, kValidation = 3 };

/// Maps an in-flight exception to an exit code and prints it to `err`.
int report_exception(std::ostream& err);

/// On-disk dataset directory as written by `synth`.
struct DataBundle {
  std::string dir;
  FeatureContainer features;
  std::vector<VqaExample> train;
  std::vector<VqaExample> test;
  Vocabularies vocab;
  std::optional<std::string> taxonomy_path;
  std::string name;  // task name from synth.json, else the directory name
};

namespace files {
inline constexpr const char* kFeatures = "features.cvaf";
inline constexpr const char* kTrain = "train.txt";
inline constexpr const char* kTest = "test.txt";
inline constexpr const char* kQuestionVocab = "questions.vocab";
inline constexpr const char* kAnswerVocab = "answers.vocab";
inline constexpr const char* kTaxonomy = "taxonomy.tsv";
inline constexpr const char* kSynthMeta = "synth.json";
inline constexpr const char* kCheckpoint = "checkpoint.cvac";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kHistory = "history.csv";
}  // namespace files

DataBundle load_bundle(const std::string& dir);
void save_bundle(const ToyDataset& ds, const ToySpec& spec, const std::string& dir);

/// Model architecture for a dataset under `config` (profile, variant, fusion, channel scale).
ModelConfig model_config_for(const DataBundle& data, const TrainConfig& config);

struct SynthOptions {
  ToySpec spec;
  std::string out;
};
int cmd_synth(const SynthOptions& o, std::ostream& out);

struct TrainOptions {
  std::optional<std::string> config_path;
  std::vector<std::pair<std::string, std::string>> overrides;  // applied after the file
  std::string data;
  std::string out;
  std::optional<std::string> resume;  // checkpoint to continue from
  std::optional<std::size_t> stop_after_epochs;  // stop early (for split runs); manifest still written
};
int cmd_train(const TrainOptions& o, std::ostream& out);

struct EvalOptions {
  std::string checkpoint;
  std::string data;
  std::optional<std::string> taxonomy;
  std::optional<std::string> manifest;  // defaults to manifest.json beside the checkpoint
  std::string split = "test";
  std::optional<std::string> csv_out;
};
int cmd_eval(const EvalOptions& o, std::ostream& out);

struct AblateOptions {
  std::vector<std::string> data;
  std::string out;
  std::size_t seeds = 1;
  std::optional<std::string> config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::vector<Variant> variants{Variant::CA, Variant::RA, Variant::CVA, Variant::CVA_V};
};

struct AblationCell {
  Variant variant;
  std::string task;
  std::vector<double> accuracies;  // one per seed
  double mean() const;
  double stdev() const;  // sample standard deviation; 0 for one seed
};

/// Trains every variant on every dataset for `seeds` seeds; returns cells in
/// (variant, dataset) order.
std::vector<AblationCell> run_ablation(const AblateOptions& o, std::ostream& log);
void write_ablation_text(const std::vector<AblationCell>& cells, std::ostream& os);
void write_ablation_csv(const std::vector<AblationCell>& cells, std::ostream& os);
int cmd_ablate(const AblateOptions& o, std::ostream& out);

struct GradcheckOptions {
  Variant variant = Variant::CVA;
  SpatialFusion fusion = SpatialFusion::Literal;
  ChannelScale channel_scale = ChannelScale::Plain;
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
  double threshold = 1e-4;
  std::optional<std::string> corrupt_op;  // negative control
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::string worst;
  std::vector<std::pair<std::string, double>> groups;  // encoder/channel/spatial/classifier
};

/// Tiny random instance (K=4, D=8, H=8, h_a=8, T=3, A=5) checked with
/// central differences at double precision.
GradcheckReport gradcheck_instance(Variant variant, SpatialFusion fusion, ChannelScale scale, std::uint64_t seed);
int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out);

}  // namespace cva::cli
