#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "cva/commands.hpp"

using namespace cva;
using namespace cva::cli;

namespace {

const std::vector<std::string> kVariants{"ca", "ra", "cva", "cva-v", "r-cva"};
const std::vector<std::string> kFusions{"literal", "joint"};
const std::vector<std::string> kScales{"plain", "dimension"};
const std::vector<std::string> kTasks{"spatial", "channel", "mixed"};

struct ConfigFlags {
  std::optional<std::string> path;
  std::vector<std::string> set;
  std::optional<std::string> lr, epochs, batch_size, dropout, clip_norm, seed, variant, profile, fusion, scale;

  void attach(CLI::App* app) {
    app->add_option("--config", path, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--set", set, "override key=value (repeatable)");
    app->add_option("--lr", lr);
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--dropout", dropout);
    app->add_option("--clip-norm", clip_norm);
    app->add_option("--seed", seed);
    app->add_option("--variant", variant)->check(CLI::IsMember(kVariants));
    app->add_option("--profile", profile)->check(CLI::IsMember({"desk", "full"}));
    app->add_option("--spatial-fusion", fusion)->check(CLI::IsMember(kFusions));
    app->add_option("--channel-scale", scale)->check(CLI::IsMember(kScales));
  }

  std::vector<std::pair<std::string, std::string>> overrides() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& kv : set) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got " + kv);
      out.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    const std::pair<const char*, const std::optional<std::string>*> flags[] = {
        {"lr", &lr},       {"epochs", &epochs},   {"batch_size", &batch_size}, {"dropout", &dropout},
        {"clip_norm", &clip_norm}, {"seed", &seed}, {"variant", &variant},       {"profile", &profile},
        {"spatial_fusion", &fusion}, {"channel_scale", &scale}};
    for (const auto& [k, v] : flags)
      if (*v) out.emplace_back(k, **v);
    return out;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cubic visual attention VQA: synthetic data, training, evaluation, ablation"};
  app.require_subcommand(1);

  SynthOptions synth;
  std::string task = "spatial";
  auto* s = app.add_subcommand("synth", "generate a toy diagnostic dataset");
  s->add_option("--task", task)->check(CLI::IsMember(kTasks));
  s->add_option("--out", synth.out)->required();
  s->add_option("--size", synth.spec.size);
  s->add_option("--test-size", synth.spec.test_size);
  s->add_option("--regions,--k,-K", synth.spec.regions);
  s->add_option("--channels,--d,-D", synth.spec.channels);
  s->add_option("--colors", synth.spec.colors);
  s->add_option("--seed", synth.spec.seed);
  s->add_option("--amplitude", synth.spec.amplitude);
  s->add_option("--noise", synth.spec.noise);

  TrainOptions train;
  ConfigFlags train_flags;
  auto* t = app.add_subcommand("train", "train one variant and write checkpoint + manifest");
  t->add_option("--data", train.data, "dataset directory")->required();
  t->add_option("--out", train.out, "run directory")->required();
  t->add_option("--resume", train.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  t->add_option("--stop-after", train.stop_after_epochs, "stop after this many more epochs");
  train_flags.attach(t);

  EvalOptions eval;
  auto* e = app.add_subcommand("eval", "score a checkpoint");
  e->add_option("--checkpoint", eval.checkpoint)->required();
  e->add_option("--data", eval.data)->required();
  e->add_option("--taxonomy", eval.taxonomy, "parent<TAB>child edges for WUPS");
  e->add_option("--manifest", eval.manifest);
  e->add_option("--split", eval.split)->check(CLI::IsMember({"test", "train"}));
  e->add_option("--csv", eval.csv_out);

  AblateOptions ablate;
  ConfigFlags ablate_flags;
  auto* a = app.add_subcommand("ablate", "CA / RA / CVA / R-CVA table over datasets and seeds");
  a->add_option("--data", ablate.data, "dataset directory (repeatable)")->required();
  a->add_option("--out", ablate.out);
  a->add_option("--seeds", ablate.seeds);
  ablate_flags.attach(a);

  GradcheckOptions grad;
  std::string grad_variant = "cva", grad_fusion = "literal", grad_scale = "plain";
  std::string corrupt;
  auto* g = app.add_subcommand("gradcheck", "finite-difference check of every parameter");
  g->add_option("--variant", grad_variant)->check(CLI::IsMember(kVariants));
  g->add_option("--spatial-fusion", grad_fusion)->check(CLI::IsMember(kFusions));
  g->add_option("--channel-scale", grad_scale)->check(CLI::IsMember(kScales));
  g->add_option("--seed", grad.seed);
  g->add_option("--seeds", grad.seeds);
  g->add_option("--threshold", grad.threshold);
  g->add_option("--corrupt-op", corrupt)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*s) {
      synth.spec.task = parse_task(task);
      return cmd_synth(synth, std::cout);
    }
    if (*t) {
      train.config_path = train_flags.path;
      train.overrides = train_flags.overrides();
      return cmd_train(train, std::cout);
    }
    if (*e) return cmd_eval(eval, std::cout);
    if (*a) {
      ablate.config_path = ablate_flags.path;
      ablate.overrides = ablate_flags.overrides();
      return cmd_ablate(ablate, std::cout);
    }
    if (*g) {
      grad.variant = parse_variant(grad_variant);
      grad.fusion = parse_fusion(grad_fusion);
      grad.channel_scale = parse_channel_scale(grad_scale);
      if (!corrupt.empty()) grad.corrupt_op = corrupt;
      return cmd_gradcheck(grad, std::cout);
    }
  } catch (const CLI::ValidationError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  } catch (...) {
    return report_exception(std::cerr);
  }
  return kUsage;
}
