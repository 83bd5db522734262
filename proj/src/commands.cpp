#include "cva/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cva/evaluate.hpp"
#include "cva/gradcheck.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace cva::cli {

namespace {

std::string join(const std::string& dir, const char* name) { return (fs::path(dir) / name).string(); }

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp + " for writing");
    f << text;
    if (!f.flush()) throw std::runtime_error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot rename " + tmp + " to " + path);
}

TrainConfig resolve_config(const std::optional<std::string>& path,
                           const std::vector<std::pair<std::string, std::string>>& overrides) {
  TrainConfig c = path ? load_config(*path) : TrainConfig{};
  for (const auto& [k, v] : overrides) c.set(k, v);
  c.validate();
  return c;
}

struct RunResult {
  std::vector<EpochStats> history;
  double test_accuracy = 0.0;
};

}  // namespace

int report_exception(std::ostream& err) {
  try {
    throw;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << " (byte offset " << e.offset() << ")\n";
    return kIo;
  } catch (const VocabularyError& e) {
    err << "error: " << e.what() << " (position " << e.position() << ")\n";
    return kValidation;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  }
}

DataBundle load_bundle(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("data directory not found: " + dir);
  DataBundle b;
  b.dir = dir;
  b.features = load_features(join(dir, files::kFeatures));
  b.vocab.questions = Vocabulary::load(join(dir, files::kQuestionVocab));
  b.vocab.answers = Vocabulary::load(join(dir, files::kAnswerVocab));
  b.train = load_examples(join(dir, files::kTrain));
  b.test = load_examples(join(dir, files::kTest));
  for (const auto* split : {&b.train, &b.test})
    for (const auto& e : *split) {
      if (!b.features.contains(e.image_id)) throw std::invalid_argument("no features for image " + e.image_id);
      if (e.label >= b.vocab.answers.size())
        throw std::invalid_argument("label " + std::to_string(e.label) + " outside the answer vocabulary");
    }
  const auto tax = join(dir, files::kTaxonomy);
  if (fs::exists(tax)) b.taxonomy_path = tax;
  b.name = fs::path(dir).filename().string();
  if (b.name.empty()) b.name = fs::path(dir).parent_path().filename().string();
  const auto meta = join(dir, files::kSynthMeta);
  if (fs::exists(meta)) {
    std::ifstream f(meta);
    const auto j = json::parse(f, nullptr, false);
    if (!j.is_discarded() && j.contains("task")) b.name = j["task"].get<std::string>();
  }
  return b;
}

void save_bundle(const ToyDataset& ds, const ToySpec& spec, const std::string& dir) {
  fs::create_directories(dir);
  save_features(ds.features, join(dir, files::kFeatures));
  save_examples(ds.train, join(dir, files::kTrain));
  save_examples(ds.test, join(dir, files::kTest));
  ds.vocab.questions.save(join(dir, files::kQuestionVocab));
  ds.vocab.answers.save(join(dir, files::kAnswerVocab));
  std::ostringstream tax;
  for (const auto& [parent, child] : ds.taxonomy) tax << parent << '\t' << child << '\n';
  write_text_atomic(join(dir, files::kTaxonomy), tax.str());
  const json meta = {{"task", to_string(spec.task)},     {"size", spec.size},
                     {"test_size", spec.test_size},      {"regions", spec.regions},
                     {"channels", spec.channels},        {"colors", spec.colors},
                     {"seed", spec.seed},                {"amplitude", spec.amplitude},
                     {"noise", spec.noise}};
  write_text_atomic(join(dir, files::kSynthMeta), meta.dump(2) + "\n");
}

ModelConfig model_config_for(const DataBundle& data, const TrainConfig& config) {
  auto mc = ModelConfig::profile(config.profile, data.vocab.questions.size(), data.vocab.answers.size(),
                                 data.features.channels());
  mc.variant = config.variant;
  mc.fusion = config.fusion;
  mc.channel_scale = config.channel_scale;
  std::size_t longest = 0;
  for (const auto* split : {&data.train, &data.test})
    for (const auto& e : *split) longest = std::max(longest, e.question.size());
  mc.max_length = std::max(mc.max_length, longest);
  return mc;
}

int cmd_synth(const SynthOptions& o, std::ostream& out) {
  const auto ds = generate_toy_dataset(o.spec);
  save_bundle(ds, o.spec, o.out);
  out << "wrote " << to_string(o.spec.task) << " dataset to " << o.out << ": " << ds.train.size() << " train, "
      << ds.test.size() << " test, " << ds.features.size() << " images, " << ds.vocab.answers.size()
      << " answers\n";
  return kOk;
}

namespace {

RunResult train_and_score(Model& model, const DataBundle& data, const TrainConfig& config,
                          const std::function<void(const EpochStats&)>& on_epoch) {
  const auto encoded = encode_examples(data.train, data.features, data.vocab.questions);
  RunResult r;
  r.history = fit(model, encoded, config, on_epoch);
  r.test_accuracy = evaluate(model, data.features, data.test, data.vocab).accuracy;
  return r;
}

}  // namespace

int cmd_train(const TrainOptions& o, std::ostream& out) {
  const std::string started = now_utc();
  auto config = resolve_config(o.config_path, o.overrides);
  const auto data = load_bundle(o.data);
  auto model = Model::create(model_config_for(data, config), config.seed);
  if (o.resume) restore(model, load_checkpoint(*o.resume));

  fs::create_directories(o.out);
  const auto ckpt = join(o.out, files::kCheckpoint);
  TrainConfig run = config;
  if (o.stop_after_epochs) {
    const auto per_epoch = steps_per_epoch(data.train.size(), config.batch_size);
    run.epochs = std::min<std::size_t>(config.epochs, model.params().step / per_epoch + *o.stop_after_epochs);
  }

  std::ostringstream history;
  history << "epoch,loss,train_accuracy\n";
  out << std::left << std::setw(7) << "epoch" << std::setw(12) << "loss" << "train_acc\n";
  const auto on_epoch = [&](const EpochStats& s) {
    out << std::left << std::setw(7) << s.epoch + 1 << std::setw(12) << std::fixed << std::setprecision(4)
        << s.mean_loss << std::setprecision(4) << s.accuracy << '\n'
        << std::defaultfloat;
    out.flush();
    history << s.epoch + 1 << ',' << std::setprecision(10) << s.mean_loss << ',' << s.accuracy << '\n';
    save_checkpoint(model.params(), ckpt);
  };
  const auto result = train_and_score(model, data, run, on_epoch);
  save_checkpoint(model.params(), ckpt);
  write_text_atomic(join(o.out, files::kHistory), history.str());

  const auto& mc = model.config();
  json manifest;
  manifest["config"] = config.to_map();
  manifest["seed"] = config.seed;
  manifest["variant"] = to_string(config.variant);
  manifest["spatial_fusion"] = to_string(config.fusion);
  manifest["channel_scale"] = to_string(config.channel_scale);
  manifest["profile"] = config.profile;
  manifest["data"] = {{"dir", fs::absolute(o.data).string()}, {"name", data.name},
                      {"train", data.train.size()}, {"test", data.test.size()}};
  manifest["model"] = {{"question_vocab", mc.question_vocab}, {"answers", mc.answers},
                       {"channels", mc.channels},             {"embed", mc.embed},
                       {"hidden", mc.hidden},                 {"attention_hidden", mc.attention_hidden},
                       {"fused_hidden", mc.fused_hidden},     {"max_length", mc.max_length},
                       {"parameters", model.params().parameter_count()}};
  manifest["checkpoint"] = files::kCheckpoint;
  manifest["resumed_from"] = o.resume ? json(*o.resume) : json(nullptr);
  manifest["step"] = model.params().step;
  manifest["started"] = started;
  manifest["finished"] = now_utc();
  json metrics = {{"test_accuracy", result.test_accuracy}};
  if (!result.history.empty()) {
    metrics["train_loss"] = result.history.back().mean_loss;
    metrics["train_accuracy"] = result.history.back().accuracy;
  }
  manifest["final_metrics"] = metrics;
  write_text_atomic(join(o.out, files::kManifest), manifest.dump(2) + "\n");

  out << "test accuracy " << std::fixed << std::setprecision(4) << result.test_accuracy << std::defaultfloat << '\n';
  out << "checkpoint " << ckpt << '\n';
  return kOk;
}

int cmd_eval(const EvalOptions& o, std::ostream& out) {
  const auto manifest_path =
      o.manifest ? *o.manifest : (fs::path(o.checkpoint).parent_path() / files::kManifest).string();
  std::ifstream mf(manifest_path);
  if (!mf) throw std::runtime_error("cannot open manifest " + manifest_path);
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed manifest " + manifest_path + ": " + e.what());
  }
  TrainConfig config;
  for (const auto& [k, v] : manifest.at("config").items()) config.set(k, v.get<std::string>());

  const auto data = load_bundle(o.data);
  auto model = Model::create(model_config_for(data, config), config.seed);
  restore(model, load_checkpoint(o.checkpoint));

  if (o.split != "test" && o.split != "train") throw std::invalid_argument("split must be test or train");
  const auto& examples = o.split == "test" ? data.test : data.train;
  std::optional<Taxonomy> taxonomy;
  if (o.taxonomy) taxonomy = Taxonomy::load(*o.taxonomy);
  const auto report = evaluate(model, data.features, examples, data.vocab, taxonomy ? &*taxonomy : nullptr);

  out << to_string(config.variant) << " on " << data.name << " (" << o.split << ")\n";
  write_report_text(report, out);
  out << '\n';
  write_report_csv(report, out);
  if (o.csv_out) {
    std::ostringstream csv;
    write_report_csv(report, csv);
    write_text_atomic(*o.csv_out, csv.str());
  }
  return kOk;
}

double AblationCell::mean() const {
  if (accuracies.empty()) return 0.0;
  return std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / static_cast<double>(accuracies.size());
}

double AblationCell::stdev() const {
  if (accuracies.size() < 2) return 0.0;
  const double m = mean();
  double ss = 0.0;
  for (const double a : accuracies) ss += (a - m) * (a - m);
  return std::sqrt(ss / static_cast<double>(accuracies.size() - 1));
}

std::vector<AblationCell> run_ablation(const AblateOptions& o, std::ostream& log) {
  if (o.data.empty()) throw std::invalid_argument("ablate needs at least one dataset");
  if (o.seeds == 0) throw std::invalid_argument("seeds must be at least 1");
  const auto base = resolve_config(o.config_path, o.overrides);
  std::vector<DataBundle> datasets;
  for (const auto& d : o.data) datasets.push_back(load_bundle(d));

  std::vector<AblationCell> cells;
  for (const auto v : o.variants)
    for (const auto& data : datasets) {
      AblationCell cell{v, data.name, {}};
      for (std::size_t s = 0; s < o.seeds; ++s) {
        TrainConfig c = base;
        c.variant = v;
        c.seed = base.seed + s;
        auto model = Model::create(model_config_for(data, c), c.seed);
        const auto r = train_and_score(model, data, c, {});
        cell.accuracies.push_back(r.test_accuracy);
        log << table_label(v) << ' ' << data.name << " seed " << c.seed << ": " << std::fixed << std::setprecision(4)
            << r.test_accuracy << std::defaultfloat << '\n';
        log.flush();
      }
      cells.push_back(std::move(cell));
    }
  return cells;
}

void write_ablation_text(const std::vector<AblationCell>& cells, std::ostream& os) {
  std::vector<std::string> tasks;
  std::vector<Variant> variants;
  for (const auto& c : cells) {
    if (std::find(tasks.begin(), tasks.end(), c.task) == tasks.end()) tasks.push_back(c.task);
    if (std::find(variants.begin(), variants.end(), c.variant) == variants.end()) variants.push_back(c.variant);
  }
  os << std::left << std::setw(8) << "model";
  for (const auto& t : tasks) os << std::setw(20) << t;
  os << '\n';
  for (const auto v : variants) {
    os << std::setw(8) << table_label(v);
    for (const auto& t : tasks) {
      const auto it = std::find_if(cells.begin(), cells.end(), [&](const AblationCell& c) {
        return c.variant == v && c.task == t;
      });
      std::ostringstream cell;
      if (it != cells.end())
        cell << std::fixed << std::setprecision(4) << it->mean() << " +- " << it->stdev();
      os << std::setw(20) << cell.str();
    }
    os << '\n';
  }
}

void write_ablation_csv(const std::vector<AblationCell>& cells, std::ostream& os) {
  os << "model,task,mean,stdev,seeds\n";
  for (const auto& c : cells)
    os << table_label(c.variant) << ',' << c.task << ',' << std::setprecision(10) << c.mean() << ',' << c.stdev()
       << ',' << c.accuracies.size() << '\n';
}

int cmd_ablate(const AblateOptions& o, std::ostream& out) {
  const auto cells = run_ablation(o, out);
  std::ostringstream text, csv;
  write_ablation_text(cells, text);
  write_ablation_csv(cells, csv);
  out << '\n' << text.str();
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    write_text_atomic(join(o.out, "ablation.txt"), text.str());
    write_text_atomic(join(o.out, "ablation.csv"), csv.str());
    out << "wrote " << join(o.out, "ablation.csv") << '\n';
  }
  return kOk;
}

GradcheckReport gradcheck_instance(Variant variant, SpatialFusion fusion, ChannelScale scale, std::uint64_t seed) {
  constexpr std::size_t K = 4, D = 8, T = 3, A = 5, vocab = 6;
  ModelConfig mc;
  mc.variant = variant;
  mc.fusion = fusion;
  mc.channel_scale = scale;
  mc.question_vocab = vocab;
  mc.answers = A;
  mc.channels = D;
  mc.embed = 8;
  mc.hidden = 8;
  mc.attention_hidden = 8;
  mc.fused_hidden = 8;
  mc.max_length = T;
  auto model = Model::create(mc, seed);

  Rng rng(seed, "gradcheck", 0, 0);
  for (auto& e : model.params().entries())
    for (auto& x : e.value.data()) x = rng.uniform(-0.5, 0.5);
  std::vector<double> vdata(K * D);
  for (auto& x : vdata) x = rng.uniform(-1.0, 1.0);
  Tensor V = Tensor::matrix(K, D, vdata);
  QuestionTokens tokens;
  for (std::size_t t = 0; t < T; ++t) tokens.ids.push_back(1 + rng.below(vocab - 1));
  const std::size_t label = rng.below(A);
  Tensor mask = dropout_mask(mc.fused_hidden, 0.25, rng);

  auto& store = model.params();
  Tensor V_grad;
  const auto run = [&](bool backward) {
    ad::Tape tape;
    Bound p(tape, store);
    const auto v = tape.parameter(V);
    const auto loss = ad::cross_entropy(model.logits(p, v, model.encode(p, tokens), &mask), label);
    const double value = loss.value()[0];
    if (backward) {
      tape.backward(loss);
      store.zero_grad();
      std::vector<Tensor> grads;
      for (auto& e : store.entries()) grads.push_back(std::move(e.grad));
      p.accumulate(grads);
      for (std::size_t i = 0; i < grads.size(); ++i) store[i].grad = std::move(grads[i]);
      V_grad = tape.grad(v);
    }
    return value;
  };
  run(true);

  std::vector<GradTarget> targets;
  for (auto& e : store.entries()) targets.push_back({e.name, &e.value, &e.grad});
  targets.push_back({"input.V", &V, &V_grad});
  const auto check = finite_difference_check([&] { return run(false); }, targets);

  GradcheckReport r;
  r.max_rel_error = check.max_rel_error;
  r.worst = check.worst_name + "[" + std::to_string(check.worst_index) + "]";
  std::map<std::string, double> groups;
  for (const auto& [name, err] : check.per_target) {
    const auto group = name.substr(0, name.find('.'));
    groups[group] = std::max(groups[group], err);
  }
  r.groups.assign(groups.begin(), groups.end());
  return r;
}

int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out) {
  if (o.seeds == 0) throw std::invalid_argument("seeds must be at least 1");
  if (o.corrupt_op) {
    bool found = false;
    for (int i = 0; i <= static_cast<int>(ad::Op::MaskMul); ++i) {
      const auto op = static_cast<ad::Op>(i);
      if (*o.corrupt_op == ad::op_name(op)) {
        ad::testing::corrupt_backward(op, 1.5);
        found = true;
      }
    }
    if (!found) throw std::invalid_argument("unknown op " + *o.corrupt_op);
  }
  std::map<std::string, double> groups;
  double worst = 0.0;
  std::string worst_name;
  std::uint64_t worst_seed = o.seed;
  for (std::size_t s = 0; s < o.seeds; ++s) {
    const auto seed = o.seed + s;
    const auto r = gradcheck_instance(o.variant, o.fusion, o.channel_scale, seed);
    for (const auto& [g, e] : r.groups) groups[g] = std::max(groups[g], e);
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.worst;
      worst_seed = seed;
    }
  }
  ad::testing::reset_backward_faults();

  out << "gradcheck " << to_string(o.variant) << " (" << to_string(o.fusion) << ", " << to_string(o.channel_scale) << "), " << o.seeds << " seed(s)\n";
  for (const auto& [g, e] : groups)
    out << "  " << std::left << std::setw(12) << g << std::scientific << std::setprecision(3) << e << '\n';
  out << "max relative error " << std::scientific << std::setprecision(3) << worst << " at " << worst_name
      << " (seed " << worst_seed << ")" << std::defaultfloat << '\n';
  if (worst > o.threshold) {
    out << "FAIL: exceeds " << o.threshold << '\n';
    return kValidation;
  }
  out << "ok\n";
  return kOk;
}

}  // namespace cva::cli
