#include "cva/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "cva/binary_io.hpp"

namespace cva {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw std::invalid_argument("config key '" + key + "': not a number: '" + v + "'");
  return d;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  std::uint64_t u = 0;
  try {
    if (!v.empty() && v[0] != '-') u = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size())
    throw std::invalid_argument("config key '" + key + "': not a non-negative integer: '" + v + "'");
  return u;
}

std::string format_double(double d) {
  std::ostringstream os;
  os << std::setprecision(17) << d;
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be > 0");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be > 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (profile != "desk" && profile != "full") throw std::invalid_argument("profile must be desk or full");
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "lr") lr = parse_double(key, value);
  else if (key == "beta1") beta1 = parse_double(key, value);
  else if (key == "beta2") beta2 = parse_double(key, value);
  else if (key == "eps") eps = parse_double(key, value);
  else if (key == "batch_size") batch_size = parse_uint(key, value);
  else if (key == "epochs") epochs = parse_uint(key, value);
  else if (key == "clip_norm") clip_norm = parse_double(key, value);
  else if (key == "dropout") dropout = parse_double(key, value);
  else if (key == "seed") seed = parse_uint(key, value);
  else if (key == "profile") profile = value;
  else if (key == "variant") variant = parse_variant(value);
  else if (key == "spatial_fusion") fusion = parse_fusion(value);
  else if (key == "channel_scale") channel_scale = parse_channel_scale(value);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {
      {"lr", format_double(lr)},
      {"beta1", format_double(beta1)},
      {"beta2", format_double(beta2)},
      {"eps", format_double(eps)},
      {"batch_size", std::to_string(batch_size)},
      {"epochs", std::to_string(epochs)},
      {"clip_norm", format_double(clip_norm)},
      {"dropout", format_double(dropout)},
      {"seed", std::to_string(seed)},
      {"profile", profile},
      {"variant", to_string(variant)},
      {"spatial_fusion", to_string(fusion)},
      {"channel_scale", to_string(channel_scale)},
  };
}

TrainConfig read_config(std::istream& is, TrainConfig base) {
  std::string line;
  std::uint64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line must be 'key = value'", line_no);
    try {
      base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what(), line_no);
    }
  }
  return base;
}

TrainConfig load_config(const std::string& path, TrainConfig base) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config file " + path);
  return read_config(is, std::move(base));
}

void write_config(const TrainConfig& c, std::ostream& os) {
  for (const auto& [k, v] : c.to_map()) os << k << " = " << v << '\n';
}

void adam_step(ParameterStore& store, const TrainConfig& config) {
  for (const auto& e : store.entries())
    if (!e.grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + e.name + "'");
  const std::uint64_t t = store.step + 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (auto& e : store.entries()) {
    auto th = e.value.data();
    auto g = e.grad.data();
    auto m = e.m.data();
    auto v = e.v.data();
    for (std::size_t i = 0; i < th.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      th[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
      g[i] = 0.0;
    }
  }
  store.step = t;
}

double clip_gradients(ParameterStore& store, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip norm must be > 0");
  double sq = 0.0;
  for (const auto& e : store.entries())
    for (double g : e.grad.data()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& e : store.entries())
      for (auto& g : e.grad.data()) g *= scale;
  }
  return norm;
}

Tensor dropout_mask(std::size_t n, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  Tensor mask(Shape{n}, 1.0);
  if (rate == 0.0) return mask;
  const double keep = 1.0 / (1.0 - rate);
  for (auto& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep;
  return mask;
}

Tensor apply_dropout(const Tensor& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (mode == Mode::Eval || rate == 0.0) return x;
  const Tensor mask = dropout_mask(x.size(), rate, rng);
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  return y;
}

std::vector<EncodedExample> encode_examples(const std::vector<VqaExample>& examples, const FeatureContainer& features,
                                            const Vocabulary& questions) {
  std::vector<EncodedExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back({&features.at(e.image_id), {questions.encode(e.question)}, e.label});
  return out;
}

BatchResult accumulate_batch(Model& model, const std::vector<EncodedExample>& data,
                             const std::vector<std::size_t>& batch, const TrainConfig& config, Mode mode) {
  ad::Tape tape;
  Bound p(tape, model.params());
  // Each distinct question is encoded once per batch; its gradient is the sum
  // over the examples that share it.
  std::map<std::vector<std::size_t>, ad::Var> questions;
  std::optional<ad::Var> total;
  BatchResult r;
  for (const auto idx : batch) {
    const auto& ex = data.at(idx);
    auto it = questions.find(ex.tokens.ids);
    if (it == questions.end()) it = questions.emplace(ex.tokens.ids, model.encode(p, ex.tokens)).first;
    std::optional<Tensor> mask;
    if (mode == Mode::Train && config.dropout > 0.0) {
      Rng rng(config.seed, "dropout", model.params().step, idx);
      mask = dropout_mask(model.config().fused_hidden, config.dropout, rng);
    }
    const auto logits = model.logits(p, tape.constant(*ex.features), it->second, mask ? &*mask : nullptr);
    if (argmax_lowest(logits.value().data()) == ex.label) ++r.correct;
    const auto loss = ad::cross_entropy(logits, ex.label);
    total = total ? ad::add(*total, loss) : loss;
  }
  r.loss_sum = total->value()[0];
  if (!std::isfinite(r.loss_sum)) throw NumericError("non-finite loss");
  tape.backward(*total);
  std::vector<Tensor> grads;
  grads.reserve(model.params().size());
  for (auto& e : model.params().entries()) grads.push_back(std::move(e.grad));
  p.accumulate(grads, 1.0 / static_cast<double>(batch.size()));
  for (std::size_t i = 0; i < grads.size(); ++i) model.params()[i].grad = std::move(grads[i]);
  return r;
}

std::size_t steps_per_epoch(std::size_t examples, std::size_t batch_size) {
  return (examples + batch_size - 1) / batch_size;
}

EpochStats train_epoch(Model& model, const std::vector<EncodedExample>& data, const TrainConfig& config,
                       std::size_t epoch) {
  if (data.empty()) throw std::invalid_argument("cannot train on an empty dataset");
  config.validate();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(config.seed, "shuffle", epoch);
  shuffle_rng.shuffle(order.begin(), order.end());

  EpochStats stats;
  stats.epoch = epoch;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::size_t batch_index = 0;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
    const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(order.size(), start + config.batch_size)));
    model.params().zero_grad();
    BatchResult r;
    try {
      r = accumulate_batch(model, data, batch, config, Mode::Train);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " + e.what());
    }
    clip_gradients(model.params(), config.clip_norm);
    adam_step(model.params(), config);
    loss_sum += r.loss_sum;
    correct += r.correct;
    ++stats.steps;
  }
  stats.mean_loss = loss_sum / static_cast<double>(data.size());
  stats.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return stats;
}

std::vector<EpochStats> fit(Model& model, const std::vector<EncodedExample>& data, const TrainConfig& config,
                            const std::function<void(const EpochStats&)>& on_epoch) {
  const std::size_t per_epoch = steps_per_epoch(data.size(), config.batch_size);
  if (per_epoch == 0) throw std::invalid_argument("cannot train on an empty dataset");
  if (model.params().step % per_epoch != 0)
    throw std::invalid_argument("checkpoint step " + std::to_string(model.params().step) +
                                " is not on an epoch boundary for this dataset and batch size");
  std::vector<EpochStats> history;
  for (std::size_t epoch = model.params().step / per_epoch; epoch < config.epochs; ++epoch) {
    history.push_back(train_epoch(model, data, config, epoch));
    if (on_epoch) on_epoch(history.back());
  }
  return history;
}

namespace {

void write_entry(io::BinaryWriter& w, const std::string& name, const Tensor& t) {
  if (name.size() > 0xffff) throw std::invalid_argument("parameter name too long");
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.data()) w.f64(v);
}

std::pair<std::string, Tensor> read_entry(io::BinaryReader& r) {
  const auto at = r.offset();
  const auto len = r.u16("name length");
  std::string name = r.str(len, "parameter name");
  const auto rank = r.u8("rank");
  if (rank > 2) throw FormatError("parameter '" + name + "' has unsupported rank " + std::to_string(rank), at);
  Shape shape;
  for (std::uint8_t i = 0; i < rank; ++i) {
    const auto d = r.u32("dimension");
    if (d == 0) throw FormatError("parameter '" + name + "' has a zero dimension", at);
    shape.push_back(d);
  }
  std::vector<double> data(shape_size(shape));
  for (auto& v : data) v = r.f64("tensor payload");
  return {std::move(name), Tensor(std::move(shape), std::move(data))};
}

}  // namespace

void write_checkpoint(const ParameterStore& store, std::ostream& os) {
  io::BinaryWriter w(os);
  w.bytes("CVAC", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(store.size()));
  for (const auto& e : store.entries()) write_entry(w, e.name, e.value);
  for (const auto& e : store.entries()) write_entry(w, e.name, e.m);
  for (const auto& e : store.entries()) write_entry(w, e.name, e.v);
  w.u64(store.step);
}

ParameterStore read_checkpoint(std::istream& is) {
  io::BinaryReader r(is);
  r.expect_magic("CVAC");
  const auto version_at = r.offset();
  const auto version = r.u32("version");
  if (version != kCheckpointVersion)
    throw VersionError("unsupported checkpoint version " + std::to_string(version), version_at);
  const auto count = r.u32("entry count");
  ParameterStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto at = r.offset();
    auto [name, t] = read_entry(r);
    try {
      store.add(std::move(name), std::move(t));
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what(), at);
    }
  }
  for (int section = 0; section < 2; ++section) {
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto at = r.offset();
      auto [name, t] = read_entry(r);
      auto& e = store[i];
      if (name != e.name || t.shape() != e.value.shape())
        throw FormatError("moment entry '" + name + "' does not match parameter '" + e.name + "'", at);
      (section == 0 ? e.m : e.v) = std::move(t);
    }
  }
  store.step = r.u64("step");
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint", r.offset());
  return store;
}

void save_checkpoint(const ParameterStore& store, const std::string& path) {
  // Written to a sibling temp file and renamed so readers never see a partial checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path);
    write_checkpoint(store, os);
    os.flush();
    if (!os) throw std::runtime_error("write failed for checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot move checkpoint into " + path);
}

ParameterStore load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path);
  return read_checkpoint(is);
}

void restore(Model& model, const ParameterStore& checkpoint) {
  auto& store = model.params();
  for (const auto& e : store.entries()) {
    const auto id = checkpoint.find(e.name);
    if (!id) throw ShapeError("checkpoint lacks parameter '" + e.name + "'", e.value.shape(), Shape{});
    if (checkpoint[*id].value.shape() != e.value.shape())
      throw ShapeError("checkpoint shape mismatch for parameter '" + e.name + "'", checkpoint[*id].value.shape(),
                       e.value.shape());
  }
  for (const auto& e : checkpoint.entries())
    if (!store.find(e.name))
      throw ShapeError("checkpoint parameter '" + e.name + "' does not exist in this architecture", e.value.shape(),
                       Shape{});
  for (auto& e : store.entries()) {
    const auto& src = checkpoint[checkpoint.at(e.name)];
    e.value = src.value;
    e.m = src.m;
    e.v = src.v;
    e.grad.fill(0.0);
  }
  store.step = checkpoint.step;
}

}  // namespace cva
