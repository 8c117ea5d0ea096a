#include "datadiet/trainer.hpp"

#include "datadiet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace datadiet {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0)) throw ConfigError("learning_rate must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0,1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (!(lr_decay_factor > 0)) throw ConfigError("lr_decay_factor must be positive");
  for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] < 1) {
      throw ConfigError("decay epochs must be >= 1");
    }
    if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1]) {
      throw ConfigError("decay epochs must be strictly increasing");
    }
  }
  for (int e : checkpoint_epochs) {
    if (e < 0) throw ConfigError("checkpoint epochs must be >= 0");
  }
}

Json TrainConfig::to_json() const {
  return Json{{"learning_rate", learning_rate},   {"momentum", momentum},
              {"weight_decay", weight_decay},     {"batch_size", batch_size},
              {"epochs", epochs},                 {"lr_decay_factor", lr_decay_factor},
              {"decay_epochs", decay_epochs},     {"data_seed", data_seed},
              {"init_seed", init_seed},           {"checkpoint_epochs", checkpoint_epochs},
              {"reference_size", reference_size}};
}

TrainConfig TrainConfig::from_json(const Json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.decay_epochs = j.value("decay_epochs", c.decay_epochs);
  c.data_seed = j.value("data_seed", c.data_seed);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.checkpoint_epochs = j.value("checkpoint_epochs", c.checkpoint_epochs);
  c.reference_size = j.value("reference_size", c.reference_size);
  return c;
}

std::string TrainConfig::digest() const { return digest_json(to_json()); }

TrainConfig TrainConfig::with_seeds(const RunSeeds& s) const {
  TrainConfig c = *this;
  c.init_seed = s.init;
  c.data_seed = s.data;
  return c;
}

double lr_at(const TrainConfig& config, int epoch) {
  const auto decays = std::count_if(config.decay_epochs.begin(), config.decay_epochs.end(),
                                    [epoch](int boundary) { return boundary <= epoch; });
  return config.learning_rate / std::pow(config.lr_decay_factor, static_cast<double>(decays));
}

std::int64_t steps_per_epoch(const TrainConfig& config, std::size_t train_size) {
  const auto n = static_cast<std::int64_t>(config.reference_size ? config.reference_size : train_size);
  return (n + config.batch_size - 1) / config.batch_size;
}

Json spec_to_json(const ModelSpec& spec) {
  return Json{{"architecture", to_string(spec.architecture)},
              {"widths", spec.widths},
              {"image", {spec.image.channels, spec.image.height, spec.image.width}}};
}

ModelSpec spec_from_json(const Json& j) {
  ModelSpec spec;
  spec.architecture = architecture_from_string(j.at("architecture").get<std::string>());
  spec.widths = j.at("widths").get<std::vector<int>>();
  if (j.contains("image")) {
    const auto image = j.at("image").get<std::vector<int>>();
    if (image.size() == 3) spec.image = ImageShape{image[0], image[1], image[2]};
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Checkpoint files

namespace {

constexpr std::string_view kCheckpointMagic = "DDCKPT01";

template <typename Scalar>
constexpr const char* dtype_name() {
  return sizeof(Scalar) == 4 ? "f32" : "f64";
}

template <typename Stored, typename Scalar>
VectorX<Scalar> read_block(BinaryReader& in, std::size_t count, const char* what) {
  const auto raw = in.get_vector<Stored>(count, what);
  return Eigen::Map<const VectorX<Stored>>(raw.data(), static_cast<Index>(count)).template cast<Scalar>();
}

}  // namespace

template <typename Scalar>
std::string checkpoint_bytes(const Checkpoint<Scalar>& checkpoint) {
  const auto& state = checkpoint.state;
  Json header = {{"format", "ddckpt"},
                 {"version", 1},
                 {"dtype", dtype_name<Scalar>()},
                 {"epoch", checkpoint.epoch},
                 {"step", state.step},
                 {"spec", spec_to_json(checkpoint.spec)},
                 {"config_digest", checkpoint.config_digest},
                 {"init_seed", checkpoint.seeds.init},
                 {"data_seed", checkpoint.seeds.data},
                 {"size", state.params.size()},
                 {"has_momentum", state.momentum.size() > 0}};
  BinaryWriter out;
  write_container_header(out, kCheckpointMagic, header);
  out.put_span(std::span<const Scalar>(state.params.values.data(), static_cast<std::size_t>(state.params.size())));
  if (state.momentum.size() > 0) {
    out.put_span(std::span<const Scalar>(state.momentum.data(), static_cast<std::size_t>(state.momentum.size())));
  }
  return out.bytes();
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Scalar>& checkpoint) {
  write_file_atomic(path, checkpoint_bytes(checkpoint));
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
  BinaryReader in(read_file(path));
  const Json header = read_container_header(in, kCheckpointMagic);
  Checkpoint<Scalar> ckpt;
  std::string dtype;
  std::size_t size = 0;
  bool has_momentum = false;
  try {
    dtype = header.at("dtype").get<std::string>();
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.state.step = header.at("step").get<std::int64_t>();
    ckpt.spec = spec_from_json(header.at("spec"));
    ckpt.config_digest = header.at("config_digest").get<std::string>();
    ckpt.seeds = RunSeeds{header.at("init_seed").get<std::uint64_t>(), header.at("data_seed").get<std::uint64_t>()};
    size = header.at("size").get<std::size_t>();
    has_momentum = header.value("has_momentum", false);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what(), 16);
  }
  if (dtype != "f32" && dtype != "f64") throw FormatError("unknown checkpoint dtype '" + dtype + "'", 16);
  auto read = [&](const char* what) {
    return dtype == "f32" ? read_block<float, Scalar>(in, size, what) : read_block<double, Scalar>(in, size, what);
  };
  ckpt.state.params.values = read("parameter block");
  ckpt.state.params.layout = parameter_layout(ckpt.spec);
  if (has_momentum) ckpt.state.momentum = read("momentum block");
  if (!in.at_end()) throw FormatError("trailing bytes after checkpoint payload", in.offset());
  detail::check_consistent(ckpt.spec, ckpt.state.params.layout, ckpt.state.params.size());
  return ckpt;
}

// ---------------------------------------------------------------------------
// Presentation log

std::string PresentationLog::to_csv() const {
  std::ostringstream out;
  out << "example_id,epoch,correct\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (const auto& p : entries[i]) {
      out << ids[i] << ',' << p.step / steps_per_epoch << ',' << (p.correct ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

PresentationLog PresentationLog::from_csv(const std::filesystem::path& path, std::int64_t steps_per_epoch) {
  PresentationLog log;
  log.steps_per_epoch = steps_per_epoch;
  const auto rows = read_csv(path);
  std::size_t line = 0;
  for (const auto& row : rows) {
    if (line++ == 0 && !row.empty() && row[0] == "example_id") continue;
    if (row.size() != 3) throw FormatError("presentation log row needs 3 fields", line);
    const ExampleId id = std::stoll(row[0]);
    if (log.ids.empty() || log.ids.back() != id) {
      log.ids.push_back(id);
      log.entries.emplace_back();
    }
    log.entries.back().push_back(Presentation{std::stoll(row[1]) * steps_per_epoch, row[2] == "1"});
  }
  return log;
}

// ---------------------------------------------------------------------------
// Optimization

template <typename Scalar>
BatchOutcome<Scalar> sgd_step(TrainState<Scalar>& state, const ModelSpec& spec, const MatrixX<Scalar>& inputs,
                              std::span<const int> labels, double lr, const TrainConfig& config) {
  const Index batch = inputs.cols();
  if (batch == 0) throw ConfigError("empty minibatch");
  if (static_cast<Index>(labels.size()) != batch) throw ShapeError("label count does not match batch");

  ForwardTrace<Scalar> trace;
  const MatrixX<Scalar> logits = forward_batch(state.params, spec, inputs, &trace);
  MatrixX<Scalar> cotangent = softmax_columns(logits);
  BatchOutcome<Scalar> outcome;
  outcome.losses.reserve(batch);
  outcome.correct.reserve(batch);
  for (Index j = 0; j < batch; ++j) {
    const int label = labels[j];
    outcome.losses.push_back(cross_entropy(cotangent.col(j), label));
    outcome.correct.push_back(argmax(logits.col(j)) == label);
    cotangent(label, j) -= Scalar(1);
  }

  VectorX<Scalar> grad = backward_batch(state.params, trace, cotangent);
  grad /= static_cast<Scalar>(batch);
  grad += static_cast<Scalar>(config.weight_decay) * state.params.values;
  if (!grad.allFinite()) throw DivergenceError(state.step);

  const auto mu = static_cast<Scalar>(config.momentum);
  if (state.momentum.size() != grad.size()) state.momentum = VectorX<Scalar>::Zero(grad.size());
  state.momentum = mu * state.momentum + grad;
  state.params.values -= static_cast<Scalar>(lr) * (grad + mu * state.momentum);
  ++state.step;
  return outcome;
}

template <typename Scalar>
Trainer<Scalar>::Trainer(const ModelSpec& spec, const Dataset& data, const TrainConfig& config)
    : Trainer(spec, data, config,
              TrainState<Scalar>{init_params<Scalar>(spec, config.init_seed), VectorX<Scalar>(), 0}) {}

template <typename Scalar>
Trainer<Scalar>::Trainer(const ModelSpec& spec, const Dataset& data, const TrainConfig& config,
                         TrainState<Scalar> start)
    : spec_(spec), data_(data), config_(config), state_(std::move(start)) {
  config_.validate();
  spec_.validate();
  if (data_.empty()) throw ConfigError("cannot train on an empty dataset");
  if (data_.dim() != spec_.input_dim()) throw ShapeError("dataset dimension does not match model input");
  if (data_.num_classes != spec_.num_classes()) throw ShapeError("dataset class count does not match model");
  detail::check_consistent(spec_, state_.params.layout, state_.params.size());
  if (static_cast<std::size_t>(config_.batch_size) > data_.size() && config_.reference_size == 0) {
    throw ConfigError("batch size exceeds dataset size");
  }
  steps_per_epoch_ = datadiet::steps_per_epoch(config_, data_.size());
  const auto n = static_cast<std::int64_t>(data_.size());
  batches_per_pass_ = (n + config_.batch_size - 1) / config_.batch_size;
}

template <typename Scalar>
void Trainer<Scalar>::record_presentations(PresentationLog* log) {
  log_ = log;
  if (log_ && log_->ids.empty()) {
    log_->ids = data_.ids;
    log_->entries.assign(data_.size(), {});
    log_->steps_per_epoch = steps_per_epoch_;
  }
}

// Fisher-Yates driven by a per-pass generator, so the order of any pass is
// a pure function of (data_seed, pass) and resuming needs no RNG state.
template <typename Scalar>
void Trainer<Scalar>::refresh_order(std::int64_t pass) {
  if (pass == cached_pass_) return;
  order_.resize(data_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(config_.data_seed, 7, static_cast<std::uint64_t>(pass)));
  for (std::size_t i = order_.size(); i-- > 1;) {
    std::swap(order_[i], order_[rng() % (i + 1)]);
  }
  cached_pass_ = pass;
}

template <typename Scalar>
EpochMetrics Trainer<Scalar>::run_epoch(const Dataset* test) {
  if (finished()) throw ConfigError("training already finished");
  const int epoch = completed_epochs();
  const std::int64_t end = static_cast<std::int64_t>(epoch + 1) * steps_per_epoch_;
  const double lr = lr_at(config_, epoch);
  const auto n = static_cast<std::int64_t>(data_.size());
  double loss_sum = 0;
  std::int64_t correct = 0, seen = 0;
  std::vector<std::size_t> indices;
  std::vector<int> labels;
  while (state_.step < end) {
    const auto pass = state_.step / batches_per_pass_;
    const auto batch = state_.step % batches_per_pass_;
    refresh_order(pass);
    const auto first = batch * config_.batch_size;
    const auto last = std::min<std::int64_t>(first + config_.batch_size, n);
    indices.assign(order_.begin() + first, order_.begin() + last);
    labels.clear();
    for (auto i : indices) labels.push_back(data_.labels[i]);
    const auto step = state_.step;
    const auto outcome =
        sgd_step(state_, spec_, gather_inputs<Scalar>(data_, indices), std::span<const int>(labels), lr, config_);
    for (std::size_t j = 0; j < indices.size(); ++j) {
      loss_sum += static_cast<double>(outcome.losses[j]);
      correct += outcome.correct[j];
      if (log_) log_->entries[indices[j]].push_back(Presentation{step, outcome.correct[j] != 0});
    }
    seen += static_cast<std::int64_t>(indices.size());
  }
  EpochMetrics m;
  m.epoch = epoch + 1;
  m.train_loss = loss_sum / static_cast<double>(seen);
  m.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  m.learning_rate = lr;
  if (test && !test->empty()) m.test_accuracy = evaluate(state_.params, spec_, *test).accuracy;
  return m;
}

template <typename Scalar>
Checkpoint<Scalar> Trainer<Scalar>::checkpoint() const {
  return Checkpoint<Scalar>{completed_epochs(), state_, spec_, config_.digest(), config_.seeds()};
}

template <typename Scalar>
const Checkpoint<Scalar>& TrainResult<Scalar>::at_epoch(int epoch) const {
  for (const auto& c : checkpoints) {
    if (c.epoch == epoch) return c;
  }
  throw LookupError("no checkpoint at epoch " + std::to_string(epoch));
}

namespace {

template <typename Scalar>
TrainResult<Scalar> drive(Trainer<Scalar>& trainer, const TrainConfig& config, const TrainOptions& options) {
  TrainResult<Scalar> result;
  if (options.record_presentations) trainer.record_presentations(&result.log);
  const int stop = options.stop_epoch < 0 ? config.epochs : std::min(options.stop_epoch, config.epochs);
  auto wanted = [&](int epoch) {
    return std::find(config.checkpoint_epochs.begin(), config.checkpoint_epochs.end(), epoch) !=
           config.checkpoint_epochs.end();
  };
  if (wanted(trainer.completed_epochs())) result.checkpoints.push_back(trainer.checkpoint());
  while (trainer.completed_epochs() < stop) {
    result.history.push_back(trainer.run_epoch(options.test));
    if (wanted(trainer.completed_epochs())) result.checkpoints.push_back(trainer.checkpoint());
  }
  if (result.checkpoints.empty() || result.checkpoints.back().epoch != trainer.completed_epochs()) {
    result.checkpoints.push_back(trainer.checkpoint());
  }
  return result;
}

}  // namespace

template <typename Scalar>
TrainResult<Scalar> train(const ModelSpec& spec, const Dataset& data, const TrainConfig& config,
                          const TrainOptions& options) {
  Trainer<Scalar> trainer(spec, data, config);
  return drive(trainer, config, options);
}

template <typename Scalar>
TrainResult<Scalar> resume_training(const Checkpoint<Scalar>& from, const Dataset& data, const TrainConfig& config,
                                    const TrainOptions& options) {
  Trainer<Scalar> trainer(from.spec, data, config, from.state);
  return drive(trainer, config, options);
}

template <typename Scalar>
EvalResult evaluate(const ParamVector<Scalar>& params, const ModelSpec& spec, const Dataset& data) {
  EvalResult result;
  result.errors.assign(data.size(), 0);
  if (data.empty()) return result;
  constexpr std::size_t chunk = 1024;
  double loss_sum = 0;
  std::size_t correct = 0;
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const auto stop = std::min(start + chunk, data.size());
    indices.resize(stop - start);
    std::iota(indices.begin(), indices.end(), start);
    const MatrixX<Scalar> logits = forward_batch(params, spec, gather_inputs<Scalar>(data, indices));
    for (std::size_t j = 0; j < indices.size(); ++j) {
      const auto col = logits.col(static_cast<Index>(j));
      const int label = data.labels[start + j];
      loss_sum += static_cast<double>(cross_entropy(softmax(col), label));
      const bool ok = argmax(col) == label;
      correct += ok;
      result.errors[start + j] = !ok;
    }
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  result.mean_loss = loss_sum / static_cast<double>(data.size());
  return result;
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,train_acc,test_acc,lr\n";
  for (const auto& m : history) {
    out << m.epoch << ',' << format_double(m.train_loss) << ',' << format_double(m.train_accuracy) << ','
        << format_double(m.test_accuracy) << ',' << format_double(m.learning_rate) << '\n';
  }
  return out.str();
}

#define DATADIET_INSTANTIATE(S)                                                                             \
  template std::string checkpoint_bytes<S>(const Checkpoint<S>&);                                          \
  template void save_checkpoint<S>(const std::filesystem::path&, const Checkpoint<S>&);                    \
  template Checkpoint<S> load_checkpoint<S>(const std::filesystem::path&);                                 \
  template BatchOutcome<S> sgd_step<S>(TrainState<S>&, const ModelSpec&, const MatrixX<S>&,                \
                                       std::span<const int>, double, const TrainConfig&);                  \
  template class Trainer<S>;                                                                               \
  template struct TrainResult<S>;                                                                          \
  template TrainResult<S> train<S>(const ModelSpec&, const Dataset&, const TrainConfig&, const TrainOptions&); \
  template TrainResult<S> resume_training<S>(const Checkpoint<S>&, const Dataset&, const TrainConfig&,     \
                                             const TrainOptions&);                                          \
  template EvalResult evaluate<S>(const ParamVector<S>&, const ModelSpec&, const Dataset&);

DATADIET_INSTANTIATE(float)
DATADIET_INSTANTIATE(double)
#undef DATADIET_INSTANTIATE

}  // namespace datadiet
