#include "datadiet/experiment.hpp"

#include "datadiet/dynamics.hpp"
#include "datadiet/errors.hpp"
#include "datadiet/pruning.hpp"
#include "datadiet/scores.hpp"

#include <algorithm>
#include <cstdlib>
#include <ostream>
#include <unordered_set>

namespace datadiet {

Json default_config() {
  return Json::parse(R"({
    "seed": 0,
    "precision": "f32",
    "data": {
      "source": "synthetic",
      "synthetic": {
        "num_classes": 10, "dim": 32, "clusters_per_class": 4, "cluster_std": 1.0,
        "class_separation": 4.0, "bayes_noise": 0.0, "train_size": 10000, "test_size": 5000, "seed": 0
      },
      "idx": {"train_images": "", "train_labels": "", "test_images": "", "test_labels": ""},
      "cifar": {"train": [], "test": []},
      "snapshot": {"train": "", "test": ""},
      "subsample": 0,
      "corruption": 0.0
    },
    "model": {"architecture": "mlp", "hidden": [128, 128], "conv_channels": 8},
    "train": {
      "learning_rate": 0.1, "momentum": 0.9, "weight_decay": 0.0005, "batch_size": 128, "epochs": 40,
      "lr_decay_factor": 5.0, "decay_epochs": [24, 32], "checkpoint_epochs": [0, 1, 2, 4, 8]
    },
    "score": {"kinds": ["el2n", "grand"], "epochs": [0, 4], "n_runs": 10},
    "prune": {
      "policy": "keep-top", "fraction": 0.5, "offset": 0.0,
      "fractions": [0.3, 0.5, 0.7, 1.0], "offsets": [0.0, 0.1, 0.2, 0.3], "window_fraction": 0.5,
      "n_retrains": 4, "corruptions": [0.0, 0.1],
      "score_kind": "el2n", "score_epoch": 4,
      "sources": [{"kind": "el2n", "epoch": 4}]
    },
    "dynamics": {
      "bucket_size": 100, "stride": 100, "bucket_starts": [], "velocity_epoch": 4, "score_epoch": 4,
      "spawn_epochs": [0, 1, 2, 4, 8], "n_pairs": 3, "subset_size": 1000, "alpha_mid_only": false
    }
  })");
}

void apply_override(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::exception&) {
    value = text;
  }
  Json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = Json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

std::string ExperimentConfig::digest() const { return digest_json(json); }

std::filesystem::path ExperimentConfig::run_dir() const { return out_root / digest(); }

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig c = TrainConfig::from_json(json.at("train"));
  c.validate();
  return c;
}

ModelSpec ExperimentConfig::model_spec(const Dataset& data) const {
  const auto& m = json.at("model");
  ModelSpec spec;
  spec.architecture = architecture_from_string(m.value("architecture", "mlp"));
  spec.widths.push_back(data.dim());
  switch (spec.architecture) {
    case Architecture::linear:
      break;
    case Architecture::mlp:
      for (int h : m.value("hidden", std::vector<int>{128, 128})) spec.widths.push_back(h);
      break;
    case Architecture::small_conv: {
      spec.widths.push_back(m.value("conv_channels", 8));
      const auto hidden = m.value("hidden", std::vector<int>{128});
      spec.widths.push_back(hidden.empty() ? 128 : hidden.front());
      spec.image = data.image;
      break;
    }
  }
  spec.widths.push_back(data.num_classes);
  spec.validate();
  return spec;
}

ExperimentConfig resolve_config(const CommandOptions& options) {
  Json json = default_config();
  if (options.config_path) {
    if (!std::filesystem::exists(*options.config_path)) {
      throw CliError(kExitConfig, "config file not found: " + options.config_path->string());
    }
    try {
      json.merge_patch(Json::parse(read_file(*options.config_path)));
    } catch (const Json::exception& e) {
      throw CliError(kExitConfig, "cannot parse config " + options.config_path->string() + ": " + e.what());
    }
  }
  for (const auto& o : options.overrides) apply_override(json, o);
  if (options.seed) json["seed"] = *options.seed;
  if (options.f64) json["precision"] = "f64";

  ExperimentConfig config;
  try {
    config.master_seed = json.at("seed").get<std::uint64_t>();
    const auto precision = json.at("precision").get<std::string>();
    if (precision != "f32" && precision != "f64") throw ConfigError("precision must be f32 or f64");
    config.f64 = precision == "f64";
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  config.json = std::move(json);
  if (options.out) {
    config.out_root = *options.out;
  } else if (const char* env = std::getenv("DATADIET_OUT"); env && *env) {
    config.out_root = env;
  } else {
    config.out_root = "datadiet_out";
  }
  config.train_config();
  return config;
}

namespace {

std::filesystem::path require_input(const std::string& path, const std::string& key) {
  if (path.empty()) throw CliError(kExitConfig, "dataset path " + key + " not configured");
  if (!std::filesystem::exists(path)) throw CliError(kExitConfig, "dataset file not found: " + path);
  return path;
}

SyntheticTaskSpec synthetic_from_json(const Json& j) {
  SyntheticTaskSpec s;
  s.num_classes = j.value("num_classes", s.num_classes);
  s.dim = j.value("dim", s.dim);
  s.clusters_per_class = j.value("clusters_per_class", s.clusters_per_class);
  s.cluster_std = j.value("cluster_std", s.cluster_std);
  s.class_separation = j.value("class_separation", s.class_separation);
  s.bayes_noise = j.value("bayes_noise", s.bayes_noise);
  s.train_size = j.value("train_size", s.train_size);
  s.test_size = j.value("test_size", s.test_size);
  s.seed = j.value("seed", s.seed);
  return s;
}

Dataset first_n(const Dataset& data, std::size_t n) {
  if (n == 0 || n >= data.size()) return data;
  return take_subset(data, std::vector<ExampleId>(data.ids.begin(), data.ids.begin() + static_cast<std::ptrdiff_t>(n)));
}

}  // namespace

DatasetSplit load_data(const ExperimentConfig& config) {
  const auto& d = config.json.at("data");
  const auto source = d.value("source", "synthetic");
  DatasetSplit split;
  try {
    if (source == "synthetic") {
      split = generate_synthetic(synthetic_from_json(d.at("synthetic")));
    } else if (source == "idx") {
      const auto& idx = d.at("idx");
      const auto train_images = require_input(idx.value("train_images", ""), "data.idx.train_images");
      const auto train_labels = require_input(idx.value("train_labels", ""), "data.idx.train_labels");
      const auto test_images = require_input(idx.value("test_images", ""), "data.idx.test_images");
      const auto test_labels = require_input(idx.value("test_labels", ""), "data.idx.test_labels");
      split.train = load_idx(train_images, train_labels);
      split.test = load_idx(test_images, test_labels, &split.train.normalization);
    } else if (source == "cifar") {
      std::vector<std::filesystem::path> train, test;
      const auto& cifar = d.at("cifar");
      for (const auto& p : cifar.value("train", std::vector<std::string>{})) {
        train.push_back(require_input(p, "data.cifar.train"));
      }
      for (const auto& p : cifar.value("test", std::vector<std::string>{})) {
        test.push_back(require_input(p, "data.cifar.test"));
      }
      if (train.empty()) throw CliError(kExitConfig, "no CIFAR training batches configured");
      split.train = load_cifar_binary(train);
      if (!test.empty()) split.test = load_cifar_binary(test, &split.train.normalization);
    } else if (source == "snapshot") {
      split.train = load_snapshot(require_input(d.at("snapshot").value("train", ""), "data.snapshot.train"));
      const auto test = d.at("snapshot").value("test", "");
      if (!test.empty()) split.test = load_snapshot(require_input(test, "data.snapshot.test"));
    } else {
      throw ConfigError("unknown data source '" + source + "'");
    }
  } catch (const FormatError& e) {
    throw CliError(kExitConfig, std::string("malformed dataset: ") + e.what());
  } catch (const ArtifactError& e) {
    throw CliError(kExitConfig, e.what());
  }
  const auto subsample = d.value("subsample", std::size_t{0});
  split.train = first_n(split.train, subsample);
  const double corruption = d.value("corruption", 0.0);
  if (corruption > 0) split.train = corrupt_labels(split.train, corruption, derive_seed(config.master_seed, 9, 0));
  if (split.test.empty()) {
    split.test = split.train;
  }
  return split;
}

namespace {

struct Layout {
  std::filesystem::path checkpoints, scores, results;
};

Layout make_layout(const ExperimentConfig& config) {
  const auto root = config.run_dir();
  Layout l{root / "checkpoints", root / "scores", root / "results"};
  std::filesystem::create_directories(l.checkpoints);
  std::filesystem::create_directories(l.scores);
  std::filesystem::create_directories(l.results);
  write_file_atomic(root / "config.json", config.json.dump(2) + "\n");
  return l;
}

std::string epoch_tag(int epoch) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d", epoch);
  return buf;
}

std::string fraction_tag(double f) { return format_double(f); }

RunSeeds primary_seeds(const ExperimentConfig& config) { return run_seed_list(config.master_seed, 1, 1).front(); }

ScoreTable load_score_file(const std::filesystem::path& path) {
  try {
    return load_scores(path);
  } catch (const ArtifactError& e) {
    throw CliError(kExitArtifact, e.what());
  } catch (const FormatError& e) {
    throw CliError(kExitArtifact, e.what());
  }
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint_file(const std::filesystem::path& path) {
  try {
    return load_checkpoint<Scalar>(path);
  } catch (const ArtifactError& e) {
    throw CliError(kExitArtifact, std::string("unreadable checkpoint: ") + e.what());
  } catch (const FormatError& e) {
    throw CliError(kExitArtifact, "corrupt checkpoint " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw CliError(kExitArtifact, "corrupt checkpoint " + path.string() + ": " + e.what());
  } catch (const ShapeError& e) {
    throw CliError(kExitArtifact, "corrupt checkpoint " + path.string() + ": " + e.what());
  }
}

int score_runs_count(const ExperimentConfig& config) {
  const int n = config.json.at("score").value("n_runs", 10);
  if (n < 1) throw ConfigError("score.n_runs must be >= 1");
  return n;
}

template <typename Scalar>
ScoreTable compute_scores(const ExperimentConfig& config, const ModelSpec& spec, const Dataset& train_set,
                          ScoreKind kind, int epoch, int jobs) {
  const auto seeds = run_seed_list(config.master_seed, kScoreSeedStream, score_runs_count(config));
  return score_over_runs<Scalar>(spec, train_set, config.train_config(), kind, epoch, seeds, ScoreRunOptions{jobs});
}

std::string score_file_name(ScoreKind kind, int epoch) {
  return kind == ScoreKind::forget ? "forget.csv" : to_string(kind) + "_e" + epoch_tag(epoch) + ".csv";
}

template <typename Scalar>
int cmd_gen_data(const ExperimentConfig& config, std::ostream& out) {
  const auto& d = config.json.at("data");
  if (d.value("source", "synthetic") != "synthetic") throw ConfigError("gen-data needs data.source = synthetic");
  auto split = generate_synthetic(synthetic_from_json(d.at("synthetic")));
  const auto root = config.run_dir() / "data";
  save_snapshot(root / "train.ddset", split.train);
  save_snapshot(root / "test.ddset", split.test);
  write_file_atomic(config.run_dir() / "config.json", config.json.dump(2) + "\n");
  out << "wrote " << (root / "train.ddset").string() << " (" << split.train.size() << " examples) and "
      << (root / "test.ddset").string() << " (" << split.test.size() << " examples)\n";
  return kExitOk;
}

template <typename Scalar>
int cmd_train(const ExperimentConfig& config, const CommandOptions&, std::ostream& out) {
  const auto split = load_data(config);
  const auto spec = config.model_spec(split.train);
  const auto tc = config.train_config().with_seeds(primary_seeds(config));
  const auto layout = make_layout(config);
  TrainOptions opts;
  opts.test = &split.test;
  opts.record_presentations = true;
  auto result = train<Scalar>(spec, split.train, tc, opts);
  for (auto& ckpt : result.checkpoints) {
    ckpt.config_digest = config.digest();
    save_checkpoint(layout.checkpoints / ("epoch_" + epoch_tag(ckpt.epoch) + ".ckpt"), ckpt);
  }
  const auto comment = provenance_comment(config.digest(), config.master_seed);
  write_file_atomic(layout.results / "metrics.csv", comment + metrics_csv(result.history));
  write_file_atomic(layout.results / "presentations.csv", comment + result.log.to_csv());
  const auto& last = result.history.back();
  out << "trained " << last.epoch << " epochs: train_loss=" << last.train_loss << " test_acc=" << last.test_accuracy
      << "\nartifacts in " << config.run_dir().string() << "\n";
  return kExitOk;
}

template <typename Scalar>
int cmd_score(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out) {
  const auto split = load_data(config);
  const auto& s = config.json.at("score");
  const auto kinds = s.value("kinds", std::vector<std::string>{"el2n"});
  const auto layout = make_layout(config);
  if (options.checkpoint) {
    const auto ckpt = load_checkpoint_file<Scalar>(*options.checkpoint);
    for (const auto& name : kinds) {
      const auto kind = score_kind_from_string(name);
      if (kind != ScoreKind::grand && kind != ScoreKind::el2n) continue;
      auto table = kind == ScoreKind::grand ? grand_single(ckpt.state.params, ckpt.spec, split.train)
                                            : el2n_single(ckpt.state.params, ckpt.spec, split.train);
      table.epoch = ckpt.epoch;
      table.seeds = {ckpt.seeds};
      table.dataset_digest = dataset_digest(split.train);
      const auto path = layout.scores / (name + "_ckpt_e" + epoch_tag(ckpt.epoch) + ".csv");
      save_scores(path, table, config.digest(), config.master_seed);
      out << "wrote " << path.string() << "\n";
    }
    return kExitOk;
  }
  const auto spec = config.model_spec(split.train);
  const auto epochs = s.value("epochs", std::vector<int>{0});
  for (const auto& name : kinds) {
    const auto kind = score_kind_from_string(name);
    const auto list = kind == ScoreKind::forget ? std::vector<int>{config.train_config().epochs} : epochs;
    for (int epoch : list) {
      const auto table = compute_scores<Scalar>(config, spec, split.train, kind, epoch, options.jobs);
      const auto path = layout.scores / score_file_name(kind, epoch);
      save_scores(path, table, config.digest(), config.master_seed);
      out << "wrote " << path.string() << "\n";
    }
  }
  return kExitOk;
}

template <typename Scalar>
ScoreTable scores_for_pruning(const ExperimentConfig& config, const CommandOptions& options, const ModelSpec& spec,
                              const Dataset& train_set, const Layout& layout) {
  if (!options.score_files.empty()) return load_score_file(options.score_files.front());
  const auto& p = config.json.at("prune");
  const auto kind = score_kind_from_string(p.value("score_kind", "el2n"));
  const int epoch = p.value("score_epoch", 4);
  auto table = compute_scores<Scalar>(config, spec, train_set, kind, epoch, options.jobs);
  save_scores(layout.scores / score_file_name(kind, epoch), table, config.digest(), config.master_seed);
  return table;
}

void write_results(const ExperimentConfig& config, const Layout& layout, const std::string& stem,
                   const std::vector<PruneResult>& results, std::ostream& out) {
  write_file_atomic(layout.results / (stem + ".csv"), results_csv(results, config.digest(), config.master_seed));
  write_file_atomic(layout.results / (stem + "_summary.json"),
                    results_summary(results, config.digest(), config.master_seed).dump(2) + "\n");
  for (const auto& r : results) {
    out << r.score_kind << " " << to_string(r.policy.kind) << " f=" << r.policy.fraction
        << " offset=" << r.policy.offset << " mean_acc=" << r.mean_accuracy << " [" << r.p16_accuracy << ", "
        << r.p84_accuracy << "]\n";
  }
}

int retrain_count(const ExperimentConfig& config) {
  const int n = config.json.at("prune").value("n_retrains", 4);
  if (n < 1) throw ConfigError("prune.n_retrains must be >= 1");
  return n;
}

template <typename Scalar>
int cmd_prune(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out) {
  const auto& p = config.json.at("prune");
  SelectionPolicy policy;
  policy.kind = policy_kind_from_string(p.value("policy", "keep-top"));
  policy.fraction = p.value("fraction", 0.5);
  policy.offset = p.value("offset", 0.0);
  policy.seed = derive_seed(config.master_seed, kSelectionSeedStream, 0);
  policy.validate();
  const auto split = load_data(config);
  const auto spec = config.model_spec(split.train);
  const auto layout = make_layout(config);
  const auto scores = policy.kind == PolicyKind::random ? uniform_scores(split.train)
                                                        : scores_for_pruning<Scalar>(config, options, spec, split.train, layout);
  const auto retrain_seeds = run_seed_list(config.master_seed, kRetrainSeedStream, retrain_count(config));
  const auto result = prune_and_retrain<Scalar>(spec, split.train, split.test, config.train_config(), scores, policy,
                                                retrain_seeds, RetrainOptions{options.jobs});
  write_results(config, layout, "prune", {result}, out);
  return kExitOk;
}

template <typename Scalar>
int cmd_sweep(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out) {
  const auto& p = config.json.at("prune");
  const auto fractions = p.value("fractions", std::vector<double>{0.5, 1.0});
  for (double f : fractions) SelectionPolicy{PolicyKind::keep_top, f, 0.0, 0}.validate();
  const auto split = load_data(config);
  const auto spec = config.model_spec(split.train);
  const auto layout = make_layout(config);
  std::vector<ScoreTable> sources;
  if (!options.score_files.empty()) {
    for (const auto& f : options.score_files) sources.push_back(load_score_file(f));
  } else {
    for (const auto& src : p.value("sources", Json::array())) {
      const auto kind = score_kind_from_string(src.value("kind", "el2n"));
      const int epoch = src.value("epoch", 4);
      sources.push_back(compute_scores<Scalar>(config, spec, split.train, kind, epoch, options.jobs));
      save_scores(layout.scores / score_file_name(kind, epoch), sources.back(), config.digest(), config.master_seed);
    }
  }
  const auto results = sweep_fraction<Scalar>(spec, split.train, split.test, config.train_config(), sources, fractions,
                                              retrain_count(config), config.master_seed, RetrainOptions{options.jobs});
  write_results(config, layout, "sweep", results, out);
  return kExitOk;
}

template <typename Scalar>
int cmd_window_sweep(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out) {
  const auto& p = config.json.at("prune");
  const auto offsets = p.value("offsets", std::vector<double>{0.0});
  const double fraction = p.value("window_fraction", 0.5);
  for (double offset : offsets) SelectionPolicy{PolicyKind::sliding_window, fraction, offset, 0}.validate();
  const auto corruptions = p.value("corruptions", std::vector<double>{0.0});
  const auto clean = load_data(config);
  const auto spec = config.model_spec(clean.train);
  const auto layout = make_layout(config);
  const auto kind = score_kind_from_string(p.value("score_kind", "el2n"));
  const int epoch = p.value("score_epoch", 4);
  for (double c : corruptions) {
    const Dataset noisy = c > 0 ? corrupt_labels(clean.train, c, derive_seed(config.master_seed, 9, 1)) : clean.train;
    const auto tag = "c" + fraction_tag(c);
    ScoreTable scores;
    if (!options.score_files.empty()) {
      scores = load_score_file(options.score_files.front());
    } else {
      scores = compute_scores<Scalar>(config, spec, noisy, kind, epoch, options.jobs);
      save_scores(layout.scores / (tag + "_" + score_file_name(kind, epoch)), scores, config.digest(), config.master_seed);
    }
    const auto results = sweep_window<Scalar>(spec, noisy, clean.test, config.train_config(), scores, offsets, fraction,
                                              retrain_count(config), config.master_seed, RetrainOptions{options.jobs});
    out << "corruption " << c << ":\n";
    write_results(config, layout, "window_" + tag, results, out);
  }
  return kExitOk;
}

template <typename Scalar>
int cmd_velocity(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out) {
  const auto& d = config.json.at("dynamics");
  const int epoch = d.value("velocity_epoch", 4);
  const int score_epoch = d.value("score_epoch", 4);
  const auto bucket = d.value("bucket_size", std::size_t{100});
  const auto stride = d.value("stride", std::size_t{100});
  std::optional<ScoreTable> external;
  if (!options.score_files.empty()) external = load_score_file(options.score_files.front());
  const auto split = load_data(config);
  const auto spec = config.model_spec(split.train);
  auto tc = config.train_config().with_seeds(primary_seeds(config));
  if (epoch < 0 || epoch + 1 > tc.epochs) throw ConfigError("velocity epoch must satisfy 0 <= t < epochs");
  tc.checkpoint_epochs = {epoch, epoch + 1};
  if (!external) tc.checkpoint_epochs.push_back(score_epoch);
  std::sort(tc.checkpoint_epochs.begin(), tc.checkpoint_epochs.end());
  tc.checkpoint_epochs.erase(std::unique(tc.checkpoint_epochs.begin(), tc.checkpoint_epochs.end()),
                             tc.checkpoint_epochs.end());
  const auto layout = make_layout(config);
  TrainOptions opts;
  opts.stop_epoch = tc.checkpoint_epochs.back();
  const auto run = train<Scalar>(spec, split.train, tc, opts);
  const ScoreTable scores = external ? *external : el2n_single(run.at_epoch(score_epoch).state.params, spec, split.train);
  auto starts = d.value("bucket_starts", std::vector<std::size_t>{});
  if (starts.empty()) starts = bucket_starts(split.train.size(), bucket, stride);
  const auto points = velocity_profile(run.at_epoch(epoch), run.at_epoch(epoch + 1), split.train, scores, bucket, starts);
  const auto path = layout.results / ("velocity_e" + epoch_tag(epoch) + ".csv");
  write_file_atomic(path, velocity_csv(epoch, points, config.digest(), config.master_seed));
  out << "wrote " << path.string() << " (" << points.size() << " buckets)\n";
  return kExitOk;
}

template <typename Scalar>
int cmd_barrier(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out) {
  const auto& d = config.json.at("dynamics");
  SpawnSettings settings;
  settings.spawn_epochs = d.value("spawn_epochs", std::vector<int>{0});
  settings.score_epoch = d.value("score_epoch", 4);
  settings.subset_size = d.value("subset_size", std::size_t{1000});
  settings.n_pairs = d.value("n_pairs", 3);
  settings.alpha_grid = default_alpha_grid(d.value("alpha_mid_only", false));
  settings.child_seed = derive_seed(config.master_seed, kChildSeedStream, 0);
  settings.jobs = options.jobs;
  if (!options.score_files.empty()) settings.scores = load_score_file(options.score_files.front());
  const auto split = load_data(config);
  const auto spec = config.model_spec(split.train);
  const auto tc = config.train_config().with_seeds(primary_seeds(config));
  const auto layout = make_layout(config);
  const auto curves = spawn_barriers<Scalar>(spec, split.train, tc, settings);
  write_file_atomic(layout.results / "barrier.csv", barrier_csv(curves, config.digest(), config.master_seed));
  Json summary = Json::array();
  for (const auto& c : curves) {
    summary.push_back({{"spawn_epoch", c.spawn_epoch}, {"subset_kind", c.subset_kind}, {"mean_barrier", c.mean}});
    out << "spawn " << c.spawn_epoch << " " << c.subset_kind << " mean_barrier=" << c.mean << "\n";
  }
  write_file_atomic(layout.results / "barrier_summary.json",
                    Json{{"config_digest", config.digest()}, {"master_seed", config.master_seed}, {"curves", summary}}
                            .dump(2) +
                        "\n");
  return kExitOk;
}

template <typename Scalar>
int dispatch(const std::string& command, const ExperimentConfig& config, const CommandOptions& options,
             std::ostream& out) {
  if (command == "gen-data") return cmd_gen_data<Scalar>(config, out);
  if (command == "train") return cmd_train<Scalar>(config, options, out);
  if (command == "score") return cmd_score<Scalar>(config, options, out);
  if (command == "prune") return cmd_prune<Scalar>(config, options, out);
  if (command == "sweep") return cmd_sweep<Scalar>(config, options, out);
  if (command == "window-sweep") return cmd_window_sweep<Scalar>(config, options, out);
  if (command == "velocity") return cmd_velocity<Scalar>(config, options, out);
  if (command == "barrier") return cmd_barrier<Scalar>(config, options, out);
  throw CliError(kExitConfig, "unknown command '" + command + "'");
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const CliError& e) {
    err << "error: " << e.what() << "\n";
    return e.code();
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ArtifactError& e) {
    err << "artifact error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const LookupError& e) {
    err << "data contract violation: " << e.what() << "\n";
    return kExitContract;
  } catch (const AggregationError& e) {
    err << "data contract violation: " << e.what() << "\n";
    return kExitContract;
  } catch (const UndefinedError& e) {
    err << "data contract violation: " << e.what() << "\n";
    return kExitContract;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace

int run_command(const std::string& command, const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto config = resolve_config(options);
    return config.f64 ? dispatch<double>(command, config, options, out) : dispatch<float>(command, config, options, out);
  });
}

int run_correlate(const std::filesystem::path& a, const std::filesystem::path& b, std::ostream& out,
                  std::ostream& err) {
  return guarded(err, [&] {
    const auto ta = load_score_file(a);
    const auto tb = load_score_file(b);
    const std::unordered_set<ExampleId> in_a(ta.ids.begin(), ta.ids.end()), in_b(tb.ids.begin(), tb.ids.end());
    for (auto id : ta.ids) {
      if (!in_b.count(id)) {
        throw CliError(kExitContract, "id sets differ; first id missing from " + b.string() + ": " + std::to_string(id));
      }
    }
    for (auto id : tb.ids) {
      if (!in_a.count(id)) {
        throw CliError(kExitContract, "id sets differ; first id missing from " + a.string() + ": " + std::to_string(id));
      }
    }
    const double rho = spearman(ta, tb);
    out << "spearman=" << format_double(rho) << " n=" << ta.size() << " a=" << to_string(ta.kind)
        << " b=" << to_string(tb.kind) << "\n";
    return static_cast<int>(kExitOk);
  });
}

}  // namespace datadiet
