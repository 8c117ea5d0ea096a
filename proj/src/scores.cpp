#include "datadiet/scores.hpp"

#include "datadiet/errors.hpp"
#include "datadiet/io.hpp"
#include "datadiet/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace datadiet {

std::string to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::grand:
      return "grand";
    case ScoreKind::el2n:
      return "el2n";
    case ScoreKind::forget:
      return "forget";
    case ScoreKind::external:
      return "external";
  }
  return "unknown";
}

ScoreKind score_kind_from_string(const std::string& name) {
  if (name == "grand") return ScoreKind::grand;
  if (name == "el2n") return ScoreKind::el2n;
  if (name == "forget") return ScoreKind::forget;
  if (name == "external") return ScoreKind::external;
  throw ConfigError("unknown score kind '" + name + "'");
}

bool ScoreTable::has_sentinel() const {
  return std::find(never_learned.begin(), never_learned.end(), std::uint8_t{1}) != never_learned.end();
}

std::vector<double> ScoreTable::aligned_to(const std::vector<ExampleId>& order) const {
  std::unordered_map<ExampleId, double> lookup;
  lookup.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) lookup.emplace(ids[i], values[i]);
  std::vector<double> out;
  out.reserve(order.size());
  for (auto id : order) {
    auto it = lookup.find(id);
    if (it == lookup.end()) throw LookupError("score table has no entry for example id " + std::to_string(id));
    out.push_back(it->second);
  }
  return out;
}

void ScoreTable::validate() const {
  if (values.size() != ids.size()) throw ShapeError("score table ids and values differ in length");
  if (!never_learned.empty() && never_learned.size() != ids.size()) {
    throw ShapeError("never-learned mask length mismatch");
  }
  if (kind == ScoreKind::grand || kind == ScoreKind::el2n) {
    for (double v : values) {
      if (!std::isfinite(v) || v < 0) throw AggregationError("grand/el2n scores must be finite and >= 0");
    }
  }
}

template <typename Scalar>
ScoreTable grand_single(const ParamVector<Scalar>& params, const ModelSpec& spec, const Dataset& data) {
  ScoreTable table;
  table.kind = ScoreKind::grand;
  table.ids = data.ids;
  table.values.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const VectorX<Scalar> x = data.inputs.col(static_cast<Index>(i)).template cast<Scalar>();
    table.values[i] = static_cast<double>(example_gradient(params, spec, x, data.labels[i]).norm());
  }
  return table;
}

template <typename Scalar>
ScoreTable el2n_single(const ParamVector<Scalar>& params, const ModelSpec& spec, const Dataset& data) {
  ScoreTable table;
  table.kind = ScoreKind::el2n;
  table.ids = data.ids;
  table.values.resize(data.size());
  constexpr std::size_t chunk = 1024;
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const auto stop = std::min(start + chunk, data.size());
    indices.resize(stop - start);
    std::iota(indices.begin(), indices.end(), start);
    const MatrixX<Scalar> logits = forward_batch(params, spec, gather_inputs<Scalar>(data, indices));
    for (std::size_t j = 0; j < indices.size(); ++j) {
      VectorX<Scalar> error = softmax(logits.col(static_cast<Index>(j)));
      error(data.labels[start + j]) -= Scalar(1);
      table.values[start + j] = static_cast<double>(error.norm());
    }
  }
  return table;
}

namespace {

void check_compatible(const std::vector<ScoreTable>& tables) {
  if (tables.empty()) throw AggregationError("no score tables to average");
  const auto& first = tables.front();
  for (const auto& t : tables) {
    t.validate();
    if (t.kind != first.kind) throw AggregationError("cannot average score tables of different kinds");
    if (t.epoch != first.epoch) throw AggregationError("cannot average score tables from different epochs");
    if (t.ids != first.ids) throw AggregationError("score tables cover different example ids");
    if (!t.dataset_digest.empty() && !first.dataset_digest.empty() && t.dataset_digest != first.dataset_digest) {
      throw AggregationError("score tables were computed on different datasets");
    }
  }
}

}  // namespace

ScoreTable average_scores(const std::vector<ScoreTable>& tables) {
  check_compatible(tables);
  for (const auto& t : tables) {
    if (t.kind == ScoreKind::forget && t.has_sentinel()) {
      throw AggregationError("forget tables with never-learned entries cannot be averaged pointwise");
    }
  }
  ScoreTable out = tables.front();
  out.seeds.clear();
  std::fill(out.values.begin(), out.values.end(), 0.0);
  for (const auto& t : tables) {
    for (std::size_t i = 0; i < t.values.size(); ++i) out.values[i] += t.values[i];
    out.seeds.insert(out.seeds.end(), t.seeds.begin(), t.seeds.end());
  }
  for (auto& v : out.values) v /= static_cast<double>(tables.size());
  return out;
}

ScoreTable average_forgetting(const std::vector<ScoreTable>& tables) {
  check_compatible(tables);
  ScoreTable out = tables.front();
  out.seeds.clear();
  const auto n = out.ids.size();
  out.never_learned.assign(n, 0);
  std::vector<double> sums(n, 0.0);
  for (const auto& t : tables) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!t.never_learned.empty() && t.never_learned[i]) {
        out.never_learned[i] = 1;
      } else {
        sums[i] += t.values[i];
      }
    }
    out.seeds.insert(out.seeds.end(), t.seeds.begin(), t.seeds.end());
  }
  double max_finite = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!out.never_learned[i]) {
      out.values[i] = sums[i] / static_cast<double>(tables.size());
      max_finite = std::max(max_finite, out.values[i]);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (out.never_learned[i]) out.values[i] = max_finite + 1.0;
  }
  return out;
}

ScoreTable forgetting_scores(const PresentationLog& log, int total_epochs) {
  if (log.entries.size() != log.ids.size()) throw AggregationError("presentation log is malformed");
  ScoreTable table;
  table.kind = ScoreKind::forget;
  table.epoch = total_epochs;
  table.ids = log.ids;
  table.values.assign(log.ids.size(), 0.0);
  table.never_learned.assign(log.ids.size(), 0);
  double max_finite = 0;
  for (std::size_t i = 0; i < log.ids.size(); ++i) {
    const auto& entries = log.entries[i];
    std::vector<std::uint8_t> covered(static_cast<std::size_t>(std::max(total_epochs, 0)), 0);
    for (const auto& p : entries) {
      const auto epoch = p.step / std::max<std::int64_t>(log.steps_per_epoch, 1);
      if (epoch >= 0 && epoch < total_epochs) covered[static_cast<std::size_t>(epoch)] = 1;
    }
    if (std::find(covered.begin(), covered.end(), std::uint8_t{0}) != covered.end()) {
      throw AggregationError("presentation log incomplete for example id " + std::to_string(log.ids[i]));
    }
    int events = 0;
    bool ever_correct = false;
    for (std::size_t k = 0; k < entries.size(); ++k) {
      ever_correct = ever_correct || entries[k].correct;
      if (k > 0 && entries[k - 1].correct && !entries[k].correct) ++events;
    }
    if (ever_correct) {
      table.values[i] = events;
      max_finite = std::max(max_finite, static_cast<double>(events));
    } else {
      table.never_learned[i] = 1;
    }
  }
  for (std::size_t i = 0; i < table.ids.size(); ++i) {
    if (table.never_learned[i]) table.values[i] = max_finite + 1.0;
  }
  return table;
}

std::vector<double> mid_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw AggregationError("rank correlation needs equally long inputs");
  if (a.size() < 3) throw AggregationError("rank correlation needs at least 3 entries");
  const auto ra = mid_ranks(a), rb = mid_ranks(b);
  const Eigen::Map<const VectorX<double>> x(ra.data(), static_cast<Index>(ra.size()));
  const Eigen::Map<const VectorX<double>> y(rb.data(), static_cast<Index>(rb.size()));
  const VectorX<double> dx = x.array() - x.mean();
  const VectorX<double> dy = y.array() - y.mean();
  const double sxx = dx.squaredNorm(), syy = dy.squaredNorm();
  if (sxx == 0 || syy == 0) throw UndefinedError("rank correlation undefined for a constant score table");
  return std::clamp(dx.dot(dy) / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(const ScoreTable& a, const ScoreTable& b) {
  if (a.ids.size() != b.ids.size()) throw LookupError("score tables cover different numbers of examples");
  return spearman(a.values, b.aligned_to(a.ids));
}

std::vector<RunSeeds> run_seed_list(std::uint64_t master_seed, std::uint64_t stream, int n_runs) {
  std::vector<RunSeeds> seeds;
  for (int r = 0; r < n_runs; ++r) {
    seeds.push_back(RunSeeds{derive_seed(master_seed, stream * 2, static_cast<std::uint64_t>(r)),
                             derive_seed(master_seed, stream * 2 + 1, static_cast<std::uint64_t>(r))});
  }
  return seeds;
}

template <typename Scalar>
std::vector<ScoreTable> score_runs(const ModelSpec& spec, const Dataset& data, const TrainConfig& config,
                                   ScoreKind kind, int epoch, const std::vector<RunSeeds>& seeds,
                                   const ScoreRunOptions& options) {
  if (seeds.empty()) throw ConfigError("score_over_runs needs at least one run");
  if (kind == ScoreKind::external) throw ConfigError("external scores cannot be computed");
  if (kind != ScoreKind::forget && (epoch < 0 || epoch > config.epochs)) {
    throw ConfigError("score epoch outside [0, epochs]");
  }
  const auto digest = dataset_digest(data);
  std::vector<ScoreTable> tables(seeds.size());
  parallel_for(seeds.size(), options.jobs, [&](std::size_t r) {
    TrainConfig run_config = config.with_seeds(seeds[r]);
    ScoreTable table;
    if (kind == ScoreKind::forget) {
      run_config.checkpoint_epochs.clear();
      TrainOptions opts;
      opts.record_presentations = true;
      const auto result = train<Scalar>(spec, data, run_config, opts);
      table = forgetting_scores(result.log, run_config.epochs);
    } else {
      const auto params = [&] {
        if (epoch == 0) return init_params<Scalar>(spec, run_config.init_seed);
        run_config.checkpoint_epochs = {epoch};
        TrainOptions opts;
        opts.stop_epoch = epoch;
        return train<Scalar>(spec, data, run_config, opts).at_epoch(epoch).state.params;
      }();
      table = kind == ScoreKind::grand ? grand_single(params, spec, data) : el2n_single(params, spec, data);
      table.epoch = epoch;
    }
    table.seeds = {seeds[r]};
    table.dataset_digest = digest;
    tables[r] = std::move(table);
  });
  return tables;
}

template <typename Scalar>
ScoreTable score_over_runs(const ModelSpec& spec, const Dataset& data, const TrainConfig& config, ScoreKind kind,
                           int epoch, const std::vector<RunSeeds>& seeds, const ScoreRunOptions& options) {
  auto tables = score_runs<Scalar>(spec, data, config, kind, epoch, seeds, options);
  return kind == ScoreKind::forget ? average_forgetting(tables) : average_scores(tables);
}

std::string scores_csv(const ScoreTable& table, const std::string& config_digest, std::uint64_t master_seed) {
  std::ostringstream out;
  out << provenance_comment(config_digest, master_seed);
  out << "example_id,score\n";
  for (std::size_t i = 0; i < table.ids.size(); ++i) out << table.ids[i] << ',' << format_double(table.values[i]) << '\n';
  return out.str();
}

void save_scores(const std::filesystem::path& csv_path, const ScoreTable& table, const std::string& config_digest,
                 std::uint64_t master_seed) {
  Json seeds = Json::array();
  for (const auto& s : table.seeds) seeds.push_back({s.init, s.data});
  std::vector<ExampleId> never;
  for (std::size_t i = 0; i < table.never_learned.size(); ++i) {
    if (table.never_learned[i]) never.push_back(table.ids[i]);
  }
  Json sidecar = {{"kind", to_string(table.kind)},
                  {"epoch", table.epoch},
                  {"seeds", seeds},
                  {"dataset_digest", table.dataset_digest},
                  {"config_digest", config_digest},
                  {"master_seed", master_seed},
                  {"never_learned", never}};
  write_file_atomic(csv_path, scores_csv(table, config_digest, master_seed));
  auto sidecar_path = csv_path;
  sidecar_path += ".json";
  write_file_atomic(sidecar_path, sidecar.dump(2) + "\n");
}

ScoreTable load_scores(const std::filesystem::path& csv_path) {
  if (!std::filesystem::exists(csv_path)) throw ArtifactError("score file not found: " + csv_path.string());
  ScoreTable table;
  table.kind = ScoreKind::external;
  const auto rows = read_csv(csv_path);
  bool first = true;
  for (const auto& row : rows) {
    if (first && !row.empty() && row[0] == "example_id") {
      first = false;
      continue;
    }
    first = false;
    if (row.size() < 2) throw FormatError("score row needs example_id,score in " + csv_path.string(), 0);
    try {
      table.ids.push_back(std::stoll(row[0]));
      table.values.push_back(std::stod(row[1]));
    } catch (const std::exception&) {
      throw FormatError("unparsable score row '" + row[0] + "," + row[1] + "' in " + csv_path.string(), 0);
    }
  }
  auto sidecar_path = csv_path;
  sidecar_path += ".json";
  if (std::filesystem::exists(sidecar_path)) {
    try {
      const Json sidecar = Json::parse(read_file(sidecar_path));
      table.kind = score_kind_from_string(sidecar.value("kind", "external"));
      table.epoch = sidecar.value("epoch", 0);
      table.dataset_digest = sidecar.value("dataset_digest", "");
      for (const auto& s : sidecar.value("seeds", Json::array())) {
        table.seeds.push_back(RunSeeds{s.at(0).get<std::uint64_t>(), s.at(1).get<std::uint64_t>()});
      }
      const auto never = sidecar.value("never_learned", std::vector<ExampleId>{});
      if (!never.empty()) {
        table.never_learned.assign(table.ids.size(), 0);
        for (auto id : never) {
          auto it = std::find(table.ids.begin(), table.ids.end(), id);
          if (it != table.ids.end()) table.never_learned[static_cast<std::size_t>(it - table.ids.begin())] = 1;
        }
      }
    } catch (const Json::exception& e) {
      throw FormatError(std::string("score sidecar: ") + e.what(), 0);
    }
  }
  return table;
}

#define DATADIET_INSTANTIATE(S)                                                                                \
  template ScoreTable grand_single<S>(const ParamVector<S>&, const ModelSpec&, const Dataset&);               \
  template ScoreTable el2n_single<S>(const ParamVector<S>&, const ModelSpec&, const Dataset&);                \
  template std::vector<ScoreTable> score_runs<S>(const ModelSpec&, const Dataset&, const TrainConfig&,        \
                                                 ScoreKind, int, const std::vector<RunSeeds>&,                \
                                                 const ScoreRunOptions&);                                     \
  template ScoreTable score_over_runs<S>(const ModelSpec&, const Dataset&, const TrainConfig&, ScoreKind, int, \
                                         const std::vector<RunSeeds>&, const ScoreRunOptions&);

DATADIET_INSTANTIATE(float)
DATADIET_INSTANTIATE(double)
#undef DATADIET_INSTANTIATE

}  // namespace datadiet
