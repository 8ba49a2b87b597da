#include "blockfed/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "blockfed/checkpoint.hpp"
#include "blockfed/errors.hpp"
#include "blockfed/rng.hpp"

namespace blockfed {

using nlohmann::json;

std::string to_string(SplitKind split) { return split == SplitKind::Iid ? "iid" : "niid"; }

ModelSpec ExperimentConfig::model_spec() const {
  return ModelSpec{task.input_dims, hidden_dim, embed_dim, fusion_dim, task.n_classes, fusion};
}

// --- config <-> json ------------------------------------------------------

json to_json(const ExperimentConfig& c) {
  json j;
  j["format_version"] = kReportFormatVersion;
  j["name"] = c.name;
  j["task"] = {{"kind", to_string(c.task.kind)},
               {"n_classes", c.task.n_classes},
               {"input_dims", c.task.input_dims},
               {"noise_scale", c.task.noise_scale},
               {"n_samples", c.task.n_samples}};
  j["model"] = {{"hidden_dim", c.hidden_dim},
                {"embed_dim", c.embed_dim},
                {"fusion_dim", c.fusion_dim},
                {"fusion", to_string(c.fusion)}};
  std::vector<std::string> modes;
  for (auto m : c.modes) modes.push_back(to_string(m));
  j["federation"] = {{"n_clients", c.n_clients},
                     {"rounds", c.rounds},
                     {"modality_config", c.modality_config.str()},
                     {"split", to_string(c.split)},
                     {"alpha", c.alpha},
                     {"iid_stratified", c.iid_stratified},
                     {"participation", c.participation},
                     {"modes", modes}};
  j["training"] = {{"local_epochs", c.hyper.epochs}, {"lr", c.hyper.lr}, {"batch_size", c.hyper.batch_size}};
  j["evaluation"] = {{"val_fraction", c.val_fraction},
                     {"interval", c.eval_interval},
                     {"final_window", c.final_window},
                     {"target", c.eval_target == EvalTarget::Server ? "server" : "client"}};
  j["seeds"] = c.seeds;
  j["output"] = {{"checkpoint_interval", c.checkpoint_interval}, {"export_data", c.export_data}};
  return j;
}

namespace {

std::string join_path(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(fmt::format("{}: expected an object", path.empty() ? "<root>" : path));
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(fmt::format("{}: unknown key", join_path(path, key)));
    }
  }
}

std::size_t as_size(const json& v, const std::string& path) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ConfigError(path + ": expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::uint64_t as_u64(const json& v, const std::string& path) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ConfigError(path + ": expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

double as_double(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path + ": expected a number");
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path + ": expected true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path + ": expected a string");
  return v.get<std::string>();
}

template <typename F>
void with(const json& obj, const std::string& path, const char* key, F&& f) {
  if (obj.contains(key)) f(obj.at(key), join_path(path, key));
}

template <typename T, typename Parse>
T parse_enum(const json& v, const std::string& path, Parse&& parse) {
  try {
    return parse(as_string(v, path));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(fmt::format("{}: {}", path, e.what()));
  }
}

}  // namespace

ExperimentConfig config_from_json(const json& j, const ExperimentConfig& base) {
  ExperimentConfig c = base;
  check_keys(j, "",
             {"format_version", "name", "task", "model", "federation", "training", "evaluation", "seeds", "output"});
  with(j, "", "format_version", [&](const json& v, const std::string& p) {
    if (as_size(v, p) != static_cast<std::size_t>(kReportFormatVersion)) {
      throw ConfigError(fmt::format("{}: unsupported version (expected {})", p, kReportFormatVersion));
    }
  });
  with(j, "", "name", [&](const json& v, const std::string& p) { c.name = as_string(v, p); });

  with(j, "", "task", [&](const json& t, const std::string& tp) {
    check_keys(t, tp, {"kind", "n_classes", "input_dims", "noise_scale", "n_samples"});
    with(t, tp, "kind", [&](const json& v, const std::string& p) {
      c.task.kind = parse_enum<TaskKind>(v, p, parse_task_kind);
    });
    with(t, tp, "n_classes", [&](const json& v, const std::string& p) { c.task.n_classes = as_size(v, p); });
    with(t, tp, "input_dims", [&](const json& v, const std::string& p) {
      if (!v.is_array()) throw ConfigError(p + ": expected an array");
      c.task.input_dims.clear();
      for (std::size_t i = 0; i < v.size(); ++i) c.task.input_dims.push_back(as_size(v[i], fmt::format("{}[{}]", p, i)));
    });
    with(t, tp, "noise_scale", [&](const json& v, const std::string& p) { c.task.noise_scale = as_double(v, p); });
    with(t, tp, "n_samples", [&](const json& v, const std::string& p) { c.task.n_samples = as_size(v, p); });
  });

  with(j, "", "model", [&](const json& m, const std::string& mp) {
    check_keys(m, mp, {"hidden_dim", "embed_dim", "fusion_dim", "fusion"});
    with(m, mp, "hidden_dim", [&](const json& v, const std::string& p) { c.hidden_dim = as_size(v, p); });
    with(m, mp, "embed_dim", [&](const json& v, const std::string& p) { c.embed_dim = as_size(v, p); });
    with(m, mp, "fusion_dim", [&](const json& v, const std::string& p) { c.fusion_dim = as_size(v, p); });
    with(m, mp, "fusion", [&](const json& v, const std::string& p) {
      c.fusion = parse_enum<FusionVariant>(v, p, parse_fusion_variant);
    });
  });

  with(j, "", "federation", [&](const json& f, const std::string& fp) {
    check_keys(f, fp,
               {"n_clients", "rounds", "modality_config", "split", "alpha", "iid_stratified", "participation", "modes"});
    with(f, fp, "n_clients", [&](const json& v, const std::string& p) { c.n_clients = as_size(v, p); });
    with(f, fp, "rounds", [&](const json& v, const std::string& p) { c.rounds = as_size(v, p); });
    with(f, fp, "modality_config", [&](const json& v, const std::string& p) {
      c.modality_config = parse_enum<ModalityConfig>(v, p, ModalityConfig::parse);
    });
    with(f, fp, "split", [&](const json& v, const std::string& p) {
      const auto s = as_string(v, p);
      if (s == "iid") {
        c.split = SplitKind::Iid;
      } else if (s == "niid") {
        c.split = SplitKind::Niid;
      } else {
        throw ConfigError(p + ": expected iid or niid");
      }
    });
    with(f, fp, "alpha", [&](const json& v, const std::string& p) { c.alpha = as_double(v, p); });
    with(f, fp, "iid_stratified", [&](const json& v, const std::string& p) { c.iid_stratified = as_bool(v, p); });
    with(f, fp, "participation", [&](const json& v, const std::string& p) { c.participation = as_double(v, p); });
    with(f, fp, "modes", [&](const json& v, const std::string& p) {
      if (!v.is_array()) throw ConfigError(p + ": expected an array");
      c.modes.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        c.modes.push_back(parse_enum<AggregationMode>(v[i], fmt::format("{}[{}]", p, i), parse_mode));
      }
    });
  });

  with(j, "", "training", [&](const json& t, const std::string& tp) {
    check_keys(t, tp, {"local_epochs", "lr", "batch_size"});
    with(t, tp, "local_epochs", [&](const json& v, const std::string& p) { c.hyper.epochs = as_size(v, p); });
    with(t, tp, "lr", [&](const json& v, const std::string& p) { c.hyper.lr = as_double(v, p); });
    with(t, tp, "batch_size", [&](const json& v, const std::string& p) { c.hyper.batch_size = as_size(v, p); });
  });

  with(j, "", "evaluation", [&](const json& e, const std::string& ep) {
    check_keys(e, ep, {"val_fraction", "interval", "final_window", "target"});
    with(e, ep, "val_fraction", [&](const json& v, const std::string& p) { c.val_fraction = as_double(v, p); });
    with(e, ep, "interval", [&](const json& v, const std::string& p) { c.eval_interval = as_size(v, p); });
    with(e, ep, "final_window", [&](const json& v, const std::string& p) { c.final_window = as_size(v, p); });
    with(e, ep, "target", [&](const json& v, const std::string& p) {
      const auto s = as_string(v, p);
      if (s == "client") {
        c.eval_target = EvalTarget::ClientLocal;
      } else if (s == "server") {
        c.eval_target = EvalTarget::Server;
      } else {
        throw ConfigError(p + ": expected client or server");
      }
    });
  });

  with(j, "", "seeds", [&](const json& v, const std::string& p) {
    if (!v.is_array()) throw ConfigError(p + ": expected an array");
    c.seeds.clear();
    for (std::size_t i = 0; i < v.size(); ++i) c.seeds.push_back(as_u64(v[i], fmt::format("{}[{}]", p, i)));
  });

  with(j, "", "output", [&](const json& o, const std::string& op) {
    check_keys(o, op, {"dir", "checkpoint_interval", "export_data"});
    with(o, op, "dir", [&](const json& v, const std::string& p) { c.output_dir = as_string(v, p); });
    with(o, op, "checkpoint_interval", [&](const json& v, const std::string& p) {
      c.checkpoint_interval = as_size(v, p);
    });
    with(o, op, "export_data", [&](const json& v, const std::string& p) { c.export_data = as_bool(v, p); });
  });

  validate(c);
  return c;
}

void validate(const ExperimentConfig& c) {
  try {
    c.task.validate();
  } catch (const SpecError& e) {
    throw ConfigError(e.what());
  }
  if (c.hidden_dim == 0) throw ConfigError("model.hidden_dim: must be positive");
  if (c.embed_dim == 0) throw ConfigError("model.embed_dim: must be positive");
  if (c.fusion_dim == 0) throw ConfigError("model.fusion_dim: must be positive");
  if (c.n_clients == 0) throw ConfigError("federation.n_clients: must be positive");
  if (c.rounds == 0) throw ConfigError("federation.rounds: must be positive");
  if (c.task.input_dims.size() != 2) {
    throw ConfigError("task.input_dims: a-b-c modality configs need exactly two modalities");
  }
  if (c.modality_config.total() != c.n_clients) {
    throw ConfigError(fmt::format("federation.modality_config: {} covers {} clients but n_clients is {}",
                                  c.modality_config.str(), c.modality_config.total(), c.n_clients));
  }
  if (!(c.alpha > 0.0) || !std::isfinite(c.alpha)) throw ConfigError("federation.alpha: must be positive");
  if (!(c.participation > 0.0 && c.participation <= 1.0)) {
    throw ConfigError("federation.participation: must be in (0, 1]");
  }
  if (c.modes.empty()) throw ConfigError("federation.modes: at least one mode is required");
  if (std::set<AggregationMode>(c.modes.begin(), c.modes.end()).size() != c.modes.size()) {
    throw ConfigError("federation.modes: duplicate mode");
  }
  if (c.hyper.epochs == 0) throw ConfigError("training.local_epochs: must be positive");
  if (c.hyper.batch_size == 0) throw ConfigError("training.batch_size: must be positive");
  if (!(c.hyper.lr >= 0.0) || !std::isfinite(c.hyper.lr)) throw ConfigError("training.lr: must be >= 0");
  if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) throw ConfigError("evaluation.val_fraction: must be in (0, 1)");
  if (c.eval_interval == 0) throw ConfigError("evaluation.interval: must be positive");
  if (c.final_window == 0) throw ConfigError("evaluation.final_window: must be positive");
  if (c.seeds.empty()) throw ConfigError("seeds: at least one seed is required");
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty path segment");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

// --- running --------------------------------------------------------------

RunSetup prepare_run(const ExperimentConfig& config, std::uint64_t seed) {
  validate(config);
  RunSetup s;
  s.data = generate(config.task, derive_seed(seed, SeedStream::Data));
  s.split = stratified_split(s.data.labels, config.val_fraction, derive_seed(seed, SeedStream::Split));
  const auto train_labels = s.data.gather_labels(s.split.train);
  const auto val_labels = s.data.gather_labels(s.split.val);

  const std::uint64_t partition_seed = derive_seed(seed, SeedStream::Partition, 0);
  PartitionPlan plan;
  if (config.split == SplitKind::Niid) {
    plan = dirichlet_partition(train_labels, config.n_clients, config.alpha, partition_seed);
  } else if (config.iid_stratified) {
    plan = stratified_iid_partition(train_labels, config.n_clients, partition_seed);
  } else {
    plan = iid_partition(train_labels.size(), config.n_clients, partition_seed);
  }
  const PartitionPlan eval_plan =
      mirror_partition(train_labels, plan, val_labels, derive_seed(seed, SeedStream::Partition, 1));

  for (std::size_t c = 0; c < config.n_clients; ++c) {
    std::vector<std::size_t> shard, eval;
    for (auto pos : plan.clients[c]) shard.push_back(s.split.train[pos]);
    for (auto pos : eval_plan.clients[c]) eval.push_back(s.split.val[pos]);
    s.train_shards.push_back(std::move(shard));
    s.eval_shards.push_back(std::move(eval));
    s.client_seeds.push_back(derive_seed(seed, SeedStream::Client, c));
  }
  s.masks = assign_modalities(config.modality_config, config.n_clients, derive_seed(seed, SeedStream::ModalityAssign));
  s.init = init_model(config.model_spec(), derive_seed(seed, SeedStream::ModelInit));
  return s;
}

namespace {

// With participation p < 1, round t trains round(p * n) clients (at least one)
// drawn by Rng(derive_seed(seed, Client, n + t)).
std::vector<std::size_t> sample_participants(const ExperimentConfig& config, std::uint64_t seed, std::size_t round) {
  if (config.participation >= 1.0) return {};
  const std::size_t n = config.n_clients;
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(config.participation * static_cast<double>(n))));
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  Rng rng(derive_seed(seed, SeedStream::Client, n + round));
  rng.shuffle(ids);
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

RunResult run_federated(const ExperimentConfig& config, const RunSetup& setup, AggregationMode mode,
                        std::uint64_t seed, const RunHooks& hooks) {
  RunResult result;
  result.mode = mode;
  result.seed = seed;
  result.clients.reserve(config.n_clients);
  for (std::size_t c = 0; c < config.n_clients; ++c) {
    result.clients.push_back(make_client(c, setup.masks[c], setup.train_shards[c], setup.eval_shards[c], mode,
                                         setup.init, setup.client_seeds[c]));
  }
  result.state = init_global_state(setup.init, mode);

  RoundOptions options;
  options.mode = mode;
  options.hyper = config.hyper;
  options.total_rounds = config.rounds;
  options.eval_target = config.eval_target;
  options.server_eval = setup.split.val;
  options.observer = hooks.observer;
  for (std::size_t t = 1; t <= config.rounds; ++t) {
    options.participants = sample_participants(config, seed, t);
    options.evaluate = t % config.eval_interval == 0 || t == config.rounds;
    const RoundResult r = run_round(result.state, result.clients, setup.init, setup.data, options);
    result.params_exchanged += r.params_exchanged;
    if (hooks.on_round) hooks.on_round(t, result.state, result.clients);
  }
  result.history = result.state.history;
  result.final_score = final_score(result.history, config.final_window);
  return result;
}

const ModeSummary* ExperimentReport::find(AggregationMode mode) const {
  for (const auto& m : modes) {
    if (m.mode == mode) return &m;
  }
  return nullptr;
}

namespace {

std::optional<GainReport> maybe_gains(const std::map<AggregationMode, double>& scores) {
  if (!scores.count(AggregationMode::FM) || !scores.count(AggregationMode::PH) || !scores.count(AggregationMode::PHF)) {
    return std::nullopt;
  }
  if (!(scores.at(AggregationMode::FM) > 0.0)) return std::nullopt;
  return gains(scores.at(AggregationMode::FM), scores.at(AggregationMode::PH), scores.at(AggregationMode::PHF));
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config, const RunHooks& hooks) {
  validate(config);
  const auto started = std::chrono::steady_clock::now();
  ExperimentReport report;
  report.config = config;

  std::vector<std::vector<RunResult>> by_mode(config.modes.size());
  for (const auto seed : config.seeds) {
    const RunSetup setup = prepare_run(config, seed);
    for (std::size_t i = 0; i < config.modes.size(); ++i) {
      by_mode[i].push_back(run_federated(config, setup, config.modes[i], seed, hooks));
    }
  }

  std::map<AggregationMode, double> means;
  for (std::size_t i = 0; i < config.modes.size(); ++i) {
    ModeSummary s;
    s.mode = config.modes[i];
    double comm = 0.0;
    for (const auto& r : by_mode[i]) {
      s.seed_scores.push_back(r.final_score);
      comm += static_cast<double>(r.params_exchanged);
    }
    const double n = static_cast<double>(s.seed_scores.size());
    for (double v : s.seed_scores) s.mean += v;
    s.mean /= n;
    if (s.seed_scores.size() > 1) {
      double ss = 0.0;
      for (double v : s.seed_scores) ss += (v - s.mean) * (v - s.mean);
      s.stddev = std::sqrt(ss / (n - 1.0));
    }
    s.params_exchanged = static_cast<std::size_t>(std::llround(comm / n));
    means[s.mode] = s.mean;
    report.modes.push_back(std::move(s));
  }
  report.gains = maybe_gains(means);

  for (std::size_t k = 0; k < config.seeds.size(); ++k) {
    std::map<AggregationMode, double> per_seed;
    for (std::size_t i = 0; i < config.modes.size(); ++i) per_seed[config.modes[i]] = by_mode[i][k].final_score;
    report.seed_gains.push_back(maybe_gains(per_seed));
  }

  // Seed-mean curves.
  for (std::size_t i = 0; i < config.modes.size(); ++i) {
    std::map<std::pair<std::string, std::size_t>, std::pair<double, std::size_t>> acc;
    for (const auto& r : by_mode[i]) {
      for (const auto& p : group_curves(r.history, to_string(config.modes[i]))) {
        auto& slot = acc[{p.group, p.round}];
        slot.first += p.score;
        slot.second += 1;
      }
    }
    for (const auto& [key, sum] : acc) {
      report.curves.push_back({key.second, key.first, to_string(config.modes[i]),
                               sum.first / static_cast<double>(sum.second)});
    }
  }

  for (auto& runs : by_mode)
    for (auto& r : runs) report.runs.push_back(std::move(r));
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

// --- report files ---------------------------------------------------------

std::filesystem::path resolve_output_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("BLOCKFED_OUTPUT_ROOT"); root && *root) return std::filesystem::path(root) / p;
  }
  return p;
}

std::vector<std::string> report_file_names() {
  return {"resolved_config.json", "report.json", "curves.csv", "gains.csv", "summary.json"};
}

namespace {

constexpr const char* kScoreRule = "macro-F1 in [0,1]; per run, the mean global score over the last {} evaluated rounds";

json gains_json(const std::optional<GainReport>& g) {
  if (!g) return nullptr;
  return {{"S_FM", g->s_fm}, {"S_PH", g->s_ph}, {"S_PHF", g->s_phf},
          {"ph_gain", g->ph_gain}, {"phf_gain", g->phf_gain}, {"pg", g->pg}};
}

json round_json(const RoundMetrics& r) {
  json clients = json::array();
  for (const auto& c : r.clients) {
    clients.push_back({{"client", c.client_id}, {"group", c.group}, {"n_eval", c.n_eval},
                       {"macro_f1", c.macro_f1}, {"accuracy", c.accuracy}});
  }
  return {{"round", r.round},
          {"global_score", r.global_score},
          {"global_accuracy", r.global_accuracy},
          {"group_scores", r.group_scores},
          {"params_exchanged", r.params_exchanged},
          {"bytes_exchanged", r.bytes_exchanged()},
          {"clients", clients}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

std::string dataset_label(const ExperimentConfig& c) { return c.name; }

std::string gains_header(const ExperimentConfig& c) {
  return fmt::format("# format_version: {}\n# score: {}, averaged over seeds; gains in percent\n", kReportFormatVersion,
                     fmt::format(kScoreRule, c.final_window));
}

std::string csv_score(const ExperimentReport& r, AggregationMode m) {
  const ModeSummary* s = r.find(m);
  return s ? format_double(s->mean) : std::string();
}

std::string gains_row(const ExperimentReport& r) {
  const auto& c = r.config;
  const auto& g = *r.gains;
  return fmt::format("{},{},{},{},{},{},{},{},{},{}\n", dataset_label(c), c.modality_config.str(), to_string(c.split),
                     to_string(c.fusion), format_double(g.s_fm), format_double(g.s_ph), format_double(g.s_phf),
                     format_double(g.ph_gain), format_double(g.phf_gain), format_double(g.pg));
}

// Table-II-shaped nesting: rows by (dataset, config), then fusion, split, mode.
json table_summary(const std::vector<const ExperimentReport*>& reports) {
  json rows = json::array();
  std::map<std::pair<std::string, std::string>, std::size_t> row_of;
  for (const auto* r : reports) {
    const auto key = std::make_pair(dataset_label(r->config), r->config.modality_config.str());
    if (!row_of.count(key)) {
      row_of[key] = rows.size();
      rows.push_back({{"dataset", key.first}, {"config", key.second}, {"cells", json::object()}});
    }
    json cell = json::object();
    for (const auto& m : r->modes) cell[to_string(m.mode)] = m.mean;
    cell["gains"] = gains_json(r->gains);
    rows[row_of[key]]["cells"][to_string(r->config.fusion)][to_string(r->config.split)] = cell;
  }
  return {{"format_version", kReportFormatVersion}, {"rows", rows}};
}

}  // namespace

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& c = report.config;

  write_text(dir / "resolved_config.json", to_json(c).dump(2) + "\n");

  json j;
  j["format_version"] = kReportFormatVersion;
  j["config"] = to_json(c);
  j["score_rule"] = fmt::format(kScoreRule, c.final_window);
  j["modes"] = json::array();
  for (const auto& m : report.modes) {
    j["modes"].push_back({{"mode", to_string(m.mode)},
                          {"seed_scores", m.seed_scores},
                          {"mean", m.mean},
                          {"stddev", m.stddev},
                          {"params_exchanged_per_run", m.params_exchanged},
                          {"bytes_exchanged_per_run", m.params_exchanged * 8}});
  }
  j["gains"] = gains_json(report.gains);
  j["seeds"] = json::array();
  for (std::size_t k = 0; k < c.seeds.size(); ++k) {
    json runs = json::array();
    for (const auto& r : report.runs) {
      if (r.seed != c.seeds[k]) continue;
      runs.push_back({{"mode", to_string(r.mode)},
                      {"final_score", r.final_score},
                      {"params_exchanged", r.params_exchanged},
                      {"last_round", r.history.empty() ? json(nullptr) : round_json(r.history.back())}});
    }
    j["seeds"].push_back({{"seed", c.seeds[k]}, {"gains", gains_json(report.seed_gains[k])}, {"runs", runs}});
  }
  write_text(dir / "report.json", j.dump(2) + "\n");

  std::string curves = fmt::format("# format_version: {}\n# score: macro-F1 in [0,1], mean over seeds\n", kReportFormatVersion);
  curves += "round,group,mode,score\n";
  for (const auto& p : report.curves) curves += fmt::format("{},{},{},{}\n", p.round, p.group, p.mode, format_double(p.score));
  write_text(dir / "curves.csv", curves);

  std::string gains_csv = gains_header(c) + "dataset,config,split,fusion,S_FM,S_PH,S_PHF,ph_gain,phf_gain,pg\n";
  if (report.gains) gains_csv += gains_row(report);
  write_text(dir / "gains.csv", gains_csv);

  write_text(dir / "summary.json", table_summary({&report}).dump(2) + "\n");

  json timing = {{"format_version", kReportFormatVersion}, {"wall_clock_seconds", report.wall_clock_seconds}};
  write_text(dir / "timing.json", timing.dump(2) + "\n");
}

ExperimentReport run_and_write(const ExperimentConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  if (config.export_data) {
    std::filesystem::create_directories(dir / "data");
    for (const auto seed : config.seeds) {
      const auto data = generate(config.task, derive_seed(seed, SeedStream::Data));
      write_dataset(dir / "data" / fmt::format("seed{}", seed), data, config.task, derive_seed(seed, SeedStream::Data));
    }
  }
  RunHooks hooks;
  if (config.checkpoint_interval > 0) {
    std::filesystem::create_directories(dir / "checkpoints");
    const ModelSpec spec = config.model_spec();
    // Modes run in config order per seed; track which one is active.
    auto mode_index = std::make_shared<std::size_t>(0);
    auto seed_index = std::make_shared<std::size_t>(0);
    hooks.on_round = [&, spec, mode_index, seed_index](std::size_t round, const GlobalState& state,
                                                       const std::vector<ClientState>&) {
      const auto mode = config.modes[*mode_index];
      const auto seed = config.seeds[*seed_index];
      if (round % config.checkpoint_interval == 0 || round == config.rounds) {
        const auto stem = fmt::format("{}_seed{}_round{:03}", to_string(mode), seed, round);
        Checkpoint ck{spec, derive_seed(seed, SeedStream::ModelInit), {}};
        for (const auto& [id, values] : state.blocks) ck.blocks.emplace_back(id, values);
        const auto bin = dir / "checkpoints" / (stem + ".bin");
        write_checkpoint(bin, ck);
        write_text(sidecar_path(bin), checkpoint_sidecar(ck).dump(2) + "\n");
        json manifest;
        manifest["format_version"] = kReportFormatVersion;
        manifest["round"] = round;
        manifest["mode"] = to_string(mode);
        manifest["seed"] = seed;
        json plan = json::object();
        for (const auto& [id, entries] : state.plans.back().blocks) plan[id.str()] = entries.size();
        manifest["plan"] = plan;
        manifest["metrics"] = state.history.empty() || state.history.back().round != round
                                  ? json(nullptr)
                                  : round_json(state.history.back());
        write_text(dir / "checkpoints" / (stem + ".manifest.json"), manifest.dump(2) + "\n");
      }
      if (round == config.rounds) {
        if (++*mode_index == config.modes.size()) {
          *mode_index = 0;
          ++*seed_index;
        }
      }
    };
  }
  ExperimentReport report = run_experiment(config, hooks);
  write_report(report, dir);
  return report;
}

// --- sweep ----------------------------------------------------------------

namespace {

std::string slugify(const std::string& s) {
  std::string out;
  for (char ch : s) out += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '-';
  return out;
}

}  // namespace

SweepResult run_sweep(const nlohmann::ordered_json& grid, const std::filesystem::path& dir) {
  if (!grid.is_object()) throw ConfigError("grid: expected an object");
  for (const auto& [key, _] : grid.items()) {
    if (key != "base" && key != "axes" && key != "format_version") throw ConfigError("grid." + key + ": unknown key");
  }
  const json base = grid.contains("base") ? json::parse(grid.at("base").dump()) : json::object();
  std::vector<std::pair<std::string, std::vector<json>>> axes;
  if (grid.contains("axes")) {
    const auto& a = grid.at("axes");
    if (!a.is_object()) throw ConfigError("grid.axes: expected an object");
    for (const auto& [key, values] : a.items()) {
      if (!values.is_array()) throw ConfigError("grid.axes." + key + ": expected an array");
      std::vector<json> vs;
      for (const auto& v : values) vs.push_back(json::parse(v.dump()));
      axes.emplace_back(key, std::move(vs));
    }
  }

  SweepResult result;
  std::size_t n_cells = axes.empty() ? 0 : 1;
  for (const auto& [_, vs] : axes) n_cells *= vs.size();

  std::filesystem::create_directories(dir);
  std::vector<std::size_t> odometer(axes.size(), 0);
  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    SweepCell sc;
    sc.index = cell;
    json cfg = base;
    std::string slug;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const json& v = axes[a].second[odometer[a]];
      apply_override(cfg, axes[a].first + "=" + v.dump());
      slug += (slug.empty() ? "" : "_") + slugify(v.is_string() ? v.get<std::string>() : v.dump());
    }
    sc.slug = fmt::format("{:03}_{}", cell, slug);
    try {
      sc.config = config_from_json(cfg);
      sc.report = run_and_write(sc.config, dir / "cells" / sc.slug);
    } catch (const std::exception& e) {
      sc.error = e.what();
    }
    result.cells.push_back(std::move(sc));
    for (std::size_t a = axes.size(); a-- > 0;) {
      if (++odometer[a] < axes[a].second.size()) break;
      odometer[a] = 0;
    }
  }

  std::string csv = gains_header(result.cells.empty() ? ExperimentConfig{} : result.cells.front().config);
  csv += "dataset,config,split,fusion,FM,PH,PHF,ph_gain,phf_gain,pg,status\n";
  std::vector<const ExperimentReport*> ok;
  for (const auto& sc : result.cells) {
    if (!sc.report) {
      std::string msg = sc.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      csv += fmt::format(",,,,,,,,,,error: {}\n", msg);
      continue;
    }
    const auto& r = *sc.report;
    const auto& c = r.config;
    csv += fmt::format("{},{},{},{},{},{},{},", dataset_label(c), c.modality_config.str(), to_string(c.split),
                       to_string(c.fusion), csv_score(r, AggregationMode::FM), csv_score(r, AggregationMode::PH),
                       csv_score(r, AggregationMode::PHF));
    if (r.gains) {
      csv += fmt::format("{},{},{},ok\n", format_double(r.gains->ph_gain), format_double(r.gains->phf_gain),
                         format_double(r.gains->pg));
    } else {
      csv += ",,,ok\n";
    }
    ok.push_back(&r);
  }
  write_text(dir / "summary.csv", csv);
  write_text(dir / "summary.json", table_summary(ok).dump(2) + "\n");
  return result;
}

SweepResult run_sweep_file(const std::filesystem::path& grid_path, const std::filesystem::path& dir) {
  std::ifstream in(grid_path);
  if (!in) throw ConfigError("cannot read grid file " + grid_path.string());
  nlohmann::ordered_json grid;
  try {
    grid = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::ordered_json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", grid_path.string(), e.what()));
  }
  return run_sweep(grid, dir);
}

}  // namespace blockfed
