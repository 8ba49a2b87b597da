#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blockfed/client.hpp"
#include "blockfed/data.hpp"
#include "blockfed/metrics.hpp"
#include "blockfed/model.hpp"
#include "blockfed/server.hpp"

namespace blockfed {

inline constexpr int kReportFormatVersion = 1;

enum class SplitKind { Iid, Niid };

std::string to_string(SplitKind split);

// Every knob of a federated experiment. The JSON form (see to_json) is the
// on-disk config schema; unknown keys are rejected.
struct ExperimentConfig {
  std::string name = "synthetic";
  SynthTask task;

  std::size_t hidden_dim = 16;
  std::size_t embed_dim = 8;
  std::size_t fusion_dim = 16;
  FusionVariant fusion = FusionVariant::Concat;

  std::size_t n_clients = 10;
  std::size_t rounds = 60;
  ModalityConfig modality_config{0, 0, 10};
  SplitKind split = SplitKind::Niid;
  double alpha = 0.5;
  bool iid_stratified = false;
  double participation = 1.0;
  std::vector<AggregationMode> modes = {AggregationMode::FM, AggregationMode::PH, AggregationMode::PHF};

  TrainHyper hyper;

  double val_fraction = 0.2;
  std::size_t eval_interval = 1;
  std::size_t final_window = 5;
  EvalTarget eval_target = EvalTarget::ClientLocal;

  std::vector<std::uint64_t> seeds = {1, 2, 3};

  std::string output_dir = "runs/default";
  std::size_t checkpoint_interval = 0;  // 0 disables round checkpoints
  bool export_data = false;

  ModelSpec model_spec() const;
};

// Full config, every default spelled out. The output directory is left out:
// it does not influence results and would make replays differ.
nlohmann::json to_json(const ExperimentConfig& config);
// Missing keys keep the values of `base`. Errors name the offending field path.
ExperimentConfig config_from_json(const nlohmann::json& j, const ExperimentConfig& base = {});
// Cross-field checks; throws ConfigError naming the field.
void validate(const ExperimentConfig& config);
// Applies "a.b.c=value" to a JSON config; value is parsed as JSON when
// possible, otherwise taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Everything about a seed that is shared by all modes.
struct RunSetup {
  Dataset data;
  TrainValSplit split;
  std::vector<ModalityMask> masks;
  std::vector<std::vector<std::size_t>> train_shards;  // dataset indices per client
  std::vector<std::vector<std::size_t>> eval_shards;
  BlockedModel init;
  std::vector<std::uint64_t> client_seeds;
};

// Sub-seeds: data, split, partition, modality assignment, model init and each
// client draw from derive_seed(seed, stream, index) with their own stream.
RunSetup prepare_run(const ExperimentConfig& config, std::uint64_t seed);

struct RunHooks {
  StepObserver observer;
  // After every round, once aggregation and evaluation are done.
  std::function<void(std::size_t round, const GlobalState&, const std::vector<ClientState>&)> on_round;
};

struct RunResult {
  AggregationMode mode = AggregationMode::FM;
  std::uint64_t seed = 0;
  std::vector<RoundMetrics> history;
  double final_score = 0.0;
  std::size_t params_exchanged = 0;
  GlobalState state;
  std::vector<ClientState> clients;
};

RunResult run_federated(const ExperimentConfig& config, const RunSetup& setup, AggregationMode mode,
                        std::uint64_t seed, const RunHooks& hooks = {});

struct ModeSummary {
  AggregationMode mode = AggregationMode::FM;
  std::vector<double> seed_scores;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t params_exchanged = 0;  // per run, averaged over seeds
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<RunResult> runs;
  std::vector<ModeSummary> modes;
  std::optional<GainReport> gains;              // from the seed-mean scores
  std::vector<std::optional<GainReport>> seed_gains;
  std::vector<CurvePoint> curves;               // seed-mean per (mode, group, round)
  double wall_clock_seconds = 0.0;

  const ModeSummary* find(AggregationMode mode) const;
};

// Runs every (mode, seed) pair. Pure computation; no files are written.
ExperimentReport run_experiment(const ExperimentConfig& config, const RunHooks& hooks = {});

// Resolves a relative output directory against $BLOCKFED_OUTPUT_ROOT when set.
std::filesystem::path resolve_output_dir(const std::string& dir);

// Deterministic report files plus timing.json (wall clock; not deterministic).
std::vector<std::string> report_file_names();
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

// run_experiment + write_report, with round checkpoints when configured.
ExperimentReport run_and_write(const ExperimentConfig& config, const std::filesystem::path& dir);

struct SweepCell {
  std::size_t index = 0;
  std::string slug;
  ExperimentConfig config;
  std::optional<ExperimentReport> report;
  std::string error;
};

struct SweepResult {
  std::vector<SweepCell> cells;
};

// Grid file: {"base": {config}, "axes": {"federation.modality_config": [...], ...}}.
// Cells are the cartesian product of the axes in file order; no axes (or an
// empty axis) means no cells. A failing cell is recorded and the sweep goes on.
SweepResult run_sweep(const nlohmann::ordered_json& grid, const std::filesystem::path& dir);
SweepResult run_sweep_file(const std::filesystem::path& grid_path, const std::filesystem::path& dir);

}  // namespace blockfed
