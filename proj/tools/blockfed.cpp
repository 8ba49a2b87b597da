// blockfed: run, sweep, replay and inspect block-wise federated experiments.
//
// Exit codes: 0 success, 1 bad configuration or usage, 2 runtime failure
// (including a replay whose outputs differ).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "blockfed/checkpoint.hpp"
#include "blockfed/errors.hpp"
#include "blockfed/experiment.hpp"

namespace fs = std::filesystem;
using namespace blockfed;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void print_report(const ExperimentReport& r, const fs::path& dir) {
  for (const auto& m : r.modes) {
    fmt::print("{:<4} macro-F1 {:.4f} (sd {:.4f}, {} seeds), {} params/run\n", to_string(m.mode), m.mean, m.stddev,
               m.seed_scores.size(), m.params_exchanged);
  }
  if (r.gains) {
    fmt::print("gains: PH {:+.2f}%  PHF {:+.2f}%  PG {:+.2f}%\n", r.gains->ph_gain, r.gains->phf_gain, r.gains->pg);
  }
  fmt::print("wrote {}\n", dir.string());
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& sets, const std::string& out) {
  ExperimentConfig config = load_config(config_path, sets);
  const fs::path dir = resolve_output_dir(out.empty() ? config.output_dir : out);
  print_report(run_and_write(config, dir), dir);
  return 0;
}

int cmd_sweep(const std::string& grid_path, const std::string& out) {
  const fs::path dir = resolve_output_dir(out.empty() ? "runs/sweep" : out);
  const SweepResult r = run_sweep_file(grid_path, dir);
  std::size_t failed = 0;
  for (const auto& c : r.cells) {
    if (c.report) {
      fmt::print("[ok]    {}\n", c.slug);
    } else {
      ++failed;
      fmt::print("[error] {}: {}\n", c.slug, c.error);
    }
  }
  fmt::print("{} cells, {} failed; summary in {}\n", r.cells.size(), failed, (dir / "summary.csv").string());
  return failed == 0 ? 0 : 2;
}

int cmd_replay(const std::string& report_dir) {
  const fs::path src(report_dir);
  ExperimentConfig config = load_config(src / "resolved_config.json");
  const fs::path tmp = fs::temp_directory_path() / fmt::format("blockfed-replay-{}", ::getpid());
  fs::remove_all(tmp);
  run_and_write(config, tmp);
  int differ = 0;
  for (const auto& name : report_file_names()) {
    const bool same = fs::exists(src / name) && slurp(src / name) == slurp(tmp / name);
    fmt::print("{:<22} {}\n", name, same ? "identical" : "DIFFERS");
    differ += same ? 0 : 1;
  }
  fs::remove_all(tmp);
  return differ == 0 ? 0 : 2;
}

int cmd_inspect(const std::string& path) {
  const Checkpoint ck = read_checkpoint(path);
  const auto& s = ck.spec;
  fmt::print("format version {}\n", kCheckpointFormatVersion);
  fmt::print("modalities {}  input dims [{}]\n", s.n_modalities(), fmt::join(s.input_dims, ", "));
  fmt::print("hidden {}  embed {}  fusion {} ({})  classes {}\n", s.hidden_dim, s.embed_dim, s.fusion_dim,
             to_string(s.fusion), s.n_classes);
  fmt::print("init seed {}\n", ck.seed);
  for (const auto& [id, values] : ck.blocks) fmt::print("  {:<10} {} params\n", id.str(), values.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-wise federated learning with missing modalities"};
  app.require_subcommand(1);

  std::string config_path, out, grid_path, report_dir, ckpt;
  std::vector<std::string> sets;

  auto* run = app.add_subcommand("run", "Run one experiment config");
  run->add_option("config", config_path, "JSON config file")->required();
  run->add_option("--set", sets, "Override a config field, e.g. training.lr=0.1");
  run->add_option("--out", out, "Output directory (default: output.dir)");

  auto* sweep = app.add_subcommand("sweep", "Run every cell of a grid file");
  sweep->add_option("grid", grid_path, "JSON grid file")->required();
  sweep->add_option("--out", out, "Output directory (default: runs/sweep)");

  auto* replay = app.add_subcommand("replay", "Re-run a report directory and compare outputs byte for byte");
  replay->add_option("report_dir", report_dir)->required();

  auto* inspect = app.add_subcommand("inspect", "Describe a checkpoint file");
  inspect->add_option("checkpoint", ckpt)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*run) return cmd_run(config_path, sets, out);
    if (*sweep) return cmd_sweep(grid_path, out);
    if (*replay) return cmd_replay(report_dir);
    if (*inspect) return cmd_inspect(ckpt);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 1;
}
