#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "blockfed/model.hpp"
#include "blockfed/tensor.hpp"

namespace blockfed {

enum class TaskKind { Redundant, Complementary };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& text);

// Synthetic two-view classification task.
//
// Redundant: label y uniform; every modality sees prototype(y) + noise, so any
// single modality determines the label.
// Complementary: latent z1, z2 uniform over classes, label (z1 + z2) mod K;
// modality i sees prototype(z_i) + noise. z_i is independent of the label, so
// a single modality is at chance. Requires exactly two modalities.
//
// prototype(z) is the one-hot vector e_z in the first K input coordinates;
// noise is N(0, noise_scale^2) on every coordinate.
struct SynthTask {
  TaskKind kind = TaskKind::Complementary;
  std::size_t n_classes = 4;
  std::vector<std::size_t> input_dims = {8, 8};
  double noise_scale = 0.3;
  std::size_t n_samples = 3000;

  void validate() const;
};

struct Dataset {
  std::vector<Tensor> features;  // per modality, [n_samples x input_dim]
  std::vector<int> labels;
  std::size_t n_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t n_modalities() const { return features.size(); }
  // Rows `indices` of every modality present in `mask`.
  ModalityInputs gather(std::span<const std::size_t> indices, const ModalityMask& mask) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
};

Dataset generate(const SynthTask& task, std::uint64_t seed);

struct TrainValSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

// Per class: shuffle, then round(n_k * val_fraction) go to validation.
TrainValSplit stratified_split(std::span<const int> labels, double val_fraction, std::uint64_t seed);

// Positions into the label list handed to the partitioner, one list per
// client, each sorted ascending.
struct PartitionPlan {
  std::vector<std::vector<std::size_t>> clients;

  std::size_t n_clients() const { return clients.size(); }
  std::vector<std::size_t> counts() const;
};

inline constexpr int kDirichletMaxAttempts = 100;

// Dirichlet label partitioning. Attempt r (0-based) uses Rng(derive_seed(seed, r)).
// Classes are visited in ascending order; for class k the positions holding k
// are shuffled, a proportion vector p ~ Dir(alpha * 1) is drawn and client c
// receives the slice [floor(n_k * P_{c-1}), floor(n_k * P_c)) with P the
// cumulative sum of p (the last client takes the remainder). An attempt that
// leaves any client empty is rejected; after kDirichletMaxAttempts the call
// throws DataError.
PartitionPlan dirichlet_partition(std::span<const int> labels, std::size_t n_clients, double alpha,
                                  std::uint64_t seed);

// Uniform random split: shuffle all positions, deal contiguous near-equal chunks.
PartitionPlan iid_partition(std::size_t n_items, std::size_t n_clients, std::uint64_t seed);

// Per class: shuffle, then deal round-robin; the dealing position carries over
// from one class to the next so client sizes differ by at most one.
PartitionPlan stratified_iid_partition(std::span<const int> labels, std::size_t n_clients, std::uint64_t seed);

// Splits `target_labels` so that each client receives, per class, the share of
// that class it holds in `reference` (shares taken over `reference_labels`).
// Used to give every client a validation shard mirroring its training labels.
PartitionPlan mirror_partition(std::span<const int> reference_labels, const PartitionPlan& reference,
                               std::span<const int> target_labels, std::uint64_t seed);

// a-b-c client counts: modality-1 only, modality-2 only, both.
struct ModalityConfig {
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t c = 0;

  std::size_t total() const { return a + b + c; }
  // Fraction of (client, modality) pairs that are absent: (a + b) / (2 (a + b + c)).
  double missing_rate() const;
  std::string str() const;  // "3-3-4"
  // Accepts "3-3-4" (ASCII hyphen, en dash or em dash separators).
  static ModalityConfig parse(const std::string& text);

  friend bool operator==(const ModalityConfig&, const ModalityConfig&) = default;
};

// Exactly a clients get {m0}, b get {m1}, c get {m0, m1}, in an order shuffled
// by `seed`. Throws ConfigError when a + b + c != n_clients.
std::vector<ModalityMask> assign_modalities(const ModalityConfig& config, std::size_t n_clients, std::uint64_t seed);

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

// <stem>.bin: magic "BFDATA\0\0", u32 version, u64 n, u32 n_modalities,
// u32 dims..., then per modality f64[n x dim] row-major, then i32[n] labels
// (all little-endian). <stem>.json: manifest with dims, counts, seed, kind.
void write_dataset(const std::filesystem::path& stem, const Dataset& data, const SynthTask& task,
                   std::uint64_t seed);
Dataset read_dataset(const std::filesystem::path& stem);

}  // namespace blockfed
