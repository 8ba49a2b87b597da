#include "blockfed/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "blockfed/errors.hpp"
#include "blockfed/rng.hpp"

namespace blockfed {

std::string to_string(TaskKind kind) { return kind == TaskKind::Redundant ? "redundant" : "complementary"; }

TaskKind parse_task_kind(const std::string& text) {
  if (text == "redundant") return TaskKind::Redundant;
  if (text == "complementary") return TaskKind::Complementary;
  throw SpecError("unknown task kind '" + text + "' (expected redundant or complementary)");
}

void SynthTask::validate() const {
  if (n_classes < 2) throw SpecError("task: n_classes must be at least 2");
  if (input_dims.empty()) throw SpecError("task: at least one modality is required");
  if (kind == TaskKind::Complementary && input_dims.size() != 2) {
    throw SpecError("task: the complementary task needs exactly two modalities");
  }
  for (std::size_t m = 0; m < input_dims.size(); ++m) {
    if (input_dims[m] < n_classes) {
      throw SpecError(fmt::format("task: input_dims[{}] = {} cannot hold a one-hot prototype of {} classes", m,
                                  input_dims[m], n_classes));
    }
  }
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) throw SpecError("task: noise_scale must be >= 0");
  if (n_samples < n_classes) throw SpecError("task: n_samples must be at least n_classes");
}

ModalityInputs Dataset::gather(std::span<const std::size_t> indices, const ModalityMask& mask) const {
  ModalityInputs out(n_modalities());
  for (std::size_t m = 0; m < n_modalities(); ++m) {
    if (!mask.present(m)) continue;
    const Tensor& src = features[m];
    const std::size_t cols = src.cols();
    std::vector<double> rows;
    rows.reserve(indices.size() * cols);
    for (auto i : indices) {
      if (i >= size()) throw IndexError(fmt::format("sample index {} out of range ({} samples)", i, size()));
      auto row = src.data().subspan(i * cols, cols);
      rows.insert(rows.end(), row.begin(), row.end());
    }
    out[m] = Tensor::matrix(indices.size(), cols, std::move(rows));
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

Dataset generate(const SynthTask& task, std::uint64_t seed) {
  task.validate();
  Rng rng(seed);
  const std::size_t n = task.n_samples, K = task.n_classes, M = task.input_dims.size();
  Dataset data;
  data.n_classes = K;
  std::vector<std::vector<double>> feats(M);
  for (std::size_t m = 0; m < M; ++m) feats[m].reserve(n * task.input_dims[m]);
  data.labels.reserve(n);

  std::vector<std::size_t> latent(M);
  for (std::size_t i = 0; i < n; ++i) {
    if (task.kind == TaskKind::Complementary) {
      latent[0] = rng.uniform_index(K);
      latent[1] = rng.uniform_index(K);
      data.labels.push_back(static_cast<int>((latent[0] + latent[1]) % K));
    } else {
      const std::size_t y = rng.uniform_index(K);
      std::fill(latent.begin(), latent.end(), y);
      data.labels.push_back(static_cast<int>(y));
    }
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t j = 0; j < task.input_dims[m]; ++j) {
        double v = j == latent[m] ? 1.0 : 0.0;
        if (task.noise_scale > 0.0) v += rng.normal(0.0, task.noise_scale);
        feats[m].push_back(v);
      }
    }
  }
  for (std::size_t m = 0; m < M; ++m) data.features.push_back(Tensor::matrix(n, task.input_dims[m], std::move(feats[m])));
  return data;
}

namespace {

std::size_t infer_classes(std::span<const int> labels) {
  int mx = -1;
  for (int y : labels) {
    if (y < 0) throw DataError(fmt::format("negative label {}", y));
    mx = std::max(mx, y);
  }
  return static_cast<std::size_t>(mx + 1);
}

std::vector<std::vector<std::size_t>> positions_by_class(std::span<const int> labels, std::size_t n_classes) {
  std::vector<std::vector<std::size_t>> out(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (static_cast<std::size_t>(labels[i]) < n_classes) out[labels[i]].push_back(i);
  }
  return out;
}

// Cumulative-floor allocation of `items` according to `shares` (sum 1).
void allocate(std::span<const std::size_t> items, std::span<const double> shares,
              std::vector<std::vector<std::size_t>>& clients) {
  const std::size_t len = items.size();
  double cum = 0.0;
  std::size_t start = 0;
  for (std::size_t c = 0; c < shares.size(); ++c) {
    cum += shares[c];
    std::size_t end = c + 1 == shares.size() ? len : static_cast<std::size_t>(std::floor(cum * static_cast<double>(len)));
    end = std::clamp(end, start, len);
    clients[c].insert(clients[c].end(), items.begin() + start, items.begin() + end);
    start = end;
  }
}

void sort_all(PartitionPlan& plan) {
  for (auto& c : plan.clients) std::sort(c.begin(), c.end());
}

}  // namespace

TrainValSplit stratified_split(std::span<const int> labels, double val_fraction, std::uint64_t seed) {
  if (labels.empty()) throw DataError("stratified_split: empty label set");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw DataError("stratified_split: val_fraction must be in [0, 1)");
  Rng rng(seed);
  TrainValSplit split;
  for (auto& idx : positions_by_class(labels, infer_classes(labels))) {
    rng.shuffle(idx);
    const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * val_fraction));
    split.val.insert(split.val.end(), idx.begin(), idx.begin() + n_val);
    split.train.insert(split.train.end(), idx.begin() + n_val, idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

std::vector<std::size_t> PartitionPlan::counts() const {
  std::vector<std::size_t> out;
  for (const auto& c : clients) out.push_back(c.size());
  return out;
}

PartitionPlan dirichlet_partition(std::span<const int> labels, std::size_t n_clients, double alpha,
                                  std::uint64_t seed) {
  if (labels.empty()) throw DataError("dirichlet_partition: empty label set");
  if (n_clients == 0) throw DataError("dirichlet_partition: n_clients must be at least 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw DataError("dirichlet_partition: alpha must be positive");
  const auto by_class = positions_by_class(labels, infer_classes(labels));

  for (int attempt = 0; attempt < kDirichletMaxAttempts; ++attempt) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    PartitionPlan plan;
    plan.clients.resize(n_clients);
    for (const auto& cls : by_class) {
      std::vector<std::size_t> idx = cls;
      rng.shuffle(idx);
      const auto p = rng.dirichlet(n_clients, alpha);
      allocate(idx, p, plan.clients);
    }
    const bool all_nonempty =
        std::all_of(plan.clients.begin(), plan.clients.end(), [](const auto& c) { return !c.empty(); });
    if (all_nonempty) {
      sort_all(plan);
      return plan;
    }
  }
  throw DataError(fmt::format("dirichlet_partition: every one of {} attempts left a client without samples",
                              kDirichletMaxAttempts));
}

PartitionPlan iid_partition(std::size_t n_items, std::size_t n_clients, std::uint64_t seed) {
  if (n_items == 0) throw DataError("iid_partition: empty label set");
  if (n_clients == 0) throw DataError("iid_partition: n_clients must be at least 1");
  std::vector<std::size_t> idx(n_items);
  for (std::size_t i = 0; i < n_items; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  PartitionPlan plan;
  plan.clients.resize(n_clients);
  const std::size_t base = n_items / n_clients, extra = n_items % n_clients;
  std::size_t start = 0;
  for (std::size_t c = 0; c < n_clients; ++c) {
    const std::size_t len = base + (c < extra ? 1 : 0);
    plan.clients[c].assign(idx.begin() + start, idx.begin() + start + len);
    start += len;
  }
  sort_all(plan);
  return plan;
}

PartitionPlan stratified_iid_partition(std::span<const int> labels, std::size_t n_clients, std::uint64_t seed) {
  if (labels.empty()) throw DataError("stratified_iid_partition: empty label set");
  if (n_clients == 0) throw DataError("stratified_iid_partition: n_clients must be at least 1");
  Rng rng(seed);
  PartitionPlan plan;
  plan.clients.resize(n_clients);
  std::size_t next = 0;
  for (auto& idx : positions_by_class(labels, infer_classes(labels))) {
    rng.shuffle(idx);
    for (auto i : idx) {
      plan.clients[next].push_back(i);
      next = (next + 1) % n_clients;
    }
  }
  sort_all(plan);
  return plan;
}

PartitionPlan mirror_partition(std::span<const int> reference_labels, const PartitionPlan& reference,
                               std::span<const int> target_labels, std::uint64_t seed) {
  const std::size_t n_clients = reference.n_clients();
  if (n_clients == 0) throw DataError("mirror_partition: reference has no clients");
  const std::size_t K = std::max(infer_classes(reference_labels), infer_classes(target_labels));
  std::vector<std::vector<double>> held(K, std::vector<double>(n_clients, 0.0));
  std::vector<double> totals(K, 0.0);
  for (std::size_t c = 0; c < n_clients; ++c) {
    for (auto i : reference.clients[c]) {
      held[reference_labels[i]][c] += 1.0;
      totals[reference_labels[i]] += 1.0;
    }
  }
  Rng rng(seed);
  PartitionPlan plan;
  plan.clients.resize(n_clients);
  auto by_class = positions_by_class(target_labels, K);
  for (std::size_t k = 0; k < K; ++k) {
    auto& idx = by_class[k];
    rng.shuffle(idx);
    std::vector<double> shares(n_clients, 1.0 / static_cast<double>(n_clients));
    if (totals[k] > 0.0) {
      for (std::size_t c = 0; c < n_clients; ++c) shares[c] = held[k][c] / totals[k];
    }
    allocate(idx, shares, plan.clients);
  }
  sort_all(plan);
  return plan;
}

double ModalityConfig::missing_rate() const {
  if (total() == 0) throw ConfigError("modality config: no clients");
  return static_cast<double>(a + b) / (2.0 * static_cast<double>(total()));
}

std::string ModalityConfig::str() const { return fmt::format("{}-{}-{}", a, b, c); }

ModalityConfig ModalityConfig::parse(const std::string& text) {
  std::string norm = text;
  for (const std::string dash : {"\u2013", "\u2014"}) {
    for (auto pos = norm.find(dash); pos != std::string::npos; pos = norm.find(dash)) norm.replace(pos, dash.size(), "-");
  }
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (true) {
    const auto dash = norm.find('-', pos);
    parts.push_back(norm.substr(pos, dash == std::string::npos ? std::string::npos : dash - pos));
    if (dash == std::string::npos) break;
    pos = dash + 1;
  }
  const auto numeric = [](const std::string& p) {
    return !p.empty() && p.size() < 10 && p.find_first_not_of("0123456789") == std::string::npos;
  };
  if (parts.size() != 3 || !std::all_of(parts.begin(), parts.end(), numeric)) {
    throw ConfigError("modality config '" + text + "' is not of the form a-b-c");
  }
  return ModalityConfig{std::stoul(parts[0]), std::stoul(parts[1]), std::stoul(parts[2])};
}

std::vector<ModalityMask> assign_modalities(const ModalityConfig& config, std::size_t n_clients, std::uint64_t seed) {
  if (config.total() != n_clients) {
    throw ConfigError(fmt::format("modality config {} covers {} clients, expected {}", config.str(), config.total(),
                                  n_clients));
  }
  std::vector<ModalityMask> masks;
  for (std::size_t i = 0; i < config.a; ++i) masks.push_back(ModalityMask::only(2, 0));
  for (std::size_t i = 0; i < config.b; ++i) masks.push_back(ModalityMask::only(2, 1));
  for (std::size_t i = 0; i < config.c; ++i) masks.push_back(ModalityMask::all(2));
  Rng rng(seed);
  rng.shuffle(masks);
  return masks;
}

// --- export ---------------------------------------------------------------

namespace {

constexpr std::array<char, 8> kDataMagic = {'B', 'F', 'D', 'A', 'T', 'A', '\0', '\0'};

void put_u64(std::ostream& out, std::uint64_t v, std::size_t bytes) {
  for (std::size_t i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::istream& in, std::size_t bytes) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bytes; ++i) {
    const int ch = in.get();
    if (ch == EOF) throw FormatError("dataset: unexpected end of file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(ch)) << (8 * i);
  }
  return v;
}

}  // namespace

void write_dataset(const std::filesystem::path& stem, const Dataset& data, const SynthTask& task, std::uint64_t seed) {
  const auto bin = std::filesystem::path(stem.string() + ".bin");
  std::ofstream out(bin, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + bin.string());
  out.write(kDataMagic.data(), kDataMagic.size());
  put_u64(out, kDatasetFormatVersion, 4);
  put_u64(out, data.size(), 8);
  put_u64(out, data.n_modalities(), 4);
  for (const auto& f : data.features) put_u64(out, f.cols(), 4);
  for (const auto& f : data.features)
    for (double v : f.data()) put_u64(out, std::bit_cast<std::uint64_t>(v), 8);
  for (int y : data.labels) put_u64(out, static_cast<std::uint32_t>(y), 4);
  if (!out) throw FormatError("failed writing " + bin.string());

  nlohmann::json manifest;
  manifest["format_version"] = kDatasetFormatVersion;
  manifest["kind"] = to_string(task.kind);
  manifest["n_classes"] = data.n_classes;
  manifest["input_dims"] = task.input_dims;
  manifest["noise_scale"] = task.noise_scale;
  manifest["n_samples"] = data.size();
  manifest["seed"] = seed;
  std::vector<std::size_t> per_class(data.n_classes, 0);
  for (int y : data.labels) ++per_class[y];
  manifest["class_counts"] = per_class;
  std::ofstream js(stem.string() + ".json", std::ios::trunc);
  js << manifest.dump(2) << "\n";
}

Dataset read_dataset(const std::filesystem::path& stem) {
  const auto bin = std::filesystem::path(stem.string() + ".bin");
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset: " + bin.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kDataMagic) throw FormatError("not a dataset file: " + bin.string());
  if (get_u64(in, 4) != kDatasetFormatVersion) throw FormatError("unsupported dataset format version");
  const std::size_t n = get_u64(in, 8);
  const std::size_t M = get_u64(in, 4);
  std::vector<std::size_t> dims(M);
  for (auto& d : dims) d = get_u64(in, 4);
  Dataset data;
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<double> values(n * dims[m]);
    for (auto& v : values) v = std::bit_cast<double>(get_u64(in, 8));
    data.features.push_back(Tensor::matrix(n, dims[m], std::move(values)));
  }
  data.labels.resize(n);
  for (auto& y : data.labels) y = static_cast<int>(get_u64(in, 4));
  std::ifstream js(stem.string() + ".json");
  if (js) {
    const auto manifest = nlohmann::json::parse(js);
    data.n_classes = manifest.at("n_classes").get<std::size_t>();
  } else {
    data.n_classes = infer_classes(data.labels);
  }
  return data;
}

}  // namespace blockfed
