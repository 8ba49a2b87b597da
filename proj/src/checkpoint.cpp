#include "blockfed/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "blockfed/errors.hpp"

namespace blockfed {
namespace {

constexpr std::array<char, 8> kMagic = {'B', 'F', 'C', 'K', 'P', 'T', '\0', '\0'};

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

void put_f64(std::ostream& out, double value) { put_le(out, std::bit_cast<std::uint64_t>(value)); }

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw FormatError("checkpoint: unexpected end of file");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(v);
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

std::size_t header_bytes(const ModelSpec& spec) {
  return 8 + 4 + 4 + 4 * spec.n_modalities() + 4 * 4 + 1 + 8 + 4;
}

}  // namespace

Checkpoint make_checkpoint(const BlockedModel& model) {
  Checkpoint ck{model.spec(), model.seed(), {}};
  for (const auto& id : model.block_ids()) ck.blocks.emplace_back(id, extract_block(model, id));
  return ck;
}

BlockedModel to_model(const Checkpoint& checkpoint) {
  BlockedModel model = init_model(checkpoint.spec, checkpoint.seed);
  std::vector<bool> seen(model.blocks().size(), false);
  for (const auto& [id, values] : checkpoint.blocks) {
    insert_block(model, id, values);
    const auto ids = model.block_ids();
    seen[std::find(ids.begin(), ids.end(), id) - ids.begin()] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw BlockError("checkpoint is missing block " + model.block_ids()[i].str());
  }
  return model;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.spec.n_modalities()));
  for (auto dim : ck.spec.input_dims) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.spec.hidden_dim));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.spec.embed_dim));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.spec.fusion_dim));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.spec.n_classes));
  put_le<std::uint8_t>(out, ck.spec.fusion == FusionVariant::Concat ? 0 : 1);
  put_le<std::uint64_t>(out, ck.seed);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.blocks.size()));
  for (const auto& [id, values] : ck.blocks) {
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(id.kind));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(id.modality));
    put_le<std::uint64_t>(out, values.size());
    for (double v : values) put_f64(out, v);
  }
  if (!out) throw FormatError("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError("not a checkpoint file: " + path.string());
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointFormatVersion) {
    throw FormatError(fmt::format("unsupported checkpoint format version {}", version));
  }
  Checkpoint ck;
  const auto n_mod = get_le<std::uint32_t>(in);
  for (std::uint32_t m = 0; m < n_mod; ++m) ck.spec.input_dims.push_back(get_le<std::uint32_t>(in));
  ck.spec.hidden_dim = get_le<std::uint32_t>(in);
  ck.spec.embed_dim = get_le<std::uint32_t>(in);
  ck.spec.fusion_dim = get_le<std::uint32_t>(in);
  ck.spec.n_classes = get_le<std::uint32_t>(in);
  const auto fusion = get_le<std::uint8_t>(in);
  if (fusion > 1) throw FormatError("checkpoint: bad fusion variant tag");
  ck.spec.fusion = fusion == 0 ? FusionVariant::Concat : FusionVariant::Attention;
  ck.seed = get_le<std::uint64_t>(in);
  const auto n_blocks = get_le<std::uint32_t>(in);
  for (std::uint32_t b = 0; b < n_blocks; ++b) {
    const auto kind = get_le<std::uint8_t>(in);
    if (kind > 2) throw FormatError("checkpoint: bad block kind tag");
    BlockId id{static_cast<BlockId::Kind>(kind), get_le<std::uint32_t>(in)};
    const auto len = get_le<std::uint64_t>(in);
    std::vector<double> values(len);
    for (auto& v : values) v = get_f64(in);
    ck.blocks.emplace_back(id, std::move(values));
  }
  return ck;
}

nlohmann::json checkpoint_sidecar(const Checkpoint& ck) {
  nlohmann::json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["input_dims"] = ck.spec.input_dims;
  j["hidden_dim"] = ck.spec.hidden_dim;
  j["embed_dim"] = ck.spec.embed_dim;
  j["fusion_dim"] = ck.spec.fusion_dim;
  j["n_classes"] = ck.spec.n_classes;
  j["fusion"] = to_string(ck.spec.fusion);
  j["seed"] = ck.seed;
  j["blocks"] = nlohmann::json::array();
  std::size_t offset = header_bytes(ck.spec);
  for (const auto& [id, values] : ck.blocks) {
    offset += 1 + 4 + 8;
    j["blocks"].push_back({{"id", id.str()}, {"offset_bytes", offset}, {"length", values.size()}});
    offset += 8 * values.size();
  }
  j["total_bytes"] = offset;
  return j;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

}  // namespace blockfed
