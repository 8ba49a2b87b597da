#include "blockfed/model.hpp"

#include <cmath>

#include <fmt/format.h>

#include "blockfed/errors.hpp"
#include "blockfed/rng.hpp"

namespace blockfed {

std::string to_string(FusionVariant variant) {
  return variant == FusionVariant::Concat ? "concat" : "attention";
}

FusionVariant parse_fusion_variant(const std::string& text) {
  if (text == "concat") return FusionVariant::Concat;
  if (text == "attention") return FusionVariant::Attention;
  throw SpecError("unknown fusion variant '" + text + "' (expected concat or attention)");
}

std::string BlockId::str() const {
  switch (kind) {
    case Kind::Encoder: return "encoder:" + std::to_string(modality);
    case Kind::Fusion: return "fusion";
    case Kind::Head: return "head";
  }
  return "?";
}

BlockId BlockId::parse(const std::string& text) {
  if (text == "fusion") return fusion();
  if (text == "head") return head();
  const std::string prefix = "encoder:";
  if (text.rfind(prefix, 0) == 0 && text.size() > prefix.size()) {
    std::size_t pos = 0;
    const auto m = std::stoull(text.substr(prefix.size()), &pos);
    if (pos == text.size() - prefix.size()) return encoder(m);
  }
  throw BlockError("unrecognized block id '" + text + "'");
}

void ModelSpec::validate() const {
  if (input_dims.empty()) throw SpecError("model spec: at least one modality is required");
  for (std::size_t m = 0; m < input_dims.size(); ++m) {
    if (input_dims[m] == 0) throw SpecError(fmt::format("model spec: input_dims[{}] must be positive", m));
  }
  if (hidden_dim == 0) throw SpecError("model spec: hidden_dim must be positive");
  if (embed_dim == 0) throw SpecError("model spec: embed_dim must be positive");
  if (fusion_dim == 0) throw SpecError("model spec: fusion_dim must be positive");
  if (n_classes == 0) throw SpecError("model spec: n_classes must be positive");
}

ModalityMask::ModalityMask(std::vector<bool> present) : present_(std::move(present)) {
  if (count() == 0) throw SpecError("modality mask: at least one modality must be present");
}

ModalityMask ModalityMask::all(std::size_t n_modalities) { return ModalityMask(std::vector<bool>(n_modalities, true)); }

ModalityMask ModalityMask::only(std::size_t n_modalities, std::size_t m) {
  std::vector<bool> bits(n_modalities, false);
  if (m >= n_modalities) throw SpecError(fmt::format("modality mask: modality {} out of range", m));
  bits[m] = true;
  return ModalityMask(std::move(bits));
}

std::size_t ModalityMask::count() const {
  std::size_t n = 0;
  for (bool b : present_) n += b ? 1 : 0;
  return n;
}

std::string ModalityMask::label() const {
  std::string out;
  for (std::size_t m = 0; m < present_.size(); ++m) {
    if (!present_[m]) continue;
    if (!out.empty()) out += "+";
    out += "m" + std::to_string(m);
  }
  return out;
}

// --- BlockedModel ---------------------------------------------------------

BlockedModel::BlockedModel(ModelSpec spec, std::uint64_t seed, std::vector<std::vector<Tensor>> blocks)
    : spec_(std::move(spec)), seed_(seed), blocks_(std::move(blocks)) {
  if (blocks_.size() != spec_.n_modalities() + 2) {
    throw BlockError(fmt::format("model expects {} blocks, got {}", spec_.n_modalities() + 2, blocks_.size()));
  }
}

std::vector<BlockId> BlockedModel::block_ids() const {
  std::vector<BlockId> ids;
  for (std::size_t m = 0; m < spec_.n_modalities(); ++m) ids.push_back(BlockId::encoder(m));
  ids.push_back(BlockId::fusion());
  ids.push_back(BlockId::head());
  return ids;
}

bool BlockedModel::has_block(BlockId id) const {
  return !id.is_encoder() || id.modality < spec_.n_modalities();
}

std::size_t BlockedModel::slot(BlockId id) const {
  const std::size_t m = spec_.n_modalities();
  switch (id.kind) {
    case BlockId::Kind::Encoder:
      if (id.modality >= m) throw BlockError(fmt::format("block {} does not exist ({} modalities)", id.str(), m));
      return id.modality;
    case BlockId::Kind::Fusion: return m;
    case BlockId::Kind::Head: return m + 1;
  }
  throw BlockError("invalid block kind");
}

const std::vector<Tensor>& BlockedModel::block(BlockId id) const { return blocks_[slot(id)]; }

std::vector<Tensor>& BlockedModel::block(BlockId id) { return blocks_[slot(id)]; }

std::size_t BlockedModel::block_size(BlockId id) const {
  std::size_t n = 0;
  for (const auto& t : block(id)) n += t.size();
  return n;
}

std::size_t BlockedModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_)
    for (const auto& t : b) n += t.size();
  return n;
}

namespace {

Tensor uniform_tensor(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

BlockedModel init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const std::size_t d = spec.embed_dim, h = spec.hidden_dim, f = spec.fusion_dim, M = spec.n_modalities();
  std::vector<std::vector<Tensor>> blocks;
  for (std::size_t m = 0; m < M; ++m) {
    const std::size_t in = spec.input_dims[m];
    std::vector<Tensor> enc;
    enc.push_back(uniform_tensor({in, h}, in, rng));
    enc.push_back(uniform_tensor({h}, in, rng));
    enc.push_back(uniform_tensor({h, d}, h, rng));
    enc.push_back(uniform_tensor({d}, h, rng));
    blocks.push_back(std::move(enc));
  }
  std::vector<Tensor> fusion;
  if (spec.fusion == FusionVariant::Concat) {
    fusion.push_back(uniform_tensor({M * d, f}, M * d, rng));
    fusion.push_back(uniform_tensor({f}, M * d, rng));
  } else {
    fusion.push_back(uniform_tensor({d, M}, d, rng));
    fusion.push_back(uniform_tensor({d, f}, d, rng));
    fusion.push_back(uniform_tensor({f}, d, rng));
  }
  blocks.push_back(std::move(fusion));
  std::vector<Tensor> head;
  head.push_back(uniform_tensor({f, spec.n_classes}, f, rng));
  head.push_back(uniform_tensor({spec.n_classes}, f, rng));
  blocks.push_back(std::move(head));
  return BlockedModel(spec, seed, std::move(blocks));
}

std::vector<double> extract_block(const BlockedModel& model, BlockId id) {
  std::vector<double> out;
  out.reserve(model.block_size(id));
  for (const auto& t : model.block(id)) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

void insert_block(BlockedModel& model, BlockId id, std::span<const double> params) {
  const std::size_t expected = model.block_size(id);
  if (params.size() != expected) {
    throw BlockError(fmt::format("insert_block {}: expected {} values, got {}", id.str(), expected, params.size()));
  }
  std::size_t offset = 0;
  for (auto& t : model.block(id)) {
    auto dst = t.data();
    std::copy(params.begin() + offset, params.begin() + offset + dst.size(), dst.begin());
    offset += dst.size();
  }
}

std::vector<double> flatten(const BlockedModel& model) {
  std::vector<double> out;
  out.reserve(model.parameter_count());
  for (const auto& id : model.block_ids()) {
    const auto b = extract_block(model, id);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

void unflatten(BlockedModel& model, std::span<const double> params) {
  if (params.size() != model.parameter_count()) {
    throw BlockError(fmt::format("unflatten: expected {} values, got {}", model.parameter_count(), params.size()));
  }
  std::size_t offset = 0;
  for (const auto& id : model.block_ids()) {
    const std::size_t n = model.block_size(id);
    insert_block(model, id, params.subspan(offset, n));
    offset += n;
  }
}

// --- forward --------------------------------------------------------------

ForwardPass forward(Tape& tape, const BlockedModel& model, const ModalityInputs& inputs, const ModalityMask& mask,
                    bool track_gradients) {
  const ModelSpec& spec = model.spec();
  const std::size_t M = spec.n_modalities();
  if (mask.size() != M) {
    throw MaskMismatchError(fmt::format("mask covers {} modalities, model has {}", mask.size(), M));
  }
  if (inputs.size() != M) {
    throw MaskMismatchError(fmt::format("{} input slots given for {} modalities", inputs.size(), M));
  }
  std::optional<std::size_t> batch;
  for (std::size_t m = 0; m < M; ++m) {
    const bool has = inputs[m].has_value();
    if (has != mask.present(m)) {
      throw MaskMismatchError(fmt::format("modality {} is {} by the mask but input is {}", m,
                                          mask.present(m) ? "present" : "absent", has ? "given" : "missing"));
    }
    if (!has) continue;
    const Tensor& x = *inputs[m];
    if (x.rank() != 2 || x.cols() != spec.input_dims[m]) {
      throw DimensionError(fmt::format("modality {} input {} does not match input dim {}", m, shape_str(x.shape()),
                                       spec.input_dims[m]));
    }
    if (batch && *batch != x.rows()) throw DimensionError("modality inputs disagree on batch size");
    batch = x.rows();
  }

  ForwardPass pass;
  for (const auto& block : model.blocks()) {
    std::vector<Var> vars;
    for (const auto& t : block) vars.push_back(track_gradients ? tape.parameter(t) : tape.constant(t));
    pass.parameters.push_back(std::move(vars));
  }

  const std::size_t B = *batch;
  const std::size_t d = spec.embed_dim;
  for (std::size_t m = 0; m < M; ++m) {
    if (!mask.present(m)) {
      pass.embeddings.push_back(tape.constant(Tensor::zeros({B, d})));
      continue;
    }
    const auto& p = pass.parameters[m];
    Var x = tape.constant(*inputs[m]);
    Var h = tanh(add_bias(matmul(x, p[0]), p[1]));
    pass.embeddings.push_back(tanh(add_bias(matmul(h, p[2]), p[3])));
  }

  const auto& fp = pass.parameters[M];
  Var fused;
  if (spec.fusion == FusionVariant::Concat) {
    fused = tanh(add_bias(matmul(concat_cols(pass.embeddings), fp[0]), fp[1]));
  } else {
    // Zeroed slots stay in the softmax: their score is 0, not -inf.
    std::vector<Var> scores;
    for (std::size_t m = 0; m < M; ++m) scores.push_back(column(matmul(pass.embeddings[m], fp[0]), m));
    Var alpha = softmax_rows(concat_cols(scores));
    Var mixed = scale_rows(pass.embeddings[0], column(alpha, 0));
    for (std::size_t m = 1; m < M; ++m) mixed = add(mixed, scale_rows(pass.embeddings[m], column(alpha, m)));
    fused = tanh(add_bias(matmul(mixed, fp[1]), fp[2]));
    pass.attention = alpha;
  }
  const auto& hp = pass.parameters[M + 1];
  pass.logits = add_bias(matmul(fused, hp[0]), hp[1]);
  return pass;
}

Tensor predict_logits(const BlockedModel& model, const ModalityInputs& inputs, const ModalityMask& mask) {
  Tape tape;
  return forward(tape, model, inputs, mask, false).logits.value();
}

ModelGradients collect_gradients(const Gradients& grads, const ForwardPass& pass) {
  ModelGradients out;
  for (const auto& block : pass.parameters) {
    std::vector<Tensor> g;
    for (const auto& v : block) g.push_back(grads[v]);
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace blockfed
