#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blockfed/tensor.hpp"

namespace blockfed {

enum class FusionVariant { Concat, Attention };

std::string to_string(FusionVariant variant);
FusionVariant parse_fusion_variant(const std::string& text);

// Names one aggregatable block: an encoder per modality, the fusion module or
// the prediction head. Ordered encoders first (by modality), then fusion, head.
struct BlockId {
  enum class Kind : std::uint8_t { Encoder = 0, Fusion = 1, Head = 2 };
  Kind kind = Kind::Encoder;
  std::size_t modality = 0;  // meaningful for encoders only

  static BlockId encoder(std::size_t m) { return {Kind::Encoder, m}; }
  static BlockId fusion() { return {Kind::Fusion, 0}; }
  static BlockId head() { return {Kind::Head, 0}; }

  bool is_encoder() const { return kind == Kind::Encoder; }
  std::string str() const;  // "encoder:0", "fusion", "head"
  static BlockId parse(const std::string& text);

  friend auto operator<=>(const BlockId&, const BlockId&) = default;
};

struct ModelSpec {
  std::vector<std::size_t> input_dims;  // one per modality
  std::size_t hidden_dim = 16;          // encoder hidden layer width
  std::size_t embed_dim = 8;            // shared encoder output width d
  std::size_t fusion_dim = 16;          // fusion output width
  std::size_t n_classes = 2;
  FusionVariant fusion = FusionVariant::Concat;

  std::size_t n_modalities() const { return input_dims.size(); }
  // Throws SpecError on nonpositive dims.
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Which modalities a client (and therefore every one of its samples) holds.
class ModalityMask {
 public:
  ModalityMask() = default;
  // Throws SpecError when no modality is present.
  explicit ModalityMask(std::vector<bool> present);
  static ModalityMask all(std::size_t n_modalities);
  static ModalityMask only(std::size_t n_modalities, std::size_t m);

  bool present(std::size_t m) const { return m < present_.size() && present_[m]; }
  std::size_t size() const { return present_.size(); }
  std::size_t count() const;
  const std::vector<bool>& bits() const { return present_; }
  // Group label used in reports, e.g. "m0", "m1", "m0+m1".
  std::string label() const;

  friend auto operator<=>(const ModalityMask&, const ModalityMask&) = default;

 private:
  std::vector<bool> present_;
};

// Late-fusion network split into named blocks. Each block is an ordered list
// of tensors; the canonical flat order of a block is its tensors in list order,
// each row-major:
//
//   Encoder(m):          W1 [in_m x hidden], b1 [hidden], W2 [hidden x d], b2 [d]
//   Fusion (Concat):     W [M*d x fusion_dim], b [fusion_dim]
//   Fusion (Attention):  V [d x M] (column m scores modality m),
//                        W [d x fusion_dim], b [fusion_dim]
//   Head:                W [fusion_dim x n_classes], b [n_classes]
//
// Weights multiply from the right: y = x W + b.
class BlockedModel {
 public:
  BlockedModel() = default;
  BlockedModel(ModelSpec spec, std::uint64_t seed, std::vector<std::vector<Tensor>> blocks);

  const ModelSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<BlockId> block_ids() const;
  bool has_block(BlockId id) const;
  const std::vector<Tensor>& block(BlockId id) const;
  std::vector<Tensor>& block(BlockId id);
  std::size_t block_size(BlockId id) const;
  std::size_t parameter_count() const;

  // All blocks in canonical block order.
  const std::vector<std::vector<Tensor>>& blocks() const { return blocks_; }
  std::vector<std::vector<Tensor>>& blocks() { return blocks_; }

  friend bool operator==(const BlockedModel&, const BlockedModel&) = default;

 private:
  std::size_t slot(BlockId id) const;

  ModelSpec spec_;
  std::uint64_t seed_ = 0;
  std::vector<std::vector<Tensor>> blocks_;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias, drawn in
// canonical block order.
BlockedModel init_model(const ModelSpec& spec, std::uint64_t seed);

std::vector<double> extract_block(const BlockedModel& model, BlockId id);
void insert_block(BlockedModel& model, BlockId id, std::span<const double> params);

// Whole model in canonical block order.
std::vector<double> flatten(const BlockedModel& model);
void unflatten(BlockedModel& model, std::span<const double> params);

// Per-modality [batch x in_m] inputs; std::nullopt for absent modalities.
using ModalityInputs = std::vector<std::optional<Tensor>>;

struct ForwardPass {
  Var logits;                                // [batch x n_classes]
  std::vector<std::vector<Var>> parameters;  // same layout as BlockedModel::blocks()
  std::vector<Var> embeddings;               // [batch x d] per modality, zeros when absent
  std::optional<Var> attention;              // [batch x M] for the attention variant
};

// Records the forward pass on `tape`. Absent modalities contribute an all-zero
// embedding; their encoders are not evaluated. With track_gradients=false the
// parameters are recorded as constants.
ForwardPass forward(Tape& tape, const BlockedModel& model, const ModalityInputs& inputs,
                    const ModalityMask& mask, bool track_gradients = true);

// Logits without keeping the tape around.
Tensor predict_logits(const BlockedModel& model, const ModalityInputs& inputs, const ModalityMask& mask);

using ModelGradients = std::vector<std::vector<Tensor>>;

ModelGradients collect_gradients(const Gradients& grads, const ForwardPass& pass);

}  // namespace blockfed
