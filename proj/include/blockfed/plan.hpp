#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "blockfed/model.hpp"

namespace blockfed {

enum class AggregationMode { FM, PH, PHF };

std::string to_string(AggregationMode mode);
AggregationMode parse_mode(const std::string& text);

// FM shares every block; PH keeps the head client-local; PHF keeps fusion and
// head client-local. Encoders are always shared.
bool is_private(AggregationMode mode, BlockId id);
std::vector<BlockId> private_blocks(AggregationMode mode);

using BlockStore = std::map<BlockId, std::vector<double>>;

struct PlanEntry {
  std::size_t client_id = 0;
  std::size_t weight = 0;  // n_c, the client's training sample count

  friend bool operator==(const PlanEntry&, const PlanEntry&) = default;
};

// Per block, the clients that contribute to it this round (ascending id).
struct AggregationPlan {
  std::map<BlockId, std::vector<PlanEntry>> blocks;
  // Encoders nobody could update this round; they keep their previous value.
  std::vector<BlockId> carried_over;

  bool contains(BlockId id) const { return blocks.count(id) != 0; }
  std::size_t weight_sum(BlockId id) const;
  // n_c / sum(n_c) per entry, in entry order.
  std::vector<double> normalized_weights(BlockId id) const;
};

}  // namespace blockfed
