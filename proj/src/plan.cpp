#include "blockfed/plan.hpp"

#include "blockfed/errors.hpp"

namespace blockfed {

std::string to_string(AggregationMode mode) {
  switch (mode) {
    case AggregationMode::FM: return "FM";
    case AggregationMode::PH: return "PH";
    case AggregationMode::PHF: return "PHF";
  }
  return "?";
}

AggregationMode parse_mode(const std::string& text) {
  if (text == "FM" || text == "fm") return AggregationMode::FM;
  if (text == "PH" || text == "ph") return AggregationMode::PH;
  if (text == "PHF" || text == "phf") return AggregationMode::PHF;
  throw ConfigError("unknown aggregation mode '" + text + "' (expected FM, PH or PHF)");
}

bool is_private(AggregationMode mode, BlockId id) {
  switch (id.kind) {
    case BlockId::Kind::Encoder: return false;
    case BlockId::Kind::Fusion: return mode == AggregationMode::PHF;
    case BlockId::Kind::Head: return mode != AggregationMode::FM;
  }
  return false;
}

std::vector<BlockId> private_blocks(AggregationMode mode) {
  std::vector<BlockId> out;
  for (const auto b : {BlockId::fusion(), BlockId::head()}) {
    if (is_private(mode, b)) out.push_back(b);
  }
  return out;
}

std::size_t AggregationPlan::weight_sum(BlockId id) const {
  std::size_t total = 0;
  for (const auto& e : blocks.at(id)) total += e.weight;
  return total;
}

std::vector<double> AggregationPlan::normalized_weights(BlockId id) const {
  const double total = static_cast<double>(weight_sum(id));
  if (total == 0.0) throw PlanError("block " + id.str() + " has zero total weight");
  std::vector<double> out;
  for (const auto& e : blocks.at(id)) out.push_back(static_cast<double>(e.weight) / total);
  return out;
}

}  // namespace blockfed
