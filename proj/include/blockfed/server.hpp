#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "blockfed/client.hpp"
#include "blockfed/data.hpp"
#include "blockfed/metrics.hpp"
#include "blockfed/model.hpp"
#include "blockfed/plan.hpp"

namespace blockfed {

struct Participant {
  std::size_t client_id = 0;
  ModalityMask mask;
  std::size_t n_samples = 0;
};

// Encoder(m) lists every participant holding m; Fusion and Head list every
// participant unless the mode keeps them private. An encoder with no eligible
// participant is recorded in carried_over instead.
AggregationPlan build_plan(AggregationMode mode, std::span<const Participant> participants,
                           std::size_t n_modalities);

// Server-side combination rule for one block. Contributions arrive sorted by
// ascending client id.
class AggregationStrategy {
 public:
  struct Contribution {
    std::size_t client_id;
    std::size_t weight;
    std::span<const double> params;
  };
  virtual ~AggregationStrategy() = default;
  virtual std::string name() const = 0;
  virtual std::vector<double> combine(BlockId id, std::span<const Contribution> contributions) const = 0;
};

// theta = sum_c (n_c / sum n) theta_c, accumulated in ascending client order.
class FedAvg final : public AggregationStrategy {
 public:
  std::string name() const override { return "fedavg"; }
  std::vector<double> combine(BlockId id, std::span<const Contribution> contributions) const override;
};

// New block store: planned blocks re-aggregated, everything else carried over
// from `previous`. Throws ProtocolError when a planned (block, client) pair has
// no update and PlanError when a block's weights sum to zero.
BlockStore aggregate(const AggregationPlan& plan, std::span<const LocalUpdate> updates, const BlockStore& previous,
                     const AggregationStrategy& strategy = FedAvg{});

struct GlobalState {
  BlockStore blocks;  // shared blocks only
  std::size_t round = 0;
  std::vector<RoundMetrics> history;
  std::vector<AggregationPlan> plans;
};

GlobalState init_global_state(const BlockedModel& init, AggregationMode mode);

// The global blocks sent to one client.
BlockStore dispatch(const GlobalState& state, const ClientState& client, AggregationMode mode);

enum class EvalTarget { ClientLocal, Server };

struct RoundOptions {
  AggregationMode mode = AggregationMode::FM;
  TrainHyper hyper;
  std::size_t total_rounds = 1;
  // Ids of the clients taking part; empty means all of them.
  std::vector<std::size_t> participants;
  bool evaluate = true;
  EvalTarget eval_target = EvalTarget::ClientLocal;
  std::span<const std::size_t> server_eval;  // used with EvalTarget::Server
  StepObserver observer;
};

struct RoundResult {
  AggregationPlan plan;
  std::vector<std::size_t> skipped;  // clients that signalled ClientSkip
  std::size_t params_exchanged = 0;
};

// One communication round: dispatch, local training, block-wise aggregation
// and (optionally) evaluation. Errors are rethrown as ProtocolError carrying
// the round and client.
RoundResult run_round(GlobalState& state, std::vector<ClientState>& clients, const BlockedModel& base,
                      const Dataset& data, const RoundOptions& options,
                      const AggregationStrategy& strategy = FedAvg{});

// Each client's current model (global blocks + private blocks) scored on its
// eval shard (or the server set), summarized per group.
RoundMetrics evaluate_round(std::size_t round, const GlobalState& state, const std::vector<ClientState>& clients,
                            const BlockedModel& base, const Dataset& data, AggregationMode mode,
                            EvalTarget target, std::span<const std::size_t> server_eval,
                            std::size_t params_exchanged);

std::map<BlockId, std::size_t> block_sizes(const BlockedModel& model);

}  // namespace blockfed
