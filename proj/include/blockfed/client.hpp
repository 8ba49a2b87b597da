#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "blockfed/data.hpp"
#include "blockfed/metrics.hpp"
#include "blockfed/model.hpp"
#include "blockfed/plan.hpp"

namespace blockfed {

struct TrainHyper {
  std::size_t epochs = 1;
  double lr = 0.05;
  std::size_t batch_size = 32;
};

struct ClientState {
  std::size_t id = 0;
  ModalityMask mask;
  std::vector<std::size_t> shard;       // training sample indices into the dataset
  std::vector<std::size_t> eval_shard;  // validation sample indices into the dataset
  BlockStore private_store;             // exactly the blocks private under the active mode
  std::uint64_t seed = 0;

  std::size_t n_samples() const { return shard.size(); }
};

// Private blocks start from the shared initialization so that modes differ only
// through aggregation.
ClientState make_client(std::size_t id, ModalityMask mask, std::vector<std::size_t> shard,
                        std::vector<std::size_t> eval_shard, AggregationMode mode, const BlockedModel& init,
                        std::uint64_t seed);

struct LocalUpdate {
  std::size_t client_id = 0;
  BlockStore blocks;  // only blocks this client may contribute under the mode
  std::size_t n_samples = 0;
};

// Called after every minibatch gradient, before the parameter step.
using StepObserver = std::function<void(const ClientState&, const ModelGradients&)>;

// Blocks the client must receive: encoders of its own modalities plus every
// shared non-encoder block.
std::vector<BlockId> required_blocks(const ClientState& client, AggregationMode mode, std::size_t n_modalities);

// `base` with the received blocks and the client's private blocks spliced in.
BlockedModel assemble_model(const ClientState& client, const BlockStore& received, const BlockedModel& base);

// Minibatch SGD on mean cross-entropy. The sample order of every epoch is a
// Fisher-Yates shuffle driven by Rng(order_seed).
void train_epochs(BlockedModel& model, const Dataset& data, std::span<const std::size_t> shard,
                  const ModalityMask& mask, const TrainHyper& hyper, std::uint64_t order_seed,
                  const std::function<void(const ModelGradients&)>& on_step = {});

// One round of local work. Throws ClientSkip for an empty shard and BlockError
// when a required block is missing or has the wrong length.
LocalUpdate local_train(ClientState& client, const BlockStore& received, const BlockedModel& base,
                        const Dataset& data, AggregationMode mode, const TrainHyper& hyper, std::size_t round,
                        const StepObserver& observer = {});

struct EvalResult {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  ConfusionMatrix confusion;
};

std::vector<int> predict(const BlockedModel& model, const Dataset& data, std::span<const std::size_t> indices,
                         const ModalityMask& mask);

// Scores `model` on `indices` with the client's own mask. Throws DataError for
// an empty evaluation set.
EvalResult evaluate(const ClientState& client, const BlockedModel& model, const Dataset& data,
                    std::span<const std::size_t> indices);

}  // namespace blockfed
