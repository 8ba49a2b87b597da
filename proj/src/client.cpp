#include "blockfed/client.hpp"

#include <fmt/format.h>

#include "blockfed/errors.hpp"
#include "blockfed/rng.hpp"

namespace blockfed {

ClientState make_client(std::size_t id, ModalityMask mask, std::vector<std::size_t> shard,
                        std::vector<std::size_t> eval_shard, AggregationMode mode, const BlockedModel& init,
                        std::uint64_t seed) {
  if (mask.size() != init.spec().n_modalities()) {
    throw MaskMismatchError(fmt::format("client {}: mask covers {} modalities, model has {}", id, mask.size(),
                                        init.spec().n_modalities()));
  }
  ClientState c{id, std::move(mask), std::move(shard), std::move(eval_shard), {}, seed};
  for (const auto& b : private_blocks(mode)) c.private_store[b] = extract_block(init, b);
  return c;
}

std::vector<BlockId> required_blocks(const ClientState& client, AggregationMode mode, std::size_t n_modalities) {
  std::vector<BlockId> out;
  for (std::size_t m = 0; m < n_modalities; ++m) {
    if (client.mask.present(m)) out.push_back(BlockId::encoder(m));
  }
  for (const auto b : {BlockId::fusion(), BlockId::head()}) {
    if (!is_private(mode, b)) out.push_back(b);
  }
  return out;
}

BlockedModel assemble_model(const ClientState& client, const BlockStore& received, const BlockedModel& base) {
  BlockedModel model = base;
  for (const auto& [id, values] : received) insert_block(model, id, values);
  for (const auto& [id, values] : client.private_store) insert_block(model, id, values);
  return model;
}

void train_epochs(BlockedModel& model, const Dataset& data, std::span<const std::size_t> shard,
                  const ModalityMask& mask, const TrainHyper& hyper, std::uint64_t order_seed,
                  const std::function<void(const ModelGradients&)>& on_step) {
  if (hyper.batch_size == 0) throw ConfigError("batch_size must be positive");
  Rng rng(order_seed);
  std::vector<std::size_t> order(shard.begin(), shard.end());
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t len = std::min(hyper.batch_size, order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, len);
      const auto labels = data.gather_labels(batch);

      Tape tape;
      const ForwardPass pass = forward(tape, model, data.gather(batch, mask), mask);
      const Var loss = cross_entropy(pass.logits, labels);
      const ModelGradients grads = collect_gradients(backward(tape, loss), pass);
      if (on_step) on_step(grads);

      auto& blocks = model.blocks();
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (std::size_t t = 0; t < blocks[b].size(); ++t) {
          auto p = blocks[b][t].data();
          const auto g = grads[b][t].data();
          for (std::size_t i = 0; i < p.size(); ++i) p[i] -= hyper.lr * g[i];
        }
      }
    }
  }
}

LocalUpdate local_train(ClientState& client, const BlockStore& received, const BlockedModel& base,
                        const Dataset& data, AggregationMode mode, const TrainHyper& hyper, std::size_t round,
                        const StepObserver& observer) {
  if (client.shard.empty()) throw ClientSkip(fmt::format("client {} has no training samples", client.id));
  const auto required = required_blocks(client, mode, base.spec().n_modalities());
  for (const auto& id : required) {
    if (!received.count(id)) throw BlockError(fmt::format("client {} did not receive block {}", client.id, id.str()));
  }
  for (const auto& id : private_blocks(mode)) {
    if (!client.private_store.count(id)) {
      throw BlockError(fmt::format("client {} has no private copy of block {}", client.id, id.str()));
    }
  }

  BlockedModel model = assemble_model(client, received, base);
  std::function<void(const ModelGradients&)> on_step;
  if (observer) on_step = [&](const ModelGradients& g) { observer(client, g); };
  train_epochs(model, data, client.shard, client.mask, hyper, derive_seed(client.seed, round), on_step);

  for (auto& [id, values] : client.private_store) values = extract_block(model, id);
  LocalUpdate update{client.id, {}, client.n_samples()};
  for (const auto& id : required) update.blocks[id] = extract_block(model, id);
  return update;
}

std::vector<int> predict(const BlockedModel& model, const Dataset& data, std::span<const std::size_t> indices,
                         const ModalityMask& mask) {
  const Tensor logits = predict_logits(model, data.gather(indices, mask), mask);
  std::vector<int> out(indices.size());
  const std::size_t k = logits.cols();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

EvalResult evaluate(const ClientState& client, const BlockedModel& model, const Dataset& data,
                    std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError(fmt::format("client {}: empty evaluation set", client.id));
  const auto preds = predict(model, data, indices, client.mask);
  const auto labels = data.gather_labels(indices);
  EvalResult r;
  r.confusion = confusion_matrix(preds, labels, model.spec().n_classes);
  r.accuracy = accuracy(r.confusion);
  r.macro_f1 = macro_f1(r.confusion);
  r.micro_f1 = micro_f1(r.confusion);
  return r;
}

}  // namespace blockfed
