#include "blockfed/server.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "blockfed/errors.hpp"

namespace blockfed {

AggregationPlan build_plan(AggregationMode mode, std::span<const Participant> participants,
                           std::size_t n_modalities) {
  std::vector<Participant> sorted(participants.begin(), participants.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.client_id < b.client_id; });

  AggregationPlan plan;
  for (std::size_t m = 0; m < n_modalities; ++m) {
    std::vector<PlanEntry> entries;
    for (const auto& p : sorted) {
      if (p.mask.present(m)) entries.push_back({p.client_id, p.n_samples});
    }
    if (entries.empty()) {
      plan.carried_over.push_back(BlockId::encoder(m));
    } else {
      plan.blocks[BlockId::encoder(m)] = std::move(entries);
    }
  }
  for (const auto b : {BlockId::fusion(), BlockId::head()}) {
    if (is_private(mode, b) || sorted.empty()) continue;
    std::vector<PlanEntry> entries;
    for (const auto& p : sorted) entries.push_back({p.client_id, p.n_samples});
    plan.blocks[b] = std::move(entries);
  }
  return plan;
}

std::vector<double> FedAvg::combine(BlockId id, std::span<const Contribution> contributions) const {
  if (contributions.empty()) throw PlanError("block " + id.str() + " has no contributions");
  std::size_t total = 0;
  for (const auto& c : contributions) total += c.weight;
  if (total == 0) throw PlanError("block " + id.str() + " has zero total weight");
  const double denom = static_cast<double>(total);

  const std::size_t n = contributions.front().params.size();
  std::vector<double> out(n);
  const double w0 = static_cast<double>(contributions.front().weight) / denom;
  for (std::size_t i = 0; i < n; ++i) out[i] = w0 * contributions.front().params[i];
  for (std::size_t k = 1; k < contributions.size(); ++k) {
    const auto& c = contributions[k];
    if (c.params.size() != n) {
      throw BlockError(fmt::format("block {}: client {} sent {} values, expected {}", id.str(), c.client_id,
                                   c.params.size(), n));
    }
    const double w = static_cast<double>(c.weight) / denom;
    for (std::size_t i = 0; i < n; ++i) out[i] += w * c.params[i];
  }
  return out;
}

BlockStore aggregate(const AggregationPlan& plan, std::span<const LocalUpdate> updates, const BlockStore& previous,
                     const AggregationStrategy& strategy) {
  BlockStore next = previous;
  for (const auto& [id, entries] : plan.blocks) {
    std::vector<PlanEntry> ordered = entries;
    std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
    std::vector<AggregationStrategy::Contribution> contributions;
    for (const auto& e : ordered) {
      const auto it = std::find_if(updates.begin(), updates.end(),
                                   [&](const LocalUpdate& u) { return u.client_id == e.client_id; });
      if (it == updates.end()) {
        throw ProtocolError(fmt::format("block {}: no update from planned client {}", id.str(), e.client_id));
      }
      const auto block = it->blocks.find(id);
      if (block == it->blocks.end()) {
        throw ProtocolError(fmt::format("client {} did not send planned block {}", e.client_id, id.str()));
      }
      contributions.push_back({e.client_id, e.weight, block->second});
    }
    next[id] = strategy.combine(id, contributions);
  }
  return next;
}

GlobalState init_global_state(const BlockedModel& init, AggregationMode mode) {
  GlobalState state;
  for (const auto& id : init.block_ids()) {
    if (!is_private(mode, id)) state.blocks[id] = extract_block(init, id);
  }
  return state;
}

BlockStore dispatch(const GlobalState& state, const ClientState& client, AggregationMode mode) {
  BlockStore out;
  for (const auto& id : required_blocks(client, mode, client.mask.size())) {
    const auto it = state.blocks.find(id);
    if (it == state.blocks.end()) throw ProtocolError("global state has no block " + id.str());
    out[id] = it->second;
  }
  return out;
}

std::map<BlockId, std::size_t> block_sizes(const BlockedModel& model) {
  std::map<BlockId, std::size_t> out;
  for (const auto& id : model.block_ids()) out[id] = model.block_size(id);
  return out;
}

RoundResult run_round(GlobalState& state, std::vector<ClientState>& clients, const BlockedModel& base,
                      const Dataset& data, const RoundOptions& options, const AggregationStrategy& strategy) {
  if (state.round >= options.total_rounds) {
    throw ProtocolError(fmt::format("round {} requested but only {} rounds are configured", state.round + 1,
                                    options.total_rounds));
  }
  const std::size_t round = state.round + 1;

  std::vector<ClientState*> active;
  for (auto& c : clients) {
    const bool selected = options.participants.empty() ||
                          std::find(options.participants.begin(), options.participants.end(), c.id) !=
                              options.participants.end();
    if (selected) active.push_back(&c);
  }
  std::sort(active.begin(), active.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

  RoundResult result;
  std::vector<LocalUpdate> updates;
  std::vector<Participant> participants;
  for (ClientState* c : active) {
    try {
      const BlockStore received = dispatch(state, *c, options.mode);
      updates.push_back(local_train(*c, received, base, data, options.mode, options.hyper, round, options.observer));
      participants.push_back({c->id, c->mask, c->n_samples()});
    } catch (const ClientSkip&) {
      result.skipped.push_back(c->id);
    } catch (const Error& e) {
      throw ProtocolError(fmt::format("round {}, client {}: {}", round, c->id, e.what()));
    }
  }

  result.plan = build_plan(options.mode, participants, base.spec().n_modalities());
  try {
    state.blocks = aggregate(result.plan, updates, state.blocks, strategy);
  } catch (const Error& e) {
    throw ProtocolError(fmt::format("round {}: {}", round, e.what()));
  }
  state.round = round;
  result.params_exchanged = round_comm_cost(result.plan, block_sizes(base));
  state.plans.push_back(result.plan);

  if (options.evaluate) {
    state.history.push_back(evaluate_round(round, state, clients, base, data, options.mode, options.eval_target,
                                           options.server_eval, result.params_exchanged));
  }
  return result;
}

RoundMetrics evaluate_round(std::size_t round, const GlobalState& state, const std::vector<ClientState>& clients,
                            const BlockedModel& base, const Dataset& data, AggregationMode mode,
                            EvalTarget target, std::span<const std::size_t> server_eval,
                            std::size_t params_exchanged) {
  std::vector<ClientScore> scores;
  for (const auto& c : clients) {
    const std::span<const std::size_t> indices =
        target == EvalTarget::Server ? server_eval : std::span<const std::size_t>(c.eval_shard);
    ClientScore s{c.id, c.mask.label(), indices.size(), 0.0, 0.0};
    if (!indices.empty()) {
      const BlockedModel model = assemble_model(c, dispatch(state, c, mode), base);
      const EvalResult r = evaluate(c, model, data, indices);
      s.macro_f1 = r.macro_f1;
      s.accuracy = r.accuracy;
    }
    scores.push_back(std::move(s));
  }
  return summarize_round(round, std::move(scores), params_exchanged);
}

}  // namespace blockfed
