#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "blockfed/client.hpp"
#include "blockfed/data.hpp"
#include "blockfed/model.hpp"
#include "blockfed/rng.hpp"
#include "blockfed/tensor.hpp"

namespace blockfed::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

inline ModalityInputs random_inputs(const ModelSpec& spec, const ModalityMask& mask, std::size_t batch, Rng& rng) {
  ModalityInputs in(spec.n_modalities());
  for (std::size_t m = 0; m < spec.n_modalities(); ++m) {
    if (mask.present(m)) in[m] = random_tensor({batch, spec.input_dims[m]}, rng);
  }
  return in;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.uniform_index(k));
  return y;
}

inline double model_loss(const BlockedModel& model, const ModalityInputs& in, const ModalityMask& mask,
                         const std::vector<int>& labels) {
  Tape tape;
  auto pass = forward(tape, model, in, mask, false);
  return cross_entropy(pass.logits, labels).value().item();
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double worst_abs = 0.0;
  std::string first_failure;
};

// Central differences on every parameter of `model`. A component passes when
// its absolute error is within abs_tol or its relative error within rel_tol.
inline GradCheck check_model_gradients(const BlockedModel& model, const ModalityInputs& in, const ModalityMask& mask,
                                       const std::vector<int>& labels, double h = 1e-5, double rel_tol = 1e-4,
                                       double abs_tol = 1e-7) {
  Tape tape;
  auto pass = forward(tape, model, in, mask);
  auto loss = cross_entropy(pass.logits, labels);
  const ModelGradients analytic = collect_gradients(backward(tape, loss), pass);

  GradCheck out;
  BlockedModel probe = model;
  for (std::size_t b = 0; b < probe.blocks().size(); ++b) {
    for (std::size_t t = 0; t < probe.blocks()[b].size(); ++t) {
      auto values = probe.blocks()[b][t].data();
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + h;
        const double up = model_loss(probe, in, mask, labels);
        values[i] = saved - h;
        const double down = model_loss(probe, in, mask, labels);
        values[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[b][t][i];
        const double err = std::abs(a - numeric);
        const double scale = std::max(std::abs(a), std::abs(numeric));
        ++out.checked;
        out.worst_abs = std::max(out.worst_abs, err);
        if (err > abs_tol && err > rel_tol * scale) {
          if (out.failures++ == 0) {
            out.first_failure = fmt::format("block {} tensor {} index {}: analytic {} numeric {}", b, t, i, a, numeric);
          }
        }
      }
    }
  }
  return out;
}

// Whole-model FedAvg with no notion of blocks: every client trains a full copy
// of the flattened global vector, then the vectors are averaged with weights
// n_c / N in ascending client order. Every client must hold every modality.
inline std::vector<double> monolithic_fedavg(const BlockedModel& init, const Dataset& data,
                                             const std::vector<std::vector<std::size_t>>& shards,
                                             const std::vector<std::uint64_t>& client_seeds, const TrainHyper& hyper,
                                             std::size_t rounds) {
  std::vector<double> global = flatten(init);
  std::size_t total = 0;
  for (const auto& s : shards) total += s.size();
  const auto mask = ModalityMask::all(init.spec().n_modalities());
  for (std::size_t t = 1; t <= rounds; ++t) {
    std::vector<double> next(global.size(), 0.0);
    for (std::size_t c = 0; c < shards.size(); ++c) {
      BlockedModel local = init;
      unflatten(local, global);
      train_epochs(local, data, shards[c], mask, hyper, derive_seed(client_seeds[c], t));
      const auto v = flatten(local);
      const double w = static_cast<double>(shards[c].size()) / static_cast<double>(total);
      for (std::size_t i = 0; i < v.size(); ++i) next[i] = c == 0 ? w * v[i] : next[i] + w * v[i];
    }
    global = std::move(next);
  }
  return global;
}

}  // namespace blockfed::testing
