#pragma once

#include <cstddef>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "blockfed/plan.hpp"

namespace blockfed {

// counts[t * n_classes + p]: samples of true class t predicted as p.
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::size_t> counts;

  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * n_classes + predicted]; }
  std::size_t total() const;
};

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels,
                                 std::size_t n_classes);

// Unweighted mean of per-class F1. A class that never occurs in either the
// predictions or the labels scores 0.
double macro_f1(const ConfusionMatrix& cm);
double macro_f1(std::span<const int> predictions, std::span<const int> labels, std::size_t n_classes);
// Micro-F1; equal to accuracy for single-label classification.
double micro_f1(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);

// Relative improvement of the personalized modes over full-model aggregation,
// in percent. pg = max(ph_gain, phf_gain).
struct GainReport {
  double s_fm = 0.0;
  double s_ph = 0.0;
  double s_phf = 0.0;
  double ph_gain = 0.0;
  double phf_gain = 0.0;
  double pg = 0.0;
};

// Throws UndefinedGainError when s_fm <= 0.
GainReport gains(double s_fm, double s_ph, double s_phf);

struct ClientScore {
  std::size_t client_id = 0;
  std::string group;       // ModalityMask::label()
  std::size_t n_eval = 0;  // weight in group and global means
  double macro_f1 = 0.0;
  double accuracy = 0.0;
};

struct RoundMetrics {
  std::size_t round = 0;  // 1-based
  double global_score = 0.0;
  double global_accuracy = 0.0;
  std::map<std::string, double> group_scores;
  std::vector<ClientScore> clients;
  std::size_t params_exchanged = 0;

  std::size_t bytes_exchanged() const { return params_exchanged * 8; }
};

// Group and global scores as n_eval-weighted means of client scores. Clients
// with n_eval == 0 are listed but carry no weight.
RoundMetrics summarize_round(std::size_t round, std::vector<ClientScore> clients, std::size_t params_exchanged);

struct CurvePoint {
  std::size_t round = 0;
  std::string group;
  std::string mode;
  double score = 0.0;
};

// One series per group, in (group, round) order.
std::vector<CurvePoint> group_curves(std::span<const RoundMetrics> history, const std::string& mode);

// Mean of the last `window` rounds' global score (fewer if the history is shorter).
double final_score(std::span<const RoundMetrics> history, std::size_t window);

// Parameters moved by a plan: every (block, client) entry is one download and
// one upload of that block.
std::size_t round_comm_cost(const AggregationPlan& plan, const std::map<BlockId, std::size_t>& block_sizes);
std::size_t comm_cost(std::span<const AggregationPlan> plans, const std::map<BlockId, std::size_t>& block_sizes);

// Shortest round-trip decimal representation, for deterministic text output.
std::string format_double(double value);

}  // namespace blockfed
