#include "blockfed/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "blockfed/errors.hpp"

namespace blockfed {

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels,
                                 std::size_t n_classes) {
  if (predictions.size() != labels.size()) {
    throw DataError(fmt::format("{} predictions for {} labels", predictions.size(), labels.size()));
  }
  if (labels.empty()) throw DataError("cannot score an empty evaluation set");
  ConfusionMatrix cm{n_classes, std::vector<std::size_t>(n_classes * n_classes, 0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= n_classes || static_cast<std::size_t>(p) >= n_classes) {
      throw IndexError(fmt::format("class index out of range at position {} ({} classes)", i, n_classes));
    }
    ++cm.counts[t * n_classes + p];
  }
  return cm;
}

double macro_f1(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw DataError("cannot score an empty evaluation set");
  double acc = 0.0;
  for (std::size_t k = 0; k < cm.n_classes; ++k) {
    std::size_t tp = cm.at(k, k), support = 0, predicted = 0;
    for (std::size_t j = 0; j < cm.n_classes; ++j) {
      support += cm.at(k, j);
      predicted += cm.at(j, k);
    }
    // F1 = 2TP / (2TP + FP + FN) = 2TP / (support + predicted)
    if (support + predicted > 0) acc += 2.0 * static_cast<double>(tp) / static_cast<double>(support + predicted);
  }
  return acc / static_cast<double>(cm.n_classes);
}

double macro_f1(std::span<const int> predictions, std::span<const int> labels, std::size_t n_classes) {
  return macro_f1(confusion_matrix(predictions, labels, n_classes));
}

double accuracy(const ConfusionMatrix& cm) {
  const auto n = cm.total();
  if (n == 0) throw DataError("cannot score an empty evaluation set");
  std::size_t correct = 0;
  for (std::size_t k = 0; k < cm.n_classes; ++k) correct += cm.at(k, k);
  return static_cast<double>(correct) / static_cast<double>(n);
}

double micro_f1(const ConfusionMatrix& cm) { return accuracy(cm); }

GainReport gains(double s_fm, double s_ph, double s_phf) {
  if (!(s_fm > 0.0)) throw UndefinedGainError(fmt::format("gain undefined for S_FM = {}", s_fm));
  GainReport r{s_fm, s_ph, s_phf, 0.0, 0.0, 0.0};
  r.ph_gain = (s_ph - s_fm) / s_fm * 100.0;
  r.phf_gain = (s_phf - s_fm) / s_fm * 100.0;
  r.pg = std::max(r.ph_gain, r.phf_gain);
  return r;
}

RoundMetrics summarize_round(std::size_t round, std::vector<ClientScore> clients, std::size_t params_exchanged) {
  RoundMetrics m;
  m.round = round;
  m.params_exchanged = params_exchanged;
  std::map<std::string, std::pair<double, double>> groups;  // weighted sum, weight
  double total_w = 0.0, score = 0.0, acc = 0.0;
  for (const auto& c : clients) {
    const double w = static_cast<double>(c.n_eval);
    auto& g = groups[c.group];
    g.first += w * c.macro_f1;
    g.second += w;
    score += w * c.macro_f1;
    acc += w * c.accuracy;
    total_w += w;
  }
  for (const auto& [name, sw] : groups) m.group_scores[name] = sw.second > 0.0 ? sw.first / sw.second : 0.0;
  if (total_w > 0.0) {
    m.global_score = score / total_w;
    m.global_accuracy = acc / total_w;
  }
  m.clients = std::move(clients);
  return m;
}

std::vector<CurvePoint> group_curves(std::span<const RoundMetrics> history, const std::string& mode) {
  std::vector<CurvePoint> out;
  std::map<std::string, std::vector<CurvePoint>> by_group;
  for (const auto& r : history) {
    for (const auto& [group, score] : r.group_scores) by_group[group].push_back({r.round, group, mode, score});
  }
  for (auto& [_, series] : by_group) out.insert(out.end(), series.begin(), series.end());
  return out;
}

double final_score(std::span<const RoundMetrics> history, std::size_t window) {
  if (history.empty()) throw DataError("final_score: empty history");
  const std::size_t n = std::min(std::max<std::size_t>(window, 1), history.size());
  double acc = 0.0;
  for (std::size_t i = history.size() - n; i < history.size(); ++i) acc += history[i].global_score;
  return acc / static_cast<double>(n);
}

std::size_t round_comm_cost(const AggregationPlan& plan, const std::map<BlockId, std::size_t>& block_sizes) {
  std::size_t total = 0;
  for (const auto& [id, entries] : plan.blocks) total += 2 * entries.size() * block_sizes.at(id);
  return total;
}

std::size_t comm_cost(std::span<const AggregationPlan> plans, const std::map<BlockId, std::size_t>& block_sizes) {
  std::size_t total = 0;
  for (const auto& p : plans) total += round_comm_cost(p, block_sizes);
  return total;
}

std::string format_double(double value) { return fmt::format("{}", value); }

}  // namespace blockfed
