#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "blockfed/client.hpp"
#include "blockfed/data.hpp"
#include "blockfed/errors.hpp"
#include "blockfed/rng.hpp"

using namespace blockfed;

namespace {

std::vector<int> class_histogram(std::span<const int> labels, std::span<const std::size_t> positions, std::size_t k) {
  std::vector<int> h(k, 0);
  for (auto p : positions) ++h[static_cast<std::size_t>(labels[p])];
  return h;
}

void expect_partition(const PartitionPlan& plan, std::size_t n_items) {
  std::vector<int> seen(n_items, 0);
  for (const auto& c : plan.clients) {
    EXPECT_TRUE(std::is_sorted(c.begin(), c.end()));
    for (auto i : c) {
      ASSERT_LT(i, n_items);
      ++seen[i];
    }
  }
  for (std::size_t i = 0; i < n_items; ++i) EXPECT_EQ(seen[i], 1) << "position " << i;
}

std::vector<int> balanced_labels(std::size_t per_class, std::size_t k) {
  std::vector<int> y;
  for (std::size_t i = 0; i < per_class * k; ++i) y.push_back(static_cast<int>(i % k));
  return y;
}

// Straight from the documented recipe, without sharing any partition code.
PartitionPlan scripted_dirichlet(const std::vector<int>& labels, std::size_t n_clients, double alpha,
                                 std::uint64_t seed) {
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    Rng rng(derive_seed(seed, attempt));
    std::vector<std::vector<std::size_t>> out(n_clients);
    for (int cls = 0; cls < k; ++cls) {
      std::vector<std::size_t> pos;
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == cls) pos.push_back(i);
      rng.shuffle(pos);
      const auto p = rng.dirichlet(n_clients, alpha);
      double cum = 0.0;
      std::size_t lo = 0;
      for (std::size_t c = 0; c < n_clients; ++c) {
        cum += p[c];
        const std::size_t hi =
            c + 1 == n_clients ? pos.size() : static_cast<std::size_t>(std::floor(static_cast<double>(pos.size()) * cum));
        for (std::size_t i = lo; i < std::max(lo, hi); ++i) out[c].push_back(pos[i]);
        lo = std::max(lo, hi);
      }
    }
    if (std::all_of(out.begin(), out.end(), [](const auto& c) { return !c.empty(); })) {
      for (auto& c : out) std::sort(c.begin(), c.end());
      return {out};
    }
  }
  throw std::runtime_error("no valid attempt");
}

}  // namespace

// --- synthetic tasks ------------------------------------------------------

TEST(Synth, RedundantNoiselessPrototypesAreExact) {
  SynthTask task;
  task.kind = TaskKind::Redundant;
  task.noise_scale = 0.0;
  task.n_samples = 400;
  const auto data = generate(task, 5);
  for (std::size_t m = 0; m < 2; ++m) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      // Nearest one-hot prototype is the largest of the first K coordinates.
      std::size_t best = 0;
      for (std::size_t c = 1; c < task.n_classes; ++c)
        if (data.features[m].at(i, c) > data.features[m].at(i, best)) best = c;
      correct += static_cast<int>(best) == data.labels[i] ? 1 : 0;
    }
    EXPECT_EQ(correct, data.size()) << "modality " << m;
  }
}

namespace {

double single_modality_probe(TaskKind kind) {
  SynthTask task;
  task.kind = kind;
  task.n_samples = 4000;
  const auto data = generate(task, 6);
  const auto split = stratified_split(data.labels, 0.25, 7);

  Dataset single;
  single.features = {data.features[0]};
  single.labels = data.labels;
  single.n_classes = data.n_classes;
  ModelSpec spec;
  spec.input_dims = {task.input_dims[0]};
  spec.n_classes = task.n_classes;
  auto model = init_model(spec, 8);
  const auto mask = ModalityMask::all(1);
  train_epochs(model, single, split.train, mask, TrainHyper{20, 0.3, 32}, 9);

  const auto pred = predict(model, single, split.val, mask);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < split.val.size(); ++i) correct += pred[i] == data.labels[split.val[i]] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(split.val.size());
}

}  // namespace

TEST(Synth, ComplementarySingleModalityProbeIsAtChance) {
  EXPECT_LE(single_modality_probe(TaskKind::Complementary), 0.25 + 0.05);
}

// Same probe on the redundant task, to show the probe itself can learn.
TEST(Synth, RedundantSingleModalityProbeLearns) {
  EXPECT_GE(single_modality_probe(TaskKind::Redundant), 0.9);
}

TEST(Synth, SameSeedBitIdentical) {
  SynthTask task;
  task.n_samples = 200;
  const auto a = generate(task, 1), b = generate(task, 1), c = generate(task, 2);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.features, b.features);
  EXPECT_NE(a.features, c.features);
}

TEST(Synth, LabelsRoughlyUniform) {
  SynthTask task;
  task.n_samples = 8000;
  const auto data = generate(task, 3);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  for (int n : class_histogram(data.labels, all, 4)) EXPECT_NEAR(n, 2000, 3 * std::sqrt(8000 * 0.25 * 0.75));
}

TEST(Synth, ValidateRejectsBadTasks) {
  SynthTask t;
  t.input_dims = {8, 8, 8};
  EXPECT_THROW(t.validate(), SpecError);
  t = {};
  t.input_dims = {3, 8};
  EXPECT_THROW(t.validate(), SpecError);
  t = {};
  t.n_classes = 1;
  EXPECT_THROW(t.validate(), SpecError);
  t = {};
  t.noise_scale = -1;
  EXPECT_THROW(t.validate(), SpecError);
}

TEST(Synth, GatherRespectsMask) {
  SynthTask task;
  task.n_samples = 20;
  const auto data = generate(task, 1);
  std::vector<std::size_t> idx = {3, 1, 7};
  const auto in = data.gather(idx, ModalityMask::only(2, 1));
  EXPECT_FALSE(in[0].has_value());
  ASSERT_TRUE(in[1].has_value());
  EXPECT_EQ(in[1]->rows(), 3u);
  EXPECT_EQ(in[1]->at(1, 2), data.features[1].at(1, 2));
}

TEST(Split, StratifiedCountsPerClass) {
  const auto labels = balanced_labels(50, 4);
  const auto s = stratified_split(labels, 0.2, 3);
  EXPECT_EQ(s.val.size(), 40u);
  EXPECT_EQ(s.train.size(), 160u);
  for (int n : class_histogram(labels, s.val, 4)) EXPECT_EQ(n, 10);
  std::vector<std::size_t> both = s.train;
  both.insert(both.end(), s.val.begin(), s.val.end());
  std::sort(both.begin(), both.end());
  for (std::size_t i = 0; i < both.size(); ++i) EXPECT_EQ(both[i], i);
}

TEST(DatasetIo, RoundTrip) {
  SynthTask task;
  task.n_samples = 50;
  const auto data = generate(task, 4);
  const auto stem = std::filesystem::temp_directory_path() / "blockfed_test_data" / "ds";
  std::filesystem::create_directories(stem.parent_path());
  write_dataset(stem, data, task, 4);
  const auto back = read_dataset(stem);
  EXPECT_EQ(back.labels, data.labels);
  EXPECT_EQ(back.features, data.features);
  EXPECT_EQ(back.n_classes, data.n_classes);
  EXPECT_TRUE(std::filesystem::exists(stem.string() + ".json"));
}

// --- partitions -----------------------------------------------------------

TEST(Dirichlet, HugeAlphaIsNearlyUniform) {
  const auto labels = balanced_labels(1000, 4);
  const auto plan = dirichlet_partition(labels, 10, 1e6, 1);
  expect_partition(plan, labels.size());
  for (const auto& c : plan.clients) {
    for (int n : class_histogram(labels, c, 4)) EXPECT_NEAR(n, 100, 10);
  }
}

TEST(Dirichlet, AlwaysAPartition) {
  const auto labels = balanced_labels(60, 5);
  for (double alpha : {0.05, 0.1, 0.5, 1.0, 10.0}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto plan = dirichlet_partition(labels, 10, alpha, seed);
      expect_partition(plan, labels.size());
      for (const auto& c : plan.clients) EXPECT_FALSE(c.empty());
    }
  }
}

TEST(Dirichlet, MatchesScriptedRecipe) {
  const auto labels = balanced_labels(240, 4);
  for (std::uint64_t seed : {1u, 2u, 3u, 17u}) {
    const auto got = dirichlet_partition(labels, 10, 0.5, seed);
    const auto want = scripted_dirichlet(labels, 10, 0.5, seed);
    EXPECT_EQ(got.clients, want.clients) << "seed " << seed;
  }
}

TEST(Dirichlet, Deterministic) {
  const auto labels = balanced_labels(100, 3);
  EXPECT_EQ(dirichlet_partition(labels, 7, 0.3, 9).clients, dirichlet_partition(labels, 7, 0.3, 9).clients);
}

TEST(Dirichlet, SkewGrowsAsAlphaShrinks) {
  const auto labels = balanced_labels(500, 4);
  auto spread = [&](double alpha) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      for (const auto& c : dirichlet_partition(labels, 10, alpha, seed).clients) {
        const auto h = class_histogram(labels, c, 4);
        total += static_cast<double>(*std::max_element(h.begin(), h.end())) / static_cast<double>(c.size());
      }
    }
    return total;
  };
  EXPECT_GT(spread(0.1), spread(10.0));
}

TEST(Dirichlet, BadArgumentsAndImpossibleRequests) {
  const auto labels = balanced_labels(10, 2);
  EXPECT_THROW(dirichlet_partition({}, 3, 0.5, 1), DataError);
  EXPECT_THROW(dirichlet_partition(labels, 0, 0.5, 1), DataError);
  EXPECT_THROW(dirichlet_partition(labels, 3, 0.0, 1), DataError);
  EXPECT_THROW(dirichlet_partition(labels, 3, -1.0, 1), DataError);
  // 5 samples can never cover 10 clients.
  std::vector<int> tiny = {0, 1, 0, 1, 0};
  EXPECT_THROW(dirichlet_partition(tiny, 10, 0.5, 1), DataError);
}

TEST(Iid, SizesEvenAndHistogramsWithinThreeSigma) {
  const auto labels = balanced_labels(600, 4);
  const auto plan = iid_partition(labels.size(), 10, 5);
  expect_partition(plan, labels.size());
  const double n = 240, p = 0.25, sigma = std::sqrt(n * p * (1 - p));
  for (const auto& c : plan.clients) {
    EXPECT_EQ(c.size(), 240u);
    for (int h : class_histogram(labels, c, 4)) EXPECT_NEAR(h, n * p, 3 * sigma);
  }
}

TEST(Iid, UnevenSizesDifferByOne) {
  const auto plan = iid_partition(103, 10, 1);
  expect_partition(plan, 103);
  for (const auto& c : plan.clients) EXPECT_TRUE(c.size() == 10 || c.size() == 11);
}

TEST(Iid, StratifiedBalancesEveryClass) {
  const auto labels = balanced_labels(95, 4);
  const auto plan = stratified_iid_partition(labels, 10, 2);
  expect_partition(plan, labels.size());
  for (std::size_t k = 0; k < 4; ++k) {
    int lo = 1 << 30, hi = 0;
    for (const auto& c : plan.clients) {
      const int n = class_histogram(labels, c, 4)[k];
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    EXPECT_LE(hi - lo, 1);
  }
}

TEST(Mirror, FollowsReferenceShares) {
  const auto train = balanced_labels(400, 4);
  const auto val = balanced_labels(100, 4);
  const auto ref = dirichlet_partition(train, 10, 0.5, 3);
  const auto mirrored = mirror_partition(train, ref, val, 4);
  expect_partition(mirrored, val.size());
  for (std::size_t c = 0; c < 10; ++c) {
    const auto ht = class_histogram(train, ref.clients[c], 4);
    const auto hv = class_histogram(val, mirrored.clients[c], 4);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(hv[k], ht[k] / 4.0, 1.0) << "client " << c << " class " << k;
  }
}

// --- modality assignment --------------------------------------------------

TEST(Modalities, MissingRates) {
  EXPECT_DOUBLE_EQ(ModalityConfig::parse("0-0-10").missing_rate(), 0.0);
  EXPECT_DOUBLE_EQ(ModalityConfig::parse("3-3-4").missing_rate(), 0.3);
  EXPECT_DOUBLE_EQ(ModalityConfig::parse("5-5-0").missing_rate(), 0.5);
}

TEST(Modalities, AssignmentCountsMatchConfig) {
  for (const char* text : {"0-0-10", "3-3-4", "5-5-0"}) {
    const auto cfg = ModalityConfig::parse(text);
    const auto masks = assign_modalities(cfg, 10, 11);
    std::size_t a = 0, b = 0, c = 0, absent = 0;
    for (const auto& m : masks) {
      if (m.count() == 2) ++c;
      else if (m.present(0)) ++a;
      else ++b;
      absent += 2 - m.count();
    }
    EXPECT_EQ(a, cfg.a);
    EXPECT_EQ(b, cfg.b);
    EXPECT_EQ(c, cfg.c);
    EXPECT_DOUBLE_EQ(static_cast<double>(absent) / 20.0, cfg.missing_rate());
  }
}

TEST(Modalities, ParseVariantsAndErrors) {
  EXPECT_EQ(ModalityConfig::parse("3–3–4"), (ModalityConfig{3, 3, 4}));
  EXPECT_EQ(ModalityConfig::parse("3—3—4"), (ModalityConfig{3, 3, 4}));
  EXPECT_EQ(ModalityConfig::parse("5-5-0").str(), "5-5-0");
  EXPECT_THROW(ModalityConfig::parse("3-3"), ConfigError);
  EXPECT_THROW(ModalityConfig::parse("a-b-c"), ConfigError);
  EXPECT_THROW(assign_modalities({3, 3, 3}, 10, 1), ConfigError);
}

TEST(Modalities, ShuffledButDeterministic) {
  const ModalityConfig cfg{3, 3, 4};
  EXPECT_EQ(assign_modalities(cfg, 10, 5), assign_modalities(cfg, 10, 5));
  bool differs = false;
  for (std::uint64_t s = 6; s < 12 && !differs; ++s) differs = assign_modalities(cfg, 10, s) != assign_modalities(cfg, 10, 5);
  EXPECT_TRUE(differs);
}
