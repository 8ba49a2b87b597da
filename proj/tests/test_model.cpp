#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "blockfed/checkpoint.hpp"
#include "blockfed/errors.hpp"
#include "blockfed/model.hpp"
#include "support.hpp"

using namespace blockfed;
using namespace blockfed::testing;

namespace {

ModelSpec small_spec(FusionVariant fusion) {
  ModelSpec s;
  s.input_dims = {3, 4};
  s.hidden_dim = 5;
  s.embed_dim = 3;
  s.fusion_dim = 4;
  s.n_classes = 3;
  s.fusion = fusion;
  return s;
}

// Scalar-loop forward pass written against the documented parameter layout,
// independent of the tape ops.
std::vector<double> oracle_logits(const BlockedModel& model, const ModalityInputs& in, const ModalityMask& mask,
                                  std::size_t row) {
  const auto& s = model.spec();
  const std::size_t M = s.n_modalities(), d = s.embed_dim, h = s.hidden_dim, f = s.fusion_dim;
  std::vector<std::vector<double>> e(M, std::vector<double>(d, 0.0));
  for (std::size_t m = 0; m < M; ++m) {
    if (!mask.present(m)) continue;
    const auto& p = model.block(BlockId::encoder(m));
    const Tensor& x = *in[m];
    std::vector<double> hid(h);
    for (std::size_t j = 0; j < h; ++j) {
      double a = p[1][j];
      for (std::size_t i = 0; i < s.input_dims[m]; ++i) a += x.at(row, i) * p[0].at(i, j);
      hid[j] = std::tanh(a);
    }
    for (std::size_t k = 0; k < d; ++k) {
      double a = p[3][k];
      for (std::size_t j = 0; j < h; ++j) a += hid[j] * p[2].at(j, k);
      e[m][k] = std::tanh(a);
    }
  }
  const auto& fp = model.block(BlockId::fusion());
  std::vector<double> fused(f);
  if (s.fusion == FusionVariant::Concat) {
    for (std::size_t j = 0; j < f; ++j) {
      double a = fp[1][j];
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t k = 0; k < d; ++k) a += e[m][k] * fp[0].at(m * d + k, j);
      fused[j] = std::tanh(a);
    }
  } else {
    std::vector<double> score(M), alpha(M);
    double mx = -1e300, z = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      score[m] = 0.0;
      for (std::size_t k = 0; k < d; ++k) score[m] += e[m][k] * fp[0].at(k, m);
      mx = std::max(mx, score[m]);
    }
    for (std::size_t m = 0; m < M; ++m) z += alpha[m] = std::exp(score[m] - mx);
    for (auto& a : alpha) a /= z;
    std::vector<double> mixed(d, 0.0);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t k = 0; k < d; ++k) mixed[k] += alpha[m] * e[m][k];
    for (std::size_t j = 0; j < f; ++j) {
      double a = fp[2][j];
      for (std::size_t k = 0; k < d; ++k) a += mixed[k] * fp[1].at(k, j);
      fused[j] = std::tanh(a);
    }
  }
  const auto& hp = model.block(BlockId::head());
  std::vector<double> logits(s.n_classes);
  for (std::size_t c = 0; c < s.n_classes; ++c) {
    logits[c] = hp[1][c];
    for (std::size_t j = 0; j < f; ++j) logits[c] += fused[j] * hp[0].at(j, c);
  }
  return logits;
}

void expect_matches_oracle(const BlockedModel& model, const ModalityInputs& in, const ModalityMask& mask,
                           std::size_t batch) {
  const Tensor logits = predict_logits(model, in, mask);
  for (std::size_t r = 0; r < batch; ++r) {
    const auto want = oracle_logits(model, in, mask, r);
    for (std::size_t c = 0; c < want.size(); ++c) EXPECT_NEAR(logits.at(r, c), want[c], 1e-12);
  }
}

}  // namespace

TEST(BlockIdTest, StrAndParseRoundTrip) {
  for (auto id : {BlockId::encoder(0), BlockId::encoder(7), BlockId::fusion(), BlockId::head()}) {
    EXPECT_EQ(BlockId::parse(id.str()), id);
  }
  EXPECT_THROW(BlockId::parse("encoder:"), BlockError);
  EXPECT_THROW(BlockId::parse("decoder"), BlockError);
  EXPECT_LT(BlockId::encoder(1), BlockId::fusion());
  EXPECT_LT(BlockId::fusion(), BlockId::head());
}

TEST(ModalityMaskTest, LabelsAndEmptyMask) {
  EXPECT_EQ(ModalityMask::all(2).label(), "m0+m1");
  EXPECT_EQ(ModalityMask::only(2, 1).label(), "m1");
  EXPECT_THROW(ModalityMask(std::vector<bool>{false, false}), SpecError);
}

TEST(Init, SameSeedSameParameters) {
  const auto spec = small_spec(FusionVariant::Attention);
  EXPECT_EQ(flatten(init_model(spec, 5)), flatten(init_model(spec, 5)));
  EXPECT_NE(flatten(init_model(spec, 5)), flatten(init_model(spec, 6)));
}

TEST(Init, FanInFourBoundedByHalf) {
  ModelSpec spec = small_spec(FusionVariant::Concat);
  spec.input_dims = {4, 4};
  const auto model = init_model(spec, 1);
  for (const auto& t : {model.block(BlockId::encoder(0))[0], model.block(BlockId::encoder(0))[1]}) {
    for (double v : t.data()) {
      EXPECT_GE(v, -0.5);
      EXPECT_LE(v, 0.5);
    }
  }
}

TEST(Init, EveryTensorWithinItsBound) {
  const auto spec = small_spec(FusionVariant::Attention);
  const auto model = init_model(spec, 2);
  const std::size_t fan[] = {3, 3, 5, 5};
  for (std::size_t t = 0; t < 4; ++t) {
    for (double v : model.block(BlockId::encoder(0))[t].data()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(fan[t]));
  }
  for (const auto& t : model.block(BlockId::fusion())) {
    for (double v : t.data()) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(3.0));
  }
}

TEST(Init, RejectsBadSpec) {
  ModelSpec spec = small_spec(FusionVariant::Concat);
  spec.embed_dim = 0;
  EXPECT_THROW(init_model(spec, 1), SpecError);
  spec = small_spec(FusionVariant::Concat);
  spec.input_dims.clear();
  EXPECT_THROW(init_model(spec, 1), SpecError);
}

TEST(Blocks, PartitionCoversEveryParameterOnce) {
  for (auto fusion : {FusionVariant::Concat, FusionVariant::Attention}) {
    const auto model = init_model(small_spec(fusion), 3);
    std::size_t total = 0;
    std::vector<double> joined;
    for (const auto& id : model.block_ids()) {
      auto b = extract_block(model, id);
      total += b.size();
      joined.insert(joined.end(), b.begin(), b.end());
    }
    EXPECT_EQ(total, model.parameter_count());
    EXPECT_EQ(joined, flatten(model));
  }
}

TEST(Blocks, BlockSizesMatchLayout) {
  const auto model = init_model(small_spec(FusionVariant::Attention), 3);
  EXPECT_EQ(model.block_size(BlockId::encoder(0)), 3u * 5 + 5 + 5 * 3 + 3);
  EXPECT_EQ(model.block_size(BlockId::encoder(1)), 4u * 5 + 5 + 5 * 3 + 3);
  EXPECT_EQ(model.block_size(BlockId::fusion()), 3u * 2 + 3 * 4 + 4);
  EXPECT_EQ(model.block_size(BlockId::head()), 4u * 3 + 3);
  const auto concat = init_model(small_spec(FusionVariant::Concat), 3);
  EXPECT_EQ(concat.block_size(BlockId::fusion()), 6u * 4 + 4);
}

TEST(Blocks, ExtractInsertRoundTrip) {
  auto model = init_model(small_spec(FusionVariant::Concat), 4);
  const auto before = model;
  for (const auto& id : model.block_ids()) insert_block(model, id, extract_block(model, id));
  EXPECT_EQ(model, before);
  auto flat = flatten(model);
  unflatten(model, flat);
  EXPECT_EQ(model, before);
}

TEST(Blocks, EqualEncodersExtractEqual) {
  auto a = init_model(small_spec(FusionVariant::Concat), 1);
  auto b = init_model(small_spec(FusionVariant::Concat), 2);
  insert_block(b, BlockId::encoder(1), extract_block(a, BlockId::encoder(1)));
  EXPECT_EQ(extract_block(a, BlockId::encoder(1)), extract_block(b, BlockId::encoder(1)));
}

TEST(Blocks, InsertWrongLengthOrMissingBlock) {
  auto model = init_model(small_spec(FusionVariant::Concat), 1);
  std::vector<double> shorter(model.block_size(BlockId::head()) - 1);
  EXPECT_THROW(insert_block(model, BlockId::head(), shorter), BlockError);
  EXPECT_THROW(extract_block(model, BlockId::encoder(2)), BlockError);
  EXPECT_FALSE(model.has_block(BlockId::encoder(2)));
}

TEST(Blocks, ZeroHeadGivesBiasOnlyLogits) {
  auto model = init_model(small_spec(FusionVariant::Concat), 1);
  const auto enc = extract_block(model, BlockId::encoder(0));
  std::vector<double> zeros(model.block_size(BlockId::head()), 0.0);
  insert_block(model, BlockId::head(), zeros);
  Rng rng(1);
  const auto mask = ModalityMask::all(2);
  const Tensor logits = predict_logits(model, random_inputs(model.spec(), mask, 4, rng), mask);
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(extract_block(model, BlockId::encoder(0)), enc);
}

TEST(Blocks, SpliceMatchesHybridOracle) {
  const auto a = init_model(small_spec(FusionVariant::Concat), 10);
  auto b = init_model(small_spec(FusionVariant::Concat), 20);
  BlockedModel hybrid = b;
  hybrid.blocks()[0] = a.blocks()[0];
  insert_block(b, BlockId::encoder(0), extract_block(a, BlockId::encoder(0)));
  Rng rng(3);
  const auto mask = ModalityMask::only(2, 0);
  const auto in = random_inputs(b.spec(), mask, 6, rng);
  EXPECT_EQ(predict_logits(b, in, mask), predict_logits(hybrid, in, mask));
  expect_matches_oracle(b, in, mask, 6);
}

TEST(Forward, ConcatMatchesScalarOracle) {
  const auto model = init_model(small_spec(FusionVariant::Concat), 7);
  Rng rng(8);
  for (const auto& mask : {ModalityMask::all(2), ModalityMask::only(2, 0), ModalityMask::only(2, 1)}) {
    expect_matches_oracle(model, random_inputs(model.spec(), mask, 5, rng), mask, 5);
  }
}

TEST(Forward, AttentionMatchesScalarOracle) {
  const auto model = init_model(small_spec(FusionVariant::Attention), 7);
  Rng rng(9);
  for (const auto& mask : {ModalityMask::all(2), ModalityMask::only(2, 0), ModalityMask::only(2, 1)}) {
    expect_matches_oracle(model, random_inputs(model.spec(), mask, 5, rng), mask, 5);
  }
}

TEST(Forward, AttentionKeepsZeroedSlotsInSoftmax) {
  const auto model = init_model(small_spec(FusionVariant::Attention), 7);
  Rng rng(10);
  const auto mask = ModalityMask::only(2, 0);
  Tape tape;
  auto pass = forward(tape, model, random_inputs(model.spec(), mask, 4, rng), mask, false);
  const Tensor& alpha = pass.attention->value();
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_LT(alpha.at(r, 0), 1.0);
    EXPECT_GT(alpha.at(r, 1), 0.0);
    EXPECT_NEAR(alpha.at(r, 0) + alpha.at(r, 1), 1.0, 1e-15);
  }
}

TEST(Forward, AbsentModalityIgnoresItsEncoder) {
  for (auto fusion : {FusionVariant::Concat, FusionVariant::Attention}) {
    auto model = init_model(small_spec(fusion), 11);
    Rng rng(12);
    const auto mask = ModalityMask::only(2, 0);
    const auto in = random_inputs(model.spec(), mask, 4, rng);
    const Tensor before = predict_logits(model, in, mask);
    std::vector<double> noise(model.block_size(BlockId::encoder(1)));
    for (auto& v : noise) v = rng.uniform(-5, 5);
    insert_block(model, BlockId::encoder(1), noise);
    EXPECT_EQ(predict_logits(model, in, mask), before);
    Tape tape;
    auto pass = forward(tape, model, in, mask, false);
    for (double v : pass.embeddings[1].value().data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Forward, MaskAndInputsMustAgree) {
  const auto model = init_model(small_spec(FusionVariant::Concat), 1);
  Rng rng(1);
  const auto all = ModalityMask::all(2);
  auto in = random_inputs(model.spec(), all, 2, rng);
  Tape tape;
  EXPECT_THROW(forward(tape, model, in, ModalityMask::only(2, 0)), MaskMismatchError);
  in[1].reset();
  EXPECT_THROW(forward(tape, model, in, all), MaskMismatchError);
  EXPECT_THROW(forward(tape, model, in, ModalityMask::all(3)), MaskMismatchError);
  auto wrong = random_inputs(model.spec(), all, 2, rng);
  wrong[0] = random_tensor({2, 5}, rng);
  EXPECT_THROW(forward(tape, model, wrong, all), DimensionError);
}

TEST(Gradients, FiniteDifferencesAllVariantsAndMasks) {
  for (auto fusion : {FusionVariant::Concat, FusionVariant::Attention}) {
    const auto model = init_model(small_spec(fusion), 21);
    Rng rng(22);
    for (const auto& mask : {ModalityMask::all(2), ModalityMask::only(2, 0), ModalityMask::only(2, 1)}) {
      const auto in = random_inputs(model.spec(), mask, 4, rng);
      const auto y = random_labels(4, 3, rng);
      const auto r = check_model_gradients(model, in, mask, y);
      EXPECT_EQ(r.failures, 0u) << to_string(fusion) << " " << mask.label() << ": " << r.first_failure;
      EXPECT_EQ(r.checked, model.parameter_count());
    }
  }
}

TEST(Gradients, AbsentEncoderGradientIsExactlyZero) {
  for (auto fusion : {FusionVariant::Concat, FusionVariant::Attention}) {
    const auto model = init_model(small_spec(fusion), 31);
    Rng rng(32);
    for (std::size_t absent = 0; absent < 2; ++absent) {
      const auto mask = ModalityMask::only(2, 1 - absent);
      Tape tape;
      auto pass = forward(tape, model, random_inputs(model.spec(), mask, 6, rng), mask);
      auto g = collect_gradients(backward(tape, cross_entropy(pass.logits, random_labels(6, 3, rng))), pass);
      for (const auto& t : g[absent])
        for (double v : t.data()) EXPECT_EQ(v, 0.0);
      double present_norm = 0.0;
      for (const auto& t : g[1 - absent])
        for (double v : t.data()) present_norm += v * v;
      EXPECT_GT(present_norm, 0.0);
    }
  }
}

// --- checkpoints ----------------------------------------------------------

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "blockfed_test_model";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(CheckpointTest, RoundTripIsBitExact) {
  for (auto fusion : {FusionVariant::Concat, FusionVariant::Attention}) {
    const auto model = init_model(small_spec(fusion), 41);
    const auto path = temp_file("rt_" + to_string(fusion) + ".bin");
    write_checkpoint(path, make_checkpoint(model));
    const auto loaded = to_model(read_checkpoint(path));
    EXPECT_EQ(loaded, model);
  }
}

TEST(CheckpointTest, PartialCheckpointCannotBecomeModel) {
  auto ck = make_checkpoint(init_model(small_spec(FusionVariant::Concat), 1));
  ck.blocks.pop_back();
  const auto path = temp_file("partial.bin");
  write_checkpoint(path, ck);
  const auto back = read_checkpoint(path);
  EXPECT_EQ(back.blocks.size(), ck.blocks.size());
  EXPECT_THROW(to_model(back), BlockError);
}

TEST(CheckpointTest, CorruptFilesAreRejected) {
  const auto path = temp_file("good.bin");
  write_checkpoint(path, make_checkpoint(init_model(small_spec(FusionVariant::Concat), 1)));
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [](const std::filesystem::path& p, const std::string& b) {
    std::ofstream out(p, std::ios::binary);
    out << b;
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  write(temp_file("magic.bin"), bad_magic);
  EXPECT_THROW(read_checkpoint(temp_file("magic.bin")), FormatError);
  write(temp_file("trunc.bin"), bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_checkpoint(temp_file("trunc.bin")), FormatError);
  auto bad_version = bytes;
  bad_version[8] = 99;
  write(temp_file("version.bin"), bad_version);
  EXPECT_THROW(read_checkpoint(temp_file("version.bin")), FormatError);
  EXPECT_THROW(read_checkpoint(temp_file("does_not_exist.bin")), FormatError);
}

TEST(CheckpointTest, SidecarOffsetsPointAtBlockData) {
  const auto model = init_model(small_spec(FusionVariant::Concat), 5);
  const auto ck = make_checkpoint(model);
  const auto path = temp_file("sidecar.bin");
  write_checkpoint(path, ck);
  const auto side = checkpoint_sidecar(ck);
  EXPECT_EQ(side["total_bytes"].get<std::size_t>(), std::filesystem::file_size(path));
  std::ifstream in(path, std::ios::binary);
  for (const auto& b : side["blocks"]) {
    const auto id = BlockId::parse(b["id"].get<std::string>());
    in.seekg(static_cast<std::streamoff>(b["offset_bytes"].get<std::size_t>()));
    double first = 0.0;
    in.read(reinterpret_cast<char*>(&first), sizeof first);
    EXPECT_EQ(first, extract_block(model, id).front()) << id.str();
  }
  EXPECT_EQ(sidecar_path(path).string(), path.string() + ".json");
}
