// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "arwkv/checkpoint.hpp"
#include "arwkv/csv.hpp"
#include "arwkv/data.hpp"
#include "arwkv/errors.hpp"
#include "test_util.hpp"

namespace arwkv {
namespace {

using testing::TempDir;

MelSpectrogram random_spec(Index m, Index t, Rng& rng) {
  MelSpectrogram s{m, t, std::vector<float>(static_cast<std::size_t>(m * t)), "rand"};
  for (auto& v : s.data) v = static_cast<float>(rng.normal() * 10);
  return s;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

void expect_format_error(const std::function<void()>& f, const std::string& needle) {
  try {
    f();
    ADD_FAILURE() << "expected FormatError containing '" << needle << "'";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

TEST(Melf, RoundTripIsBitExact) {
  Rng rng(1, "test/melf");
  TempDir dir("melf");
  auto s = random_spec(128, 1024, rng);
  s.data[0] = std::numeric_limits<float>::denorm_min();
  s.data[1] = -std::numeric_limits<float>::denorm_min();
  s.data[2] = 1.5e-40f;
  s.data[3] = -0.0f;
  s.data[4] = std::numeric_limits<float>::max();
  write_melf(s, dir / "a.melf");
  const auto back = read_melf(dir / "a.melf");
  EXPECT_EQ(back.n_mels, 128);
  EXPECT_EQ(back.n_frames, 1024);
  EXPECT_TRUE(same_bits(back.data, s.data));
  EXPECT_EQ(std::filesystem::file_size(dir / "a.melf"), kMelfHeaderBytes + 4 * 128 * 1024);
}

TEST(Melf, HeaderIsLittleEndian) {
  MelSpectrogram s{2, 3, std::vector<float>(6, 1.0f), "x"};
  const std::string b = encode_melf(s);
  ASSERT_EQ(b.size(), kMelfHeaderBytes + 24);
  EXPECT_EQ(b.substr(0, 4), "MELF");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[8], 2);
  EXPECT_EQ(b[12], 3);
}

TEST(Melf, MalformedInputsNameOffsets) {
  MelSpectrogram s{2, 3, std::vector<float>(6, 1.0f), "x"};
  const std::string good = encode_melf(s);
  expect_format_error([&] { decode_melf("MELX" + good.substr(4)); }, "offset 0");
  std::string bad_version = good;
  bad_version[4] = 9;
  expect_format_error([&] { decode_melf(bad_version); }, "offset 4");
  expect_format_error([&] { decode_melf(good.substr(0, good.size() - 2)); }, "offset");
  expect_format_error([&] { decode_melf(good + "zz"); }, "offset 40");
  std::string nan_payload = good;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan_payload.data() + kMelfHeaderBytes + 8, &nan, 4);
  expect_format_error([&] { decode_melf(nan_payload); }, "offset 24");
}

TEST(Melf, WriteRejectsNonFinite) {
  MelSpectrogram s{1, 2, {1.0f, std::numeric_limits<float>::infinity()}, "x"};
  EXPECT_THROW(encode_melf(s), ContractError);
}

class ManifestTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(2, "test/manifest");
    for (int i = 0; i < 3; ++i) write_melf(random_spec(4, 6, rng), dir_ / ("s" + std::to_string(i) + ".melf"));
  }
  TempDir dir_{"manifest"};
};

TEST_F(ManifestTest, ParsesEntriesAndDirectives) {
  const std::string text =
      "# comment\n@num_classes 4\n@split val\n@normalize 1.0 2.0\n\n"
      "s0.melf\t2\ns1.melf\t0,3\t0.25,0.75\ns2.melf\t1,2\n";
  const Manifest m = parse_manifest(text, dir_.path());
  EXPECT_EQ(m.num_classes, 4);
  EXPECT_EQ(m.split, "val");
  ASSERT_EQ(m.entries.size(), 3u);
  const Dataset ds = load_dataset(m);
  ASSERT_EQ(ds.size(), 3);
  EXPECT_EQ(ds.targets[0], (std::vector<double>{0, 0, 1, 0}));
  EXPECT_EQ(ds.targets[1], (std::vector<double>{0.25, 0, 0, 0.75}));
  EXPECT_EQ(ds.targets[2], (std::vector<double>{0, 0.5, 0.5, 0}));
  EXPECT_EQ(ds.primary_label(1), 3);
  const auto raw = read_melf(dir_ / "s0.melf");
  EXPECT_FLOAT_EQ(ds.samples[0].data[5], static_cast<float>((raw.data[5] - 1.0) / 2.0));
}

TEST_F(ManifestTest, ErrorsNameTheLine) {
  expect_format_error([&] { parse_manifest("s0.melf\t1\n", dir_.path(), "m.tsv"); }, "num_classes");
  expect_format_error([&] { parse_manifest("@num_classes 3\ns0.melf\t7\n", dir_.path(), "m.tsv"); }, "m.tsv:2");
  expect_format_error([&] { parse_manifest("@num_classes 3\n\nmissing.melf\t1\n", dir_.path(), "m.tsv"); },
                      "m.tsv:3");
  expect_format_error([&] { parse_manifest("@num_classes 3\ns0.melf\tx\n", dir_.path(), "m.tsv"); }, "m.tsv:2");
  expect_format_error([&] { parse_manifest("@num_classes 3\ns0.melf\t0,1\t0.5\n", dir_.path(), "m.tsv"); },
                      "m.tsv:2");
  expect_format_error([&] { parse_manifest("@bogus 1\n", dir_.path(), "m.tsv"); }, "m.tsv:1");
}

TEST(Synthetic, DeterministicAndSplitsDiffer) {
  SyntheticTaskSpec task;
  const auto a = gen_synthetic(task, 20), b = gen_synthetic(task, 20), v = gen_synthetic(task, 20, "val");
  for (Index i = 0; i < 20; ++i) {
    EXPECT_TRUE(same_bits(a.samples[i].data, b.samples[i].data));
    EXPECT_EQ(a.labels[i], b.labels[i]);
  }
  EXPECT_FALSE(same_bits(a.samples[0].data, v.samples[0].data));
}

TEST(Synthetic, LabelsUniformWithinThreeSigma) {
  SyntheticTaskSpec task;
  task.n_mels = 8;
  task.n_frames = 10;
  const Index n = 10000, K = task.num_classes;
  const auto ds = gen_synthetic(task, n);
  std::vector<Index> hist(K, 0);
  for (Index i = 0; i < n; ++i) ++hist[ds.primary_label(i)];
  const double mean = double(n) / K, sigma = std::sqrt(n * (1.0 / K) * (1 - 1.0 / K));
  for (Index h : hist) EXPECT_LE(std::abs(h - mean), 3 * sigma);
}

TEST(Synthetic, NoiselessMatchedFilterIsPerfect) {
  SyntheticTaskSpec task;
  task.snr_db = std::numeric_limits<double>::infinity();
  for (auto cue : {CuePosition::Anywhere, CuePosition::Early10Pct}) {
    task.cue_position = cue;
    const auto ds = gen_synthetic(task, 300);
    for (Index i = 0; i < ds.size(); ++i) ASSERT_EQ(matched_filter_classify(task, ds.samples[i]), ds.primary_label(i));
  }
}

TEST(Synthetic, MatchedFilterAtTwentyDb) {
  SyntheticTaskSpec task;
  task.snr_db = 20;
  const auto ds = gen_synthetic(task, 500);
  Index ok = 0;
  for (Index i = 0; i < ds.size(); ++i) ok += matched_filter_classify(task, ds.samples[i]) == ds.primary_label(i);
  EXPECT_GE(double(ok) / ds.size(), 0.99);
}

TEST(Synthetic, EarlyCueStaysInFirstTenth) {
  SyntheticTaskSpec task;
  task.snr_db = std::numeric_limits<double>::infinity();
  task.cue_position = CuePosition::Early10Pct;
  const auto ds = gen_synthetic(task, 100);
  const Index limit = task.n_frames / 10 + task.cue_frames();
  for (const auto& s : ds.samples)
    for (Index m = 0; m < s.n_mels; ++m)
      for (Index t = limit; t < s.n_frames; ++t) ASSERT_EQ(s.at(m, t), 0.0f);
}

TEST(Synthetic, SpecParsing) {
  const auto t = parse_synthetic_spec("classes=4,n_mels=16,n_frames=20,snr_db=3.5,cue=early_10pct,seed=9");
  EXPECT_EQ(t.num_classes, 4);
  EXPECT_EQ(t.n_mels, 16);
  EXPECT_EQ(t.n_frames, 20);
  EXPECT_DOUBLE_EQ(t.snr_db, 3.5);
  EXPECT_EQ(t.cue_position, CuePosition::Early10Pct);
  EXPECT_EQ(t.seed, 9u);
  EXPECT_THROW(parse_synthetic_spec("colour=red"), ConfigError);
  EXPECT_THROW(parse_synthetic_spec("classes=1"), ConfigError);
}

TEST(Batching, EveryEpochCoversDatasetOnce) {
  for (Index n : {1, 7, 32, 101}) {
    const BatchIterator it(n, 8, 5);
    for (Index e = 0; e < 3; ++e) {
      std::multiset<Index> seen;
      const auto batches = it.epoch(e);
      EXPECT_EQ(static_cast<Index>(batches.size()), it.batches_per_epoch());
      for (std::size_t b = 0; b < batches.size(); ++b) {
        seen.insert(batches[b].indices.begin(), batches[b].indices.end());
        EXPECT_EQ(batches[b].short_batch, b + 1 == batches.size() && n % 8 != 0);
      }
      std::multiset<Index> want;
      for (Index i = 0; i < n; ++i) want.insert(i);
      EXPECT_EQ(seen, want);
    }
  }
  const BatchIterator it(50, 10, 1);
  EXPECT_NE(it.order(0), it.order(1));
  EXPECT_EQ(it.order(2), BatchIterator(50, 10, 1).order(2));
  std::vector<Index> identity(50);
  for (Index i = 0; i < 50; ++i) identity[i] = i;
  EXPECT_EQ(BatchIterator(50, 10, 1, false).order(3), identity);
}

TEST(Batching, MakeBatchStacksSamples) {
  SyntheticTaskSpec task;
  task.n_mels = 4;
  task.n_frames = 5;
  const auto ds = gen_synthetic(task, 3);
  const auto b = make_batch<double>(ds, {2, 0});
  EXPECT_EQ(b.inputs.shape(), (Shape{2, 1, 4, 5}));
  EXPECT_EQ(b.inputs.at({0, 0, 1, 3}), static_cast<double>(ds.samples[2].at(1, 3)));
  EXPECT_EQ(b.targets.at({1, ds.primary_label(0)}), 1.0);
}

TEST(Checkpoint, RoundTripIsBitExactWithSubnormals) {
  TempDir dir("ckpt");
  Model<float> m(ModelConfig::preset("nano"), 4);
  Tensor<float> w = m.param("head.weight").value();
  w[0] = std::numeric_limits<float>::denorm_min();
  w[1] = -3.0e-42f;
  w[2] = -0.0f;
  m.set_param("head.weight", w);
  save_model(m, dir / "m.ckpt");
  const auto back = load_model<float>(dir / "m.ckpt");
  EXPECT_EQ(back.config(), m.config());
  for (const auto& [name, p] : m.parameters()) {
    const auto& q = back.param(name).value();
    ASSERT_EQ(q.shape(), p.value().shape()) << name;
    EXPECT_EQ(std::memcmp(q.ptr(), p.value().ptr(), sizeof(float) * q.numel()), 0) << name;
  }
  EXPECT_EQ(encode_checkpoint(to_checkpoint(back)), encode_checkpoint(to_checkpoint(m)));
}

TEST(Checkpoint, MalformedInputsNameOffsets) {
  const Model<float> m(ModelConfig::preset("nano"), 0);
  const std::string good = encode_checkpoint(to_checkpoint(m));
  expect_format_error([&] { decode_checkpoint("XXXX" + good.substr(4)); }, "offset 0");
  std::string bad_version = good;
  bad_version[4] = 2;
  expect_format_error([&] { decode_checkpoint(bad_version); }, "offset 4");
  expect_format_error([&] { decode_checkpoint(good.substr(0, good.size() - 3)); }, "offset");
  Checkpoint c = to_checkpoint(m);
  c.tensors.pop_back();
  EXPECT_THROW(model_from_checkpoint<float>(c), FormatError);
  c = to_checkpoint(m);
  c.tensors.emplace_back("extra", Tensor<float>({1}));
  EXPECT_THROW(model_from_checkpoint<float>(c), FormatError);
  c = to_checkpoint(m);
  c.tensors[0].second = Tensor<float>({1});
  EXPECT_THROW(model_from_checkpoint<float>(c), FormatError);
}

TEST(Csv, RoundTripWithQuoting) {
  TempDir dir("csv");
  const CsvRow schema{"name", "value", "note"};
  const std::vector<CsvRow> rows{{"a", "1.5", ""}, {"b,c", "-2", "say \"hi\""}, {"multi", "3", "line\nbreak"}};
  emit_csv(rows, schema, dir / "t.csv");
  const auto back = read_csv(dir / "t.csv");
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back[0], schema);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(back[i + 1], rows[i]);
  EXPECT_EQ(csv_escape("x\"y"), "\"x\"\"y\"");
}

TEST(Csv, SchemaViolationWritesNothing) {
  TempDir dir("csv");
  EXPECT_THROW(emit_csv({{"1", "2"}}, {"a", "b", "c"}, dir / "bad.csv"), ContractError);
  EXPECT_FALSE(std::filesystem::exists(dir / "bad.csv"));
}

TEST(Csv, WriterFlushesEachRow) {
  TempDir dir("csv");
  CsvWriter w(dir / "w.csv", {"a", "b"});
  w.write({"1", "2"});
  EXPECT_EQ(read_csv(dir / "w.csv").size(), 2u);
  EXPECT_THROW(w.write({"1"}), ContractError);
}

}  // namespace
}  // namespace arwkv
