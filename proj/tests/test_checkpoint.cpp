#include <gtest/gtest.h>

#include <random>

#include "lensformer/checkpoint.hpp"
#include "lensformer/lenssim.hpp"
#include "support/tempdir.hpp"

using namespace lensformer;
using lensformer::testing::TempDir;

namespace {

ModelConfig small_model() {
  ModelConfig m = desk_config();
  m.input_size = 8;
  m.backbone = {{4, 3, 1, 1, true}, {8, 3, 1, 1, false}};
  m.attention = {2, 4, 8, true};
  m.ffn_head = {6};
  return m;
}

std::vector<float> values(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Checkpoint, ByteExactRoundTrip) {
  TempDir dir;
  for (auto cfg : {small_model(), cnn_only(small_model()), desk_config()}) {
    const auto model = build<float>(cfg, 31);
    const json meta{{"epochs_completed", 4}, {"note", "x"}};
    const auto bytes = encode_checkpoint(model, meta);
    save_checkpoint(dir / "m.ckpt", model, meta);
    EXPECT_EQ(io::read_file(dir / "m.ckpt"), bytes);

    const auto ck = load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(ck.seed, 31u);
    EXPECT_EQ(ck.meta, meta);
    EXPECT_EQ(json(ck.config), json(cfg));
    const auto back = restore_model<float>(ck);
    EXPECT_EQ(back.parameter_count(), model.parameter_count());
    EXPECT_EQ(encode_checkpoint(back, meta), bytes);
  }
}

TEST(Checkpoint, ParameterCountAccounting) {
  const auto model = build<float>(desk_config(), 2);
  const auto ck = decode_checkpoint(encode_checkpoint(model));
  std::size_t total = 0;
  for (const auto& t : ck.tensors) total += t.tensor.numel();
  EXPECT_EQ(total, model.parameter_count());
}

TEST(Checkpoint, DoubleModelStoresFloat32) {
  const auto d = build<double>(small_model(), 5);
  const auto f = restore_model<float>(decode_checkpoint(encode_checkpoint(d)));
  std::vector<double> a, b;
  d.visit([&](const std::string&, const Tensor<double>& t) {
    for (auto v : t.data()) a.push_back(static_cast<float>(v));
  });
  f.visit([&](const std::string&, const Tensor<float>& t) {
    for (auto v : t.data()) b.push_back(v);
  });
  EXPECT_EQ(a, b);
}

TEST(Checkpoint, CorruptionIsAnIoError) {
  const auto bytes = encode_checkpoint(build<float>(small_model(), 1));
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), IoError);
  EXPECT_THROW(decode_checkpoint("NOTACKPT" + bytes.substr(8)), IoError);
  auto v2 = bytes;
  v2[8] = 2;
  EXPECT_THROW(decode_checkpoint(v2), IoError);
  EXPECT_THROW(decode_checkpoint(""), IoError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/m.ckpt"), IoError);
}

TEST(Checkpoint, ArchitectureMismatchOnRestore) {
  auto ck = decode_checkpoint(encode_checkpoint(build<float>(small_model(), 1)));
  auto wrong = ck;
  wrong.config.ffn_head = {7};
  EXPECT_THROW(restore_model<float>(wrong), IoError);
  auto missing = ck;
  missing.tensors.pop_back();
  EXPECT_THROW(restore_model<float>(missing), IoError);
  auto extra = ck;
  extra.tensors.push_back(ck.tensors.front());
  EXPECT_THROW(restore_model<float>(extra), IoError);
}

TEST(Stamp, EncodeDecodeRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n(0, 10);
  Tensor<float> px({3, 5, 5});
  for (auto& v : px.data()) v = n(rng);
  write_stamp(dir / "a/b/s.lfs", px);
  const auto back = read_stamp(dir / "a/b/s.lfs");
  EXPECT_EQ(back.shape(), px.shape());
  EXPECT_EQ(values(back), values(px));
  EXPECT_EQ(encode_stamp(back), io::read_file(dir / "a/b/s.lfs"));
  const auto bytes = encode_stamp(px);
  EXPECT_THROW(decode_stamp(bytes.substr(0, bytes.size() - 1)), IoError);
  EXPECT_THROW(decode_stamp(bytes + "zz"), IoError);
  EXPECT_THROW(decode_stamp("xxxx" + bytes.substr(4)), IoError);
}

TEST(Manifest, RoundTripAndErrors) {
  TempDir dir;
  std::vector<ManifestRow> rows{{"a", "stamps/a.lfs", 1, 1.25, 0.125, 2.0, 99}, {"b", "stamps/b.lfs", 0, 0, 0, 0, 7}};
  write_manifest(dir / "manifest.jsonl", rows);
  const auto back = read_manifest(dir / "manifest.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].theta_e, 1.25);
  EXPECT_EQ(back[1].seed, 7u);
  io::write_file(dir / "bad.jsonl", "{\"id\":\"a\",\"path\":\"p\",\"label\":1}\n{\"id\":\"b\",\"label\":0}\n");
  try {
    read_manifest(dir / "bad.jsonl");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:2"), std::string::npos) << e.what();
  }
  io::write_file(dir / "label.jsonl", "{\"id\":\"a\",\"path\":\"p\",\"label\":3}\n");
  EXPECT_THROW(read_manifest(dir / "label.jsonl"), IoError);
  // Listed stamp file does not exist.
  EXPECT_THROW(load_dataset(dir / "manifest.jsonl"), IoError);
}

TEST(Manifest, MixedShapesRejected) {
  TempDir dir;
  write_stamp(dir / "a.lfs", Tensor<float>({1, 4, 4}));
  write_stamp(dir / "b.lfs", Tensor<float>({1, 5, 5}));
  write_manifest(dir / "m.jsonl", {{"a", "a.lfs", 0, 0, 0, 0, 0}, {"b", "b.lfs", 1, 0, 0, 0, 0}});
  EXPECT_THROW(load_dataset(dir / "m.jsonl"), IoError);
}
