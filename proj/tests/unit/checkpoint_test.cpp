#include <gtest/gtest.h>

#include "qrw/checkpoint.hpp"
#include "qrw/error.hpp"
#include "temp_dir.hpp"
#include "toy.hpp"

namespace qrw {
namespace {

using testing::tiny_config;
using testing::toy_model;

template <typename T>
void expect_same(const TensorSet<T>& a, const TensorSet<T>& b) {
  ASSERT_TRUE(a.same_layout(b));
  for (std::size_t i = 0; i < a.count(); ++i) EXPECT_EQ(a[i].data, b[i].data) << a.name(i);
}

template <typename T>
Checkpoint<T> sample_checkpoint(bool with_optimizer) {
  auto p = toy_model<T>(tiny_config(11), 3, false, ModelRole::kBackward);
  Checkpoint<T> c{p, 0x1234abcd5678ef90ULL, 42, std::nullopt};
  if (with_optimizer) {
    auto opt = OptimizerState<T>::for_params(p.tensors());
    opt.t = 42;
    opt.m[0].data[1] = static_cast<T>(0.125);
    opt.v[2].data[0] = static_cast<T>(1.0 / 3.0);
    c.optimizer = opt;
  }
  return c;
}

template <typename T>
class CheckpointTyped : public ::testing::Test {};
using Precisions = ::testing::Types<float, double>;
TYPED_TEST_SUITE(CheckpointTyped, Precisions);

TYPED_TEST(CheckpointTyped, ExactRoundTrip) {
  for (bool with_opt : {false, true}) {
    const auto c = sample_checkpoint<TypeParam>(with_opt);
    const auto back = deserialize_checkpoint<TypeParam>(serialize_checkpoint(c));
    EXPECT_EQ(back.vocab_hash, c.vocab_hash);
    EXPECT_EQ(back.step, 42u);
    EXPECT_EQ(back.params.role(), ModelRole::kBackward);
    EXPECT_TRUE(back.params.config() == c.params.config());
    expect_same(back.params.tensors(), c.params.tensors());
    ASSERT_EQ(back.optimizer.has_value(), with_opt);
    if (with_opt) {
      EXPECT_EQ(back.optimizer->t, 42u);
      expect_same(back.optimizer->m, c.optimizer->m);
      expect_same(back.optimizer->v, c.optimizer->v);
    }
  }
}

TYPED_TEST(CheckpointTyped, FileRoundTripAndInfo) {
  testing::TempDir dir;
  const auto c = sample_checkpoint<TypeParam>(true);
  const auto path = dir.file("m.ckpt");
  save_checkpoint(path, c);
  EXPECT_FALSE(std::filesystem::exists(path + ".tmp"));
  const auto info = read_checkpoint_info(path);
  EXPECT_EQ(info.f64, sizeof(TypeParam) == 8);
  EXPECT_EQ(info.step, 42u);
  EXPECT_EQ(info.vocab_hash, c.vocab_hash);
  EXPECT_EQ(info.role, ModelRole::kBackward);
  expect_same(load_checkpoint<TypeParam>(path).params.tensors(), c.params.tensors());
  EXPECT_EQ(testing::read_file(path), serialize_checkpoint(c));
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = serialize_checkpoint(sample_checkpoint<float>(false));
  ASSERT_GT(bytes.size(), 8u);
  EXPECT_EQ(bytes.substr(0, 4), "QRW1");
  const auto meta_len = static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4])) |
                        static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[5])) << 8 |
                        static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[6])) << 16 |
                        static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[7])) << 24;
  const auto meta = bytes.substr(8, meta_len);
  EXPECT_NE(meta.find("\"dtype\":\"f32\""), std::string::npos);
  EXPECT_NE(meta.find("\"role\":\"backward\""), std::string::npos);
}

TEST(Checkpoint, FloatCheckpointLoadsIntoDouble) {
  const auto c = sample_checkpoint<float>(false);
  const auto back = deserialize_checkpoint<double>(serialize_checkpoint(c));
  const auto& a = c.params.tensors();
  const auto& b = back.params.tensors();
  for (std::size_t i = 0; i < a.count(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) EXPECT_EQ(static_cast<double>(a[i].data[j]), b[i].data[j]);
  }
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto bytes = serialize_checkpoint(sample_checkpoint<float>(true));
  EXPECT_THROW(deserialize_checkpoint<float>("QRW2" + bytes.substr(4)), Error);
  EXPECT_THROW(deserialize_checkpoint<float>(bytes.substr(0, bytes.size() - 3)), Error);
  EXPECT_THROW(deserialize_checkpoint<float>(bytes + "x"), Error);
  EXPECT_THROW(deserialize_checkpoint<float>(""), Error);
  testing::TempDir dir;
  EXPECT_THROW(load_checkpoint<float>(dir.file("missing.ckpt")), Error);
}

}  // namespace
}  // namespace qrw
