#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "test_util.hpp"
#include "tripse/errors.hpp"
#include "tripse/ops.hpp"
#include "tripse/serialize.hpp"
#include "tripse/tensor.hpp"

using namespace tripse;

TEST(Shape, RejectsZeroExtentAndEmptyRank) {
  EXPECT_THROW(Shape({2, 0, 3}), ShapeError);
  EXPECT_THROW(Shape(std::vector<std::size_t>{}), ShapeError);
}

TEST(Shape, RejectsOverflow) {
  const std::size_t big = std::size_t{1} << 40;
  EXPECT_THROW(Shape({big, big}), ShapeError);
}

TEST(Shape, RowMajorStrides) {
  Shape s{2, 3, 4};
  EXPECT_EQ(s.numel(), 24u);
  EXPECT_EQ(s.strides(), (std::vector<std::size_t>{12, 4, 1}));
}

TEST(TensorNew, ZerosAndConstant) {
  auto z = Tensor::zeros({2, 2});
  for (float v : z.data()) EXPECT_EQ(v, 0.0f);
  auto c = Tensor::constant({3}, 1.5f);
  EXPECT_EQ(c.numel(), 3u);
  for (float v : c.data()) EXPECT_EQ(v, 1.5f);
}

TEST(TensorNew, SeededNormalIsReproducible) {
  auto a = Tensor::normal({4}, 0.0f, 1.0f, 7);
  auto b = Tensor::normal({4}, 0.0f, 1.0f, 7);
  EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(), 4 * sizeof(float)), 0);
  auto c = Tensor::normal({4}, 0.0f, 1.0f, 8);
  EXPECT_NE(std::memcmp(a.data().data(), c.data().data(), 4 * sizeof(float)), 0);
}

TEST(TensorNew, ValueCountMustMatchShape) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<float>(3)), ShapeError);
}

TEST(Tensor, AtUsesRowMajorIndex) {
  Tensor t(Shape{2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.at({1, 2}), 5.0f);
  EXPECT_THROW(t.at({2, 0}), ShapeError);
}

TEST(Backward, SumGivesOnes) {
  auto x = test::random_tensor({2, 3}, 1);
  x.set_requires_grad(true);
  sum(x).backward();
  ASSERT_TRUE(x.has_grad());
  for (float g : x.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, SquareGivesTwoX) {
  auto x = test::random_tensor<double>({5}, 2);
  x.set_requires_grad(true);
  sum(mul(x, x)).backward();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x.data()[i]);
}

TEST(Backward, FanOutAccumulates) {
  auto x = test::random_tensor<double>({3}, 3);
  x.set_requires_grad(true);
  auto y = add(scale(x, 2.0), scale(x, 3.0));
  sum(y).backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 5.0);
}

TEST(Backward, GradsAccumulateAcrossGraphsUntilReset) {
  auto x = Tensor64::constant({2}, 1.0);
  x.set_requires_grad(true);
  sum(x).backward();
  sum(x).backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 2.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, NonScalarRootIsAnError) {
  auto x = test::random_tensor({2}, 4);
  x.set_requires_grad(true);
  EXPECT_THROW(scale(x, 2.0f).backward(), AutodiffError);
}

TEST(Backward, RootWithoutTapeIsAnError) {
  auto x = Tensor::constant({1}, 1.0f);
  EXPECT_THROW(sum(x).backward(), AutodiffError);
}

TEST(Backward, SecondCallOnConsumedGraphIsAnError) {
  auto x = test::random_tensor({3}, 5);
  x.set_requires_grad(true);
  auto root = sum(mul(x, x));
  root.backward();
  EXPECT_THROW(root.backward(), AutodiffError);
}

TEST(Backward, NoGradGuardSkipsTape) {
  auto x = test::random_tensor({3}, 6);
  x.set_requires_grad(true);
  NoGradGuard guard;
  auto y = sum(x);
  EXPECT_FALSE(y.has_node());
}

TEST(Serialize, LayoutIsLittleEndianTsr1) {
  Tensor t(Shape{1, 2}, {1.0f, -2.0f});
  std::ostringstream os;
  write_tensor(os, t);
  const std::string bytes = os.str();
  ASSERT_EQ(bytes.size(), 4u + 4u + 8u + 8u);
  EXPECT_EQ(bytes.substr(0, 4), "TSR1");
  EXPECT_EQ(bytes[4], 2);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[12], 2);
  // 1.0f = 0x3F800000
  EXPECT_EQ(static_cast<unsigned char>(bytes[19]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(bytes[18]), 0x80);
}

TEST(Serialize, RoundTripIsBitwise) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto t = Tensor::normal({2, 3, 1, 4}, 0.0f, 3.0f, seed);
    std::stringstream ss;
    write_tensor(ss, t);
    auto back = read_tensor(ss);
    ASSERT_EQ(back.shape(), t.shape());
    EXPECT_EQ(std::memcmp(back.data().data(), t.data().data(), t.numel() * sizeof(float)), 0);
  }
}

TEST(Serialize, RejectsBadMagicAndTruncation) {
  std::stringstream bad("TSR2xxxxxxxx");
  EXPECT_THROW(read_tensor(bad), FormatError);
  std::ostringstream os;
  write_tensor(os, Tensor::constant({4}, 1.0f));
  std::string cut = os.str().substr(0, os.str().size() - 3);
  std::stringstream truncated(cut);
  EXPECT_THROW(read_tensor(truncated), FormatError);
}
