#include <gtest/gtest.h>

#include "grad_check.hpp"
#include "pfvg/errors.hpp"
#include "pfvg/ops.hpp"
#include "pfvg/tensor.hpp"

using namespace pfvg;

TEST(Tensor, RejectsMismatchedDataLength) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor({0, 3}, {}), ShapeError);
}

TEST(Tensor, FactoriesHaveRequestedShape) {
  std::mt19937_64 rng(1);
  EXPECT_EQ(Tensor::zeros({2, 3}).numel(), 6u);
  EXPECT_EQ(Tensor::full({4}, 2.5)[3], 2.5);
  EXPECT_EQ(Tensor::scalar(7.0).item(), 7.0);
  EXPECT_EQ(Tensor::randn({3, 5}, rng).dims(), (Shape{3, 5}));
}

TEST(Tensor, ItemRequiresSingleElement) {
  EXPECT_THROW(Tensor::zeros({2}).item(), ShapeError);
}

TEST(Backward, SumGivesOnesGradient) {
  std::mt19937_64 rng(2);
  Tensor x = oracle::random_leaf({3, 4, 2}, rng);
  backward(sum(x));
  for (double g : x.grad()) {
    EXPECT_EQ(g, 1.0);
  }
}

TEST(Backward, SquareAtThreeGivesSix) {
  Tensor x = Tensor({1}, {3.0}, true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, NonScalarRootIsContractError) {
  Tensor x = Tensor({2}, {1.0, 2.0}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, GradientsAccumulateAcrossCalls) {
  std::mt19937_64 rng(3);
  Tensor x = oracle::random_leaf({5}, rng);
  Tensor w = oracle::random_weights({5}, 9);
  auto loss1 = [&] { return sum(mul(square(x), w)); };
  auto loss2 = [&] { return sum(gelu(x)); };

  backward(loss1());
  std::vector<double> g1(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(loss2());
  std::vector<double> g2(x.grad().begin(), x.grad().end());
  x.zero_grad();

  backward(loss1());
  backward(loss2());
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(x.grad()[i], g1[i] + g2[i]) << i;  // bit-exact
  }
}

TEST(Backward, SharedSubgraphVisitedOnce) {
  Tensor x = Tensor({1}, {2.0}, true);
  Tensor y = mul(x, x);           // 4, dy/dx = 4
  Tensor z = add(y, y);           // reuses y twice
  backward(sum(z));
  EXPECT_EQ(x.grad()[0], 8.0);
  Tape tape = Tape::record(sum(z));
  EXPECT_EQ(tape.size(), 4u);     // x, y, z, sum
}

TEST(Tape, ParentsPrecedeChildren) {
  std::mt19937_64 rng(4);
  Tensor a = oracle::random_leaf({3, 3}, rng);
  Tensor b = oracle::random_leaf({3, 3}, rng);
  Tensor root = sum(matmul(gelu(a), add(a, b)));
  Tape tape = Tape::record(root);
  const auto& nodes = tape.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (const auto& p : nodes[i]->parents) {
      auto it = std::find(nodes.begin(), nodes.end(), p.get());
      ASSERT_NE(it, nodes.end());
      EXPECT_LT(static_cast<std::size_t>(it - nodes.begin()), i);
    }
  }
}

TEST(NoGrad, GuardStopsRecording) {
  Tensor x = Tensor({1}, {1.0}, true);
  {
    NoGradGuard g;
    EXPECT_FALSE(grad_enabled());
    EXPECT_FALSE(mul(x, x).requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Tensor, DetachCutsHistory) {
  Tensor x = Tensor({1}, {1.0}, true);
  Tensor y = mul(x, x).detach();
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Tensor, MutableDataOnlyForLeaves) {
  Tensor x = Tensor({1}, {1.0}, true);
  EXPECT_NO_THROW(x.mutable_data());
  EXPECT_THROW(mul(x, x).mutable_data(), ContractError);
}

TEST(Determinism, SameInputsSameBits) {
  auto run = [] {
    std::mt19937_64 rng(11);
    Tensor a = Tensor::randn({6, 9}, rng);
    Tensor b = Tensor::randn({9, 4}, rng);
    return softmax_last(matmul(a, b));
  };
  Tensor r1 = run(), r2 = run();
  for (std::size_t i = 0; i < r1.numel(); ++i) {
    EXPECT_EQ(r1[i], r2[i]);
  }
}
