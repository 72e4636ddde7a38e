#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "knowgraph/numerics/grad_check.hpp"

using namespace knowgraph;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(r, c);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// Moves every entry at least `gap` away from zero so ReLU kinks stay out of
// the finite-difference stencil.
Tensor off_kink(Tensor t, double gap = 0.05) {
  for (auto& v : t.values())
    if (std::abs(v) < gap) v = v < 0 ? -gap : gap;
  return t;
}

}  // namespace

TEST(Primitives, SigmoidReluIdentity) {
  Tape tape;
  const Var z = tape.constant(Tensor::scalar(0.0));
  EXPECT_DOUBLE_EQ(tape.value(tape.sigmoid(z)).item(), 0.5);

  const Var r = tape.relu(tape.constant(Tensor::from_rows({{-3.0, 2.0}})));
  EXPECT_DOUBLE_EQ(tape.value(r)(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(tape.value(r)(0, 1), 2.0);

  std::mt19937_64 rng(1);
  const Tensor x = random_tensor(2, 3, rng);
  const Var y = tape.matmul(tape.constant(Tensor::identity(2)), tape.constant(x));
  EXPECT_EQ(tape.value(y), x);
}

TEST(Primitives, ShapeMismatchNamesPrimitive) {
  Tape tape;
  const Var a = tape.constant(Tensor(2, 3));
  const Var b = tape.constant(Tensor(2, 3));
  try {
    tape.matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("2x3"), std::string::npos);
  }
  EXPECT_THROW(tape.row_dot(a, tape.constant(Tensor(3, 2))), ShapeError);
}

TEST(Primitives, TransposeFreeProductsMatchTranspose) {
  std::mt19937_64 rng(7);
  const Tensor a = random_tensor(5, 3, rng);
  const Tensor b = random_tensor(5, 4, rng);
  const Tensor c = random_tensor(6, 3, rng);
  EXPECT_LT(max_abs_diff(matmul_tn(a, b), matmul(transpose(a), b)), 1e-14);
  EXPECT_LT(max_abs_diff(matmul_nt(a, c), matmul(a, transpose(c))), 1e-14);
  EXPECT_THROW(matmul_tn(a, c), ShapeError);
}

TEST(Primitives, NonFiniteOutputIsRejected) {
  Tape tape;
  const Var big = tape.constant(Tensor::scalar(1e308));
  EXPECT_THROW(tape.scale(big, 10.0), NumericError);
}

TEST(Primitives, LogClampsAtZero) {
  Tape tape;
  const Var l = tape.log(tape.constant(Tensor::scalar(0.0)));
  EXPECT_DOUBLE_EQ(tape.value(l).item(), std::log(1e-12));
}

TEST(Backward, SquareGivesTwoX) {
  Tape tape;
  const Var x = tape.param("x", Tensor::scalar(3.0));
  const auto g = tape.backward(tape.sum(tape.mul(x, x)));
  EXPECT_DOUBLE_EQ(g.at("x").item(), 6.0);
}

TEST(Backward, SigmoidSlopeAtZero) {
  Tape tape;
  const Var w = tape.param("w", Tensor::scalar(0.0));
  const auto g = tape.backward(tape.sigmoid(w));
  EXPECT_DOUBLE_EQ(g.at("w").item(), 0.25);
}

TEST(Backward, UnusedParameterGetsZeros) {
  Tape tape;
  const Var x = tape.param("x", Tensor::scalar(2.0));
  tape.param("unused", Tensor(2, 3, 1.0));
  const auto g = tape.backward(tape.sum(x));
  ASSERT_EQ(g.at("unused").rows(), 2U);
  ASSERT_EQ(g.at("unused").cols(), 3U);
  for (double v : g.at("unused").values()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, SharedParameterAccumulates) {
  Tape tape;
  const Var x = tape.param("x", Tensor::scalar(1.5));
  const Var y = tape.add(tape.scale(x, 2.0), tape.scale(x, 3.0));
  EXPECT_DOUBLE_EQ(tape.backward(y).at("x").item(), 5.0);
}

TEST(Backward, NonScalarLossIsRejected) {
  Tape tape;
  const Var x = tape.param("x", Tensor(2, 1, 1.0));
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Backward, ForwardIsPure) {
  std::mt19937_64 rng(3);
  ParamSet p{{"w", random_tensor(3, 2, rng)}};
  const Tensor x = random_tensor(4, 3, rng);
  const Objective f = [&](Tape& t, const ParamSet& ps) {
    return t.sum(t.sigmoid(t.matmul(t.constant(x), t.param("w", ps.at("w")))));
  };
  EXPECT_EQ(evaluate(f, p), evaluate(f, p));
}

TEST(GradCheck, QuadraticForm) {
  std::mt19937_64 rng(11);
  const Tensor a = random_tensor(4, 4, rng);
  ParamSet p{{"x", random_tensor(4, 1, rng)}};
  const Objective f = [&](Tape& t, const ParamSet& ps) {
    const Var x = t.param("x", ps.at("x"));
    return t.sum(t.mul(x, t.matmul(t.constant(a), x)));
  };
  EXPECT_LT(grad_check(f, p), 1e-8);
}

TEST(GradCheck, RejectsEpsOutsideRange) {
  ParamSet p{{"x", Tensor::scalar(1.0)}};
  const Objective f = [](Tape& t, const ParamSet& ps) { return t.sum(t.param("x", ps.at("x"))); };
  EXPECT_THROW(grad_check(f, p, 1e-9), ConfigError);
  EXPECT_THROW(grad_check(f, p, 1e-2), ConfigError);
}

TEST(GradCheck, NonFiniteObjectiveIsRejected) {
  ParamSet p{{"x", Tensor::scalar(1.0)}};
  const Objective f = [](Tape& t, const ParamSet& ps) {
    return t.custom("nan", {t.param("x", ps.at("x"))}, Tensor::scalar(std::nan("")),
                    [](const Tensor&) { return std::vector<Tensor>{Tensor::scalar(0.0)}; });
  };
  EXPECT_THROW(grad_check(f, p), NumericError);
}

// Every primitive in one composite: gather/scatter, sparse product, row
// normalization, concat, tanh, log and the stable BCE.
TEST(GradCheck, AllPrimitivesTenSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    SparseOperator op;
    op.rows = 4;
    op.cols = 4;
    op.push(0, 1, 0.5);
    op.push(1, 0, 0.5);
    op.push(2, 3, 0.7);
    op.push(3, 3, 1.0);
    op.push(1, 2, 0.2);
    ParamSet p{{"w1", off_kink(random_tensor(3, 3, rng, 0.7))},
               {"w2", random_tensor(5, 1, rng, 0.7)},
               {"b", random_tensor(1, 3, rng, 0.3)}};
    const Tensor x = off_kink(random_tensor(4, 3, rng));
    Tensor targets(4, 1);
    for (std::size_t i = 0; i < 4; ++i) targets[i] = i % 2 ? 1.0 : 0.25;
    const Objective f = [&](Tape& t, const ParamSet& ps) {
      const Var w1 = t.param("w1", ps.at("w1"));
      const Var w2 = t.param("w2", ps.at("w2"));
      const Var b = t.param("b", ps.at("b"));
      const Var h = t.tanh(t.add(t.spmm(op, t.matmul(t.constant(x), w1)), b));
      const Var pos = t.row_normalize(t.sigmoid(h));
      const Var g = t.gather_rows(pos, {2, 0, 1, 3});
      const Var s = t.scatter_add_rows(g, {0, 0, 1, 3}, 4);
      const Var feats = t.concat_cols(t.scale_rows(s, {1.0, 0.5, 2.0, -1.0}), t.row_dot(h, h));
      const Var feats2 = t.concat_cols(feats, t.relu(t.scale(t.row_dot(h, pos), 1.0)));
      const Var logits = t.matmul(feats2, w2);
      const Var bce = t.bce_with_logits(t.sub(logits, t.constant(Tensor(4, 1, 0.1))), targets);
      return t.add(bce, t.mean(t.log(t.sigmoid(h))));
    };
    EXPECT_LT(grad_check(f, p), 1e-6) << "seed " << seed;
  }
}
