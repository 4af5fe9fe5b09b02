#include <gtest/gtest.h>

#include <cmath>

#include "memo/error.hpp"
#include "memo/tensor.hpp"
#include "oracles.hpp"

using namespace memo;
using memo::testing::check_gradients;
using memo::testing::random_leaf;

namespace {

void expect_gradients(const ParamList& params, const std::function<ad::Tensor()>& loss, double tol = 1e-6) {
    for (const auto& c : check_gradients(params, loss)) EXPECT_LT(c.rel_error, tol) << c.name;
}

// Weighted sum so every output entry gets a distinct upstream gradient.
ad::Tensor probe(const ad::Tensor& t, std::uint64_t seed = 99) {
    Rng rng(seed);
    const ad::Tensor w = ad::Tensor::from(t.shape(), memo::testing::random_values(rng, t.size()));
    return ad::sum(ad::mul(t, w));
}

}  // namespace

TEST(Tensor, FactoriesAndShapes) {
    const auto m = ad::Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(m.rows(), 2u);
    EXPECT_EQ(m.cols(), 3u);
    EXPECT_DOUBLE_EQ(m.at(1, 2), 6.0);
    EXPECT_EQ(ad::shape_string(m.shape()), "[2x3]");
    EXPECT_THROW(ad::Tensor::matrix(2, 2, {1, 2, 3}), DimensionError);
    EXPECT_THROW(ad::Tensor::vector({1, 2}).item(), ContractError);
    EXPECT_DOUBLE_EQ(ad::Tensor::scalar(4).item(), 4.0);
}

TEST(Tensor, MatmulMatchesHandComputation) {
    const auto a = ad::Tensor::matrix(2, 2, {1, 2, 3, 4});
    const auto b = ad::Tensor::matrix(2, 2, {5, 6, 7, 8});
    const auto c = ad::matmul(a, b);
    EXPECT_DOUBLE_EQ(c.at(0, 0), 19);
    EXPECT_DOUBLE_EQ(c.at(0, 1), 22);
    EXPECT_DOUBLE_EQ(c.at(1, 0), 43);
    EXPECT_DOUBLE_EQ(c.at(1, 1), 50);
    EXPECT_THROW(ad::matmul(a, ad::Tensor::matrix(3, 1, {1, 2, 3})), DimensionError);
    const auto y = ad::matvec(a, ad::Tensor::vector({1, -1}));
    EXPECT_DOUBLE_EQ(y[0], -1);
    EXPECT_DOUBLE_EQ(y[1], -1);
}

TEST(Tensor, BinaryOpsRequireEqualShapes) {
    EXPECT_THROW(ad::add(ad::Tensor::vector({1, 2}), ad::Tensor::vector({1, 2, 3})), DimensionError);
    EXPECT_THROW(ad::scale(ad::Tensor::vector({1, 2}), ad::Tensor::vector({1})), DimensionError);
}

TEST(Tensor, CrossEntropyValues) {
    EXPECT_NEAR(ad::cross_entropy(ad::Tensor::vector({0, 0, 0, 0}), 2).item(), std::log(4.0), 1e-12);
    EXPECT_LT(ad::cross_entropy(ad::Tensor::vector({30, 0, 0}), 0).item(), 1e-9);
    const std::vector<double> z{0.3, -1.2, 2.5, 0.1};
    double denom = 0;
    for (double v : z) denom += std::exp(v);
    EXPECT_NEAR(ad::cross_entropy(ad::Tensor::vector(z), 1).item(), -std::log(std::exp(z[1]) / denom), 1e-12);
    EXPECT_NEAR(ad::cross_entropy(ad::Tensor::vector({1000, 0}), 1).item(), 1000.0, 1e-9);
    EXPECT_THROW(ad::cross_entropy(ad::Tensor::vector(z), 4), ContractError);
}

TEST(Tensor, SoftmaxIsStableAndNormalized) {
    const auto p = ad::softmax(ad::Tensor::vector({1000, 1000, 999}));
    EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
    EXPECT_NEAR(p[0], p[1], 1e-15);
    const auto rows = ad::softmax_rows(ad::Tensor::matrix(2, 3, {1, 2, 3, -5, 0, 5}));
    for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(rows.at(r, 0) + rows.at(r, 1) + rows.at(r, 2), 1.0, 1e-15);
}

TEST(Tensor, SegmentOpsMatchLoops) {
    const auto scores = ad::Tensor::vector({1, 2, 0.5, -1, 3});
    const auto w = ad::segment_softmax(scores, {0, 2, 5});
    EXPECT_NEAR(w[0], std::exp(1) / (std::exp(1) + std::exp(2)), 1e-15);
    EXPECT_NEAR(w[2] + w[3] + w[4], 1.0, 1e-15);
    const auto m = ad::Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
    const auto agg = ad::segment_weighted_sum(m, {0, 2, 1, 0, 2}, w, {0, 2, 5});
    EXPECT_NEAR(agg.at(0, 0), w[0] * 1 + w[1] * 5, 1e-15);
    EXPECT_NEAR(agg.at(1, 1), w[2] * 4 + w[3] * 2 + w[4] * 6, 1e-15);
    EXPECT_THROW(ad::segment_softmax(scores, {0, 6}), ContractError);
}

TEST(Tensor, NoTapeMeansNoRecording) {
    const auto x = ad::Tensor::vector({1, 2}, true);
    const auto y = ad::tanh(x);
    EXPECT_EQ(y.node_id(), ad::Tensor::npos);
    ad::Tape tape;
    {
        ad::TapeScope scope(tape);
        const auto z = ad::tanh(x);
        EXPECT_NE(z.node_id(), ad::Tensor::npos);
        const auto c = ad::tanh(ad::Tensor::vector({1, 2}));
        EXPECT_EQ(c.node_id(), ad::Tensor::npos);
    }
    EXPECT_EQ(tape.size(), 1u);
    EXPECT_EQ(ad::current_tape(), nullptr);
}

TEST(Tensor, TapeOrdersInputsBeforeConsumers) {
    ad::Tape tape;
    ad::TapeScope scope(tape);
    const auto x = ad::Tensor::vector({0.5, -0.5}, true);
    const auto y = ad::sum(ad::mul(ad::tanh(x), ad::sigmoid(x)));
    for (const auto& e : tape.entries())
        for (auto in : e.inputs)
            if (in != ad::Tensor::npos) {
                EXPECT_LT(in, e.output);
            }
    tape.backward(y);
    EXPECT_EQ(tape.last_visit_count(), tape.size());
}

TEST(Tensor, BackwardResetsGradients) {
    const auto x = ad::Tensor::vector({1, 2}, true);
    ad::Tape tape;
    ad::TapeScope scope(tape);
    const auto l = ad::dot(x, x);
    tape.backward(l);
    tape.backward(l);
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
    EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Tensor, MutableValuesOnlyForLeaves) {
    ad::Tape tape;
    ad::TapeScope scope(tape);
    const auto x = ad::Tensor::vector({1, 2}, true);
    auto y = ad::tanh(x);
    EXPECT_THROW(y.mutable_values(), ContractError);
    auto d = y.detach();
    EXPECT_NO_THROW(d.mutable_values());
    EXPECT_EQ(d.op(), ad::OpKind::Leaf);
}

TEST(Tensor, PassthroughRoutesGradientToAnchor) {
    const auto anchor = ad::Tensor::vector({1, 2, 3}, true);
    const auto value = ad::Tensor::vector({7, 8, 9});
    ad::Tape tape;
    ad::TapeScope scope(tape);
    const auto p = ad::passthrough(anchor, value);
    EXPECT_DOUBLE_EQ(p[1], 8.0);
    tape.backward(ad::dot(p, ad::Tensor::vector({1, -1, 2})));
    EXPECT_DOUBLE_EQ(anchor.grad()[0], 1.0);
    EXPECT_DOUBLE_EQ(anchor.grad()[1], -1.0);
    EXPECT_DOUBLE_EQ(anchor.grad()[2], 2.0);
}

TEST(TensorGradients, LinearAlgebra) {
    Rng rng(1);
    const auto a = random_leaf(rng, {3, 4});
    const auto b = random_leaf(rng, {4, 2});
    const auto x = random_leaf(rng, {4});
    expect_gradients({{"a", a}, {"b", b}}, [&] { return probe(ad::matmul(a, b)); });
    expect_gradients({{"a", a}, {"x", x}}, [&] { return probe(ad::matvec(a, x)); });
    expect_gradients({{"a", a}}, [&] { return probe(ad::transpose(a)); });
}

TEST(TensorGradients, Pointwise) {
    Rng rng(2);
    const auto a = random_leaf(rng, {5});
    const auto b = random_leaf(rng, {5});
    const auto s = random_leaf(rng, {1});
    expect_gradients({{"a", a}, {"b", b}}, [&] { return probe(ad::add(a, b)); });
    expect_gradients({{"a", a}, {"b", b}}, [&] { return probe(ad::sub(a, b)); });
    expect_gradients({{"a", a}, {"b", b}}, [&] { return probe(ad::mul(a, b)); });
    expect_gradients({{"a", a}}, [&] { return probe(ad::tanh(a)); });
    expect_gradients({{"a", a}}, [&] { return probe(ad::sigmoid(a)); });
    expect_gradients({{"a", a}}, [&] { return probe(ad::leaky_relu(a, 0.2)); });
    expect_gradients({{"a", a}, {"s", s}}, [&] { return probe(ad::scale(s, a)); });
    expect_gradients({{"a", a}}, [&] { return probe(ad::scale(a, -1.7)); });
    const ad::Tensor terms[] = {a, b, a};
    expect_gradients({{"a", a}, {"b", b}}, [&] { return probe(ad::add_n(terms)); });
}

TEST(TensorGradients, ReductionsAndSoftmax) {
    Rng rng(3);
    const auto a = random_leaf(rng, {6});
    const auto b = random_leaf(rng, {6});
    const auto m = random_leaf(rng, {3, 4});
    expect_gradients({{"a", a}}, [&] { return ad::sum(a); });
    expect_gradients({{"a", a}, {"b", b}}, [&] { return ad::dot(a, b); });
    expect_gradients({{"a", a}}, [&] { return probe(ad::softmax(a)); });
    expect_gradients({{"m", m}}, [&] { return probe(ad::softmax_rows(m)); });
    expect_gradients({{"a", a}}, [&] { return ad::cross_entropy(a, 3); });
}

TEST(TensorGradients, Structure) {
    Rng rng(4);
    const auto a = random_leaf(rng, {3});
    const auto b = random_leaf(rng, {3});
    const auto m = random_leaf(rng, {3, 2});
    const auto n = random_leaf(rng, {3, 3});
    const ad::Tensor parts[] = {a, b};
    expect_gradients({{"a", a}, {"b", b}}, [&] { return probe(ad::concat(parts)); });
    expect_gradients({{"a", a}, {"b", b}}, [&] { return probe(ad::stack_rows(parts)); });
    expect_gradients({{"a", a}, {"b", b}}, [&] { return probe(ad::stack_columns(parts)); });
    const ad::Tensor blocks[] = {m, n};
    expect_gradients({{"m", m}, {"n", n}}, [&] { return probe(ad::hconcat(blocks)); });
    expect_gradients({{"n", n}}, [&] { return probe(ad::row(n, 1)); });
    expect_gradients({{"n", n}}, [&] { return probe(ad::column(n, 2)); });
    expect_gradients({{"a", a}}, [&] { return probe(ad::gather(a, {2, 0, 2, 1})); });
    expect_gradients({{"a", a}}, [&] { return probe(ad::slice(a, 1, 2)); });
}

TEST(TensorGradients, RowParallelHelpers) {
    Rng rng(5);
    const auto m = random_leaf(rng, {4, 3});
    const auto k = random_leaf(rng, {4, 3});
    const auto w = random_leaf(rng, {4});
    const auto bias = random_leaf(rng, {3});
    expect_gradients({{"m", m}, {"k", k}}, [&] { return probe(ad::rowwise_dot(m, k)); });
    expect_gradients({{"m", m}, {"w", w}}, [&] { return probe(ad::scale_rows(m, w)); });
    expect_gradients({{"m", m}, {"bias", bias}}, [&] { return probe(ad::add_rowwise(m, bias)); });
}

TEST(TensorGradients, SegmentOps) {
    Rng rng(6);
    const auto scores = random_leaf(rng, {6});
    const auto m = random_leaf(rng, {3, 2});
    const std::vector<std::size_t> offsets{0, 2, 3, 6};
    const std::vector<std::size_t> source{0, 1, 1, 2, 0, 1};
    expect_gradients({{"scores", scores}}, [&] { return probe(ad::segment_softmax(scores, offsets)); });
    expect_gradients({{"scores", scores}, {"m", m}}, [&] {
        return probe(ad::segment_weighted_sum(m, source, ad::segment_softmax(scores, offsets), offsets));
    });
}

TEST(TensorGradients, SharedSubexpressionsAccumulate) {
    Rng rng(7);
    const auto x = random_leaf(rng, {4});
    expect_gradients({{"x", x}}, [&] {
        const auto t = ad::tanh(x);
        return ad::add(ad::dot(t, t), ad::sum(ad::mul(t, x)));
    });
}
