#include <gtest/gtest.h>

#include <random>

#include "oracle.hpp"

using namespace rada;

TEST(Rational, BasisImageSelectsFirstCoordinate) {
    std::mt19937_64 rng(1);
    EmbeddingBatch img;
    img.features = Tensor::matrix({{1, 0, 0, 0}});
    img.labels = {0};
    img.normalized = true;
    const ClassMatrix h = oracle::unit_classes(rng, 3, 4);
    const RationalTensor r = compute_rational(img, h);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(r.values(0, i, 0), h.weights(i, 0));
        for (std::size_t j = 1; j < 4; ++j) EXPECT_EQ(r.values(0, i, j), 0.0);
    }
}

TEST(Rational, SelfSimilaritySumsToOne) {
    std::mt19937_64 rng(2);
    const ClassMatrix h = oracle::unit_classes(rng, 3, 6);
    EmbeddingBatch img;
    img.features = Tensor::row(h.weights.row_span(1));
    img.labels = {1};
    img.normalized = true;
    const RationalTensor r = compute_rational(img, h);
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) s += r.values(0, 1, j);
    EXPECT_NEAR(s, 1.0, 1e-15);
}

TEST(Rational, MatchesScalarLoopAndRowSumsAreCosines) {
    std::mt19937_64 rng(3);
    const EmbeddingBatch img = oracle::unit_batch(rng, 2, 4, 3);
    const ClassMatrix h = oracle::unit_classes(rng, 3, 4);
    const RationalTensor r = compute_rational(img, h);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < 3; ++i) {
            double cos = 0.0, s = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                const double ref = img.features(b, j) * h.weights(i, j);
                EXPECT_NEAR(r.values(b, i, j), ref, 1e-15);
                EXPECT_LE(std::abs(r.values(b, i, j)), 1.0);
                cos += img.features(b, j) * h.weights(i, j);
                s += r.values(b, i, j);
            }
            EXPECT_NEAR(s, cos, 1e-10);
        }
}

TEST(Rational, UnnormalizedInputIsContractError) {
    std::mt19937_64 rng(4);
    EmbeddingBatch img = oracle::unit_batch(rng, 2, 4, 3);
    const ClassMatrix h = oracle::unit_classes(rng, 3, 4);
    img.normalized = false;
    EXPECT_THROW(compute_rational(img, h), ContractError);
    img.normalized = true;
    img.features(0, 0) += 0.5;
    EXPECT_THROW(compute_rational(img, h), ContractError);
}

TEST(ZeroShot, SelfMatchIsRowMaximum) {
    std::mt19937_64 rng(5);
    const ClassMatrix h = oracle::unit_classes(rng, 4, 5);
    EmbeddingBatch img;
    img.features = Tensor::row(h.weights.row_span(2));
    img.labels = {2};
    img.normalized = true;
    const Tensor z = zeroshot_logits(img, h, 1.0);
    EXPECT_NEAR(z(0, 2), 1.0, 1e-15);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_LE(z(0, i), z(0, 2));
}

TEST(ZeroShot, OrthogonalGivesZeroAndBadScaleIsConfigError) {
    EmbeddingBatch img;
    img.features = Tensor::matrix({{0, 0, 1}});
    img.labels = {0};
    img.normalized = true;
    ClassMatrix h;
    h.weights = Tensor::matrix({{1, 0, 0}, {0, 1, 0}});
    h.class_names = {"a", "b"};
    h.normalized = true;
    const Tensor z = zeroshot_logits(img, h);
    for (double v : z.data()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(zeroshot_logits(img, h, 0.0), ConfigError);
    EXPECT_THROW(zeroshot_logits(img, h, -1.0), ConfigError);
}

TEST(ZeroShot, MatchesMatmulOracle) {
    std::mt19937_64 rng(6);
    const EmbeddingBatch img = oracle::unit_batch(rng, 5, 7, 4);
    const ClassMatrix h = oracle::unit_classes(rng, 4, 7);
    const Tensor z = zeroshot_logits(img, h, 37.0);
    const auto ref = oracle::matmul(oracle::to_mat(img.features), oracle::to_mat(transpose(h.weights)));
    for (std::size_t b = 0; b < 5; ++b)
        for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(z(b, i), 37.0 * static_cast<double>(ref[b][i]), 1e-12);
}

TEST(MaskedLogits, AllOnesEqualsZeroShot) {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 50; ++t) {
        const EmbeddingBatch img = oracle::unit_batch(rng, 3, 8, 5);
        const ClassMatrix h = oracle::unit_classes(rng, 5, 8);
        const RationalTensor r = compute_rational(img, h);
        const Tensor a = masked_logits(r, ones_like(r), 100.0), b = zeroshot_logits(img, h, 100.0);
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
    }
}

TEST(MaskedLogits, ZeroMaskAndScalarOracle) {
    std::mt19937_64 rng(8);
    const EmbeddingBatch img = oracle::unit_batch(rng, 2, 4, 3);
    const ClassMatrix h = oracle::unit_classes(rng, 3, 4);
    const RationalTensor r = compute_rational(img, h);
    const Tensor zero = masked_logits(r, Tensor(r.values.shape(), 0.0));
    for (double v : zero.data()) EXPECT_EQ(v, 0.0);
    Tensor m(r.values.shape());
    std::uniform_real_distribution<double> u(0.0, 2.0);
    for (double& v : m.data()) v = u(rng);
    const Tensor z = masked_logits(r, m, 5.0);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < 3; ++i) {
            long double s = 0.0L;
            for (std::size_t j = 0; j < 4; ++j)
                s += static_cast<long double>(m(b, i, j)) * img.features(b, j) * h.weights(i, j);
            EXPECT_NEAR(z(b, i), 5.0 * static_cast<double>(s), 1e-12);
        }
    EXPECT_THROW(masked_logits(r, Tensor({2, 3, 3})), DimensionError);
}

TEST(MaskedLogits, ArgmaxIsScaleInvariant) {
    std::mt19937_64 rng(9);
    const EmbeddingBatch img = oracle::unit_batch(rng, 20, 6, 4);
    const ClassMatrix h = oracle::unit_classes(rng, 4, 6);
    const RationalTensor r = compute_rational(img, h);
    Tensor m(r.values.shape());
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (double& v : m.data()) v = u(rng);
    const Tensor a = masked_logits(r, m, 1.0), b = masked_logits(r, m, 100.0), c = masked_logits(r, m, 0.01);
    for (std::size_t n = 0; n < 20; ++n) {
        EXPECT_EQ(detail::argmax(a.row_span(n)), detail::argmax(b.row_span(n)));
        EXPECT_EQ(detail::argmax(a.row_span(n)), detail::argmax(c.row_span(n)));
    }
}

TEST(MaskedLogits, GradientWrtMaskPassesFiniteDifferences) {
    std::mt19937_64 rng(10);
    const Tensor f = oracle::random_unit_rows(rng, 1, 4), h = oracle::random_unit_rows(rng, 3, 4);
    const Tensor m = oracle::random_matrix(rng, 3, 4, 0.5, 1.5);
    Objective obj = [&](Tape& tape, const std::vector<Var>& p) {
        Var r = ad::rational(tape.constant(f), tape.constant(h));
        Var z = ad::masked_logits(p[0], r, 3.0);
        return ad::cross_entropy(z, {1});
    };
    EXPECT_LT(finite_diff_check(obj, {m}).max_rel_error, 1e-6);
}
