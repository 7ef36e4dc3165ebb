#include <gtest/gtest.h>

#include <cmath>

#include "scnet/parallel.hpp"
#include "scnet/tensor.hpp"
#include "test_support.hpp"

using namespace scnet;
using scnet::testing::random_tensor;

namespace {

// Triple loop, ascending p, one fused multiply-add per step.
template <class T>
Matrix<T> reference_gemm(const Matrix<T>& a, const Matrix<T>& b) {
    Matrix<T> c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            T acc = T(0);
            for (std::size_t p = 0; p < a.cols(); ++p) acc = std::fma(a(i, p), b(p, j), acc);
            c(i, j) = acc;
        }
    return c;
}

template <class T>
Matrix<T> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    Matrix<T> m(r, c);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t i = 0; i < r * c; ++i) m.data()[i] = static_cast<T>(u(rng));
    return m;
}

}  // namespace

TEST(Tensor, OffsetRoundTrip) {
    Tensor<float> t({2, 3, 4, 5});
    std::size_t expect = 0;
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t x = 0; x < 5; ++x) EXPECT_EQ(t.offset(b, c, y, x), expect++);
    EXPECT_EQ(t.numel(), 120u);
}

TEST(Tensor, ItemViewSharesStorage) {
    Tensor<float> t = random_tensor({2, 3, 4, 5}, 1);
    const MatrixView<float> m = t.item(1);
    EXPECT_EQ(m.rows, 3u);
    EXPECT_EQ(m.cols, 20u);
    EXPECT_EQ(m.data, t.data() + 60);
    EXPECT_EQ(m(2, 7), t(1, 2, 1, 2));
}

TEST(Gemm, HandComputed) {
    const Matrix<float> a(2, 2, {1, 2, 3, 4});
    const Matrix<float> b(2, 2, {5, 6, 7, 8});
    EXPECT_EQ(gemm(a.view(), b.view()), Matrix<float>(2, 2, {19, 22, 43, 50}));
}

TEST(Gemm, IdentityLeavesOperand) {
    const Matrix<float> id(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const Matrix<float> b = random_matrix<float>(3, 37, 4);
    EXPECT_EQ(gemm(id.view(), b.view()), b);
}

TEST(Gemm, ShapeErrorNamesBothShapes) {
    const Matrix<float> a(2, 3), b(2, 2);
    try {
        gemm(a.view(), b.view());
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string what = e.what();
        EXPECT_NE(what.find("[2x3]"), std::string::npos) << what;
        EXPECT_NE(what.find("[2x2]"), std::string::npos) << what;
    }
}

TEST(Gemm, MatchesTripleLoopBitForBit) {
    const std::size_t sizes[][3] = {{1, 1, 1}, {3, 5, 7}, {8, 64, 256}, {9, 17, 300}, {64, 64, 1000}, {13, 3, 513}};
    std::uint64_t seed = 10;
    for (const auto& s : sizes) {
        const auto a = random_matrix<float>(s[0], s[1], seed++);
        const auto b = random_matrix<float>(s[1], s[2], seed++);
        EXPECT_EQ(gemm(a.view(), b.view()), reference_gemm(a, b)) << s[0] << "x" << s[1] << "x" << s[2];
        const auto ad = random_matrix<double>(s[0], s[1], seed++);
        const auto bd = random_matrix<double>(s[1], s[2], seed++);
        EXPECT_EQ(gemm(ad.view(), bd.view()), reference_gemm(ad, bd));
    }
}

TEST(Gemm, DeterministicAcrossThreadCounts) {
    const auto a = random_matrix<float>(24, 40, 1);
    const auto b = random_matrix<float>(40, 3000, 2);
    const Matrix<float> one = gemm(a.view(), b.view());
    for (unsigned t : {2u, 3u, 7u}) {
        set_num_threads(t);
        EXPECT_EQ(gemm(a.view(), b.view()), one) << t << " threads";
    }
    set_num_threads(1);
    EXPECT_EQ(gemm(a.view(), b.view()), one);
}

TEST(Gemm, TransposedVariant) {
    const auto a = random_matrix<double>(5, 7, 3);
    const auto b = random_matrix<double>(11, 7, 4);
    Matrix<double> c(5, 11);
    gemm_nt_into(a.view(), b.view(), c.data());
    const Matrix<double> bt = transpose(b.view());
    EXPECT_EQ(c, reference_gemm(a, bt));
}

TEST(ZeroPad, Definition) {
    const Tensor<float> one({1, 1, 1, 1}, {5.0f});
    const Tensor<float> p = zero_pad(one, 1);
    EXPECT_EQ(p, Tensor<float>({1, 1, 3, 3}, {0, 0, 0, 0, 5, 0, 0, 0, 0}));
    const Tensor<float> f = random_tensor({2, 3, 4, 5}, 7);
    EXPECT_EQ(zero_pad(f, 0), f);
    const Tensor<float> g = zero_pad(f, 3);
    EXPECT_EQ(g.shape(), (Shape{2, 3, 10, 11}));
    EXPECT_NEAR(sum(g), sum(f), 1e-9);
    EXPECT_EQ(g(1, 2, 3 + 2, 3 + 4), f(1, 2, 2, 4));
}

TEST(Relu, Definition) {
    const Tensor<float> t({1, 1, 1, 3}, {-1.0f, 0.0f, 2.0f});
    EXPECT_EQ(relu(t), Tensor<float>({1, 1, 1, 3}, {0.0f, 0.0f, 2.0f}));
    const Tensor<float> f = random_tensor({1, 2, 5, 5}, 9);
    EXPECT_EQ(relu(relu(f)), relu(f));
    const Tensor<float> pos = random_tensor({1, 2, 5, 5}, 9, 0.0, 1.0);
    EXPECT_EQ(relu(pos), pos);
}

TEST(PixelShuffle, IndexFormula) {
    const Tensor<float> f({1, 4, 1, 1}, {1, 2, 3, 4});
    EXPECT_EQ(pixel_shuffle(f, 2), Tensor<float>({1, 1, 2, 2}, {1, 2, 3, 4}));

    const Tensor<float> g = random_tensor({2, 18, 3, 4}, 11);
    const Tensor<float> out = pixel_shuffle(g, 3);
    ASSERT_EQ(out.shape(), (Shape{2, 2, 9, 12}));
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t h = 0; h < 3; ++h)
                for (std::size_t w = 0; w < 4; ++w)
                    for (std::size_t i = 0; i < 3; ++i)
                        for (std::size_t j = 0; j < 3; ++j)
                            EXPECT_EQ(out(b, c, h * 3 + i, w * 3 + j), g(b, c * 9 + i * 3 + j, h, w));
}

TEST(PixelShuffle, InverseAndIdentity) {
    const Tensor<float> f = random_tensor({2, 12, 3, 5}, 12);
    EXPECT_EQ(pixel_shuffle(f, 1), f);
    EXPECT_EQ(pixel_unshuffle(pixel_shuffle(f, 2), 2), f);
    EXPECT_THROW(pixel_shuffle(f, 3), ShapeError);
}

TEST(PixelShuffle, Linear) {
    const Tensor<float> a = random_tensor({1, 8, 3, 3}, 13);
    const Tensor<float> b = random_tensor({1, 8, 3, 3}, 14);
    EXPECT_EQ(pixel_shuffle(add(scale(a, 2.0f), b), 2), add(scale(pixel_shuffle(a, 2), 2.0f), pixel_shuffle(b, 2)));
}
