#include <gtest/gtest.h>

#include <set>

#include "scnet/alloc_tracker.hpp"
#include "scnet/shift_conv.hpp"
#include "test_support.hpp"

using namespace scnet;
using scnet::testing::random_conv;
using scnet::testing::random_tensor;

namespace {

std::vector<std::pair<int, int>> pairs(const ShiftStepSet& s) {
    std::vector<std::pair<int, int>> out;
    for (const auto& st : s.steps) out.emplace_back(st.dy, st.dx);
    return out;
}

// Shift with reflection instead of zeros at the border; test-only contrast.
Tensor<double> reflect_shift(const Tensor<double>& f, const ShiftStepSet& steps) {
    const Shape s = f.shape();
    const std::size_t g = s.c / steps.size();
    auto reflect = [](long i, long n) { return i < 0 ? -i : (i >= n ? 2 * (n - 1) - i : i); };
    Tensor<double> out(s);
    for (std::size_t b = 0; b < s.n; ++b)
        for (std::size_t c = 0; c < s.c; ++c) {
            const ShiftStep st = steps.steps[c / g];
            for (std::size_t y = 0; y < s.h; ++y)
                for (std::size_t x = 0; x < s.w; ++x)
                    out(b, c, y, x) = f(b, c, static_cast<std::size_t>(reflect(static_cast<long>(y) + st.dy, static_cast<long>(s.h))),
                                        static_cast<std::size_t>(reflect(static_cast<long>(x) + st.dx, static_cast<long>(s.w))));
        }
    return out;
}

const ShiftStepSet kZeroSteps{{{0, 0}, {0, 0}}, 1};

}  // namespace

TEST(Presets, Contents) {
    using P = std::vector<std::pair<int, int>>;
    EXPECT_EQ(pairs(preset_steps(StepPreset::Shift8)),
              (P{{0, 1}, {0, -1}, {1, 0}, {1, 1}, {1, -1}, {-1, 0}, {-1, 1}, {-1, -1}}));
    EXPECT_EQ(preset_steps(StepPreset::Shift8).pad, 1u);
    EXPECT_EQ(pairs(preset_steps(StepPreset::Shift8Dilated)),
              (P{{0, 2}, {0, -2}, {2, 0}, {2, 2}, {2, -2}, {-2, 0}, {-2, 2}, {-2, -2}}));
    EXPECT_EQ(preset_steps(StepPreset::Shift8Dilated).pad, 2u);
    EXPECT_EQ(pairs(preset_steps(StepPreset::Shift4Cross)), (P{{0, 1}, {0, -1}, {1, 0}, {-1, 0}}));
    EXPECT_EQ(pairs(preset_steps(StepPreset::Shift4Diag)), (P{{1, 1}, {1, -1}, {-1, 1}, {-1, -1}}));

    P s16 = pairs(preset_steps(StepPreset::Shift8));
    const P dil = pairs(preset_steps(StepPreset::Shift8Dilated));
    s16.insert(s16.end(), dil.begin(), dil.end());
    EXPECT_EQ(pairs(preset_steps(StepPreset::Shift16)), s16);
    EXPECT_EQ(preset_steps(StepPreset::Shift16).pad, 2u);
    for (auto p : kAllPresets) {
        EXPECT_NO_THROW(preset_steps(p).validate());
        EXPECT_EQ(parse_step_preset(to_string(p)), p);
    }
    EXPECT_THROW(parse_step_preset("Shift9"), ConfigError);
}

TEST(SpatialShift, HandExamples) {
    const Tensor<float> f({1, 1, 2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(spatial_shift(f, ShiftStepSet{{{0, 1}}, 1}), Tensor<float>({1, 1, 2, 2}, {2, 0, 4, 0}));

    const Tensor<float> g({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    EXPECT_EQ(spatial_shift(g, ShiftStepSet{{{1, 0}, {-1, 0}}, 1}),
              Tensor<float>({1, 2, 2, 2}, {3, 4, 0, 0, 0, 0, 5, 6}));

    const Tensor<float> r = random_tensor({2, 4, 5, 3}, 1);
    EXPECT_EQ(spatial_shift(r, ShiftStepSet{{{0, 0}}, 0}), r);
}

TEST(SpatialShift, RejectsIndivisibleChannels) {
    const Tensor<float> f({1, 12, 4, 4});
    EXPECT_THROW(spatial_shift(f, preset_steps(StepPreset::Shift8)), ConfigError);
    const auto w = random_conv<float>(4, 12, 1);
    EXPECT_THROW(sc_layer_naive(f, w.view(), preset_steps(StepPreset::Shift8)), ConfigError);
    EXPECT_THROW(sc_layer_fused(f, w.view(), preset_steps(StepPreset::Shift8)), ConfigError);
}

TEST(SpatialShift, LinearExactly) {
    const auto steps = preset_steps(StepPreset::Shift16);
    const Tensor<float> a = random_tensor({1, 16, 6, 7}, 2);
    const Tensor<float> b = random_tensor({1, 16, 6, 7}, 3);
    EXPECT_EQ(spatial_shift(add(scale(a, 2.0f), b), steps),
              add(scale(spatial_shift(a, steps), 2.0f), spatial_shift(b, steps)));
}

TEST(SpatialShift, EnergyInequality) {
    for (auto p : kAllPresets) {
        const auto steps = preset_steps(p);
        const Tensor<double> f = random_tensor<double>({1, 16, 7, 6}, 4);
        const double in = dot(f, f);
        const Tensor<double> g = spatial_shift(f, steps);
        EXPECT_LT(dot(g, g), in) << to_string(p);

        // Nothing within `pad` of the border: nothing falls off, energy is kept.
        Tensor<double> inner = f;
        for (std::size_t c = 0; c < 16; ++c)
            for (std::size_t y = 0; y < 7; ++y)
                for (std::size_t x = 0; x < 6; ++x)
                    if (y < steps.pad || x < steps.pad || y + steps.pad >= 7 || x + steps.pad >= 6) inner(0, c, y, x) = 0;
        const Tensor<double> gi = spatial_shift(inner, steps);
        EXPECT_EQ(dot(gi, gi), dot(inner, inner)) << to_string(p);
    }
}

TEST(SpatialShift, AdjointIsNegatedShift) {
    for (auto p : kAllPresets) {
        const auto steps = preset_steps(p);
        const Tensor<double> f = random_tensor<double>({2, 16, 5, 8}, 5);
        const Tensor<double> g = random_tensor<double>({2, 16, 5, 8}, 6);
        EXPECT_NEAR(dot(spatial_shift(f, steps), g), dot(f, spatial_shift(g, steps.negated())), 1e-12);
    }
}

TEST(Conv1x1, HandExamples) {
    const Tensor<float> f({1, 2, 1, 1}, {3, 4});
    const Conv1x1Weights<float> w{Matrix<float>(1, 2, {1, 1}), {0.0f}};
    EXPECT_EQ(conv1x1(f, w.view()), Tensor<float>({1, 1, 1, 1}, {7.0f}));

    const Tensor<float> r = random_tensor({2, 3, 4, 5}, 7);
    const Conv1x1Weights<float> id{Matrix<float>(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), {0, 0, 0}};
    EXPECT_EQ(conv1x1(r, id.view()), r);

    const Conv1x1Weights<float> mv{Matrix<float>(2, 3, {1, 2, 3, -1, 0, 2}), {0.5f, -1.0f}};
    const Tensor<float> v({1, 3, 1, 1}, {1, 1, 2});
    EXPECT_EQ(conv1x1(v, mv.view()), Tensor<float>({1, 2, 1, 1}, {9.5f, 2.0f}));

    EXPECT_THROW(conv1x1(Tensor<float>({1, 4, 2, 2}), mv.view()), ShapeError);
}

TEST(Conv1x1, AccumulateMatchesAddBitForBit) {
    const Tensor<float> f = random_tensor({2, 16, 9, 11}, 8);
    const auto w = random_conv<float>(12, 16, 9);
    Tensor<float> acc = random_tensor({2, 12, 9, 11}, 10);
    const Tensor<float> expect = add(acc, conv1x1(f, w.view()));
    conv1x1_accumulate(f, w.view(), acc);
    EXPECT_TRUE(bit_identical(acc, expect));
}

TEST(ScLayer, ZeroStepsIsPlainConv) {
    const Tensor<float> f = random_tensor({1, 8, 5, 6}, 11);
    const auto w = random_conv<float>(8, 8, 12);
    EXPECT_TRUE(bit_identical(sc_layer_naive(f, w.view(), kZeroSteps), conv1x1(f, w.view())));
    EXPECT_TRUE(bit_identical(sc_layer_fused(f, w.view(), kZeroSteps), conv1x1(f, w.view())));
}

TEST(ScLayer, MatchesDenseOracleAllPresets) {
    std::uint64_t seed = 100;
    for (auto p : kAllPresets) {
        const auto steps = preset_steps(p);
        for (std::size_t c_in : {steps.size(), 2 * steps.size()}) {
            const Tensor<float> f = random_tensor({2, c_in, 6, 7}, seed++);
            const auto w = random_conv<float>(5, c_in, seed++);
            const Tensor<float> kernel = sc_to_dense(w.view(), steps);
            EXPECT_EQ(kernel.height(), 2 * steps.pad + 1);
            const Tensor<float> want = correlate_same(f, kernel, w.bias.data());
            EXPECT_LE(max_abs_diff(sc_layer_naive(f, w.view(), steps), want), 1e-5) << to_string(p);
        }
    }
}

TEST(ScLayer, FusedBitIdenticalToNaive) {
    std::uint64_t seed = 200;
    const std::size_t sizes[][2] = {{1, 1}, {2, 3}, {6, 6}, {17, 23}, {40, 9}};
    for (auto p : kAllPresets)
        for (const auto& hw : sizes) {
            const auto steps = preset_steps(p);
            const Tensor<float> f = random_tensor({2, 2 * steps.size(), hw[0], hw[1]}, seed++);
            const auto w = random_conv<float>(9, 2 * steps.size(), seed++);
            EXPECT_TRUE(bit_identical(sc_layer_fused(f, w.view(), steps), sc_layer_naive(f, w.view(), steps)))
                << to_string(p) << " " << hw[0] << "x" << hw[1];
        }
}

TEST(ScLayer, InteriorIndependentOfPadding) {
    for (auto p : kAllPresets) {
        const auto steps = preset_steps(p);
        const Tensor<double> f = random_tensor<double>({1, steps.size(), 9, 10}, 300);
        const auto w = random_conv<double>(3, steps.size(), 301);
        const Tensor<double> zero_padded = sc_layer_naive(f, w.view(), steps);
        const Tensor<double> reflected = conv1x1(reflect_shift(f, steps), w.view());
        std::size_t interior = 0, border_diff = 0;
        for (std::size_t o = 0; o < 3; ++o)
            for (std::size_t y = 0; y < 9; ++y)
                for (std::size_t x = 0; x < 10; ++x) {
                    const bool inside = y >= steps.pad && x >= steps.pad && y + steps.pad < 9 && x + steps.pad < 10;
                    if (inside) {
                        EXPECT_EQ(zero_padded(0, o, y, x), reflected(0, o, y, x));
                        ++interior;
                    } else if (zero_padded(0, o, y, x) != reflected(0, o, y, x)) {
                        ++border_diff;
                    }
                }
        EXPECT_GT(interior, 0u);
        EXPECT_GT(border_diff, 0u) << "padding policy should matter at the border";
    }
}

TEST(ScToDense, ZeroStepsCenterOnly) {
    const auto w = random_conv<float>(3, 4, 13);
    const Tensor<float> k = sc_to_dense(w.view(), kZeroSteps);
    ASSERT_EQ(k.shape(), (Shape{3, 4, 3, 3}));
    for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t y = 0; y < 3; ++y)
                for (std::size_t x = 0; x < 3; ++x)
                    EXPECT_EQ(k(o, i, y, x), (y == 1 && x == 1) ? w.weight(o, i) : 0.0f);
}

TEST(ScToDense, Shift8OneTapPerChannel) {
    const auto w = random_conv<float>(2, 8, 14);
    const Tensor<float> k = sc_to_dense(w.view(), preset_steps(StepPreset::Shift8));
    std::set<std::pair<std::size_t, std::size_t>> offsets;
    for (std::size_t i = 0; i < 8; ++i) {
        int taps = 0;
        for (std::size_t y = 0; y < 3; ++y)
            for (std::size_t x = 0; x < 3; ++x)
                if (k(0, i, y, x) != 0.0f) {
                    ++taps;
                    offsets.insert({y, x});
                }
        EXPECT_EQ(taps, 1);
    }
    EXPECT_EQ(offsets.size(), 8u);
    EXPECT_FALSE(offsets.count({1, 1}));
}

TEST(ScToDense, RejectsStepBeyondPad) {
    const auto w = random_conv<float>(2, 2, 15);
    EXPECT_THROW(sc_to_dense(w.view(), ShiftStepSet{{{0, 2}, {0, 0}}, 1}), ConfigError);
}

TEST(ScLayer, FusedAvoidsShiftedCopy) {
    const auto steps = preset_steps(StepPreset::Shift8);
    const Tensor<float> f = random_tensor({1, 64, 64, 64}, 16);
    const auto w = random_conv<float>(64, 64, 17);
    const std::int64_t map_bytes = static_cast<std::int64_t>(f.numel() * sizeof(float));

    std::int64_t naive_peak = 0, fused_peak = 0;
    {
        TransientScope scope;
        { const auto out = sc_layer_naive(f, w.view(), steps); }
        naive_peak = scope.peak_transient();
    }
    {
        TransientScope scope;
        { const auto out = sc_layer_fused(f, w.view(), steps); }
        fused_peak = scope.peak_transient();
    }
    EXPECT_GE(naive_peak, 2 * map_bytes);  // output + shifted copy
    EXPECT_LT(fused_peak - map_bytes, map_bytes / 8) << "fused kept something feature-map sized alive";
    EXPECT_LT(fused_peak, naive_peak);
}
