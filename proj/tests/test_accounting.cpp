#include <gtest/gtest.h>

#include "scnet/accounting.hpp"

using namespace scnet;

namespace {

// Closed form for the pixel-shuffle head, written out independently of the inventory.
std::uint64_t closed_form_params(std::uint64_t b, std::uint64_t d, std::uint64_t s) {
    const std::uint64_t head = 3 * d + d;
    const std::uint64_t body = b * 2 * (d * d + d);
    const std::uint64_t recon = (d * d + d) + (d * 3 * s * s + 3 * s * s) + (9 + 3);
    return head + body + recon;
}

}  // namespace

TEST(Params, TableRows) {
    EXPECT_EQ(count_params(ModelConfig{16, 128, 4}), 551612u);
    EXPECT_EQ(count_params(ModelConfig{32, 128, 4}), 1079996u);
    for (std::size_t b : {16u, 32u, 64u})
        for (std::size_t d : {64u, 128u})
            for (std::size_t s : {2u, 3u, 4u, 8u})
                EXPECT_EQ(count_params(ModelConfig{b, d, s}), closed_form_params(b, d, s));
}

TEST(Params, PerBlockDelta) {
    EXPECT_EQ(count_params(ModelConfig{32, 128, 4}) - count_params(ModelConfig{16, 128, 4}), 16u * 2 * (128 * 128 + 128));
    EXPECT_EQ(16u * 2 * (128 * 128 + 128), 528384u);
    EXPECT_EQ(2u * (128 * 128 + 128), 33024u);
}

TEST(Params, AttentionOrdering) {
    auto per_block = [](AttentionKind a) {
        const ModelConfig with{1, 64, 4, StepPreset::Shift8, ReconKind::PixelShuffle, a};
        const ModelConfig without{1, 64, 4};
        return count_params(with) - count_params(without);
    };
    EXPECT_EQ(per_block(AttentionKind::PA), 4160u);
    EXPECT_EQ(per_block(AttentionKind::CA), 64u * 16 + 16 + 16 * 64 + 64);
    EXPECT_EQ(per_block(AttentionKind::SPA), 3u);
    EXPECT_GT(per_block(AttentionKind::PA), per_block(AttentionKind::CA));
    EXPECT_GT(per_block(AttentionKind::CA), per_block(AttentionKind::SPA));
}

TEST(Params, ReconVariants) {
    const std::uint64_t d = 64, s = 4;
    const std::uint64_t base = count_params(ModelConfig{16, 64, 4}) - ((d * d + d) + (d * 3 * s * s + 3 * s * s) + 12);
    auto with = [](ReconKind r) { return count_params(ModelConfig{16, 64, 4, StepPreset::Shift8, r}); };
    EXPECT_EQ(with(ReconKind::Nearest), base + (d * d + d) + (d * 3 + 3));
    EXPECT_EQ(with(ReconKind::Bilinear), with(ReconKind::Nearest));
    EXPECT_EQ(with(ReconKind::TConv), base + d * 3 * s * s + 3 + 12);
}

TEST(Flops, BodyDeltaIsMacs) {
    const OpCount a = count_flops(ModelConfig{16, 128, 4}, 256, 256);
    const OpCount b = count_flops(ModelConfig{32, 128, 4}, 256, 256);
    const std::uint64_t macs = 16ull * 2 * 128 * 128 * 256 * 256;
    EXPECT_EQ(b.macs - a.macs, macs);
    EXPECT_EQ(macs, 34359738368ull);
    // relu + residual add per block
    EXPECT_EQ(b.elementwise - a.elementwise, 16ull * 2 * 128 * 256 * 256);
    EXPECT_EQ(b.flops() - a.flops(), 2 * macs + 16ull * 2 * 128 * 256 * 256);
}

TEST(Flops, ZeroBlocksIsHeadAndReconOnly) {
    const ModelConfig cfg{0, 64, 4};
    const std::uint64_t lr = 32 * 48, hr = lr * 16;
    const OpCount ops = count_flops(cfg, 32, 48);
    const std::uint64_t head = 3 * 64 * lr;
    const std::uint64_t recon = 64 * 64 * lr + 64 * 48 * lr + 9 * hr;
    EXPECT_EQ(ops.macs, head + recon);
    EXPECT_EQ(ops.elementwise, 64 * lr + 3 * hr);
}

TEST(Flops, ShiftIsFree) {
    // Presets only change where values are read from, never the op count.
    const OpCount a = count_flops(ModelConfig{4, 64, 2, StepPreset::Shift4Cross}, 40, 40);
    const OpCount b = count_flops(ModelConfig{4, 64, 2, StepPreset::Shift16}, 40, 40);
    EXPECT_EQ(a.macs, b.macs);
    EXPECT_EQ(a.elementwise, b.elementwise);
}

TEST(Flops, ScalesWithResolution) {
    const ModelConfig cfg = ModelConfig::tiny(4);
    EXPECT_EQ(count_flops(cfg, 64, 64).macs * 4, count_flops(cfg, 128, 128).macs);
}
