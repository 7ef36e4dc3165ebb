#pragma once

// Parameter and operation counts.
//
// FLOPs = 2 * MACs of every 1x1 convolution / GEMM at the resolution it runs
// at, plus one op per element for ReLU, sigmoid, gating products, pooling and
// residual / skip additions. Spatial shift and pixel shuffle are free. Bias
// additions and the bilinear skip resample are not counted.

#include <cstddef>
#include <cstdint>

#include "scnet/model.hpp"

namespace scnet {

inline std::uint64_t count_params(const ModelConfig& cfg) {
    std::uint64_t n = 0;
    for (const auto& spec : layer_inventory(cfg)) n += spec.shape.numel();
    return n;
}

struct OpCount {
    std::uint64_t macs = 0;
    std::uint64_t elementwise = 0;

    std::uint64_t flops() const { return 2 * macs + elementwise; }
};

/// Ops for one forward pass on an lr_h x lr_w input.
inline OpCount count_flops(const ModelConfig& cfg, std::size_t lr_h, std::size_t lr_w) {
    cfg.validate_layout();
    const std::uint64_t d = cfg.dim, s = cfg.scale;
    const std::uint64_t lr = static_cast<std::uint64_t>(lr_h) * lr_w;
    const std::uint64_t hr = lr * s * s;
    OpCount ops;
    ops.macs += 3 * d * lr;  // head

    std::uint64_t attn_macs = 0, attn_elem = 0;
    switch (cfg.attention) {
        case AttentionKind::None: break;
        case AttentionKind::CA: {
            const std::uint64_t r = d / kChannelAttentionReduction;
            attn_macs = 2 * d * r;
            attn_elem = d * lr + r + d + d * lr;  // pool, relu, sigmoid, scale
            break;
        }
        case AttentionKind::SPA:
            attn_macs = 2 * lr;
            attn_elem = 2 * d * lr + lr + d * lr;  // mean + max, sigmoid, scale
            break;
        case AttentionKind::PA:
            attn_macs = d * d * lr;
            attn_elem = 2 * d * lr;  // sigmoid, scale
            break;
    }
    const std::uint64_t block_macs = 2 * d * d * lr + attn_macs;
    const std::uint64_t block_elem = 2 * d * lr + attn_elem;  // relu + residual add
    ops.macs += cfg.blocks * block_macs;
    ops.elementwise += cfg.blocks * block_elem;

    switch (cfg.recon) {
        case ReconKind::PixelShuffle:
            ops.macs += d * d * lr + d * 3 * s * s * lr + 9 * hr;
            ops.elementwise += d * lr;
            break;
        case ReconKind::Nearest:
        case ReconKind::Bilinear:
            ops.macs += d * d * hr + d * 3 * hr;
            ops.elementwise += d * hr;
            break;
        case ReconKind::TConv: ops.macs += d * 3 * s * s * lr + 9 * hr; break;
    }
    ops.elementwise += 3 * hr;  // skip addition
    return ops;
}

}  // namespace scnet
