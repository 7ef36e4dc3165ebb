#pragma once

// Optional attention modules applied to the residual branch of a block.
//
//   CA   channel:  avgpool -> 1x1 (D -> D/4) -> ReLU -> 1x1 (D/4 -> D) -> sigmoid, per-channel scale
//   SPA  spatial:  [mean_c, max_c] -> 1x1 (2 -> 1) -> sigmoid, per-pixel scale
//   PA   pixel:    1x1 (D -> D) -> sigmoid, per-element scale

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "scnet/error.hpp"
#include "scnet/shift_conv.hpp"
#include "scnet/tensor.hpp"

namespace scnet {

enum class AttentionKind { None, CA, SPA, PA };

inline constexpr AttentionKind kAllAttention[] = {AttentionKind::None, AttentionKind::CA, AttentionKind::SPA,
                                                  AttentionKind::PA};

inline constexpr std::size_t kChannelAttentionReduction = 4;

inline std::string_view to_string(AttentionKind a) {
    switch (a) {
        case AttentionKind::None: return "none";
        case AttentionKind::CA: return "ca";
        case AttentionKind::SPA: return "spa";
        case AttentionKind::PA: return "pa";
    }
    return "?";
}

inline AttentionKind parse_attention(std::string_view name) {
    for (auto a : kAllAttention)
        if (to_string(a) == name) return a;
    if (name == "CA") return AttentionKind::CA;
    if (name == "SPA") return AttentionKind::SPA;
    if (name == "PA") return AttentionKind::PA;
    throw ConfigError("unknown attention '" + std::string(name) + "' (expected none|ca|spa|pa)");
}

/// Weights of one attention module. CA uses both convs, SPA and PA only `first`.
template <class T>
struct AttentionParams {
    Conv1x1View<T> first;
    Conv1x1View<T> second;
};

/// Records ReLU signs and SPA argmax indices during a forward pass, or replays
/// them so the network is evaluated as the fixed piecewise-linear branch the
/// recording selected. Replay is what finite-difference checks use.
struct ActivationPattern {
    std::vector<std::vector<std::uint8_t>> relu;
    std::vector<std::vector<std::uint32_t>> argmax;
};

template <class T>
class Gates {
public:
    Gates() = default;
    Gates(ActivationPattern* record, const ActivationPattern* replay) : record_(record), replay_(replay) {}

    Tensor<T> relu(Tensor<T> x) {
        if (replay_) {
            if (relu_index_ >= replay_->relu.size()) throw ShapeError("activation pattern: too few relu masks");
            const auto& mask = replay_->relu[relu_index_++];
            if (mask.size() != x.numel()) throw ShapeError("activation pattern: relu mask size mismatch");
            for (std::size_t i = 0; i < x.numel(); ++i)
                if (!mask[i]) x.data()[i] = T(0);
            return x;
        }
        if (record_) {
            auto& mask = record_->relu.emplace_back(x.numel());
            for (std::size_t i = 0; i < x.numel(); ++i) mask[i] = x.data()[i] > T(0);
        }
        return scnet::relu(std::move(x));
    }

    /// Per-pixel channel argmax of f (n, c, h, w), flattened over (n, h, w).
    std::vector<std::uint32_t> channel_argmax(const Tensor<T>& f) {
        if (replay_) {
            if (argmax_index_ >= replay_->argmax.size()) throw ShapeError("activation pattern: too few argmax maps");
            return replay_->argmax[argmax_index_++];
        }
        const Shape s = f.shape();
        const std::size_t plane = f.plane_size();
        std::vector<std::uint32_t> idx(s.n * plane, 0);
        for (std::size_t b = 0; b < s.n; ++b)
            for (std::size_t i = 0; i < plane; ++i) {
                T best = f.plane(b, 0)[i];
                for (std::size_t c = 1; c < s.c; ++c)
                    if (f.plane(b, c)[i] > best) {
                        best = f.plane(b, c)[i];
                        idx[b * plane + i] = static_cast<std::uint32_t>(c);
                    }
            }
        if (record_) record_->argmax.push_back(idx);
        return idx;
    }

private:
    ActivationPattern* record_ = nullptr;
    const ActivationPattern* replay_ = nullptr;
    std::size_t relu_index_ = 0;
    std::size_t argmax_index_ = 0;
};

template <class T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

/// Intermediates kept for the backward pass.
template <class T>
struct AttentionCache {
    Tensor<T> pooled;   // CA: (n, D, 1, 1); SPA: stacked [mean, max] (n, 2, h, w)
    Tensor<T> hidden;   // CA: pre-ReLU bottleneck (n, D/4, 1, 1)
    Tensor<T> gate;     // sigmoid output
    std::vector<std::uint32_t> argmax;  // SPA
};

template <class T>
Tensor<T> apply_attention(AttentionKind kind, const Tensor<T>& f, const AttentionParams<T>& params, Gates<T>& gates,
                          AttentionCache<T>* cache = nullptr) {
    const Shape s = f.shape();
    const std::size_t plane = f.plane_size();
    Tensor<T> out(s);
    switch (kind) {
        case AttentionKind::None: return f;
        case AttentionKind::CA: {
            Tensor<T> pooled({s.n, s.c, 1, 1});
            for (std::size_t b = 0; b < s.n; ++b)
                for (std::size_t c = 0; c < s.c; ++c) {
                    T acc = T(0);
                    const T* p = f.plane(b, c);
                    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
                    pooled(b, c, 0, 0) = acc / static_cast<T>(plane);
                }
            Tensor<T> hidden = conv1x1(pooled, params.first);
            Tensor<T> gate = conv1x1(gates.relu(hidden), params.second);
            for (T& v : gate.values()) v = sigmoid(v);
            for (std::size_t b = 0; b < s.n; ++b)
                for (std::size_t c = 0; c < s.c; ++c) {
                    const T g = gate(b, c, 0, 0);
                    const T* src = f.plane(b, c);
                    T* dst = out.plane(b, c);
                    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * g;
                }
            if (cache) *cache = {std::move(pooled), std::move(hidden), std::move(gate), {}};
            return out;
        }
        case AttentionKind::SPA: {
            Tensor<T> stacked({s.n, 2, s.h, s.w});
            auto argmax = gates.channel_argmax(f);
            for (std::size_t b = 0; b < s.n; ++b)
                for (std::size_t i = 0; i < plane; ++i) {
                    T acc = T(0);
                    for (std::size_t c = 0; c < s.c; ++c) acc += f.plane(b, c)[i];
                    stacked.plane(b, 0)[i] = acc / static_cast<T>(s.c);
                    stacked.plane(b, 1)[i] = f.plane(b, argmax[b * plane + i])[i];
                }
            Tensor<T> gate = conv1x1(stacked, params.first);
            for (T& v : gate.values()) v = sigmoid(v);
            for (std::size_t b = 0; b < s.n; ++b)
                for (std::size_t c = 0; c < s.c; ++c) {
                    const T* g = gate.plane(b, 0);
                    const T* src = f.plane(b, c);
                    T* dst = out.plane(b, c);
                    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * g[i];
                }
            if (cache) *cache = {std::move(stacked), {}, std::move(gate), std::move(argmax)};
            return out;
        }
        case AttentionKind::PA: {
            Tensor<T> gate = conv1x1(f, params.first);
            for (T& v : gate.values()) v = sigmoid(v);
            for (std::size_t i = 0; i < f.numel(); ++i) out.data()[i] = f.data()[i] * gate.data()[i];
            if (cache) *cache = {{}, {}, std::move(gate), {}};
            return out;
        }
    }
    throw ConfigError("unknown attention kind");
}

template <class T>
Tensor<T> apply_attention(AttentionKind kind, const Tensor<T>& f, const AttentionParams<T>& params) {
    Gates<T> gates;
    return apply_attention(kind, f, params, gates);
}

}  // namespace scnet
