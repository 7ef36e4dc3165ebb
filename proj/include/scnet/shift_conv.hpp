#pragma once

// Grouped spatial shift and the shift-conv (SC) layer.
//
// The input channels are split into |steps| equal groups; group i is read at
// offset steps[i] = (dy, dx), so out[g, y, x] = in[g, y + dy, x + dx] with
// zero outside the map. An SC layer is shift followed by a 1x1 convolution,
// which is the same as a (2*pad+1)^2 convolution whose kernel has one
// non-zero tap per input channel; sc_to_dense builds that kernel.

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scnet/error.hpp"
#include "scnet/tensor.hpp"

namespace scnet {

struct ShiftStep {
    int dy = 0;
    int dx = 0;

    constexpr bool operator==(const ShiftStep&) const = default;
};

struct ShiftStepSet {
    std::vector<ShiftStep> steps;
    std::size_t pad = 0;

    std::size_t size() const { return steps.size(); }

    std::size_t max_reach() const {
        std::size_t r = 0;
        for (const auto& s : steps)
            r = std::max<std::size_t>(r, static_cast<std::size_t>(std::max(std::abs(s.dy), std::abs(s.dx))));
        return r;
    }

    void validate() const {
        if (steps.empty()) throw ConfigError("shift step set is empty");
        if (max_reach() > pad)
            throw ConfigError("shift step reaches " + std::to_string(max_reach()) + " but pad is " +
                              std::to_string(pad));
    }

    /// Every step negated; shifting by the negation is the adjoint of shifting.
    ShiftStepSet negated() const {
        ShiftStepSet out{steps, pad};
        for (auto& s : out.steps) s = {-s.dy, -s.dx};
        return out;
    }

    bool operator==(const ShiftStepSet&) const = default;
};

enum class StepPreset { Shift4Cross, Shift4Diag, Shift8, Shift8Dilated, Shift16 };

inline constexpr StepPreset kAllPresets[] = {StepPreset::Shift4Cross, StepPreset::Shift4Diag, StepPreset::Shift8,
                                             StepPreset::Shift8Dilated, StepPreset::Shift16};

inline std::string_view to_string(StepPreset p) {
    switch (p) {
        case StepPreset::Shift4Cross: return "Shift4-Cross";
        case StepPreset::Shift4Diag: return "Shift4-Diag";
        case StepPreset::Shift8: return "Shift8";
        case StepPreset::Shift8Dilated: return "Shift8-Dilated";
        case StepPreset::Shift16: return "Shift16";
    }
    return "?";
}

inline StepPreset parse_step_preset(std::string_view name) {
    for (auto p : kAllPresets)
        if (to_string(p) == name) return p;
    throw ConfigError("unknown step preset '" + std::string(name) + "'");
}

inline ShiftStepSet preset_steps(StepPreset preset) {
    static const std::vector<ShiftStep> shift8 = {{0, 1}, {0, -1}, {1, 0}, {1, 1}, {1, -1}, {-1, 0}, {-1, 1}, {-1, -1}};
    auto dilated = [] {
        std::vector<ShiftStep> d;
        for (const auto& s : shift8) d.push_back({2 * s.dy, 2 * s.dx});
        return d;
    };
    switch (preset) {
        case StepPreset::Shift4Cross: return {{{0, 1}, {0, -1}, {1, 0}, {-1, 0}}, 1};
        case StepPreset::Shift4Diag: return {{{1, 1}, {1, -1}, {-1, 1}, {-1, -1}}, 1};
        case StepPreset::Shift8: return {shift8, 1};
        case StepPreset::Shift8Dilated: return {dilated(), 2};
        case StepPreset::Shift16: {
            auto all = shift8;
            const auto d = dilated();
            all.insert(all.end(), d.begin(), d.end());
            return {all, 2};
        }
    }
    throw ConfigError("unknown step preset");
}

namespace detail {

inline std::size_t checked_group_size(std::size_t channels, const ShiftStepSet& steps) {
    if (steps.steps.empty()) throw ConfigError("shift step set is empty");
    if (channels % steps.size() != 0)
        throw ConfigError(std::to_string(channels) + " channels not divisible into " + std::to_string(steps.size()) +
                          " shift groups");
    return channels / steps.size();
}

// Copies `count` values of row `y` of `src` (h x w plane) starting at column
// x0 + dx into dst, zero where the read leaves the plane.
template <class T>
inline void shifted_row_copy(const T* src, std::size_t h, std::size_t w, std::ptrdiff_t y, std::ptrdiff_t x0,
                             std::size_t count, T* dst) {
    if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) {
        std::fill(dst, dst + count, T(0));
        return;
    }
    const auto wi = static_cast<std::ptrdiff_t>(w);
    const std::ptrdiff_t end = x0 + static_cast<std::ptrdiff_t>(count);
    const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(0, x0, end);
    const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(wi, lo, end);
    std::fill(dst, dst + (lo - x0), T(0));
    if (hi > lo) std::memcpy(dst + (lo - x0), src + y * wi + lo, static_cast<std::size_t>(hi - lo) * sizeof(T));
    std::fill(dst + (hi - x0), dst + count, T(0));
}

}  // namespace detail

template <class T>
Tensor<T> spatial_shift(const Tensor<T>& f, const ShiftStepSet& steps) {
    const Shape s = f.shape();
    const std::size_t gsize = detail::checked_group_size(s.c, steps);
    Tensor<T> out(s);
    for (std::size_t b = 0; b < s.n; ++b)
        for (std::size_t c = 0; c < s.c; ++c) {
            const ShiftStep st = steps.steps[c / gsize];
            const T* src = f.plane(b, c);
            T* dst = out.plane(b, c);
            for (std::size_t y = 0; y < s.h; ++y)
                detail::shifted_row_copy(src, s.h, s.w, static_cast<std::ptrdiff_t>(y) + st.dy, st.dx, s.w,
                                         dst + y * s.w);
        }
    return out;
}

/// Non-owning 1x1 convolution parameters: weight is c_out x c_in row-major.
template <class T>
struct Conv1x1View {
    const T* weight = nullptr;
    const T* bias = nullptr;
    std::size_t c_out = 0;
    std::size_t c_in = 0;

    MatrixView<T> matrix() const { return {weight, c_out, c_in}; }
};

template <class T>
struct Conv1x1Weights {
    Matrix<T> weight;
    std::vector<T> bias;

    Conv1x1Weights() = default;
    Conv1x1Weights(Matrix<T> w, std::vector<T> b) : weight(std::move(w)), bias(std::move(b)) {
        if (weight.rows() == 0 || weight.cols() == 0) throw ShapeError("conv1x1: empty weight matrix");
        if (bias.size() != weight.rows()) throw ShapeError("conv1x1: bias length differs from output channels");
    }

    std::size_t c_out() const { return weight.rows(); }
    std::size_t c_in() const { return weight.cols(); }
    Conv1x1View<T> view() const { return {weight.data(), bias.data(), weight.rows(), weight.cols()}; }
    operator Conv1x1View<T>() const { return view(); }
};

namespace detail {

template <class T>
void check_conv_input(const Tensor<T>& f, const Conv1x1View<T>& w) {
    if (f.channels() != w.c_in)
        throw ShapeError("conv1x1: input " + f.shape().str() + " has " + std::to_string(f.channels()) +
                         " channels, weight expects " + std::to_string(w.c_in));
}

template <class T>
void add_bias(T* out, const T* bias, std::size_t c_out, std::size_t plane) {
    if (bias == nullptr) return;
    for (std::size_t o = 0; o < c_out; ++o) {
        const T b = bias[o];
        T* row = out + o * plane;
        for (std::size_t i = 0; i < plane; ++i) row[i] += b;
    }
}

}  // namespace detail

template <class T>
Tensor<T> conv1x1(const Tensor<T>& f, const Conv1x1View<T>& w) {
    detail::check_conv_input(f, w);
    const Shape s = f.shape();
    Tensor<T> out({s.n, w.c_out, s.h, s.w});
    for (std::size_t b = 0; b < s.n; ++b) {
        const MatrixView<T> x = f.item(b);
        gemm_packed(w.weight, w.c_out, w.c_in, x.cols, dense_packer(x.data, x.rows, x.cols), out.plane(b, 0), w.bias);
    }
    return out;
}

/// dst += conv1x1(f, w) without a temporary; rounds exactly like
/// add_inplace(dst, conv1x1(f, w)).
template <class T>
void conv1x1_accumulate(const Tensor<T>& f, const Conv1x1View<T>& w, Tensor<T>& dst) {
    detail::check_conv_input(f, w);
    const Shape s = f.shape();
    if (dst.shape() != Shape{s.n, w.c_out, s.h, s.w})
        throw ShapeError("conv1x1_accumulate: destination " + dst.shape().str() + " vs input " + s.str());
    for (std::size_t b = 0; b < s.n; ++b) {
        const MatrixView<T> x = f.item(b);
        gemm_packed(w.weight, w.c_out, w.c_in, x.cols, dense_packer(x.data, x.rows, x.cols), dst.plane(b, 0), w.bias,
                    true);
    }
}

/// Shift, materialized, then conv1x1.
template <class T>
Tensor<T> sc_layer_naive(const Tensor<T>& f, const Conv1x1View<T>& w, const ShiftStepSet& steps) {
    detail::check_conv_input(f, w);
    return conv1x1(spatial_shift(f, steps), w);
}

/// Same result as sc_layer_naive, bit for bit, without the shifted copy: the
/// GEMM's B-panel packer reads each input channel through its group's offset.
template <class T>
Tensor<T> sc_layer_fused(const Tensor<T>& f, const Conv1x1View<T>& w, const ShiftStepSet& steps) {
    detail::check_conv_input(f, w);
    const Shape s = f.shape();
    const std::size_t gsize = detail::checked_group_size(s.c, steps);
    const std::size_t plane = f.plane_size();
    Tensor<T> out({s.n, w.c_out, s.h, s.w});
    for (std::size_t b = 0; b < s.n; ++b) {
        auto pack = [&](std::size_t j0, std::size_t width, T* dst, std::size_t stride) {
            for (std::size_t p = 0; p < s.c; ++p) {
                const ShiftStep st = steps.steps[p / gsize];
                const T* src = f.plane(b, p);
                T* row = dst + p * stride;
                for (std::size_t j = j0; j < j0 + width;) {
                    const std::size_t y = j / s.w, x = j % s.w;
                    const std::size_t run = std::min(j0 + width - j, s.w - x);
                    detail::shifted_row_copy(src, s.h, s.w, static_cast<std::ptrdiff_t>(y) + st.dy,
                                             static_cast<std::ptrdiff_t>(x) + st.dx, run, row + (j - j0));
                    j += run;
                }
            }
        };
        gemm_packed(w.weight, w.c_out, w.c_in, plane, pack, out.plane(b, 0), w.bias);
    }
    return out;
}

enum class ScImpl { Naive, Fused };

inline std::string_view to_string(ScImpl i) { return i == ScImpl::Naive ? "naive" : "fused"; }

inline ScImpl parse_sc_impl(std::string_view name) {
    if (name == "naive") return ScImpl::Naive;
    if (name == "fused") return ScImpl::Fused;
    throw ConfigError("unknown implementation '" + std::string(name) + "' (expected naive|fused)");
}

template <class T>
Tensor<T> sc_layer(const Tensor<T>& f, const Conv1x1View<T>& w, const ShiftStepSet& steps, ScImpl impl) {
    return impl == ScImpl::Fused ? sc_layer_fused(f, w, steps) : sc_layer_naive(f, w, steps);
}

/// Dense (c_out, c_in, 2*pad+1, 2*pad+1) kernel equivalent to the SC layer:
/// K[o, i, dy+pad, dx+pad] = W[o, i] for i's group step (dy, dx), zero elsewhere.
template <class T>
Tensor<T> sc_to_dense(const Conv1x1View<T>& w, const ShiftStepSet& steps) {
    steps.validate();
    const std::size_t gsize = detail::checked_group_size(w.c_in, steps);
    const std::size_t k = 2 * steps.pad + 1;
    const auto pad = static_cast<int>(steps.pad);
    Tensor<T> kernel({w.c_out, w.c_in, k, k});
    for (std::size_t o = 0; o < w.c_out; ++o)
        for (std::size_t i = 0; i < w.c_in; ++i) {
            const ShiftStep st = steps.steps[i / gsize];
            kernel(o, i, static_cast<std::size_t>(st.dy + pad), static_cast<std::size_t>(st.dx + pad)) =
                w.weight[o * w.c_in + i];
        }
    return kernel;
}

/// Direct zero-padded "same" correlation with an odd square kernel,
/// accumulated in double. Reference path for the SC layer.
template <class T>
Tensor<T> correlate_same(const Tensor<T>& f, const Tensor<T>& kernel, const T* bias = nullptr) {
    const Shape s = f.shape();
    const Shape ks = kernel.shape();
    if (ks.c != s.c || ks.h != ks.w || ks.h % 2 == 0)
        throw ShapeError("correlate_same: kernel " + ks.str() + " incompatible with input " + s.str());
    const auto r = static_cast<std::ptrdiff_t>(ks.h / 2);
    const auto H = static_cast<std::ptrdiff_t>(s.h), W = static_cast<std::ptrdiff_t>(s.w);
    Tensor<T> out({s.n, ks.n, s.h, s.w});
    for (std::size_t b = 0; b < s.n; ++b)
        for (std::size_t o = 0; o < ks.n; ++o)
            for (std::ptrdiff_t y = 0; y < H; ++y)
                for (std::ptrdiff_t x = 0; x < W; ++x) {
                    double acc = bias ? static_cast<double>(bias[o]) : 0.0;
                    for (std::size_t i = 0; i < s.c; ++i)
                        for (std::ptrdiff_t ky = -r; ky <= r; ++ky)
                            for (std::ptrdiff_t kx = -r; kx <= r; ++kx) {
                                const std::ptrdiff_t sy = y + ky, sx = x + kx;
                                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                                acc += static_cast<double>(kernel(o, i, static_cast<std::size_t>(ky + r),
                                                                  static_cast<std::size_t>(kx + r))) *
                                       static_cast<double>(f(b, i, static_cast<std::size_t>(sy),
                                                             static_cast<std::size_t>(sx)));
                            }
                    out(b, o, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = static_cast<T>(acc);
                }
    return out;
}

}  // namespace scnet
