#pragma once

// Separable resampling with half-pixel-centre coordinates.
//
//   nearest   src = floor((x + 0.5) * in / out)
//   bilinear  src = (x + 0.5) * in / out - 0.5, clamped at 0, two taps, no antialiasing
//   bicubic   Keys kernel (a = -0.5); on downscale the support widens by in/out.
//             Taps outside the image are dropped and the rest renormalised.
//
// Each axis is described by a sparse weight table, so the adjoint (needed by
// the trainer) is the same table applied transposed.

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "scnet/tensor.hpp"

namespace scnet {

enum class ResizeMode { Nearest, Bilinear, Bicubic };

inline std::string_view to_string(ResizeMode m) {
    switch (m) {
        case ResizeMode::Nearest: return "nearest";
        case ResizeMode::Bilinear: return "bilinear";
        case ResizeMode::Bicubic: return "bicubic";
    }
    return "?";
}

inline double keys_cubic(double t, double a = -0.5) {
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

struct ResampleTap {
    std::size_t index;
    double weight;
};

/// For every output coordinate, the input taps that contribute to it.
struct ResampleAxis {
    std::size_t in_size = 0;
    std::vector<std::vector<ResampleTap>> taps;

    std::size_t out_size() const { return taps.size(); }
};

inline ResampleAxis make_axis(std::size_t in, std::size_t out, ResizeMode mode) {
    if (in == 0 || out == 0) throw ShapeError("resize: sizes must be positive");
    ResampleAxis axis;
    axis.in_size = in;
    axis.taps.resize(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t x = 0; x < out; ++x) {
        auto& taps = axis.taps[x];
        switch (mode) {
            case ResizeMode::Nearest: {
                auto src = static_cast<std::size_t>(std::floor((static_cast<double>(x) + 0.5) * ratio));
                taps.push_back({std::min(src, in - 1), 1.0});
                break;
            }
            case ResizeMode::Bilinear: {
                const double src = std::max(0.0, (static_cast<double>(x) + 0.5) * ratio - 0.5);
                const auto i0 = std::min(static_cast<std::size_t>(src), in - 1);
                const std::size_t i1 = std::min(i0 + 1, in - 1);
                const double frac = src - static_cast<double>(i0);
                if (i0 == i1 || frac == 0.0) {
                    taps.push_back({i0, 1.0});
                } else {
                    taps.push_back({i0, 1.0 - frac});
                    taps.push_back({i1, frac});
                }
                break;
            }
            case ResizeMode::Bicubic: {
                const double kscale = std::max(1.0, ratio);
                const double support = 2.0 * kscale;
                const double center = (static_cast<double>(x) + 0.5) * ratio;
                const auto lo = static_cast<std::ptrdiff_t>(std::floor(center - support + 0.5));
                const auto hi = static_cast<std::ptrdiff_t>(std::floor(center + support + 0.5));
                double total = 0.0;
                for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(lo, 0);
                     i < std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(in)); ++i) {
                    const double wgt = keys_cubic((static_cast<double>(i) + 0.5 - center) / kscale);
                    if (wgt == 0.0) continue;
                    taps.push_back({static_cast<std::size_t>(i), wgt});
                    total += wgt;
                }
                for (auto& t : taps) t.weight /= total;
                break;
            }
        }
    }
    return axis;
}

namespace detail {

// Applies `axis` along width (horizontal = true) or height of every plane.
template <class T>
Tensor<T> apply_axis(const Tensor<T>& f, const ResampleAxis& axis, bool horizontal) {
    const Shape s = f.shape();
    const Shape os = horizontal ? Shape{s.n, s.c, s.h, axis.out_size()} : Shape{s.n, s.c, axis.out_size(), s.w};
    Tensor<T> out(os);
    for (std::size_t b = 0; b < s.n; ++b)
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* src = f.plane(b, c);
            T* dst = out.plane(b, c);
            if (horizontal) {
                for (std::size_t y = 0; y < s.h; ++y)
                    for (std::size_t x = 0; x < os.w; ++x) {
                        double acc = 0.0;
                        for (const auto& t : axis.taps[x]) acc += t.weight * static_cast<double>(src[y * s.w + t.index]);
                        dst[y * os.w + x] = static_cast<T>(acc);
                    }
            } else {
                for (std::size_t y = 0; y < os.h; ++y)
                    for (std::size_t x = 0; x < s.w; ++x) {
                        double acc = 0.0;
                        for (const auto& t : axis.taps[y]) acc += t.weight * static_cast<double>(src[t.index * s.w + x]);
                        dst[y * os.w + x] = static_cast<T>(acc);
                    }
            }
        }
    return out;
}

// Transposed application: scatters each output-side value back onto its taps.
template <class T>
Tensor<T> apply_axis_adjoint(const Tensor<T>& g, const ResampleAxis& axis, bool horizontal) {
    const Shape s = g.shape();
    const Shape os = horizontal ? Shape{s.n, s.c, s.h, axis.in_size} : Shape{s.n, s.c, axis.in_size, s.w};
    std::vector<double> acc(os.h * os.w);
    Tensor<T> out(os);
    for (std::size_t b = 0; b < s.n; ++b)
        for (std::size_t c = 0; c < s.c; ++c) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const T* src = g.plane(b, c);
            if (horizontal) {
                for (std::size_t y = 0; y < s.h; ++y)
                    for (std::size_t x = 0; x < s.w; ++x)
                        for (const auto& t : axis.taps[x])
                            acc[y * os.w + t.index] += t.weight * static_cast<double>(src[y * s.w + x]);
            } else {
                for (std::size_t y = 0; y < s.h; ++y)
                    for (const auto& t : axis.taps[y])
                        for (std::size_t x = 0; x < s.w; ++x)
                            acc[t.index * os.w + x] += t.weight * static_cast<double>(src[y * s.w + x]);
            }
            T* dst = out.plane(b, c);
            for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<T>(acc[i]);
        }
    return out;
}

}  // namespace detail

/// Resamples every plane to out_h x out_w (width pass first, then height).
template <class T>
Tensor<T> resize(const Tensor<T>& f, std::size_t out_h, std::size_t out_w, ResizeMode mode) {
    const auto wx = make_axis(f.width(), out_w, mode);
    const auto hy = make_axis(f.height(), out_h, mode);
    return detail::apply_axis(detail::apply_axis(f, wx, true), hy, false);
}

/// Adjoint of resize(., out_h, out_w, mode) for inputs of size in_h x in_w.
template <class T>
Tensor<T> resize_adjoint(const Tensor<T>& g, std::size_t in_h, std::size_t in_w, ResizeMode mode) {
    const auto wx = make_axis(in_w, g.width(), mode);
    const auto hy = make_axis(in_h, g.height(), mode);
    return detail::apply_axis_adjoint(detail::apply_axis_adjoint(g, hy, false), wx, true);
}

}  // namespace scnet
