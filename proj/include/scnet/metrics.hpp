#pragma once

// Luma-channel PSNR and SSIM on 8-bit-range values, computed in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "scnet/error.hpp"
#include "scnet/tensor.hpp"

namespace scnet {

/// Single-channel image, values nominally in [0, 255].
struct ImageY {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;

    ImageY() = default;
    ImageY(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w, fill) {}

    double& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
    double at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
};

/// BT.601 studio-swing luma of an RGB image in [0, 1]: Y = 16 + 65.481 R + 128.553 G + 24.966 B.
template <class T>
ImageY rgb_to_y(const Tensor<T>& img) {
    if (img.batch() != 1 || img.channels() != 3)
        throw ShapeError("rgb_to_y: expected (1, 3, h, w), got " + img.shape().str());
    ImageY y(img.height(), img.width());
    const T* r = img.plane(0, 0);
    const T* g = img.plane(0, 1);
    const T* b = img.plane(0, 2);
    for (std::size_t i = 0; i < img.plane_size(); ++i)
        y.data[i] = 16.0 + 65.481 * static_cast<double>(r[i]) + 128.553 * static_cast<double>(g[i]) +
                    24.966 * static_cast<double>(b[i]);
    return y;
}

/// Clamp to [0, 1], quantize to 8 bits (round half up) and map back to [0, 1].
template <class T>
Tensor<T> quantize_8bit(Tensor<T> img) {
    for (T& v : img.values()) {
        const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
        v = static_cast<T>(std::floor(c * 255.0 + 0.5) / 255.0);
    }
    return img;
}

inline ImageY crop_border(const ImageY& img, std::size_t border) {
    if (2 * border >= img.height || 2 * border >= img.width)
        throw ShapeError("border crop of " + std::to_string(border) + " leaves nothing of a " +
                         std::to_string(img.height) + "x" + std::to_string(img.width) + " image");
    ImageY out(img.height - 2 * border, img.width - 2 * border);
    for (std::size_t y = 0; y < out.height; ++y)
        for (std::size_t x = 0; x < out.width; ++x) out.at(y, x) = img.at(y + border, x + border);
    return out;
}

namespace detail {

inline void check_same_size(const ImageY& a, const ImageY& b, const char* what) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError(std::string(what) + ": " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                         " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
}

}  // namespace detail

/// 10 log10(255^2 / MSE) after cropping `border` pixels per side; +inf when identical.
inline double psnr(const ImageY& a, const ImageY& b, std::size_t border = 0) {
    detail::check_same_size(a, b, "psnr");
    const ImageY ca = border ? crop_border(a, border) : a;
    const ImageY cb = border ? crop_border(b, border) : b;
    double se = 0.0;
    for (std::size_t i = 0; i < ca.data.size(); ++i) {
        const double d = ca.data[i] - cb.data[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(ca.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Mean SSIM over all valid 11x11 Gaussian (sigma 1.5) windows, K1 = 0.01,
/// K2 = 0.03, L = 255, after cropping `border` pixels per side.
inline double ssim(const ImageY& a, const ImageY& b, std::size_t border = 0) {
    detail::check_same_size(a, b, "ssim");
    const ImageY ca = border ? crop_border(a, border) : a;
    const ImageY cb = border ? crop_border(b, border) : b;
    constexpr std::size_t win = kSsimWindow;
    if (ca.height < win || ca.width < win)
        throw ShapeError("ssim: image " + std::to_string(ca.height) + "x" + std::to_string(ca.width) +
                         " smaller than the 11x11 window");

    double kernel[win];
    double ksum = 0.0;
    for (std::size_t i = 0; i < win; ++i) {
        const double t = static_cast<double>(i) - static_cast<double>(win / 2);
        kernel[i] = std::exp(-(t * t) / (2.0 * kSsimSigma * kSsimSigma));
        ksum += kernel[i];
    }
    for (double& k : kernel) k /= ksum;

    const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
    const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
    const std::size_t oh = ca.height - win + 1, ow = ca.width - win + 1;

    // Separable valid filtering of a, b, a^2, b^2, ab.
    auto filter = [&](auto&& value) {
        std::vector<double> rows(ca.height * ow);
        for (std::size_t y = 0; y < ca.height; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < win; ++k) acc += kernel[k] * value(y * ca.width + x + k);
                rows[y * ow + x] = acc;
            }
        std::vector<double> out(oh * ow);
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (std::size_t k = 0; k < win; ++k) acc += kernel[k] * rows[(y + k) * ow + x];
                out[y * ow + x] = acc;
            }
        return out;
    };
    const auto& pa = ca.data;
    const auto& pb = cb.data;
    const auto mu_a = filter([&](std::size_t i) { return pa[i]; });
    const auto mu_b = filter([&](std::size_t i) { return pb[i]; });
    const auto saa = filter([&](std::size_t i) { return pa[i] * pa[i]; });
    const auto sbb = filter([&](std::size_t i) { return pb[i] * pb[i]; });
    const auto sab = filter([&](std::size_t i) { return pa[i] * pb[i]; });

    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = saa[i] - ma * ma;
        const double vb = sbb[i] - mb * mb;
        const double cov = sab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

struct QualityScore {
    double psnr_db = 0.0;
    double ssim = 0.0;
};

/// Evaluation protocol: SR output quantized to 8 bits, both images to luma,
/// `border` pixels cropped per side, then PSNR and SSIM.
template <class T>
QualityScore evaluate_pair(const Tensor<T>& sr, const Tensor<T>& hr, std::size_t border) {
    const ImageY ya = rgb_to_y(quantize_8bit(sr));
    const ImageY yb = rgb_to_y(quantize_8bit(hr));
    return {psnr(ya, yb, border), ssim(ya, yb, border)};
}

}  // namespace scnet
