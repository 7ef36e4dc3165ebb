#pragma once

// Forward-pass latency and transient-allocation harness.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "scnet/alloc_tracker.hpp"
#include "scnet/error.hpp"
#include "scnet/model.hpp"

namespace scnet {

struct BenchReport {
    std::string config;
    std::size_t height = 0;
    std::size_t width = 0;
    ScImpl impl = ScImpl::Fused;
    std::size_t iterations = 0;
    std::size_t warmup = 0;
    std::vector<double> samples_ms;
    double median_ms = 0.0;
    double p10_ms = 0.0;
    double p90_ms = 0.0;
    std::int64_t peak_transient_bytes = 0;  // max over timed iterations

    static std::string csv_header() {
        return "config,height,width,impl,iterations,warmup,median_ms,p10_ms,p90_ms,peak_transient_bytes";
    }
    std::string csv_row() const {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.4f", median_ms, p10_ms, p90_ms);
        return config + "," + std::to_string(height) + "," + std::to_string(width) + "," +
               std::string(to_string(impl)) + "," + std::to_string(iterations) + "," + std::to_string(warmup) + "," +
               buf + "," + std::to_string(peak_transient_bytes);
    }
};

/// Linear-interpolated percentile (q in [0, 1]) of unsorted samples.
inline double percentile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Runs forward on a fixed random (1, 3, h, w) input. The model and input are
/// built before timing starts so only the forward pass's own allocations count
/// as transient.
inline BenchReport bench_latency(const Model<float>& model, std::size_t h, std::size_t w, ScImpl impl,
                                 std::size_t iters, std::size_t warmup, std::uint64_t seed = 0) {
    if (iters == 0) throw ConfigError("bench needs at least one timed iteration");
    if (h == 0 || w == 0) throw ConfigError("bench input size must be positive");
    Tensor<float> input({1, 3, h, w});
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (float& v : input.values()) v = u(rng);

    for (std::size_t i = 0; i < warmup; ++i) (void)forward(model, input, impl);

    BenchReport r;
    r.config = model.config.name();
    r.height = h;
    r.width = w;
    r.impl = impl;
    r.iterations = iters;
    r.warmup = warmup;
    r.samples_ms.reserve(iters);
    for (std::size_t i = 0; i < iters; ++i) {
        TransientScope scope;
        const auto t0 = std::chrono::steady_clock::now();
        {
            const Tensor<float> out = forward(model, input, impl);
        }
        const auto t1 = std::chrono::steady_clock::now();
        r.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        r.peak_transient_bytes = std::max(r.peak_transient_bytes, scope.peak_transient());
    }
    r.median_ms = percentile(r.samples_ms, 0.5);
    r.p10_ms = percentile(r.samples_ms, 0.1);
    r.p90_ms = percentile(r.samples_ms, 0.9);
    return r;
}

inline BenchReport bench_latency(const ModelConfig& cfg, std::size_t h, std::size_t w, ScImpl impl,
                                 std::size_t iters, std::size_t warmup, std::uint64_t seed = 0) {
    cfg.validate();
    return bench_latency(build_model(cfg, seed), h, w, impl, iters, warmup, seed);
}

}  // namespace scnet
