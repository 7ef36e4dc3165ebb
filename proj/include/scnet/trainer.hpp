#pragma once

// Reverse-mode gradients for the network, L1 loss, Adam, and the patch
// sampling pipeline used for training.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "scnet/attention.hpp"
#include "scnet/error.hpp"
#include "scnet/model.hpp"
#include "scnet/resize.hpp"
#include "scnet/shift_conv.hpp"
#include "scnet/tensor.hpp"

namespace scnet {

/// Gradient table mirroring Model::weights (same names, order and shapes).
template <class T>
using Gradients = WeightTable<T>;

template <class T>
Gradients<T> zero_gradients(const Model<T>& model) {
    Gradients<T> g;
    for (const auto& [name, t] : model.weights) g.add(name, Tensor<T>(t.shape()));
    return g;
}

/// Mean absolute error. grad receives sign(pred - target) / N, with sign(0) = 0.
template <class T>
double l1_loss(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad = nullptr) {
    if (pred.shape() != target.shape())
        throw ShapeError("l1_loss: " + pred.shape().str() + " vs " + target.shape().str());
    const std::size_t n = pred.numel();
    if (grad) *grad = Tensor<T>(pred.shape());
    double total = 0.0;
    const T inv = T(1) / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]);
        total += std::abs(d);
        if (grad) grad->data()[i] = d > 0 ? inv : (d < 0 ? -inv : T(0));
    }
    return n ? total / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// Layer adjoints

/// Accumulates dW (c_out, c_in, 1, 1) and db for y = W x + b and returns dx
/// (or an empty tensor when want_dx is false).
template <class T>
Tensor<T> conv1x1_backward(const Tensor<T>& x, const Conv1x1View<T>& w, const Tensor<T>& dy, Tensor<T>& dweight,
                           Tensor<T>& dbias, bool want_dx = true) {
    const Shape s = x.shape();
    if (dy.shape() != Shape{s.n, w.c_out, s.h, s.w})
        throw ShapeError("conv1x1_backward: dy " + dy.shape().str() + " for input " + s.str());
    Matrix<T> tmp(w.c_out, w.c_in);
    for (std::size_t b = 0; b < s.n; ++b) {
        gemm_nt_into(dy.item(b), x.item(b), tmp.data());
        for (std::size_t i = 0; i < w.c_out * w.c_in; ++i) dweight.data()[i] += tmp.data()[i];
        for (std::size_t o = 0; o < w.c_out; ++o) {
            T acc = T(0);
            const T* row = dy.plane(b, o);
            for (std::size_t i = 0; i < x.plane_size(); ++i) acc += row[i];
            dbias.data()[o] += acc;
        }
    }
    if (!want_dx) return {};
    const Matrix<T> wt = transpose(w.matrix());
    Tensor<T> dx(s);
    for (std::size_t b = 0; b < s.n; ++b) gemm_into(wt.view(), dy.item(b), dx.plane(b, 0));
    return dx;
}

/// Adjoint of spatial_shift: shift by the negated steps.
template <class T>
Tensor<T> spatial_shift_backward(const Tensor<T>& dy, const ShiftStepSet& steps) {
    return spatial_shift(dy, steps.negated());
}

template <class T>
Tensor<T> sc_layer_backward(const Tensor<T>& x, const Conv1x1View<T>& w, const ShiftStepSet& steps,
                            const Tensor<T>& dy, Tensor<T>& dweight, Tensor<T>& dbias) {
    const Tensor<T> shifted = spatial_shift(x, steps);
    return spatial_shift_backward(conv1x1_backward(shifted, w, dy, dweight, dbias), steps);
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& pre, Tensor<T> dy) {
    if (pre.shape() != dy.shape()) throw ShapeError("relu_backward: " + pre.shape().str() + " vs " + dy.shape().str());
    for (std::size_t i = 0; i < dy.numel(); ++i)
        if (!(pre.data()[i] > T(0))) dy.data()[i] = T(0);
    return dy;
}

template <class T>
Tensor<T> tconv_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, std::size_t s,
                         Tensor<T>& dweight, Tensor<T>& dbias) {
    const Shape ws = weight.shape();
    const std::size_t rows = ws.c * s * s;
    for (std::size_t b = 0; b < dy.batch(); ++b)
        for (std::size_t o = 0; o < ws.c; ++o) {
            T acc = T(0);
            const T* p = dy.plane(b, o);
            for (std::size_t i = 0; i < dy.plane_size(); ++i) acc += p[i];
            dbias.data()[o] += acc;
        }
    const Tensor<T> dz = pixel_unshuffle(dy, s);
    const MatrixView<T> wmat{weight.data(), ws.n, rows};  // D x 3s^2
    Matrix<T> dm(rows, ws.n);
    Tensor<T> dx(x.shape());
    for (std::size_t b = 0; b < x.batch(); ++b) {
        gemm_nt_into(dz.item(b), x.item(b), dm.data());
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < ws.n; ++c) dweight.data()[c * rows + r] += dm(r, c);
        gemm_into(wmat, dz.item(b), dx.plane(b, 0));
    }
    return dx;
}

template <class T>
Tensor<T> attention_backward(AttentionKind kind, const Tensor<T>& f, const AttentionCache<T>& cache,
                             const AttentionParams<T>& params, const Tensor<T>& dout, Gradients<T>& grads,
                             const std::string& prefix) {
    const Shape s = f.shape();
    const std::size_t plane = f.plane_size();
    Tensor<T> df(s);
    auto sig_grad = [](T g) { return g * (T(1) - g); };
    switch (kind) {
        case AttentionKind::None: return dout;
        case AttentionKind::CA: {
            Tensor<T> da2(cache.gate.shape());
            for (std::size_t b = 0; b < s.n; ++b)
                for (std::size_t c = 0; c < s.c; ++c) {
                    const T g = cache.gate(b, c, 0, 0);
                    const T* d = dout.plane(b, c);
                    const T* x = f.plane(b, c);
                    T* o = df.plane(b, c);
                    T dg = T(0);
                    for (std::size_t i = 0; i < plane; ++i) {
                        o[i] = d[i] * g;
                        dg += d[i] * x[i];
                    }
                    da2(b, c, 0, 0) = dg * sig_grad(g);
                }
            const Tensor<T> dr = conv1x1_backward(relu(cache.hidden), params.second, da2,
                                                  grads.at(prefix + ".attn.up.weight"),
                                                  grads.at(prefix + ".attn.up.bias"));
            const Tensor<T> dz = conv1x1_backward(cache.pooled, params.first, relu_backward(cache.hidden, dr),
                                                  grads.at(prefix + ".attn.down.weight"),
                                                  grads.at(prefix + ".attn.down.bias"));
            for (std::size_t b = 0; b < s.n; ++b)
                for (std::size_t c = 0; c < s.c; ++c) {
                    const T add = dz(b, c, 0, 0) / static_cast<T>(plane);
                    T* o = df.plane(b, c);
                    for (std::size_t i = 0; i < plane; ++i) o[i] += add;
                }
            return df;
        }
        case AttentionKind::SPA: {
            Tensor<T> da(cache.gate.shape());
            for (std::size_t b = 0; b < s.n; ++b) {
                const T* g = cache.gate.plane(b, 0);
                T* a = da.plane(b, 0);
                for (std::size_t c = 0; c < s.c; ++c) {
                    const T* d = dout.plane(b, c);
                    const T* x = f.plane(b, c);
                    T* o = df.plane(b, c);
                    for (std::size_t i = 0; i < plane; ++i) {
                        o[i] = d[i] * g[i];
                        a[i] += d[i] * x[i];
                    }
                }
                for (std::size_t i = 0; i < plane; ++i) a[i] *= sig_grad(g[i]);
            }
            const Tensor<T> dstack = conv1x1_backward(cache.pooled, params.first, da,
                                                      grads.at(prefix + ".attn.conv.weight"),
                                                      grads.at(prefix + ".attn.conv.bias"));
            for (std::size_t b = 0; b < s.n; ++b)
                for (std::size_t i = 0; i < plane; ++i) {
                    const T dmean = dstack.plane(b, 0)[i] / static_cast<T>(s.c);
                    for (std::size_t c = 0; c < s.c; ++c) df.plane(b, c)[i] += dmean;
                    df.plane(b, cache.argmax[b * plane + i])[i] += dstack.plane(b, 1)[i];
                }
            return df;
        }
        case AttentionKind::PA: {
            Tensor<T> da(s);
            for (std::size_t i = 0; i < f.numel(); ++i) {
                const T g = cache.gate.data()[i];
                df.data()[i] = dout.data()[i] * g;
                da.data()[i] = dout.data()[i] * f.data()[i] * sig_grad(g);
            }
            add_inplace(df, conv1x1_backward(f, params.first, da, grads.at(prefix + ".attn.conv.weight"),
                                             grads.at(prefix + ".attn.conv.bias")));
            return df;
        }
    }
    throw ConfigError("unknown attention kind");
}

/// Gradients of <dout, forward(model, cache.input)> with respect to every weight.
/// `cache` must come from forward() on the same model.
template <class T>
Gradients<T> backward(const Model<T>& model, const ForwardCache<T>& cache, const Tensor<T>& dout) {
    const ModelConfig& cfg = model.config;
    if (cache.input.numel() == 0 || cache.blocks.size() != cfg.blocks || cache.recon.to_out.numel() == 0)
        throw ConfigError("backward: activation cache missing or from a different model");
    const std::size_t s = cfg.scale;
    if (dout.shape() != Shape{cache.input.batch(), 3, cache.input.height() * s, cache.input.width() * s})
        throw ShapeError("backward: upstream gradient " + dout.shape().str() + " does not match the output");
    const ShiftStepSet steps = cfg.steps();
    Gradients<T> g = zero_gradients(model);
    auto conv_bw = [&](const std::string& name, const Tensor<T>& x, const Tensor<T>& dy, bool want_dx = true) {
        return conv1x1_backward(x, model.conv(name), dy, g.at(name + ".weight"), g.at(name + ".bias"), want_dx);
    };
    auto sc_bw = [&](const std::string& name, const Tensor<T>& x, const Tensor<T>& dy) {
        return sc_layer_backward(x, model.conv(name), steps, dy, g.at(name + ".weight"), g.at(name + ".bias"));
    };

    const ReconCache<T>& rc = cache.recon;
    const Tensor<T> d_to_out = conv_bw("recon.out", rc.to_out, dout);
    Tensor<T> dx;
    switch (cfg.recon) {
        case ReconKind::PixelShuffle: {
            const Tensor<T> dhidden = conv_bw("recon.expand", rc.hidden, pixel_unshuffle(d_to_out, s));
            dx = sc_bw("recon.sc", rc.input, relu_backward(rc.pre_relu, dhidden));
            break;
        }
        case ReconKind::Nearest:
        case ReconKind::Bilinear: {
            const Tensor<T> dresized = sc_bw("recon.sc", rc.resized, relu_backward(rc.pre_relu, d_to_out));
            dx = resize_adjoint(dresized, rc.input.height(), rc.input.width(), detail::recon_resize_mode(cfg.recon));
            break;
        }
        case ReconKind::TConv:
            dx = tconv_backward(rc.input, model.weights.at("recon.tconv.weight"), d_to_out, s,
                                g.at("recon.tconv.weight"), g.at("recon.tconv.bias"));
            break;
    }

    for (std::size_t i = cfg.blocks; i-- > 0;) {
        const BlockCache<T>& bc = cache.blocks[i];
        const std::string p = "body." + std::to_string(i);
        Tensor<T> dbranch = dx;
        if (cfg.attention != AttentionKind::None)
            dbranch = attention_backward(cfg.attention, bc.branch, bc.attention, detail::attention_params(model, p),
                                         dx, g, p);
        const Tensor<T> dhidden = conv_bw(p + ".conv", bc.hidden, dbranch);
        add_inplace(dx, sc_bw(p + ".sc", bc.input, relu_backward(bc.pre_relu, dhidden)));
    }
    conv_bw("head", cache.input, dx, false);
    return g;
}

// ---------------------------------------------------------------------------
// Optimizer

struct TrainConfig {
    std::size_t patch = 64;  // LR patch side; the HR patch is patch * scale
    std::size_t batch = 32;
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t iterations = 0;
    std::uint64_t seed = 0;
    std::size_t halve_every = 0;  // 0 disables the step schedule
    ScImpl impl = ScImpl::Fused;

    void validate() const {
        if (patch == 0 || batch == 0) throw ConfigError("patch and batch must be positive");
        if (!(lr > 0) || !(eps > 0)) throw ConfigError("learning rate and epsilon must be positive");
        if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in (0, 1)");
    }

    double lr_at(std::size_t iteration) const {
        if (halve_every == 0) return lr;
        return lr * std::pow(0.5, static_cast<double>(iteration / halve_every));
    }
};

template <class T>
struct AdamState {
    Gradients<T> m;
    Gradients<T> v;
    std::uint64_t step = 0;
};

template <class T>
AdamState<T> make_adam_state(const Model<T>& model) {
    return {zero_gradients(model), zero_gradients(model), 0};
}

/// One bias-corrected Adam update at learning rate `lr`; advances state.step.
template <class T>
void adam_step(WeightTable<T>& weights, const Gradients<T>& grads, AdamState<T>& state, const TrainConfig& cfg,
               double lr) {
    if (grads.size() != weights.size() || state.m.size() != weights.size())
        throw ShapeError("adam_step: gradient / state tables do not match the weights");
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    auto g_it = grads.begin();
    auto m_it = state.m.begin();
    auto v_it = state.v.begin();
    for (auto& [name, w] : weights) {
        const Tensor<T>& g = (g_it++)->second;
        Tensor<T>& m = (m_it++)->second;
        Tensor<T>& v = (v_it++)->second;
        if (g.shape() != w.shape()) throw ShapeError("adam_step: gradient shape mismatch for '" + name + "'");
        for (std::size_t i = 0; i < w.numel(); ++i) {
            const double gi = static_cast<double>(g.data()[i]);
            const double mi = cfg.beta1 * static_cast<double>(m.data()[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v.data()[i]) + (1.0 - cfg.beta2) * gi * gi;
            m.data()[i] = static_cast<T>(mi);
            v.data()[i] = static_cast<T>(vi);
            const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
            w.data()[i] = static_cast<T>(static_cast<double>(w.data()[i]) - update);
        }
    }
}

// ---------------------------------------------------------------------------
// Data pipeline

template <class T>
Tensor<T> hflip(const Tensor<T>& f) {
    Tensor<T> out(f.shape());
    const std::size_t w = f.width();
    for (std::size_t b = 0; b < f.batch(); ++b)
        for (std::size_t c = 0; c < f.channels(); ++c)
            for (std::size_t y = 0; y < f.height(); ++y)
                for (std::size_t x = 0; x < w; ++x) out(b, c, y, x) = f(b, c, y, w - 1 - x);
    return out;
}

/// Rotates every plane by 90 degrees counter-clockwise, `quarter_turns` times.
template <class T>
Tensor<T> rot90(const Tensor<T>& f, unsigned quarter_turns) {
    Tensor<T> cur = f;
    for (unsigned t = 0; t < quarter_turns % 4; ++t) {
        const Shape s = cur.shape();
        Tensor<T> next({s.n, s.c, s.w, s.h});
        for (std::size_t b = 0; b < s.n; ++b)
            for (std::size_t c = 0; c < s.c; ++c)
                for (std::size_t y = 0; y < s.w; ++y)
                    for (std::size_t x = 0; x < s.h; ++x) next(b, c, y, x) = cur(b, c, x, s.w - 1 - y);
        cur = std::move(next);
    }
    return cur;
}

/// Dihedral augmentation: optional horizontal flip, then rotation.
struct Augmentation {
    bool flip = false;
    unsigned quarter_turns = 0;

    template <class T>
    Tensor<T> apply(const Tensor<T>& f) const {
        return rot90(flip ? hflip(f) : f, quarter_turns);
    }
};

template <class T>
struct TrainingPair {
    Tensor<T> lr;  // (1, 3, p, p)
    Tensor<T> hr;  // (1, 3, p*s, p*s)
};

template <class T>
Tensor<T> crop(const Tensor<T>& f, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    if (y0 + h > f.height() || x0 + w > f.width())
        throw ShapeError("crop window exceeds image " + f.shape().str());
    Tensor<T> out({f.batch(), f.channels(), h, w});
    for (std::size_t b = 0; b < f.batch(); ++b)
        for (std::size_t c = 0; c < f.channels(); ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) out(b, c, y, x) = f(b, c, y0 + y, x0 + x);
    return out;
}

template <class T>
Tensor<T> clamp01(Tensor<T> f) {
    for (T& v : f.values()) v = std::clamp(v, T(0), T(1));
    return f;
}

/// Bicubic downscale by `scale`, clamped to [0, 1]. Input sides must be multiples of scale.
template <class T>
Tensor<T> degrade(const Tensor<T>& hr, std::size_t scale) {
    if (hr.height() % scale != 0 || hr.width() % scale != 0)
        throw ShapeError("degrade: " + hr.shape().str() + " not a multiple of scale " + std::to_string(scale));
    return clamp01(resize(hr, hr.height() / scale, hr.width() / scale, ResizeMode::Bicubic));
}

/// Random scale-aligned HR crop of patch*scale pixels, random dihedral
/// augmentation, LR by bicubic downscale. Draw order: y, x, flip, rotation.
template <class T, class Rng>
TrainingPair<T> make_training_pair(const Tensor<T>& hr_image, std::size_t scale, std::size_t patch, Rng& rng) {
    const std::size_t hp = patch * scale;
    if (hr_image.batch() != 1 || hr_image.channels() != 3)
        throw ShapeError("training image must be (1, 3, h, w), got " + hr_image.shape().str());
    if (hr_image.height() < hp || hr_image.width() < hp)
        throw ShapeError("training image " + hr_image.shape().str() + " smaller than the " + std::to_string(hp) +
                         "px HR patch");
    std::uniform_int_distribution<std::size_t> ys(0, (hr_image.height() - hp) / scale);
    std::uniform_int_distribution<std::size_t> xs(0, (hr_image.width() - hp) / scale);
    const std::size_t y0 = ys(rng) * scale;
    const std::size_t x0 = xs(rng) * scale;
    Augmentation aug;
    aug.flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    aug.quarter_turns = static_cast<unsigned>(std::uniform_int_distribution<int>(0, 3)(rng));
    Tensor<T> hr = aug.apply(crop(hr_image, y0, x0, hp, hp));
    Tensor<T> lr = degrade(hr, scale);
    return {std::move(lr), std::move(hr)};
}

/// Concatenates (1, c, h, w) tensors along the batch axis.
template <class T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
    if (items.empty()) throw ShapeError("stack_batch: no items");
    const Shape s = items.front().shape();
    Tensor<T> out({items.size() * s.n, s.c, s.h, s.w});
    std::size_t off = 0;
    for (const auto& t : items) {
        if (t.shape() != s) throw ShapeError("stack_batch: " + t.shape().str() + " vs " + s.str());
        std::copy(t.data(), t.data() + t.numel(), out.data() + off);
        off += t.numel();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training loop

template <class T>
struct TrainResult {
    Model<T> model;
    std::vector<double> loss_history;
};

/// sample batch -> forward -> L1 -> backward -> Adam, `cfg.iterations` times.
/// Fully determined by (model, dataset, cfg). on_step(iteration, loss) is optional.
template <class T>
TrainResult<T> train(Model<T> model, const std::vector<Tensor<T>>& dataset, const TrainConfig& cfg,
                     const std::function<void(std::size_t, double)>& on_step = {}) {
    cfg.validate();
    if (dataset.empty()) throw ConfigError("train: dataset is empty");
    model.validate();
    const std::size_t s = model.config.scale;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
    AdamState<T> state = make_adam_state(model);
    std::vector<double> history;
    history.reserve(cfg.iterations);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        std::vector<Tensor<T>> lrs, hrs;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            auto pair = make_training_pair(dataset[pick(rng)], s, cfg.patch, rng);
            lrs.push_back(std::move(pair.lr));
            hrs.push_back(std::move(pair.hr));
        }
        const Tensor<T> lr = stack_batch(lrs);
        const Tensor<T> hr = stack_batch(hrs);
        ForwardCache<T> cache;
        const Tensor<T> sr = forward(model, lr, ForwardOptions{cfg.impl}, &cache);
        Tensor<T> dout;
        const double loss = l1_loss(sr, hr, &dout);
        const Gradients<T> grads = backward(model, cache, dout);
        adam_step(model.weights, grads, state, cfg, cfg.lr_at(it));
        history.push_back(loss);
        if (on_step) on_step(it, loss);
    }
    return {std::move(model), std::move(history)};
}

}  // namespace scnet
