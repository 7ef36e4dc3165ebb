#pragma once

// Network assembly.
//
//   f_head = conv1x1(lr)                                  3 -> D
//   x      = x + attn(conv1x1(relu(sc(x))))               B times
//   rec    = reconstruction(f_main)                       variant below
//   sr     = rec + bilinear_resize(lr, s*h, s*w)
//
// Reconstruction variants:
//   PixelShuffle  sc (D->D) -> relu -> conv (D -> 3 s^2) -> pixel_shuffle(s) -> conv (3->3)
//   Nearest       resize x s -> sc (D->D) -> relu -> conv (D->3)
//   Bilinear      resize x s -> sc (D->D) -> relu -> conv (D->3)
//   TConv         transposed conv D->3, kernel s, stride s -> conv (3->3)

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scnet/attention.hpp"
#include "scnet/error.hpp"
#include "scnet/resize.hpp"
#include "scnet/shift_conv.hpp"
#include "scnet/tensor.hpp"

namespace scnet {

enum class ReconKind { PixelShuffle, Nearest, Bilinear, TConv };

inline constexpr ReconKind kAllRecon[] = {ReconKind::PixelShuffle, ReconKind::Nearest, ReconKind::Bilinear,
                                          ReconKind::TConv};

inline std::string_view to_string(ReconKind r) {
    switch (r) {
        case ReconKind::PixelShuffle: return "pixelshuffle";
        case ReconKind::Nearest: return "nearest";
        case ReconKind::Bilinear: return "bilinear";
        case ReconKind::TConv: return "tconv";
    }
    return "?";
}

inline ReconKind parse_recon(std::string_view name) {
    for (auto r : kAllRecon)
        if (to_string(r) == name) return r;
    if (name == "PixelShuffle") return ReconKind::PixelShuffle;
    if (name == "Nearest") return ReconKind::Nearest;
    if (name == "Bilinear") return ReconKind::Bilinear;
    if (name == "TConv") return ReconKind::TConv;
    throw ConfigError("unknown reconstruction '" + std::string(name) +
                      "' (expected pixelshuffle|nearest|bilinear|tconv)");
}

struct ModelConfig {
    std::size_t blocks = 16;
    std::size_t dim = 64;
    std::size_t scale = 4;
    StepPreset preset = StepPreset::Shift8;
    ReconKind recon = ReconKind::PixelShuffle;
    AttentionKind attention = AttentionKind::None;

    static ModelConfig tiny(std::size_t s = 4) { return {16, 64, s}; }
    static ModelConfig base(std::size_t s = 4) { return {64, 64, s}; }
    static ModelConfig large(std::size_t s = 4) { return {32, 128, s}; }

    ShiftStepSet steps() const { return preset_steps(preset); }

    /// Everything except the block count, which accounting allows to be zero.
    void validate_layout() const {
        if (scale != 2 && scale != 3 && scale != 4 && scale != 8)
            throw ConfigError("scale must be one of 2, 3, 4, 8 (got " + std::to_string(scale) + ")");
        const std::size_t groups = steps().size();
        if (dim < groups || dim % groups != 0)
            throw ConfigError("dim " + std::to_string(dim) + " not divisible by the " + std::to_string(groups) +
                              " shift groups of " + std::string(to_string(preset)));
        if (attention == AttentionKind::CA && dim % kChannelAttentionReduction != 0)
            throw ConfigError("channel attention needs dim divisible by " +
                              std::to_string(kChannelAttentionReduction));
    }

    void validate() const {
        if (blocks < 1) throw ConfigError("blocks must be >= 1");
        validate_layout();
    }

    std::string name() const {
        return "B" + std::to_string(blocks) + "D" + std::to_string(dim) + "x" + std::to_string(scale) + "-" +
               std::string(to_string(preset)) + "-" + std::string(to_string(recon)) + "-" +
               std::string(to_string(attention));
    }

    bool operator==(const ModelConfig&) const = default;
};

/// One learnable tensor implied by a config.
struct ParamSpec {
    std::string name;
    Shape shape;
    std::size_t fan_in = 0;  // 0 for biases
};

namespace detail {

inline void push_conv(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t c_in, std::size_t c_out) {
    out.push_back({prefix + ".weight", {c_out, c_in, 1, 1}, c_in});
    out.push_back({prefix + ".bias", {c_out, 1, 1, 1}, 0});
}

}  // namespace detail

/// Ordered list of every learnable tensor: names, shapes and init fan-in.
inline std::vector<ParamSpec> layer_inventory(const ModelConfig& cfg) {
    cfg.validate_layout();
    const std::size_t d = cfg.dim, s = cfg.scale;
    std::vector<ParamSpec> inv;
    detail::push_conv(inv, "head", 3, d);
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        const std::string p = "body." + std::to_string(i);
        detail::push_conv(inv, p + ".sc", d, d);
        detail::push_conv(inv, p + ".conv", d, d);
        switch (cfg.attention) {
            case AttentionKind::None: break;
            case AttentionKind::CA:
                detail::push_conv(inv, p + ".attn.down", d, d / kChannelAttentionReduction);
                detail::push_conv(inv, p + ".attn.up", d / kChannelAttentionReduction, d);
                break;
            case AttentionKind::SPA: detail::push_conv(inv, p + ".attn.conv", 2, 1); break;
            case AttentionKind::PA: detail::push_conv(inv, p + ".attn.conv", d, d); break;
        }
    }
    switch (cfg.recon) {
        case ReconKind::PixelShuffle:
            detail::push_conv(inv, "recon.sc", d, d);
            detail::push_conv(inv, "recon.expand", d, 3 * s * s);
            detail::push_conv(inv, "recon.out", 3, 3);
            break;
        case ReconKind::Nearest:
        case ReconKind::Bilinear:
            detail::push_conv(inv, "recon.sc", d, d);
            detail::push_conv(inv, "recon.out", d, 3);
            break;
        case ReconKind::TConv:
            inv.push_back({"recon.tconv.weight", {d, 3, s, s}, d});
            inv.push_back({"recon.tconv.bias", {3, 1, 1, 1}, 0});
            detail::push_conv(inv, "recon.out", 3, 3);
            break;
    }
    return inv;
}

/// Name -> tensor table that preserves insertion order.
template <class T>
class WeightTable {
public:
    void add(std::string name, Tensor<T> value) {
        if (index_.count(name)) throw ConfigError("duplicate weight '" + name + "'");
        index_.emplace(name, entries_.size());
        entries_.emplace_back(std::move(name), std::move(value));
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("missing weight '" + name + "'");
        return entries_[it->second].second;
    }
    Tensor<T>& at(const std::string& name) {
        return const_cast<Tensor<T>&>(static_cast<const WeightTable&>(*this).at(name));
    }

    std::size_t size() const { return entries_.size(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : entries_) n += t.numel();
        return n;
    }

    bool operator==(const WeightTable& o) const { return entries_ == o.entries_; }

private:
    std::vector<std::pair<std::string, Tensor<T>>> entries_;
    std::map<std::string, std::size_t> index_;
};

template <class T>
struct Model {
    ModelConfig config;
    WeightTable<T> weights;

    Conv1x1View<T> conv(const std::string& prefix) const {
        const Tensor<T>& w = weights.at(prefix + ".weight");
        const Tensor<T>& b = weights.at(prefix + ".bias");
        return {w.data(), b.data(), w.shape().n, w.shape().c};
    }

    /// Table matches the config's inventory exactly and every value is finite.
    void validate() const {
        config.validate();
        const auto inv = layer_inventory(config);
        if (inv.size() != weights.size())
            throw ConfigError("weight table has " + std::to_string(weights.size()) + " entries, config implies " +
                              std::to_string(inv.size()));
        std::size_t i = 0;
        for (const auto& [name, t] : weights) {
            if (name != inv[i].name) throw ConfigError("weight #" + std::to_string(i) + " is '" + name + "', expected '" + inv[i].name + "'");
            if (t.shape() != inv[i].shape)
                throw ShapeError("weight '" + name + "' has shape " + t.shape().str() + ", expected " +
                                 inv[i].shape.str());
            for (T v : t.values())
                if (!std::isfinite(static_cast<double>(v))) throw ConfigError("weight '" + name + "' is not finite");
            ++i;
        }
    }

    bool operator==(const Model&) const = default;
};

template <class U, class T>
Model<U> model_cast(const Model<T>& m) {
    Model<U> out{m.config, {}};
    for (const auto& [name, t] : m.weights) out.weights.add(name, tensor_cast<U>(t));
    return out;
}

/// Kaiming-uniform weights in +-sqrt(1 / fan_in), zero biases, drawn in
/// inventory order from one mt19937_64 seeded with `seed`.
template <class T = float>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model<T> m{cfg, {}};
    std::mt19937_64 rng(seed);
    for (const auto& spec : layer_inventory(cfg)) {
        Tensor<T> t(spec.shape);
        if (spec.fan_in > 0) {
            const double bound = std::sqrt(1.0 / static_cast<double>(spec.fan_in));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (T& v : t.values()) v = static_cast<T>(dist(rng));
        }
        m.weights.add(spec.name, std::move(t));
    }
    return m;
}

/// Every tensor in the table replaced by zeros.
template <class T>
Model<T> zero_model(const ModelConfig& cfg) {
    cfg.validate();
    Model<T> m{cfg, {}};
    for (const auto& spec : layer_inventory(cfg)) m.weights.add(spec.name, Tensor<T>(spec.shape));
    return m;
}

// ---------------------------------------------------------------------------
// Forward

template <class T>
struct BlockCache {
    Tensor<T> input;
    Tensor<T> pre_relu;
    Tensor<T> hidden;
    Tensor<T> branch;  // second conv output, before attention
    AttentionCache<T> attention;
};

template <class T>
struct ReconCache {
    Tensor<T> input;     // f_main
    Tensor<T> resized;   // Nearest / Bilinear: input resized to HR
    Tensor<T> pre_relu;
    Tensor<T> hidden;
    Tensor<T> to_out;    // input of the final 1x1 conv
};

template <class T>
struct ForwardCache {
    Tensor<T> input;
    std::vector<BlockCache<T>> blocks;
    ReconCache<T> recon;
};

struct ForwardOptions {
    ScImpl impl = ScImpl::Fused;
    ActivationPattern* record = nullptr;
    const ActivationPattern* replay = nullptr;
};

/// Transposed conv with kernel == stride == s: one GEMM to 3 s^2 channels,
/// pixel_shuffle, then the per-output-channel bias.
template <class T>
Tensor<T> tconv_forward(const Tensor<T>& f, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t s) {
    const Shape ws = weight.shape();
    if (f.channels() != ws.n) throw ShapeError("tconv: input " + f.shape().str() + " vs weight " + ws.str());
    const std::size_t rows = ws.c * s * s;
    const Matrix<T> m = transpose(MatrixView<T>{weight.data(), ws.n, rows});
    const Tensor<T> expanded = conv1x1(f, Conv1x1View<T>{m.data(), nullptr, rows, ws.n});
    Tensor<T> out = pixel_shuffle(expanded, s);
    for (std::size_t b = 0; b < out.batch(); ++b) detail::add_bias(out.plane(b, 0), bias.data(), ws.c, out.plane_size());
    return out;
}

namespace detail {

template <class T>
AttentionParams<T> attention_params(const Model<T>& m, const std::string& prefix) {
    switch (m.config.attention) {
        case AttentionKind::None: return {};
        case AttentionKind::CA: return {m.conv(prefix + ".attn.down"), m.conv(prefix + ".attn.up")};
        case AttentionKind::SPA:
        case AttentionKind::PA: return {m.conv(prefix + ".attn.conv"), {}};
    }
    return {};
}

inline ResizeMode recon_resize_mode(ReconKind r) {
    return r == ReconKind::Nearest ? ResizeMode::Nearest : ResizeMode::Bilinear;
}

}  // namespace detail

/// Full forward pass. Fills `cache` when given (the trainer's backward reads it).
template <class T>
Tensor<T> forward(const Model<T>& model, const Tensor<T>& lr, const ForwardOptions& opts,
                  ForwardCache<T>* cache = nullptr) {
    const ModelConfig& cfg = model.config;
    if (lr.channels() != 3) throw ShapeError("forward: expected 3-channel input, got " + lr.shape().str());
    const ShiftStepSet steps = cfg.steps();
    const std::size_t s = cfg.scale;
    const std::size_t out_h = lr.height() * s, out_w = lr.width() * s;
    Gates<T> gates(opts.record, opts.replay);
    if (cache) {
        cache->input = lr;
        cache->blocks.assign(cfg.blocks, {});
    }

    // Without a cache, intermediates are dropped as soon as they are consumed
    // and the block's second conv accumulates straight into the residual.
    // Rounding is identical either way.
    Tensor<T> x = conv1x1(lr, model.conv("head"));
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        const std::string p = "body." + std::to_string(i);
        Tensor<T> pre = sc_layer(x, model.conv(p + ".sc"), steps, opts.impl);
        Tensor<T> hidden = cache ? gates.relu(pre) : gates.relu(std::move(pre));
        if (!cache && cfg.attention == AttentionKind::None) {
            conv1x1_accumulate(hidden, model.conv(p + ".conv"), x);
            continue;
        }
        Tensor<T> branch = conv1x1(hidden, model.conv(p + ".conv"));
        Tensor<T> attended;
        if (cfg.attention != AttentionKind::None)
            attended = apply_attention(cfg.attention, branch, detail::attention_params(model, p), gates,
                                       cache ? &cache->blocks[i].attention : nullptr);
        Tensor<T> next = add(x, cfg.attention != AttentionKind::None ? attended : branch);
        if (cache) {
            auto& bc = cache->blocks[i];
            bc.input = std::move(x);
            bc.pre_relu = std::move(pre);
            bc.hidden = std::move(hidden);
            bc.branch = std::move(branch);
        }
        x = std::move(next);
    }

    ReconCache<T> rc;
    Tensor<T> to_out;
    switch (cfg.recon) {
        case ReconKind::PixelShuffle: {
            rc.pre_relu = sc_layer(x, model.conv("recon.sc"), steps, opts.impl);
            if (!cache) x = Tensor<T>();
            rc.hidden = cache ? gates.relu(rc.pre_relu) : gates.relu(std::move(rc.pre_relu));
            Tensor<T> expanded = conv1x1(rc.hidden, model.conv("recon.expand"));
            if (!cache) rc.hidden = Tensor<T>();
            to_out = pixel_shuffle(expanded, s);
            break;
        }
        case ReconKind::Nearest:
        case ReconKind::Bilinear: {
            rc.resized = resize(x, out_h, out_w, detail::recon_resize_mode(cfg.recon));
            if (!cache) x = Tensor<T>();
            rc.pre_relu = sc_layer(rc.resized, model.conv("recon.sc"), steps, opts.impl);
            if (!cache) rc.resized = Tensor<T>();
            rc.hidden = cache ? gates.relu(rc.pre_relu) : gates.relu(std::move(rc.pre_relu));
            to_out = cache ? rc.hidden : std::move(rc.hidden);
            break;
        }
        case ReconKind::TConv:
            to_out = tconv_forward(x, model.weights.at("recon.tconv.weight"), model.weights.at("recon.tconv.bias"), s);
            if (!cache) x = Tensor<T>();
            break;
    }
    Tensor<T> out = conv1x1(to_out, model.conv("recon.out"));
    if (cache) {
        rc.input = std::move(x);
        rc.to_out = std::move(to_out);
        cache->recon = std::move(rc);
    } else {
        to_out = Tensor<T>();
    }
    add_inplace(out, resize(lr, out_h, out_w, ResizeMode::Bilinear));
    return out;
}

template <class T>
Tensor<T> forward(const Model<T>& model, const Tensor<T>& lr, ScImpl impl = ScImpl::Fused) {
    return forward(model, lr, ForwardOptions{impl});
}

}  // namespace scnet
