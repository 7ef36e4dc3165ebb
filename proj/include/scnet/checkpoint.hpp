#pragma once

// Single-file model checkpoint.
//
//   offset 0   "SCN1"
//   offset 4   u32 little-endian manifest length L
//   offset 8   L bytes of JSON manifest:
//                {"format": "SCN1",
//                 "config": {"blocks", "dim", "scale", "preset", "recon", "attention"},
//                 "tensors": [{"name", "shape": [n, c, h, w], "offset", "length"}, ...]}
//   zero bytes up to the next multiple of 16 (payload start P)
//   payload    float32 little-endian tensors in manifest order; tensor i starts
//              at P + offset_i (offset_i a multiple of 16, zero-filled gaps)
//              and spans length_i = 4 * numel bytes. The file ends at the end
//              of the last tensor.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"
#include "scnet/error.hpp"
#include "scnet/model.hpp"

namespace scnet {

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { Io, BadMagic, Inconsistent, ShapeMismatch };

    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

inline constexpr char kCheckpointMagic[4] = {'S', 'C', 'N', '1'};
inline constexpr std::size_t kCheckpointAlign = 16;

namespace detail {

inline std::size_t align_up(std::size_t v, std::size_t a) { return (v + a - 1) / a * a; }

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"blocks", c.blocks},
            {"dim", c.dim},
            {"scale", c.scale},
            {"preset", std::string(to_string(c.preset))},
            {"recon", std::string(to_string(c.recon))},
            {"attention", std::string(to_string(c.attention))}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.blocks = j.at("blocks").get<std::size_t>();
    c.dim = j.at("dim").get<std::size_t>();
    c.scale = j.at("scale").get<std::size_t>();
    c.preset = parse_step_preset(j.at("preset").get<std::string>());
    c.recon = parse_recon(j.at("recon").get<std::string>());
    c.attention = parse_attention(j.at("attention").get<std::string>());
    return c;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model) {
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : model.weights) {
        offset = detail::align_up(offset, kCheckpointAlign);
        const std::size_t length = t.numel() * sizeof(float);
        const Shape s = t.shape();
        tensors.push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}, {"length", length}});
        offset += length;
    }
    const nlohmann::json manifest = {
        {"format", "SCN1"}, {"config", detail::config_to_json(model.config)}, {"tensors", tensors}};
    const std::string header = manifest.dump(1);

    std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
    detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());
    const std::size_t payload = detail::align_up(out.size(), kCheckpointAlign);
    out.resize(payload + offset, 0);
    std::size_t i = 0;
    for (const auto& [name, t] : model.weights) {
        std::uint8_t* dst = out.data() + payload + tensors[i++]["offset"].get<std::size_t>();
        for (float v : t.values()) {
            const auto bits = std::bit_cast<std::uint32_t>(v);
            for (int k = 0; k < 4; ++k) *dst++ = static_cast<std::uint8_t>(bits >> (8 * k));
        }
    }
    return out;
}

inline Model<float> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    using Kind = CheckpointError::Kind;
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
        throw CheckpointError(Kind::BadMagic, "bad magic: not an SCN1 checkpoint");
    const std::size_t header_len = detail::get_u32(bytes.data() + 4);
    if (header_len > bytes.size() - 8)
        throw CheckpointError(Kind::Inconsistent, "manifest length exceeds file size");
    nlohmann::json manifest;
    ModelConfig config;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
        config = detail::config_from_json(manifest.at("config"));
        config.validate();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(Kind::Inconsistent, std::string("malformed manifest: ") + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(Kind::Inconsistent, std::string("invalid config in manifest: ") + e.what());
    }

    const std::size_t payload = detail::align_up(8 + header_len, kCheckpointAlign);
    const auto inventory = layer_inventory(config);
    const auto& tensors = manifest.at("tensors");
    if (!tensors.is_array()) throw CheckpointError(Kind::Inconsistent, "manifest 'tensors' is not an array");

    Model<float> model{config, {}};
    std::size_t expected_offset = 0;
    std::size_t i = 0;
    for (const auto& entry : tensors) {
        std::string name;
        Shape shape;
        std::size_t offset = 0, length = 0;
        try {
            name = entry.at("name").get<std::string>();
            const auto dims = entry.at("shape").get<std::vector<std::size_t>>();
            if (dims.size() != 4) throw CheckpointError(Kind::Inconsistent, "tensor '" + name + "' shape is not rank 4");
            shape = {dims[0], dims[1], dims[2], dims[3]};
            offset = entry.at("offset").get<std::size_t>();
            length = entry.at("length").get<std::size_t>();
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointError(Kind::Inconsistent, std::string("malformed tensor entry: ") + e.what());
        }
        if (offset % kCheckpointAlign != 0 || offset < expected_offset)
            throw CheckpointError(Kind::Inconsistent, "tensor '" + name + "' offset is misaligned or overlapping");
        if (length != shape.numel() * sizeof(float))
            throw CheckpointError(Kind::Inconsistent, "tensor '" + name + "' length disagrees with its shape");
        if (payload + offset + length > bytes.size())
            throw CheckpointError(Kind::Inconsistent, "tensor '" + name + "' runs past the end of the file");
        if (i >= inventory.size() || inventory[i].name != name || inventory[i].shape != shape)
            throw CheckpointError(Kind::ShapeMismatch,
                                  "tensor '" + name + "' " + shape.str() + " does not match the config inventory" +
                                      (i < inventory.size() ? " (expected '" + inventory[i].name + "' " +
                                                                  inventory[i].shape.str() + ")"
                                                            : ""));
        Tensor<float> t(shape);
        const std::uint8_t* src = bytes.data() + payload + offset;
        for (float& v : t.values()) {
            v = std::bit_cast<float>(detail::get_u32(src));
            src += 4;
        }
        model.weights.add(name, std::move(t));
        expected_offset = detail::align_up(offset + length, kCheckpointAlign);
        if (i + 1 == tensors.size() && payload + offset + length != bytes.size())
            throw CheckpointError(Kind::Inconsistent, "trailing bytes after the last tensor");
        ++i;
    }
    if (i != inventory.size())
        throw CheckpointError(Kind::ShapeMismatch, "checkpoint holds " + std::to_string(i) + " tensors, config needs " +
                                                       std::to_string(inventory.size()));
    try {
        model.validate();
    } catch (const std::exception& e) {
        throw CheckpointError(Kind::Inconsistent, e.what());
    }
    return model;
}

/// Writers need exclusive access to `path`; the last writer wins.
inline void write_checkpoint(const Model<float>& model, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "write failed for '" + path.string() + "'");
}

inline Model<float> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open '" + path.string() + "'");
    const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_checkpoint(bytes);
}

}  // namespace scnet
