#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "scnet/accounting.hpp"
#include "scnet/checkpoint.hpp"
#include "scnet/image_io.hpp"
#include "test_support.hpp"

using namespace scnet;
using scnet::testing::random_model;
using scnet::testing::random_tensor;
using scnet::testing::temp_dir;

namespace {

// Values already on the 8-bit grid survive a save/load unchanged.
Tensor<float> quantize_8bit_like(Tensor<float> t) {
    for (float& v : t.values()) v = static_cast<float>(to_byte(v) / 255.0);
    return t;
}

Tensor<float> byte_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    return quantize_8bit_like(random_tensor({1, 3, h, w}, seed, 0.0, 1.0));
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CheckpointError::Kind decode_kind(const std::vector<std::uint8_t>& bytes) {
    try {
        decode_checkpoint(bytes);
    } catch (const CheckpointError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "decode succeeded";
    return CheckpointError::Kind::Io;
}

}  // namespace

TEST(ImageIo, ByteRounding) {
    EXPECT_EQ(to_byte(0.0), 0);
    EXPECT_EQ(to_byte(1.0), 255);
    EXPECT_EQ(to_byte(0.5), 128);
    EXPECT_EQ(to_byte(-3.0), 0);
    EXPECT_EQ(to_byte(7.0), 255);
    EXPECT_EQ(to_byte(0.5 / 255.0), 1);
}

TEST(ImageIo, PngAndPpmRoundTrip) {
    const auto dir = temp_dir("roundtrip");
    const Tensor<float> img = byte_image(7, 11, 1);
    for (const char* name : {"a.png", "a.ppm", "A.PNG"}) {
        save_image(img, dir / name);
        const Tensor<float> back = load_image(dir / name);
        EXPECT_TRUE(bit_identical(back, img)) << name;
    }
    // Content, not extension, decides the decoder.
    std::filesystem::copy_file(dir / "a.png", dir / "png_named.ppm");
    EXPECT_TRUE(bit_identical(load_image(dir / "png_named.ppm"), img));
}

TEST(ImageIo, PpmWithCommentsAndBinaryLayout) {
    const auto dir = temp_dir("ppm");
    std::vector<std::uint8_t> bytes;
    const std::string header = "P6\n# made by hand\n2 1\n# another\n255\n";
    bytes.assign(header.begin(), header.end());
    for (std::uint8_t v : {255, 0, 0, 0, 128, 255}) bytes.push_back(v);
    write_bytes(dir / "x.ppm", bytes);
    const Tensor<float> img = load_image(dir / "x.ppm");
    ASSERT_EQ(img.shape(), (Shape{1, 3, 1, 2}));
    EXPECT_EQ(img(0, 0, 0, 0), 1.0f);
    EXPECT_EQ(img(0, 1, 0, 1), static_cast<float>(128 / 255.0));
    EXPECT_EQ(img(0, 2, 0, 1), 1.0f);

    save_image(img, dir / "y.ppm");
    const auto out = read_bytes(dir / "y.ppm");
    const std::string want = "P6\n2 1\n255\n";
    ASSERT_EQ(out.size(), want.size() + 6);
    EXPECT_EQ(std::string(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(want.size())), want);
    EXPECT_EQ(out[want.size() + 4], 128);
}

TEST(ImageIo, Errors) {
    const auto dir = temp_dir("img_err");
    EXPECT_THROW(load_image(dir / "missing.png"), IoError);

    save_image(byte_image(6, 6, 2), dir / "t.ppm");
    auto bytes = read_bytes(dir / "t.ppm");
    bytes.resize(bytes.size() - 5);
    write_bytes(dir / "t.ppm", bytes);
    EXPECT_THROW(load_image(dir / "t.ppm"), IoError);

    save_image(byte_image(6, 6, 3), dir / "t.png");
    bytes = read_bytes(dir / "t.png");
    bytes.resize(bytes.size() / 2);
    write_bytes(dir / "cut.png", bytes);
    EXPECT_THROW(load_image(dir / "cut.png"), IoError);

    write_bytes(dir / "j.jpg", {0xff, 0xd8, 0xff, 0xe0, 0, 0});
    EXPECT_THROW(load_image(dir / "j.jpg"), IoError);
    EXPECT_THROW(save_image(byte_image(2, 2, 4), dir / "out.bmp"), IoError);
    EXPECT_THROW(save_image(Tensor<float>({1, 1, 2, 2}), dir / "g.png"), ShapeError);

    const std::string p16 = "P6\n1 1\n65535\n\1\2\3\4\5\6";
    write_bytes(dir / "deep.ppm", {p16.begin(), p16.end()});
    EXPECT_THROW(load_image(dir / "deep.ppm"), IoError);
}

TEST(ImageIo, RejectsGrayscalePng) {
    const auto dir = temp_dir("gray");
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = 3;
    image.height = 2;
    image.format = PNG_FORMAT_GRAY;
    const std::uint8_t px[6] = {0, 50, 100, 150, 200, 250};
    ASSERT_TRUE(png_image_write_to_file(&image, (dir / "g.png").c_str(), 0, px, 0, nullptr));
    try {
        load_image(dir / "g.png");
        FAIL() << "grayscale accepted";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("8-bit RGB"), std::string::npos);
    }
}

TEST(ImageIo, ListImagesSorted) {
    const auto dir = temp_dir("list");
    for (const char* n : {"b.png", "a.ppm", "c.txt", "C.PNG"}) write_bytes(dir / n, {0});
    std::filesystem::create_directory(dir / "sub.png");
    const auto files = list_images(dir);
    ASSERT_EQ(files.size(), 3u);
    EXPECT_EQ(files[0].filename(), "C.PNG");
    EXPECT_EQ(files[1].filename(), "a.ppm");
    EXPECT_EQ(files[2].filename(), "b.png");
    EXPECT_THROW(list_images(dir / "b.png"), IoError);
}

TEST(Checkpoint, RoundTripBitExact) {
    const auto dir = temp_dir("ckpt");
    for (auto recon : kAllRecon)
        for (auto attn : kAllAttention) {
            const ModelConfig cfg{2, 16, 3, StepPreset::Shift16, recon, attn};
            const Model<float> m = random_model<float>(cfg, 5);
            write_checkpoint(m, dir / "m.scn");
            const Model<float> back = read_checkpoint(dir / "m.scn");
            EXPECT_EQ(back.config.name(), cfg.name());
            EXPECT_EQ(back.config.recon, recon);
            EXPECT_EQ(back.config.attention, attn);
            EXPECT_EQ(back.config.preset, StepPreset::Shift16);
            ASSERT_EQ(back.weights.size(), m.weights.size());
            for (const auto& [name, t] : m.weights) EXPECT_TRUE(bit_identical(back.weights.at(name), t)) << name;
            EXPECT_EQ(back.weights.scalar_count(), count_params(cfg));
        }
}

TEST(Checkpoint, ByteLayout) {
    Model<float> m = build_model(ModelConfig{1, 8, 2}, 0);
    m.weights.at("head.weight").data()[0] = 1.5f;
    m.weights.at("head.weight").data()[1] = -2.0f;
    const auto bytes = encode_checkpoint(m);
    ASSERT_GE(bytes.size(), 8u);
    EXPECT_EQ(std::memcmp(bytes.data(), "SCN1", 4), 0);
    const std::uint32_t len = bytes[4] | bytes[5] << 8 | bytes[6] << 16 | static_cast<std::uint32_t>(bytes[7]) << 24;
    const auto manifest = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
    EXPECT_EQ(manifest.at("config").at("blocks"), 1);
    EXPECT_EQ(manifest.at("config").at("preset"), "Shift8");
    const std::size_t payload = (8 + len + 15) / 16 * 16;
    for (std::size_t i = 8 + len; i < payload; ++i) EXPECT_EQ(bytes[i], 0);

    const auto& tensors = manifest.at("tensors");
    ASSERT_EQ(tensors.size(), layer_inventory(m.config).size());
    EXPECT_EQ(tensors[0].at("name"), "head.weight");
    EXPECT_EQ(tensors[0].at("offset"), 0);
    std::size_t end = 0;
    for (const auto& t : tensors) {
        EXPECT_EQ(t.at("offset").get<std::size_t>() % 16, 0u);
        EXPECT_GE(t.at("offset").get<std::size_t>(), end);
        end = t.at("offset").get<std::size_t>() + t.at("length").get<std::size_t>();
    }
    EXPECT_EQ(bytes.size(), payload + end);
    // Little-endian IEEE-754.
    const std::uint8_t one_half[4] = {0x00, 0x00, 0xc0, 0x3f};
    const std::uint8_t minus_two[4] = {0x00, 0x00, 0x00, 0xc0};
    EXPECT_EQ(std::memcmp(bytes.data() + payload, one_half, 4), 0);
    EXPECT_EQ(std::memcmp(bytes.data() + payload + 4, minus_two, 4), 0);
}

TEST(Checkpoint, ErrorKinds) {
    const Model<float> m = random_model<float>(ModelConfig{2, 8, 2}, 6);
    const auto good = encode_checkpoint(m);

    auto bad = good;
    bad[0] = 'X';
    EXPECT_EQ(decode_kind(bad), CheckpointError::Kind::BadMagic);
    EXPECT_EQ(decode_kind({'S', 'C'}), CheckpointError::Kind::BadMagic);

    bad = good;
    bad.resize(bad.size() - 3);
    EXPECT_EQ(decode_kind(bad), CheckpointError::Kind::Inconsistent);
    bad = good;
    bad.push_back(0);
    EXPECT_EQ(decode_kind(bad), CheckpointError::Kind::Inconsistent);
    bad = good;
    bad[8] = '#';
    EXPECT_EQ(decode_kind(bad), CheckpointError::Kind::Inconsistent);

    // Same-length manifest edit: three blocks no longer match the stored tensors.
    bad = good;
    const std::string needle = "\"blocks\": 2";
    auto it = std::search(bad.begin(), bad.end(), needle.begin(), needle.end());
    ASSERT_NE(it, bad.end());
    *(it + static_cast<std::ptrdiff_t>(needle.size()) - 1) = '3';
    EXPECT_EQ(decode_kind(bad), CheckpointError::Kind::ShapeMismatch);

    // NaN weight.
    const std::size_t payload = (8 + std::size_t(good[4] | good[5] << 8) + 15) / 16 * 16;
    bad = good;
    const auto nan_bits = std::bit_cast<std::uint32_t>(std::numeric_limits<float>::quiet_NaN());
    for (int k = 0; k < 4; ++k) bad[payload + k] = static_cast<std::uint8_t>(nan_bits >> (8 * k));
    EXPECT_EQ(decode_kind(bad), CheckpointError::Kind::Inconsistent);

    try {
        read_checkpoint(temp_dir("ckpt_missing") / "none.scn");
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::Io);
    }
}
