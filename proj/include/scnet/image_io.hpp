#pragma once

// 8-bit RGB images as (1, 3, h, w) float tensors in [0, 1].
// PNG goes through libpng's simplified API; binary PPM (P6, maxval 255) is
// parsed here. Saving clamps to [0, 1] and rounds half up to 8 bits.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "scnet/error.hpp"
#include "scnet/tensor.hpp"

namespace scnet {

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

template <class T = float>
Tensor<T> image_from_rgb8(const std::uint8_t* rgb, std::size_t h, std::size_t w) {
    Tensor<T> img({1, 3, h, w});
    for (std::size_t c = 0; c < 3; ++c) {
        T* dst = img.plane(0, c);
        for (std::size_t i = 0; i < h * w; ++i) dst[i] = static_cast<T>(rgb[i * 3 + c] / 255.0);
    }
    return img;
}

template <class T>
std::vector<std::uint8_t> image_to_rgb8(const Tensor<T>& img) {
    if (img.batch() != 1 || img.channels() != 3)
        throw ShapeError("image must be (1, 3, h, w), got " + img.shape().str());
    const std::size_t n = img.plane_size();
    std::vector<std::uint8_t> rgb(n * 3);
    for (std::size_t c = 0; c < 3; ++c) {
        const T* src = img.plane(0, c);
        for (std::size_t i = 0; i < n; ++i) rgb[i * 3 + c] = to_byte(static_cast<double>(src[i]));
    }
    return rgb;
}

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Tensor<float> decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    std::size_t pos = 2;
    auto next_token = [&]() -> std::size_t {
        for (;;) {
            while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw IoError("'" + name + "': malformed PPM header");
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
            if (v > (1u << 24)) throw IoError("'" + name + "': PPM dimension out of range");
        }
        return v;
    };
    const std::size_t w = next_token();
    const std::size_t h = next_token();
    const std::size_t maxval = next_token();
    if (maxval != 255) throw IoError("'" + name + "': only 8-bit PPM (maxval 255) is supported");
    if (w == 0 || h == 0) throw IoError("'" + name + "': empty image");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw IoError("'" + name + "': malformed PPM header");
    ++pos;
    if (bytes.size() - pos < w * h * 3) throw IoError("'" + name + "': truncated PPM data");
    return image_from_rgb8(bytes.data() + pos, h, w);
}

inline Tensor<float> decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw IoError("'" + name + "': " + image.message);
    const auto fmt = image.format;
    if (!(fmt & PNG_FORMAT_FLAG_COLOR) || (fmt & PNG_FORMAT_FLAG_ALPHA) || (fmt & PNG_FORMAT_FLAG_LINEAR)) {
        png_image_free(&image);
        throw IoError("'" + name + "': only 8-bit RGB PNG is supported");
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw IoError("'" + name + "': " + msg);
    }
    return image_from_rgb8(rgb.data(), image.height, image.width);
}

inline std::string lower_extension(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

}  // namespace detail

/// Loads an 8-bit RGB PNG or P6 PPM, detected by content.
inline Tensor<float> load_image(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    static constexpr std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0) return detail::decode_png(bytes, path.string());
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return detail::decode_ppm(bytes, path.string());
    throw IoError("'" + path.string() + "': unsupported image format (expected PNG or binary PPM)");
}

/// Writes PNG for a .png extension, PPM (P6) for .ppm / .pnm.
template <class T>
void save_image(const Tensor<T>& img, const std::filesystem::path& path) {
    const auto rgb = image_to_rgb8(img);
    const std::string ext = detail::lower_extension(path);
    if (ext == ".png") {
        png_image image;
        std::memset(&image, 0, sizeof(image));
        image.version = PNG_IMAGE_VERSION;
        image.width = static_cast<png_uint_32>(img.width());
        image.height = static_cast<png_uint_32>(img.height());
        image.format = PNG_FORMAT_RGB;
        if (!png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr))
            throw IoError("cannot write '" + path.string() + "': " + image.message);
        return;
    }
    if (ext == ".ppm" || ext == ".pnm") {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write '" + path.string() + "'");
        out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
        out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
        if (!out) throw IoError("write failed for '" + path.string() + "'");
        return;
    }
    throw IoError("'" + path.string() + "': unsupported output extension (use .png or .ppm)");
}

/// Image files (.png, .ppm, .pnm) directly inside `dir`, sorted by filename.
inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) throw IoError("'" + dir.string() + "' is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = detail::lower_extension(entry.path());
        if (ext == ".png" || ext == ".ppm" || ext == ".pnm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
    return files;
}

}  // namespace scnet
