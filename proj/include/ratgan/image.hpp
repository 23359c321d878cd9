#pragma once

// RGB images as planar float tensors in [-1, 1], plus PNG I/O.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ratgan/errors.hpp"
#include "ratgan/serialize.hpp"

namespace ratgan {

struct Image {
    std::size_t channels = 3, height = 0, width = 0;
    std::vector<float> pixels;  // [C, H, W]

    Image() = default;
    Image(std::size_t h, std::size_t w, float fill = 0.f, std::size_t c = 3)
        : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

    float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

    friend bool operator==(const Image&, const Image&) = default;
};

inline std::uint8_t to_byte(float v) {
    const double b = std::round((static_cast<double>(v) + 1.0) * 127.5);
    return static_cast<std::uint8_t>(std::clamp(b, 0.0, 255.0));
}

inline float from_byte(std::uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }

/// 8-bit PNG bytes; pixel = round((v + 1) * 127.5).
inline std::string encode_png(const Image& img) {
    if (img.channels != 3) throw InvalidInput("encode_png expects an RGB image");
    std::vector<std::uint8_t> rgb(img.height * img.width * 3);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) rgb[(y * img.width + x) * 3 + c] = to_byte(img.at(c, y, x));
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(img.width);
    pi.height = static_cast<png_uint_32>(img.height);
    pi.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&pi, nullptr, &size, 0, rgb.data(), 0, nullptr))
        throw std::runtime_error(std::string("png encode failed: ") + pi.message);
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&pi, out.data(), &size, 0, rgb.data(), 0, nullptr))
        throw std::runtime_error(std::string("png encode failed: ") + pi.message);
    out.resize(size);
    return out;
}

inline void write_png(const std::filesystem::path& path, const Image& img) { atomic_write(path, encode_png(img)); }

inline Image read_png(const std::filesystem::path& path) {
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&pi, path.c_str()))
        throw ParseError("cannot read png " + path.string() + ": " + pi.message);
    pi.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(pi));
    if (!png_image_finish_read(&pi, nullptr, rgb.data(), 0, nullptr)) {
        png_image_free(&pi);
        throw ParseError("cannot decode png " + path.string() + ": " + pi.message);
    }
    Image img(pi.height, pi.width);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = from_byte(rgb[(y * img.width + x) * 3 + c]);
    return img;
}

/// Bilinear resampling with half-pixel centres.
inline Image resize_bilinear(const Image& src, std::size_t h, std::size_t w) {
    Image out(h, w, 0.f, src.channels);
    const double sy = static_cast<double>(src.height) / static_cast<double>(h);
    const double sx = static_cast<double>(src.width) / static_cast<double>(w);
    for (std::size_t y = 0; y < h; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, src.height - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < w; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, src.width - 1);
            const double tx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < src.channels; ++c) {
                const double top = src.at(c, y0, x0) * (1 - tx) + src.at(c, y0, x1) * tx;
                const double bot = src.at(c, y1, x0) * (1 - tx) + src.at(c, y1, x1) * tx;
                out.at(c, y, x) = static_cast<float>(top * (1 - ty) + bot * ty);
            }
        }
    }
    return out;
}

inline Image crop(const Image& src, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
    if (top + h > src.height || left + w > src.width) throw InvalidInput("crop window outside image");
    Image out(h, w, 0.f, src.channels);
    for (std::size_t c = 0; c < src.channels; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = src.at(c, top + y, left + x);
    return out;
}

inline Image flip_horizontal(const Image& src) {
    Image out = src;
    for (std::size_t c = 0; c < src.channels; ++c)
        for (std::size_t y = 0; y < src.height; ++y)
            for (std::size_t x = 0; x < src.width; ++x) out.at(c, y, x) = src.at(c, y, src.width - 1 - x);
    return out;
}

/// Image `slot` of a batch tensor [N, C, H, W].
template <class T>
Image image_from_batch(const Tensor<T>& batch, std::size_t slot) {
    if (batch.rank() != 4 || slot >= batch.dim(0))
        throw InvalidInput("image_from_batch: slot " + std::to_string(slot) + " of " + shape_string(batch.shape()));
    Image img(batch.dim(2), batch.dim(3), 0.f, batch.dim(1));
    const std::size_t n = img.pixels.size();
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<float>(primal(batch[slot * n + i]));
    return img;
}

/// Row-major sheet of equally sized images with `padding` pixels of white between cells.
inline Image make_grid(const std::vector<Image>& images, std::size_t columns, std::size_t padding = 2) {
    if (images.empty()) throw InvalidInput("make_grid needs at least one image");
    if (columns == 0) throw InvalidInput("make_grid needs at least one column");
    const std::size_t h = images[0].height, w = images[0].width, c = images[0].channels;
    for (const auto& im : images)
        if (im.height != h || im.width != w || im.channels != c) throw InvalidInput("make_grid: images differ in size");
    const std::size_t cols = std::min(columns, images.size()), rows = (images.size() + cols - 1) / cols;
    Image sheet(rows * h + (rows + 1) * padding, cols * w + (cols + 1) * padding, 1.f, c);
    for (std::size_t k = 0; k < images.size(); ++k) {
        const std::size_t top = padding + (k / cols) * (h + padding), left = padding + (k % cols) * (w + padding);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) sheet.at(ch, top + y, left + x) = images[k].at(ch, y, x);
    }
    return sheet;
}

}  // namespace ratgan
