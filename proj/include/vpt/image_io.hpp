#pragma once

#include "vpt/error.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace vpt {

// H x W x C image, row-major, float64 samples.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c = 3, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    double &at(int u, int v, int c = 0) { return data[(static_cast<std::size_t>(v) * width + u) * channels + c]; }
    double at(int u, int v, int c = 0) const {
        return data[(static_cast<std::size_t>(v) * width + u) * channels + c];
    }

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    bool same_shape(const Image &o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }

    friend bool operator==(const Image &, const Image &) = default;
};

// Rounds every sample to the nearest float32; sidecars store exactly these values.
inline void quantize_to_f32(Image &img) {
    for (double &d : img.data) d = static_cast<double>(static_cast<float>(d));
}

namespace detail {

template <class T>
T to_little_endian(T v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
}

template <class T>
void write_le(std::ostream &out, T v) {
    const T le = to_little_endian(v);
    out.write(reinterpret_cast<const char *>(&le), sizeof(T));
}

template <class T>
T read_le(std::istream &in, const std::string &file) {
    T v{};
    if (!in.read(reinterpret_cast<char *>(&v), sizeof(T))) throw ParseError(file, "unexpected end of file");
    return to_little_endian(v);
}

inline void ensure_parent(const std::filesystem::path &p) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

} // namespace detail

// Raw little-endian float32 sidecar, row-major H x W x C, no header.
inline void write_f32(const std::string &path, const Image &img) {
    detail::ensure_parent(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    for (double d : img.data) detail::write_le(out, static_cast<float>(d));
    if (!out) throw Error("write failed: " + path);
}

inline Image read_f32(const std::string &path, int width, int height, int channels) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path, "cannot open float32 sidecar");
    const auto expect = static_cast<std::uintmax_t>(width) * height * channels * sizeof(float);
    const auto actual = std::filesystem::file_size(path);
    if (actual != expect) {
        throw ParseError(path, "size " + std::to_string(actual) + " bytes, expected " + std::to_string(expect) +
                                   " for " + std::to_string(width) + "x" + std::to_string(height) + "x" +
                                   std::to_string(channels));
    }
    Image img(width, height, channels);
    for (double &d : img.data) d = static_cast<double>(detail::read_le<float>(in, path));
    return img;
}

inline std::uint8_t to_u8(double v) {
    if (!std::isfinite(v)) v = 0.0;
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace detail {

// Kept out of write_png so no object with a destructor lives in the setjmp frame.
[[gnu::noinline]] inline void write_png_rows(png_structp png, const Image &img) {
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * img.channels);
    for (int v = 0; v < img.height; ++v) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            row[i] = to_u8(img.data[static_cast<std::size_t>(v) * row.size() + i]);
        }
        png_write_row(png, row.data());
    }
}

} // namespace detail

// 8-bit PNG, gray (1 channel) or RGB (3 channels). Values are clamped to [0, 1].
inline void write_png(const std::string &path, const Image &img) {
    if (img.channels != 1 && img.channels != 3) throw UsageError("write_png: 1 or 3 channels required");
    detail::ensure_parent(path);
    std::unique_ptr<FILE, int (*)(FILE *)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw Error("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng: cannot allocate writer");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng: write failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    detail::write_png_rows(png, img);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Reads an 8-bit PNG into [0, 1] RGB (gray/alpha/palette are converted).
inline Image read_png(const std::string &path) {
    std::unique_ptr<FILE, int (*)(FILE *)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!fp) throw ParseError(path, "cannot open PNG");
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw ParseError(path, "not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError(path, "libpng: cannot allocate reader");
    }
    Image img;
    std::vector<png_byte> buf;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError(path, "corrupt PNG data");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const png_byte color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (png_get_bit_depth(png, info) < 8) png_set_packing(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const std::size_t stride = png_get_rowbytes(png, info);
    buf.resize(stride * static_cast<std::size_t>(h));
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int v = 0; v < h; ++v) rows[static_cast<std::size_t>(v)] = buf.data() + stride * static_cast<std::size_t>(v);
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    img = Image(w, h, 3);
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            for (int c = 0; c < 3; ++c) img.at(u, v, c) = rows[static_cast<std::size_t>(v)][u * 3 + c] / 255.0;
        }
    }
    return img;
}

// Reads only the IHDR dimensions.
inline std::pair<int, int> png_size(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    unsigned char hdr[24];
    if (!in.read(reinterpret_cast<char *>(hdr), 24) || png_sig_cmp(hdr, 0, 8) != 0) {
        throw ParseError(path, "not a PNG file");
    }
    auto be32 = [&](int off) {
        return (static_cast<std::uint32_t>(hdr[off]) << 24) | (static_cast<std::uint32_t>(hdr[off + 1]) << 16) |
               (static_cast<std::uint32_t>(hdr[off + 2]) << 8) | hdr[off + 3];
    };
    return {static_cast<int>(be32(16)), static_cast<int>(be32(20))};
}

} // namespace vpt
