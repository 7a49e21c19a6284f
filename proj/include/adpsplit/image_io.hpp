#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "adpsplit/grid.hpp"

namespace adpsplit {

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void write_ppm(const Image& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    std::vector<char> row(static_cast<std::size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) row[3 * x + c] = static_cast<char>(to_byte(img(x, y)[c]));
        out.write(row.data(), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw Error("write failed: " + path.string());
}

namespace png_detail {

/// channels: 1 (gray) or 3 (rgb); bit_depth 8 or 16. Rows are big-endian for 16 bit.
inline void write(const std::filesystem::path& path, int width, int height, int channels, int bit_depth,
                  const std::vector<std::uint8_t>& bytes) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw Error("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(bytes.data() + stride * static_cast<std::size_t>(y)));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace png_detail

inline void write_png(const Image& img, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(img.size() * 3);
    for (const auto& px : img.values)
        for (int c = 0; c < 3; ++c) bytes.push_back(to_byte(px[c]));
    png_detail::write(path, img.width, img.height, 3, 8, bytes);
}

/// 8-bit grayscale; values are clamped to [0,1] after dividing by `scale`.
template <class T>
void write_gray_png(const Grid<T>& map, const std::filesystem::path& path, double scale = 1.0) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(map.size());
    for (const auto& v : map.values) bytes.push_back(to_byte(static_cast<double>(v) / scale));
    png_detail::write(path, map.width, map.height, 1, 8, bytes);
}

/// 16-bit grayscale holding index + 1 (0 marks "none"). Indices above 65534 saturate.
inline void write_index_png(const Grid<std::int32_t>& map, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(map.size() * 2);
    for (auto v : map.values) {
        const auto code = static_cast<std::uint16_t>(v < 0 ? 0 : std::min<std::int64_t>(v + 1, 65535));
        bytes.push_back(static_cast<std::uint8_t>(code >> 8));
        bytes.push_back(static_cast<std::uint8_t>(code & 0xff));
    }
    png_detail::write(path, map.width, map.height, 1, 16, bytes);
}

/// Picks the format from the extension (.ppm or .png).
inline void write_image(const Image& img, const std::filesystem::path& path) {
    if (path.extension() == ".ppm")
        write_ppm(img, path);
    else
        write_png(img, path);
}

} // namespace adpsplit
