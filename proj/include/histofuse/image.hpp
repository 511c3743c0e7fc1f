#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "histofuse/core.hpp"

namespace histofuse {

// Interleaved 8-bit RGB raster, row-major.
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    RgbImage() = default;
    RgbImage(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0) {}

    std::uint8_t& at(int r, int c, int ch) {
        return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch];
    }
    std::uint8_t at(int r, int c, int ch) const {
        return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch];
    }

    bool operator==(const RgbImage&) const = default;
};

// Grayscale in [0,1] using 0.299R + 0.587G + 0.114B.
inline Matrix to_gray(const RgbImage& img) {
    Matrix g(img.height, img.width);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            g(r, c) = (0.299 * img.at(r, c, 0) + 0.587 * img.at(r, c, 1) + 0.114 * img.at(r, c, 2)) / 255.0;
        }
    }
    return g;
}

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline std::uint32_t le32(const unsigned char* p) {
    return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace detail

inline RgbImage read_png(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw Error("cannot open image " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw Error("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error("libpng init failed");
    }
    RgbImage img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("corrupt PNG " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("unsupported PNG layout " + path.string());
    }
    img = RgbImage(h, w);
    rows.resize(h);
    for (int r = 0; r < h; ++r) rows[r] = img.data.data() + static_cast<std::size_t>(r) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw Error("cannot write image " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw Error("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("PNG write failed " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < img.height; ++r) {
        png_write_row(png, const_cast<png_bytep>(img.data.data() + static_cast<std::size_t>(r) * img.width * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Uncompressed BMP: 24/32-bit BGR(A) or 8-bit palettized.
inline RgbImage read_bmp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open image " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 54 || buf[0] != 'B' || buf[1] != 'M') throw Error("not a BMP file " + path.string());

    const std::uint32_t offset = detail::le32(&buf[10]);
    const std::uint32_t header_size = detail::le32(&buf[14]);
    const auto w = static_cast<std::int32_t>(detail::le32(&buf[18]));
    const auto h_signed = static_cast<std::int32_t>(detail::le32(&buf[22]));
    const std::uint16_t bpp = detail::le16(&buf[28]);
    const std::uint32_t compression = detail::le32(&buf[30]);
    if (compression != 0 && !(compression == 3 && bpp == 32)) {
        throw Error("compressed BMP not supported " + path.string());
    }
    if (w <= 0 || h_signed == 0) throw Error("bad BMP dimensions " + path.string());
    const bool top_down = h_signed < 0;
    const int h = top_down ? -h_signed : h_signed;

    std::vector<std::array<std::uint8_t, 3>> palette;
    if (bpp == 8) {
        std::uint32_t colors = detail::le32(&buf[46]);
        if (colors == 0) colors = 256;
        const std::size_t pal_off = 14 + header_size;
        if (pal_off + colors * 4 > buf.size()) throw Error("truncated BMP palette " + path.string());
        for (std::uint32_t i = 0; i < colors; ++i) {
            const unsigned char* p = &buf[pal_off + i * 4];
            palette.push_back({p[2], p[1], p[0]});
        }
    } else if (bpp != 24 && bpp != 32) {
        throw Error("unsupported BMP bit depth " + std::to_string(bpp) + " in " + path.string());
    }

    const std::size_t stride = ((static_cast<std::size_t>(w) * bpp + 31) / 32) * 4;
    if (offset + stride * h > buf.size()) throw Error("truncated BMP " + path.string());

    RgbImage img(h, w);
    for (int r = 0; r < h; ++r) {
        const int src_row = top_down ? r : h - 1 - r;
        const unsigned char* row = &buf[offset + stride * src_row];
        for (int c = 0; c < w; ++c) {
            if (bpp == 8) {
                const auto idx = row[c];
                if (idx >= palette.size()) throw Error("BMP palette index out of range " + path.string());
                for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = palette[idx][ch];
            } else {
                const unsigned char* px = row + c * (bpp / 8);
                img.at(r, c, 0) = px[2];
                img.at(r, c, 1) = px[1];
                img.at(r, c, 2) = px[0];
            }
        }
    }
    return img;
}

inline void write_bmp(const std::filesystem::path& path, const RgbImage& img) {
    const std::size_t stride = ((static_cast<std::size_t>(img.width) * 24 + 31) / 32) * 4;
    const std::size_t pixel_bytes = stride * img.height;
    std::vector<unsigned char> buf(54 + pixel_bytes, 0);
    auto put32 = [&](std::size_t at, std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf[at + i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    };
    buf[0] = 'B';
    buf[1] = 'M';
    put32(2, static_cast<std::uint32_t>(buf.size()));
    put32(10, 54);
    put32(14, 40);
    put32(18, static_cast<std::uint32_t>(img.width));
    put32(22, static_cast<std::uint32_t>(img.height));
    buf[26] = 1;
    buf[28] = 24;
    put32(34, static_cast<std::uint32_t>(pixel_bytes));
    for (int r = 0; r < img.height; ++r) {
        unsigned char* row = &buf[54 + stride * (img.height - 1 - r)];
        for (int c = 0; c < img.width; ++c) {
            row[c * 3 + 0] = img.at(r, c, 2);
            row[c * 3 + 1] = img.at(r, c, 1);
            row[c * 3 + 2] = img.at(r, c, 0);
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write image " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline bool is_image_file(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return ext == ".png" || ext == ".bmp";
}

inline RgbImage read_image(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (ext == ".png") return read_png(path);
    if (ext == ".bmp") return read_bmp(path);
    throw Error("unsupported image format " + path.string());
}

}  // namespace histofuse
