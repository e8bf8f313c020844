#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gsd/core/tensor.hpp"
#include "gsd/core/types.hpp"
#include "gsd/field/geom3.hpp"

namespace gsd {

// Row-major RGB image with values in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<real> data;  // 3 * width * height

    real& at(int x, int y, int c) { return data[3 * (static_cast<size_t>(y) * width + x) + c]; }
    real at(int x, int y, int c) const {
        return data[3 * (static_cast<size_t>(y) * width + x) + c];
    }
};

inline Image make_image(int width, int height, real fill = 0) {
    return Image{width, height, std::vector<real>(static_cast<size_t>(3 * width * height), fill)};
}

inline Tensor image_to_tensor(const Image& img) {
    std::vector<real> data(img.data.begin(), img.data.end());
    return Tensor::from_data({img.height, img.width, 3}, std::move(data));
}

inline Image tensor_to_image(const Tensor& t) {
    if (t.rank() != 3 || t.dim(2) != 3) throw ShapeError("tensor_to_image expects [H,W,3]");
    Image img;
    img.height = static_cast<int>(t.dim(0));
    img.width = static_cast<int>(t.dim(1));
    img.data.assign(t.data().begin(), t.data().end());
    return img;
}

// --------------------------------------------------------------------------
// PNG

namespace detail {
struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngReadCloser() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};
struct PngWriteCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngWriteCloser() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};
}  // namespace detail

// Loads an 8-bit PNG; RGBA alpha is composited over `background`.
inline Image load_png(const std::string& path, const Vec3& background = Vec3::Ones()) {
    detail::PngReadCloser ctx;
    ctx.fp = std::fopen(path.c_str(), "rb");
    if (!ctx.fp) throw DataError("cannot open " + path);
    png_byte header[8];
    if (std::fread(header, 1, 8, ctx.fp) != 8 || png_sig_cmp(header, 0, 8))
        throw DataError(path + ": not a PNG file");
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.png || !ctx.info) throw DataError("libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw DataError(path + ": PNG decode error");
    png_init_io(ctx.png, ctx.fp);
    png_set_sig_bytes(ctx.png, 8);
    png_read_info(ctx.png, ctx.info);

    const png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
    const png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
    const int color_type = png_get_color_type(ctx.png, ctx.info);
    const int bit_depth = png_get_bit_depth(ctx.png, ctx.info);

    if (bit_depth == 16) png_set_strip_16(ctx.png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
    if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(ctx.png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(ctx.png);
    // normalize to RGBA
    png_set_filler(ctx.png, 0xFF, PNG_FILLER_AFTER);
    png_read_update_info(ctx.png, ctx.info);

    std::vector<png_byte> rows(static_cast<size_t>(w) * h * 4);
    std::vector<png_bytep> row_ptrs(h);
    for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = rows.data() + static_cast<size_t>(y) * w * 4;
    png_read_image(ctx.png, row_ptrs.data());

    Image img = make_image(static_cast<int>(w), static_cast<int>(h));
    for (size_t i = 0; i < static_cast<size_t>(w) * h; ++i) {
        const real a = rows[4 * i + 3] / real(255);
        for (int c = 0; c < 3; ++c) {
            const real v = rows[4 * i + c] / real(255);
            img.data[3 * i + c] = v * a + background[c] * (1 - a);
        }
    }
    return img;
}

// Writes 8-bit RGB with fixed settings (deterministic bytes for equal pixels).
inline void save_png(const std::string& path, const Image& img) {
    detail::PngWriteCloser ctx;
    ctx.fp = std::fopen(path.c_str(), "wb");
    if (!ctx.fp) throw DataError("cannot open " + path + " for writing");
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.png || !ctx.info) throw DataError("libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw DataError(path + ": PNG encode error");
    png_init_io(ctx.png, ctx.fp);
    png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(ctx.png, 6);
    png_write_info(ctx.png, ctx.info);

    std::vector<png_byte> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                real v = img.at(x, y, c);
                v = std::min(real(1), std::max(real(0), v));
                row[3 * static_cast<size_t>(x) + c] =
                    static_cast<png_byte>(std::lround(v * 255));
            }
        png_write_row(ctx.png, row.data());
    }
    png_write_end(ctx.png, nullptr);
}

// --------------------------------------------------------------------------
// NPY float32 dumps (testing interface): shape (H, W, 3), little-endian.

inline void save_npy(const std::string& path, const Image& img) {
    std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" +
                         std::to_string(img.height) + ", " + std::to_string(img.width) +
                         ", 3), }";
    // pad so that magic(6)+version(2)+len(2)+header is a multiple of 64
    const size_t base = 10 + header.size() + 1;
    header.append((64 - base % 64) % 64, ' ');
    header.push_back('\n');

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out.write("\x93NUMPY\x01\x00", 8);
    const uint16_t hlen = static_cast<uint16_t>(header.size());
    out.write(reinterpret_cast<const char*>(&hlen), 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const real v : img.data) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (!out) throw DataError("short write while saving " + path);
}

inline Image load_npy(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0)
        throw DataError(path + ": not an NPY file");
    uint16_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 2);
    std::string header(hlen, '\0');
    in.read(header.data(), hlen);
    if (header.find("'<f4'") == std::string::npos || header.find("(") == std::string::npos)
        throw DataError(path + ": expected float32 NPY");
    int h = 0, w = 0, c = 0;
    if (std::sscanf(header.c_str() + header.find('('), "(%d, %d, %d)", &h, &w, &c) != 3 ||
        c != 3)
        throw DataError(path + ": expected (H, W, 3) shape");
    Image img = make_image(w, h);
    for (auto& v : img.data) {
        float f;
        in.read(reinterpret_cast<char*>(&f), 4);
        v = static_cast<real>(f);
    }
    if (!in) throw DataError(path + ": truncated NPY data");
    return img;
}

}  // namespace gsd
