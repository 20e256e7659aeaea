#pragma once

#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "xbdkit/error.hpp"
#include "xbdkit/raster.hpp"

namespace xbdkit::raster {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngErrorState {
    std::string message;
};

inline void png_error_fn(png_structp png, png_const_charp msg) {
    auto* state = static_cast<PngErrorState*>(png_get_error_ptr(png));
    if (state && msg) state->message = msg;
    std::longjmp(png_jmpbuf(png), 1);
}

inline void png_warn_fn(png_structp, png_const_charp) {}

}  // namespace detail

// Decodes an 8-bit PNG (gray, palette, RGB, or RGBA source) into RGBA with
// the alpha plane forced to 255. Source transparency is discarded: the
// pipeline defines opacity itself and only crop padding is ever transparent.
// 16-bit sources are rejected so the black threshold keeps its meaning.
inline RgbaRaster load_png(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path.string());

    detail::PngErrorState err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err,
                                             detail::png_error_fn, detail::png_warn_fn);
    if (!png) throw DecodeError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DecodeError("png_create_info_struct failed");
    }

    RgbaRaster out;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError(path.string() + ": " + (err.message.empty() ? "decode failed" : err.message));
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth == 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError(path.string() + ": 16-bit channels are not supported");
    }
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    // Drop any source transparency, then append the opaque filler byte.
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_set_filler(png, 0xff, PNG_FILLER_AFTER);
    png_read_update_info(png, info);

    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(w) * 4) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError(path.string() + ": unexpected decoded row size");
    }

    out.width = static_cast<int>(w);
    out.height = static_cast<int>(h);
    out.data.resize(static_cast<std::size_t>(w) * h * 4);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) {
        rows[y] = out.data.data() + static_cast<std::size_t>(y) * w * 4;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

// Writes 8-bit PNG. drop_alpha selects RGB output (the emission format for
// patches); otherwise the full RGBA plane is stored. Fixed encoder settings
// keep output bytes reproducible for identical pixel input.
inline void save_png(const std::filesystem::path& path, const RgbaRaster& img, bool drop_alpha = false) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw IoError("cannot open " + path.string() + " for writing");

    detail::PngErrorState err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err,
                                              detail::png_error_fn, detail::png_warn_fn);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }

    std::vector<std::uint8_t> rgb;
    std::vector<png_bytep> rows(img.height);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path.string() + ": " + (err.message.empty() ? "encode failed" : err.message));
    }

    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, img.width, img.height, 8,
                 drop_alpha ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_RGBA,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    if (drop_alpha) {
        rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
        const std::uint8_t* src = img.data.data();
        for (std::size_t i = 0, j = 0; i < img.data.size(); i += 4, j += 3) {
            rgb[j] = src[i];
            rgb[j + 1] = src[i + 1];
            rgb[j + 2] = src[i + 2];
        }
        for (int y = 0; y < img.height; ++y) {
            rows[y] = rgb.data() + static_cast<std::size_t>(y) * img.width * 3;
        }
    } else {
        for (int y = 0; y < img.height; ++y) {
            rows[y] = const_cast<png_bytep>(img.data.data()) + static_cast<std::size_t>(y) * img.width * 4;
        }
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace xbdkit::raster
