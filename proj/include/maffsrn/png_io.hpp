#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <png.h>

#include "maffsrn/imaging.hpp"

namespace maffsrn {

namespace detail {

struct FileCloser {
    std::FILE* fp = nullptr;
    ~FileCloser() {
        if (fp) std::fclose(fp);
    }
};

}  // namespace detail

// Reads an 8-bit PNG as grayscale or RGB. Palette images are expanded to
// RGB, alpha channels are stripped, and 16-bit files are rejected outright.
inline Image png_read(const std::string& path) {
    detail::FileCloser file;
    file.fp = std::fopen(path.c_str(), "rb");
    if (!file.fp) throw io_error("cannot open '" + path + "' for reading");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw io_error("png: allocation failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw io_error("png: allocation failure");
    }

    Image img;
    std::vector<png_bytep> rows;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw io_error("png: failed to decode '" + path + "'");
    }

    png_init_io(png, file.fp);
    png_read_info(png, info);

    const png_byte depth = png_get_bit_depth(png, info);
    const png_byte color = png_get_color_type(png, info);
    if (depth == 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw io_error("png: 16-bit depth unsupported: '" + path + "'");
    }
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    // Strip any alpha introduced by tRNS expansion.
    if (png_get_channels(png, info) == 4 || png_get_channels(png, info) == 2) {
        png_set_strip_alpha(png);
        png_read_update_info(png, info);
    }

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int ch = static_cast<int>(png_get_channels(png, info));
    if (ch != 1 && ch != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw io_error("png: unsupported channel count in '" + path + "'");
    }

    img = Image(w, h, ch);
    rows.resize(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<size_t>(y)] = img.data.data() + static_cast<size_t>(y) * w * ch;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline void png_write(const std::string& path, const Image& img) {
    if (img.width < 1 || img.height < 1 || (img.channels != 1 && img.channels != 3))
        throw shape_error("png_write: invalid image");
    detail::FileCloser file;
    file.fp = std::fopen(path.c_str(), "wb");
    if (!file.fp) throw io_error("cannot open '" + path + "' for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw io_error("png: allocation failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw io_error("png: allocation failure");
    }

    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<size_t>(y)] = const_cast<png_bytep>(
            img.data.data() + static_cast<size_t>(y) * img.width * img.channels);

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw io_error("png: failed to encode '" + path + "'");
    }

    png_init_io(png, file.fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace maffsrn
