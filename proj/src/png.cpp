#include "cosy/png.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "cosy/error.hpp"

namespace cosy {

namespace {

void append(png_structp png, png_bytep data, png_size_t len) {
    static_cast<std::string*>(png_get_io_ptr(png))->append(reinterpret_cast<const char*>(data), len);
}

struct ReadCursor {
    const std::string* bytes;
    std::size_t pos;
};

void consume(png_structp png, png_bytep out, png_size_t len) {
    auto* c = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (c->bytes->size() - c->pos < len) png_error(png, "truncated");
    std::memcpy(out, c->bytes->data() + c->pos, len);
    c->pos += len;
}

void on_warning(png_structp, png_const_charp) {}

}  // namespace

std::string encode_png(std::span<const float> rgb, int width, int height) {
    if (rgb.size() != std::size_t(width) * height * 3) throw Error(ErrorCode::ShapeMismatch, "png: size mismatch");
    std::vector<std::uint8_t> px(rgb.size());
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[i], 0.0f, 1.0f) * 255.0f));
    }
    std::string out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, on_warning);
    png_infop info = png_create_info_struct(png);
    // libpng reports errors by longjmp; no C++ objects are created below.
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::FormatError, "png encode failed");
    }
    {
        png_set_write_fn(png, &out, append, nullptr);
        png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_set_compression_level(png, 1);
        png_write_info(png, info);
        for (int y = 0; y < height; ++y) png_write_row(png, px.data() + std::size_t(y) * width * 3);
        png_write_end(png, nullptr);
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

DecodedPng decode_png(const std::string& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
        throw Error(ErrorCode::FormatError, "not a PNG");
    }
    DecodedPng out;
    ReadCursor cursor{&bytes, 0};
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, on_warning);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorCode::FormatError, "png decode failed");
    }
    png_set_read_fn(png, &cursor, consume);
    png_read_info(png, info);
    const bool rgb8 = png_get_bit_depth(png, info) == 8 && png_get_color_type(png, info) == PNG_COLOR_TYPE_RGB;
    if (rgb8) {
        out.width = static_cast<int>(png_get_image_width(png, info));
        out.height = static_cast<int>(png_get_image_height(png, info));
        out.rgb.resize(std::size_t(out.width) * out.height * 3);
        for (int y = 0; y < out.height; ++y) png_read_row(png, out.rgb.data() + std::size_t(y) * out.width * 3, nullptr);
        png_read_end(png, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    if (!rgb8) throw Error(ErrorCode::FormatError, "only 8-bit RGB PNGs are supported");
    return out;
}

}  // namespace cosy
