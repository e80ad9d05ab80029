#include "slidenav/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "slidenav/errors.hpp"

namespace slidenav {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what, const std::string& path) {
    throw ValidationError(what + ": " + path);
}

}  // namespace

void write_png_u8(const std::string& path, const ImageU8& img) {
    if (img.empty() || (img.channels != 1 && img.channels != 3))
        fail("write_png_u8: unsupported image", path);
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail("write_png_u8: cannot open", path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        fail("write_png_u8: libpng init failed", path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("write_png_u8: encode error", path);
    }
    png_init_io(png, fp.get());
    const int color = img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, img.width, img.height, 8, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = const_cast<png_bytep>(
            &img.data[static_cast<std::size_t>(y) * img.width * img.channels]);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ImageU8 read_png_u8(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail("read_png_u8: cannot open", path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("read_png_u8: libpng init failed", path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("read_png_u8: decode error", path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const int bit_depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (bit_depth != 8 || (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_GRAY)) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("read_png_u8: expected 8-bit RGB or grayscale", path);
    }
    ImageU8 img(static_cast<int>(png_get_image_width(png, info)),
                static_cast<int>(png_get_image_height(png, info)),
                color == PNG_COLOR_TYPE_RGB ? 3 : 1);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = &img.data[static_cast<std::size_t>(y) * img.width * img.channels];
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png_gray16(const std::string& path, int width, int height,
                      const std::vector<std::uint16_t>& samples) {
    if (width <= 0 || height <= 0 ||
        samples.size() != static_cast<std::size_t>(width) * height)
        fail("write_png_gray16: bad dimensions", path);
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail("write_png_gray16: cannot open", path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        fail("write_png_gray16: libpng init failed", path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("write_png_gray16: encode error", path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_set_swap(png);  // samples are host little-endian; PNG stores big-endian
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = const_cast<png_bytep>(reinterpret_cast<const png_byte*>(
            &samples[static_cast<std::size_t>(y) * width]));
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void read_png_gray16(const std::string& path, int& width, int& height,
                     std::vector<std::uint16_t>& samples) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail("read_png_gray16: cannot open", path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("read_png_gray16: libpng init failed", path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("read_png_gray16: decode error", path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    if (png_get_bit_depth(png, info) != 16 ||
        png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("read_png_gray16: expected 16-bit grayscale", path);
    }
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    samples.assign(static_cast<std::size_t>(width) * height, 0);
    png_set_swap(png);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = reinterpret_cast<png_byte*>(&samples[static_cast<std::size_t>(y) * width]);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace slidenav
