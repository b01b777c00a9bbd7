#include "fallfuse/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "fallfuse/error.hpp"

namespace fallfuse {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FileHandle = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageRgb read_png_rgb(const std::string& path) {
    FileHandle file(std::fopen(path.c_str(), "rb"));
    if (!file) throw IoError("cannot open image: " + path);

    unsigned char header[8];
    if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        throw DecodeError("not a PNG file: " + path);
    }

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DecodeError("png reader allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DecodeError("png info allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError("corrupt PNG: " + path);
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    // Normalize every color type to 8-bit RGB.
    png_set_expand(png);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    png_read_update_info(png, info);

    ImageRgb image;
    image.height = static_cast<int>(png_get_image_height(png, info));
    image.width = static_cast<int>(png_get_image_width(png, info));
    image.pixels.resize(static_cast<std::size_t>(image.height) * image.width * 3);
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
    for (int y = 0; y < image.height; ++y) {
        rows[static_cast<std::size_t>(y)] =
            image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void write_png_rgb(const std::string& path, const ImageRgb& image) {
    if (image.height < 1 || image.width < 1 ||
        image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * 3) {
        throw InputError("write_png_rgb: inconsistent image buffer");
    }
    FileHandle file(std::fopen(path.c_str(), "wb"));
    if (!file) throw IoError("cannot create image: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png writer allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png info allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed: " + path);
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
    for (int y = 0; y < image.height; ++y) {
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
            image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void write_png_gray(const std::string& path, const std::vector<double>& gray, int height,
                    int width) {
    if (gray.size() != static_cast<std::size_t>(height) * width) {
        throw InputError("write_png_gray: inconsistent buffer");
    }
    ImageRgb image;
    image.height = height;
    image.width = width;
    image.pixels.resize(gray.size() * 3);
    for (std::size_t i = 0; i < gray.size(); ++i) {
        double v = gray[i];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        const auto byte = static_cast<std::uint8_t>(std::lround(v * 255.0));
        image.pixels[i * 3] = byte;
        image.pixels[i * 3 + 1] = byte;
        image.pixels[i * 3 + 2] = byte;
    }
    write_png_rgb(path, image);
}

FrameGray load_frame_png(const std::string& path, int camera, std::int64_t timestamp_ms) {
    ImageRgb rgb = read_png_rgb(path);
    std::vector<double> gray = to_grayscale(rgb.pixels.data(), rgb.height, rgb.width);
    std::vector<double> resized =
        resize_bilinear(gray, rgb.height, rgb.width, kFrameSide, kFrameSide);
    return make_frame(std::move(resized), camera, timestamp_ms);
}

}  // namespace fallfuse
