#include "redcell/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <vector>

namespace redcell {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) {
            std::fclose(f);
        }
    }
};

using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char quantize_value(double v, const PixelRange& range) {
    double t = (v - range.low) / (range.high - range.low);
    t = std::min(1.0, std::max(0.0, t));
    return static_cast<unsigned char>(std::lround(t * 255.0));
}

} // namespace

Image quantize_gray8(const Image& image, const PixelRange& range) {
    Image out(image.rows(), image.cols());
    double span = range.high - range.low;
    for (Eigen::Index r = 0; r < image.rows(); ++r) {
        for (Eigen::Index c = 0; c < image.cols(); ++c) {
            out(r, c) = range.low + quantize_value(image(r, c), range) / 255.0 * span;
        }
    }
    return out;
}

void write_gray8_png(const std::filesystem::path& path, const Image& image,
                     const PixelRange& range) {
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) {
        throw std::runtime_error("cannot open for write: " + path.string());
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) {
        throw std::runtime_error("png_create_write_struct failed");
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.cols()),
                 static_cast<png_uint_32>(image.rows()), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(static_cast<std::size_t>(image.cols()));
    for (Eigen::Index r = 0; r < image.rows(); ++r) {
        for (Eigen::Index c = 0; c < image.cols(); ++c) {
            row[static_cast<std::size_t>(c)] = quantize_value(image(r, c), range);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_gray8_png(const std::filesystem::path& path, const PixelRange& range) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) {
        throw std::runtime_error("cannot open for read: " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) {
        throw std::runtime_error("png_create_read_struct failed");
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png read failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY ||
        png_get_bit_depth(png, info) != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("expected 8-bit grayscale PNG: " + path.string());
    }
    auto width = png_get_image_width(png, info);
    auto height = png_get_image_height(png, info);
    Image out(static_cast<Eigen::Index>(height), static_cast<Eigen::Index>(width));
    std::vector<unsigned char> row(width);
    double span = range.high - range.low;
    for (png_uint_32 r = 0; r < height; ++r) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 c = 0; c < width; ++c) {
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                range.low + row[c] / 255.0 * span;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

} // namespace redcell
