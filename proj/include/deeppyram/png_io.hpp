#pragma once

#include <png.h>

#include <cstring>
#include <string>
#include <vector>

#include "deeppyram/common.hpp"

namespace deeppyram {

// 8-bit raster, row-major, interleaved channels (1 = gray, 3 = RGB).
struct ImageU8 {
    int width = 0, height = 0, channels = 0;
    std::vector<uint8_t> pixels;
};

inline ImageU8 read_png(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw DataError("read_png: cannot open " + path + " (" + image.message + ")");
    ImageU8 out;
    const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
    image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    out.width = static_cast<int>(image.width);
    out.height = static_cast<int>(image.height);
    out.channels = gray ? 1 : 3;
    out.pixels.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&image);
        throw DataError("read_png: decode failed for " + path + " (" + image.message + ")");
    }
    return out;
}

inline void write_png(const std::string& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw DataError("write_png: channels must be 1 or 3");
    if (img.pixels.size() !=
        static_cast<size_t>(img.width) * static_cast<size_t>(img.height) * img.channels)
        throw DataError("write_png: pixel buffer does not match dimensions");
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr))
        throw DataError("write_png: cannot write " + path + " (" + image.message + ")");
}

} // namespace deeppyram
