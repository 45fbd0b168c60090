// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/io.hpp"

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

namespace fleg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f)
            std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

struct PngImage {
    int height = 0, width = 0, channels = 0, bit_depth = 0;
    std::vector<uint16_t> px;  // row-major, up to 16-bit values
};

PngImage read_png(const fs::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file)
        throw DataError("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info)
        throw DataError("libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(path.string() + ": PNG decode failed");
    }
    png_init_io(png, file.get());
    png_read_info(png, info);

    const int width = int(png_get_image_width(png, info));
    const int height = int(png_get_image_height(png, info));
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);

    if (color_type == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    if (bit_depth == 16)
        png_set_swap(png);  // PNG stores 16-bit big-endian
    png_read_update_info(png, info);

    const int channels = png_get_channels(png, info);
    PngImage img;
    img.width = width;
    img.height = height;
    img.channels = channels;
    img.bit_depth = png_get_bit_depth(png, info);

    const size_t row_values = size_t(width) * channels;
    img.px.resize(size_t(height) * row_values);
    std::vector<png_bytep> rows(height);
    std::vector<uint8_t> raw;
    if (img.bit_depth == 16) {
        for (int y = 0; y < height; ++y)
            rows[y] = reinterpret_cast<png_bytep>(img.px.data() + size_t(y) * row_values);
    } else {
        raw.resize(size_t(height) * row_values);
        for (int y = 0; y < height; ++y)
            rows[y] = raw.data() + size_t(y) * row_values;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    if (img.bit_depth != 16)
        for (size_t i = 0; i < raw.size(); ++i)
            img.px[i] = raw[i];
    return img;
}

void write_png(const fs::path& path, int width, int height, int channels, int bit_depth,
               const std::vector<uint16_t>& px) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file)
        throw DataError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info)
        throw DataError("libpng init failed");
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError(path.string() + ": PNG encode failed");
    }
    png_init_io(png, file.get());
    const int color_type = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), bit_depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16)
        png_set_swap(png);

    const size_t row_values = size_t(width) * channels;
    std::vector<uint8_t> raw;
    std::vector<png_bytep> rows(height);
    if (bit_depth == 16) {
        for (int y = 0; y < height; ++y)
            rows[y] = reinterpret_cast<png_bytep>(const_cast<uint16_t*>(px.data() + size_t(y) * row_values));
    } else {
        raw.resize(px.size());
        for (size_t i = 0; i < px.size(); ++i)
            raw[i] = uint8_t(std::min<uint16_t>(px[i], 255));
        for (int y = 0; y < height; ++y)
            rows[y] = raw.data() + size_t(y) * row_values;
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace

Image read_png_rgb8(const fs::path& path) {
    const PngImage img = read_png(path);
    if (img.channels != 3 || img.bit_depth != 8)
        throw DataError(path.string() + ": expected 8-bit RGB");
    Image out = Image::zeros(img.height, img.width);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = img.px[i] / 255.0;
    return out;
}

void write_png_rgb8(const Image& image, const fs::path& path) {
    std::vector<uint16_t> px(image.data.size());
    for (size_t i = 0; i < px.size(); ++i)
        px[i] = uint16_t(std::clamp(std::lround(image.data[i] * 255.0), 0L, 255L));
    atomic_write(path, [&](const fs::path& tmp) { write_png(tmp, image.width, image.height, 3, 8, px); });
}

ScalarMap read_png_gray16(const fs::path& path) {
    fs::path sidecar = path;
    sidecar += ".json";
    std::ifstream meta(sidecar);
    if (!meta)
        throw DataError("missing sidecar " + sidecar.string());
    json doc;
    try {
        std::ostringstream buf;
        buf << meta.rdbuf();
        doc = json::parse(buf.str());
    } catch (const json::parse_error& e) {
        throw DataError(sidecar.string() + ": " + e.what());
    }
    const double scale = doc.at("scale");
    const double offset = doc.value("offset", 0.0);
    if (!(scale > 0.0))
        throw DataError(sidecar.string() + ": scale must be positive");

    const PngImage img = read_png(path);
    if (img.channels != 1 || img.bit_depth != 16)
        throw DataError(path.string() + ": expected 16-bit grayscale");
    ScalarMap out = ScalarMap::zeros(img.height, img.width);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = double(img.px[i]) / scale + offset;
    return out;
}

void write_png_gray16(const ScalarMap& map, const fs::path& path, double scale, double offset) {
    if (!(scale > 0.0))
        throw DataError("write_png_gray16: scale must be positive");
    std::vector<uint16_t> px(map.data.size());
    for (size_t i = 0; i < px.size(); ++i)
        px[i] = uint16_t(std::clamp(std::lround((map.data[i] - offset) * scale), 0L, 65535L));
    atomic_write(path, [&](const fs::path& tmp) { write_png(tmp, map.width, map.height, 1, 16, px); });
    const json doc = {{"scale", scale}, {"offset", offset}};
    fs::path sidecar = path;
    sidecar += ".json";
    atomic_write(sidecar, [&](const fs::path& tmp) {
        std::ofstream out(tmp);
        out << doc.dump(2) << "\n";
    });
}

} // namespace fleg
