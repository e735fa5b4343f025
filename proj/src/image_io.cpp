#include "tryon/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include "tryon/errors.hpp"

namespace tryon {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint8_t quantize(float v) {
    if (v < 0.f) v = 0.f;
    if (v > 1.f) v = 1.f;
    return static_cast<uint8_t>(std::floor(v * 255.f + 0.5f));
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
    TRYON_CHECK(img.ndim() == 3, "write_png: expected (C,H,W)");
    const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    TRYON_CHECK(C == 1 || C == 3, "write_png: 1 or 3 channels");

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoFailure("write_png: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoFailure("write_png: libpng failure for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<uint8_t> row(static_cast<size_t>(W) * 3);
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
            for (int64_t c = 0; c < 3; ++c) {
                float v = C == 3 ? img.at(c, y, x) : img.at(0, y, x);
                row[static_cast<size_t>(x * 3 + c)] = quantize(v);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoFailure("read_png: cannot open " + path);

    uint8_t header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw IoFailure("read_png: not a PNG: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoFailure("read_png: libpng failure for " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    Image img({3, static_cast<int64_t>(h), static_cast<int64_t>(w)});
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<float>(row[x * 3 + static_cast<png_uint_32>(c)]) / 255.f;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png_normalized(const std::string& path, const Tensor<float>& plane) {
    TRYON_CHECK(plane.ndim() == 3, "write_png_normalized: expected (C,H,W)");
    float lo = plane[0], hi = plane[0];
    for (int64_t i = 0; i < plane.numel(); ++i) {
        lo = std::min(lo, plane[i]);
        hi = std::max(hi, plane[i]);
    }
    const float span = hi - lo > 1e-12f ? hi - lo : 1.f;
    Image mapped(plane.shape());
    for (int64_t i = 0; i < plane.numel(); ++i) mapped[i] = (plane[i] - lo) / span;
    if (mapped.dim(0) != 1 && mapped.dim(0) != 3) {
        // collapse extra channels to their mean for inspection
        Image gray({1, plane.dim(1), plane.dim(2)});
        for (int64_t y = 0; y < plane.dim(1); ++y)
            for (int64_t x = 0; x < plane.dim(2); ++x) {
                float acc = 0.f;
                for (int64_t c = 0; c < plane.dim(0); ++c) acc += mapped.at(c, y, x);
                gray.at(0, y, x) = acc / float(plane.dim(0));
            }
        write_png(path, gray);
        return;
    }
    write_png(path, mapped);
}

void write_flow(const std::string& path, const Tensor<float>& flow) {
    TRYON_CHECK(flow.ndim() == 3 && flow.dim(0) == 2, "write_flow: expected (2,H,W)");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoFailure("write_flow: cannot open " + path);
    const uint32_t magic = 0x574F4C46u;  // "FLOW"
    const uint32_t h = static_cast<uint32_t>(flow.dim(1));
    const uint32_t w = static_cast<uint32_t>(flow.dim(2));
    f.write(reinterpret_cast<const char*>(&magic), 4);
    f.write(reinterpret_cast<const char*>(&h), 4);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(flow.data()),
            static_cast<std::streamsize>(flow.numel() * sizeof(float)));
    if (!f) throw IoFailure("write_flow: write failed for " + path);
}

Tensor<float> read_flow(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoFailure("read_flow: cannot open " + path);
    uint32_t magic = 0, h = 0, w = 0;
    f.read(reinterpret_cast<char*>(&magic), 4);
    f.read(reinterpret_cast<char*>(&h), 4);
    f.read(reinterpret_cast<char*>(&w), 4);
    if (!f || magic != 0x574F4C46u) throw IoFailure("read_flow: bad header in " + path);
    Tensor<float> flow({2, static_cast<int64_t>(h), static_cast<int64_t>(w)});
    f.read(reinterpret_cast<char*>(flow.data()),
           static_cast<std::streamsize>(flow.numel() * sizeof(float)));
    if (!f) throw IoFailure("read_flow: truncated file " + path);
    return flow;
}

}  // namespace tryon
