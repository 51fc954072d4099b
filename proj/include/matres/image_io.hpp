#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "matres/tensor.hpp"

namespace matres::io {

// 8-bit RGB PNG, row-major, 3 bytes per pixel.
void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& rgb);
std::vector<uint8_t> read_png_rgb8(const std::string& path, int* width, int* height);

// Images cross the file boundary as 8-bit RGB; floats are quantized here and
// nowhere else.
template <class R>
std::vector<uint8_t> quantize_rgb8(const Tensor<R>& img) {
    if (img.shape().size() != 3 || img.shape()[0] != 3)
        op_error("quantize_rgb8", "expected (3,H,W), got " + shape_str(img.shape()));
    const int H = img.shape()[1], W = img.shape()[2];
    std::vector<uint8_t> out(static_cast<size_t>(H) * W * 3);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = static_cast<double>(img.data()[(static_cast<size_t>(c) * H + y) * W + x]);
                v = std::min(1.0, std::max(0.0, v));
                out[(static_cast<size_t>(y) * W + x) * 3 + c] =
                    static_cast<uint8_t>(std::lround(v * 255.0));
            }
    return out;
}

template <class R>
Tensor<R> dequantize_rgb8(const std::vector<uint8_t>& rgb, int width, int height) {
    std::vector<R> v(static_cast<size_t>(3) * height * width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c)
                v[(static_cast<size_t>(c) * height + y) * width + x] =
                    static_cast<R>(rgb[(static_cast<size_t>(y) * width + x) * 3 + c] / 255.0);
    return Tensor<R>::from({3, height, width}, std::move(v));
}

template <class R>
void save_image(const std::string& path, const Tensor<R>& img) {
    write_png_rgb8(path, img.shape()[2], img.shape()[1], quantize_rgb8(img));
}

template <class R>
Tensor<R> load_image(const std::string& path) {
    int w = 0, h = 0;
    auto rgb = read_png_rgb8(path, &w, &h);
    return dequantize_rgb8<R>(rgb, w, h);
}

}  // namespace matres::io
