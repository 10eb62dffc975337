#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor/tensor.hpp"

namespace csts::data {

// 8-bit image, row-major, interleaved channels (1 or 3).
struct Image {
    Index width = 0, height = 0, channels = 3;
    std::vector<std::uint8_t> pixels;
};

Image read_png(const std::string& path);  // always returned as RGB
void write_png(const std::string& path, const Image& img);

// [H, W, 3] floats in [0, 1] <-> 8-bit RGB.
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t);
// [H, W] floats in [0, 1] -> 8-bit gray.
Image gray_image(const Tensor& t);

// Bilinear resize (half-pixel centres); identity when the size matches.
Image resize(const Image& img, Index width, Index height);

// Packed frame stack: "CSTSPACK", u32 version, u32 rank, u64 dims, u8 dtype
// (0 = uint8), then the payload. Frames are [N, H, W, 3].
void write_packed(const std::string& path, const std::vector<Image>& frames);
std::vector<Image> read_packed(const std::string& path);
// Number of frames in a packed file without reading the payload.
Index packed_frame_count(const std::string& path);

} // namespace csts::data
