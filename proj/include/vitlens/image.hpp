#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "vitlens/tensor.hpp"

namespace vitlens {

/// 8-bit RGB, row-major, channels interleaved.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    ImageBuffer() = default;
    ImageBuffer(int w, int h);
    ImageBuffer(int w, int h, std::vector<std::uint8_t> px);

    std::uint8_t& at(int row, int col, int channel) {
        return pixels[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
    }
    std::uint8_t at(int row, int col, int channel) const {
        return pixels[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
    }

    bool operator==(const ImageBuffer&) const = default;
};

/// PNG or JPEG to RGB. Alpha is composited over white; grayscale is
/// replicated to three channels.
ImageBuffer decode_image(std::span<const std::uint8_t> bytes);

/// Largest centered square; a no-op on square input.
ImageBuffer center_crop_square(const ImageBuffer& img);

/// Square side×side bilinear resample with half-pixel-centered sampling.
ImageBuffer resize_bilinear(const ImageBuffer& img, int side);

struct Normalization {
    std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
    std::array<float, 3> std{0.5f, 0.5f, 0.5f};
};

/// Per-pixel RGB floats, (pixel/255 − mean_c)/std_c. `pixels` is (w·h)×3.
struct NormalizedImage {
    int width = 0;
    int height = 0;
    Matrix pixels;
};

NormalizedImage normalize(const ImageBuffer& img, const Normalization& norm = {});

struct PatchOrigin {
    int row_px = 0;
    int col_px = 0;
    bool operator==(const PatchOrigin&) const = default;
};

/// N = grid_side² flattened patches, grid row-major from the top-left; each
/// vector is the P×P×3 tile in (row, col, channel) order.
struct PatchMatrix {
    int grid_side = 0;
    int patch_size = 0;
    Matrix vectors;  // N × 3P²
    std::vector<PatchOrigin> origins;
};

PatchMatrix patchify(const NormalizedImage& img, int patch_size);

/// Inverse of patchify.
NormalizedImage unpatchify(const PatchMatrix& patches);

}  // namespace vitlens
