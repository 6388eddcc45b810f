#include "vitlens/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <string>

#include <jpeglib.h>
#include <png.h>

#include "vitlens/error.hpp"

namespace vitlens {

namespace {

bool is_png(std::span<const std::uint8_t> b) {
    static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    return b.size() >= 8 && std::equal(sig, sig + 8, b.begin());
}

bool is_jpeg(std::span<const std::uint8_t> b) {
    return b.size() >= 3 && b[0] == 0xff && b[1] == 0xd8 && b[2] == 0xff;
}

ImageBuffer decode_png(std::span<const std::uint8_t> bytes) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        std::string msg = img.message;
        png_image_free(&img);
        throw Error(ErrorCode::CorruptImage, "png: " + msg);
    }
    img.format = PNG_FORMAT_RGBA;
    const auto w = static_cast<int>(img.width), h = static_cast<int>(img.height);
    std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, rgba.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw Error(ErrorCode::CorruptImage, "png: " + msg);
    }
    ImageBuffer out(w, h);
    const std::size_t n = static_cast<std::size_t>(w) * h;
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned a = rgba[4 * i + 3];
        for (int c = 0; c < 3; ++c) {
            const unsigned v = rgba[4 * i + c];
            // over white, rounded
            out.pixels[3 * i + c] = static_cast<std::uint8_t>((v * a + 255u * (255u - a) + 127u) / 255u);
        }
    }
    return out;
}

struct JpegErrorManager {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

// Warnings (e.g. premature end of data) are counted and treated as corruption.
void jpeg_emit_message(j_common_ptr cinfo, int level) {
    if (level < 0) {
        auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
        if (err->pub.num_warnings == 0) (*cinfo->err->format_message)(cinfo, err->message);
        ++err->pub.num_warnings;
    }
}

ImageBuffer decode_jpeg(std::span<const std::uint8_t> bytes) {
    jpeg_decompress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    err.pub.emit_message = jpeg_emit_message;

    // Only PODs live across the setjmp boundary; the buffer is allocated after.
    std::vector<std::uint8_t>* volatile pixels = nullptr;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        delete pixels;
        throw Error(ErrorCode::CorruptImage, std::string("jpeg: ") + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    if (cinfo.jpeg_color_space == JCS_CMYK || cinfo.jpeg_color_space == JCS_YCCK) {
        jpeg_destroy_decompress(&cinfo);
        throw Error(ErrorCode::UnsupportedFormat, "jpeg: CMYK images are not supported");
    }
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    const int w = static_cast<int>(cinfo.output_width), h = static_cast<int>(cinfo.output_height);
    pixels = new std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = pixels->data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    const bool warned = err.pub.num_warnings > 0;
    jpeg_destroy_decompress(&cinfo);
    std::vector<std::uint8_t> px = std::move(*pixels);
    delete pixels;
    if (warned) throw Error(ErrorCode::CorruptImage, std::string("jpeg: ") + err.message);
    return ImageBuffer(w, h, std::move(px));
}

}  // namespace

ImageBuffer::ImageBuffer(int w, int h)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

ImageBuffer::ImageBuffer(int w, int h, std::vector<std::uint8_t> px)
    : width(w), height(h), pixels(std::move(px)) {
    if (pixels.size() != static_cast<std::size_t>(w) * h * 3) {
        throw Error(ErrorCode::DimensionMismatch, "image " + std::to_string(w) + "x" + std::to_string(h) +
                                                      " needs " + std::to_string(std::size_t(w) * h * 3) +
                                                      " bytes, got " + std::to_string(pixels.size()));
    }
}

ImageBuffer decode_image(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw Error(ErrorCode::UnsupportedFormat, "empty image");
    ImageBuffer img;
    if (is_png(bytes)) {
        img = decode_png(bytes);
    } else if (is_jpeg(bytes)) {
        img = decode_jpeg(bytes);
    } else {
        throw Error(ErrorCode::UnsupportedFormat, "not a PNG or JPEG stream");
    }
    if (img.width < 1 || img.height < 1) throw Error(ErrorCode::CorruptImage, "image has no pixels");
    return img;
}

ImageBuffer center_crop_square(const ImageBuffer& img) {
    if (img.width == img.height) return img;
    const int side = std::min(img.width, img.height);
    const int top = (img.height - side) / 2, left = (img.width - side) / 2;
    ImageBuffer out(side, side);
    for (int r = 0; r < side; ++r) {
        const auto* src = img.pixels.data() + (static_cast<std::size_t>(r + top) * img.width + left) * 3;
        std::copy(src, src + side * 3, out.pixels.data() + static_cast<std::size_t>(r) * side * 3);
    }
    return out;
}

ImageBuffer resize_bilinear(const ImageBuffer& img, int side) {
    if (side < 1) throw Error(ErrorCode::InvalidArgument, "resize side must be >= 1");
    if (img.width == side && img.height == side) return img;
    ImageBuffer out(side, side);
    auto sample_pos = [side](int dst, int extent, int& i0, int& i1, double& frac) {
        double s = (dst + 0.5) * extent / side - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(extent - 1));
        i0 = static_cast<int>(std::floor(s));
        i1 = std::min(i0 + 1, extent - 1);
        frac = s - i0;
    };
    for (int oy = 0; oy < side; ++oy) {
        int y0, y1;
        double fy;
        sample_pos(oy, img.height, y0, y1, fy);
        for (int ox = 0; ox < side; ++ox) {
            int x0, x1;
            double fx;
            sample_pos(ox, img.width, x0, x1, fx);
            for (int c = 0; c < 3; ++c) {
                const double top = img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx;
                const double bot = img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx;
                const double v = top * (1 - fy) + bot * fy;
                out.at(oy, ox, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
            }
        }
    }
    return out;
}

NormalizedImage normalize(const ImageBuffer& img, const Normalization& norm) {
    for (float s : norm.std) {
        if (!(s > 0.0f)) throw Error(ErrorCode::InvalidArgument, "normalization std must be positive");
    }
    NormalizedImage out{img.width, img.height, Matrix(static_cast<std::size_t>(img.width) * img.height, 3)};
    auto dst = out.pixels.data();
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const int c = static_cast<int>(i % 3);
        dst[i] = static_cast<float>((img.pixels[i] / 255.0 - norm.mean[c]) / norm.std[c]);
    }
    return out;
}

PatchMatrix patchify(const NormalizedImage& img, int patch_size) {
    if (patch_size < 1) throw Error(ErrorCode::InvalidArgument, "patch size must be >= 1");
    if (img.width != img.height) {
        throw Error(ErrorCode::DimensionMismatch, "patchify needs a square image, got " +
                                                      std::to_string(img.width) + "x" + std::to_string(img.height));
    }
    const int side = img.width;
    if (side % patch_size != 0) {
        throw Error(ErrorCode::IndivisibleSide, "image side " + std::to_string(side) +
                                                    " is not divisible by patch size " + std::to_string(patch_size));
    }
    const int grid = side / patch_size;
    const std::size_t dim = 3 * static_cast<std::size_t>(patch_size) * patch_size;
    PatchMatrix out{grid, patch_size, Matrix(static_cast<std::size_t>(grid) * grid, dim), {}};
    out.origins.reserve(static_cast<std::size_t>(grid) * grid);
    for (int gr = 0; gr < grid; ++gr) {
        for (int gc = 0; gc < grid; ++gc) {
            const std::size_t n = static_cast<std::size_t>(gr) * grid + gc;
            out.origins.push_back({gr * patch_size, gc * patch_size});
            auto dst = out.vectors.row(n).begin();
            for (int r = 0; r < patch_size; ++r) {
                const std::size_t pixel = static_cast<std::size_t>(gr * patch_size + r) * side + gc * patch_size;
                auto src = img.pixels.data().subspan(pixel * 3, static_cast<std::size_t>(patch_size) * 3);
                dst = std::copy(src.begin(), src.end(), dst);
            }
        }
    }
    return out;
}

NormalizedImage unpatchify(const PatchMatrix& patches) {
    const int p = patches.patch_size, side = patches.grid_side * p;
    NormalizedImage out{side, side, Matrix(static_cast<std::size_t>(side) * side, 3)};
    for (std::size_t n = 0; n < patches.origins.size(); ++n) {
        const auto [r0, c0] = patches.origins[n];
        auto src = patches.vectors.row(n);
        for (int r = 0; r < p; ++r) {
            const std::size_t pixel = static_cast<std::size_t>(r0 + r) * side + c0;
            auto s = src.subspan(static_cast<std::size_t>(r) * p * 3, static_cast<std::size_t>(p) * 3);
            std::copy(s.begin(), s.end(), out.pixels.data().begin() + pixel * 3);
        }
    }
    return out;
}

}  // namespace vitlens
