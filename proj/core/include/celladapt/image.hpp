#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace celladapt {

/// Single-channel image, row-major float storage. Intensity values live on
/// the 0..255 scale everywhere outside of network internals.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w, float fill = 0.0f)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    float& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    float at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Affine min-max rescale to [0, 255]; a constant image maps to all zeros.
Image normalize_image(const Image& img);

/// 8-bit lossless image round-trips (PNG). Values are clamped to [0, 255]
/// and rounded on save. Throws DataError on I/O failure.
Image load_image_u8(const std::string& path);
void save_image_u8(const Image& img, const std::string& path);

} // namespace celladapt
