#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bisida/error.hpp"
#include "bisida/tensor.hpp"

namespace bisida {

// RGB image with values in [0, 1], stored channel-planar (R plane, G plane,
// B plane) so that it maps onto a 1x3xHxW tensor without reordering.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(3 * h * w, fill) {}

    float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

    bool operator==(const Image&) const = default;
};

// Per-pixel class indices.
struct LabelMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> labels;

    LabelMap() = default;
    LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}

    std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }

    bool operator==(const LabelMap&) const = default;
};

inline TensorF to_tensor(std::span<const Image> batch)
{
    if (batch.empty()) throw ValidationError("to_tensor: empty batch");
    const std::size_t h = batch[0].height, w = batch[0].width;
    TensorF t(Shape{batch.size(), 3, h, w});
    for (std::size_t n = 0; n < batch.size(); ++n) {
        if (batch[n].height != h || batch[n].width != w) throw ShapeError("to_tensor: images differ in size");
        std::copy(batch[n].pixels.begin(), batch[n].pixels.end(),
                  t.data().begin() + static_cast<std::ptrdiff_t>(n * 3 * h * w));
    }
    return t;
}

inline TensorF to_tensor(const Image& img) { return to_tensor(std::span<const Image>(&img, 1)); }

inline Image image_from_tensor(const TensorF& t, std::size_t n = 0)
{
    if (t.rank() != 4 || t.dim(1) != 3) throw ShapeError("image_from_tensor: expected Nx3xHxW, got " + to_string(t.dims()));
    Image img(t.dim(2), t.dim(3));
    const std::size_t len = img.pixels.size();
    std::copy(t.data().begin() + static_cast<std::ptrdiff_t>(n * len),
              t.data().begin() + static_cast<std::ptrdiff_t>((n + 1) * len), img.pixels.begin());
    return img;
}

}  // namespace bisida
