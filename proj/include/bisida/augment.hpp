#pragma once

#include <algorithm>
#include <optional>
#include <utility>

#include "bisida/error.hpp"
#include "bisida/image.hpp"
#include "bisida/rng.hpp"

namespace bisida {

// Photometric jitter: x -> clip(a * x + b, 0, 1) with a ~ U(gain range),
// b ~ U(shift range), drawn per channel or once for all channels.
struct ColorJitterSpec {
    double gain_lo = 0.8;
    double gain_hi = 1.2;
    double shift_lo = -0.1;
    double shift_hi = 0.1;
    bool per_channel = true;

    static ColorJitterSpec identity() { return {1.0, 1.0, 0.0, 0.0, true}; }

    void validate() const
    {
        if (!(gain_lo <= 1.0 && 1.0 <= gain_hi)) throw ValidationError("color jitter: gain range must contain 1");
        if (!(shift_lo <= 0.0 && 0.0 <= shift_hi)) throw ValidationError("color jitter: shift range must contain 0");
    }
};

inline Image color_perturb(const Image& image, const ColorJitterSpec& spec, RngStream& rng)
{
    spec.validate();
    Image out = image;
    const std::size_t plane = image.height * image.width;
    double gain = 1.0, shift = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
        if (c == 0 || spec.per_channel) {
            gain = rng.uniform(spec.gain_lo, spec.gain_hi);
            shift = rng.uniform(spec.shift_lo, spec.shift_hi);
        }
        const auto a = static_cast<float>(gain);
        const auto b = static_cast<float>(shift);
        for (std::size_t i = 0; i < plane; ++i) {
            float& v = out.pixels[c * plane + i];
            v = std::clamp(a * v + b, 0.0f, 1.0f);
        }
    }
    return out;
}

struct Crop {
    Image image;
    std::optional<LabelMap> label;
    std::size_t offset_y = 0;
    std::size_t offset_x = 0;
};

// Same window for image and label. Offsets are uniform over every valid position.
inline Crop random_crop(const Image& image, const LabelMap* label, std::size_t out_h, std::size_t out_w,
                        RngStream& rng)
{
    if (out_h > image.height || out_w > image.width) {
        throw ValidationError("random_crop: crop " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                              " larger than image " + std::to_string(image.height) + "x" +
                              std::to_string(image.width));
    }
    if (out_h % 4 != 0 || out_w % 4 != 0) throw ValidationError("random_crop: crop dims must be divisible by 4");
    if (label != nullptr && (label->height != image.height || label->width != image.width)) {
        throw ShapeError("random_crop: label and image sizes differ");
    }
    Crop crop;
    crop.offset_y = rng.index(image.height - out_h + 1);
    crop.offset_x = rng.index(image.width - out_w + 1);
    crop.image = Image(out_h, out_w);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < out_h; ++y) {
            for (std::size_t x = 0; x < out_w; ++x) {
                crop.image.at(c, y, x) = image.at(c, y + crop.offset_y, x + crop.offset_x);
            }
        }
    }
    if (label != nullptr) {
        LabelMap lab(out_h, out_w);
        for (std::size_t y = 0; y < out_h; ++y) {
            for (std::size_t x = 0; x < out_w; ++x) lab.at(y, x) = label->at(y + crop.offset_y, x + crop.offset_x);
        }
        crop.label = std::move(lab);
    }
    return crop;
}

}  // namespace bisida
