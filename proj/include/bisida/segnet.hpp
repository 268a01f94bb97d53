#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "bisida/image.hpp"
#include "bisida/layers.hpp"

namespace bisida {

// Fully convolutional segmenter: a three-stage trunk (two 2x max pools),
// a 1x1 class head at 1/4 resolution, a 1x1 skip head on the 1/2-resolution
// stage, and nearest-upsample fusion back to full resolution.
struct SegNet {
    ParamSet params;
    std::size_t num_classes = 0;
    std::size_t width = 16;
};

inline SegNet build_segnet(std::size_t num_classes, std::uint64_t seed, std::size_t width = 16)
{
    if (num_classes < 2) throw ValidationError("build_segnet: need at least 2 classes");
    if (width == 0) throw ValidationError("build_segnet: width must be positive");
    RngStream rng(seed, "init/segnet");
    SegNet net;
    net.num_classes = num_classes;
    net.width = width;
    add_conv(net.params, "conv1", 3, width, 3, rng);
    add_conv(net.params, "conv2", width, 2 * width, 3, rng);
    add_conv(net.params, "conv3", 2 * width, 4 * width, 3, rng);
    add_conv(net.params, "head", 4 * width, num_classes, 1, rng);
    add_conv(net.params, "skip", 2 * width, num_classes, 1, rng);
    return net;
}

// Zeroes the class and skip heads: the net then predicts 1/C everywhere until
// the heads learn, so an untrained teacher emits no confident pseudo-labels.
inline void zero_heads(SegNet& net)
{
    for (const char* name : {"head.weight", "head.bias", "skip.weight", "skip.bias"}) {
        auto& t = net.params.at(name);
        std::fill(t.data().begin(), t.data().end(), 0.0f);
    }
}

// Copies conv1..conv3 from a pretrained encoder whose stages are named
// enc1..enc3 with the same geometry.
inline void init_trunk_from_encoder(SegNet& net, const ParamSet& encoder)
{
    for (int i = 1; i <= 3; ++i) {
        for (const char* suffix : {".weight", ".bias"}) {
            const std::string from = "enc" + std::to_string(i) + suffix;
            auto& dst = net.params.at("conv" + std::to_string(i) + suffix);
            const auto& src = encoder.at(from);
            if (src.dims() != dst.dims()) {
                throw ShapeError("init_trunk_from_encoder: '" + from + "' has dims " + to_string(src.dims()) +
                                 ", trunk expects " + to_string(dst.dims()));
            }
            dst.data() = src.data();
        }
    }
}

inline void require_segmentable(const Shape& d)
{
    if (d.size() != 4 || d[1] != 3) throw ShapeError("segnet: expected Nx3xHxW input, got " + to_string(d));
    if (d[2] % 4 != 0 || d[3] % 4 != 0) {
        throw ShapeError("segnet: spatial dims must be divisible by 4, got " + to_string(d));
    }
}

inline Var<float> seg_logits(const Bound& p, Var<float> x)
{
    require_segmentable(x.dims());
    auto half = maxpool2(relu(p.conv("conv1", x, 1)));
    auto mid = relu(p.conv("conv2", half, 1));
    auto deep = relu(p.conv("conv3", maxpool2(mid), 1));
    auto coarse = upsample_nearest2(p.conv("head", deep, 0));
    return upsample_nearest2(add(coarse, p.conv("skip", mid, 0)));
}

// Per-pixel class distribution for a batch; gradients reach net.params.
inline Var<float> seg_forward(Graph<float>& g, SegNet& net, Var<float> x)
{
    return softmax_channels(seg_logits(Bound::trainable(g, net.params), x));
}

// Inference-only probability map.
inline TensorF seg_probs(const SegNet& net, const TensorF& images)
{
    Graph<float> g;
    auto x = g.constant(TensorF(images.dims(), images.data()));
    return softmax_channels(seg_logits(Bound::frozen(g, net.params), x)).value();
}

// Per-pixel argmax (first index on ties) of a 1xCxHxW probability map.
inline LabelMap argmax_labels(const TensorF& probs, std::size_t n = 0)
{
    const std::size_t c = probs.dim(1), h = probs.dim(2), w = probs.dim(3), hw = h * w;
    LabelMap out(h, w);
    const float* base = probs.data().data() + n * c * hw;
    for (std::size_t k = 0; k < hw; ++k) {
        std::size_t best = 0;
        for (std::size_t ch = 1; ch < c; ++ch) {
            if (base[ch * hw + k] > base[best * hw + k]) best = ch;
        }
        out.labels[k] = static_cast<std::uint8_t>(best);
    }
    return out;
}

inline LabelMap seg_predict(const SegNet& net, const Image& image)
{
    return argmax_labels(seg_probs(net, to_tensor(image)));
}

}  // namespace bisida
