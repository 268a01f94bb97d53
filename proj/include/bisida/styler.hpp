#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "bisida/augment.hpp"
#include "bisida/image.hpp"
#include "bisida/layers.hpp"

namespace bisida {

inline constexpr double kMomentEpsilon = 1e-5;

// Continuous style-induced image generator: encoder f (three conv stages,
// two 2x max pools, 3 -> w -> 2w -> 4w channels), decoder g mirroring it
// with nearest upsampling, and AdaIN in between.
struct StylerNet {
    ParamSet encoder;
    ParamSet decoder;
    double epsilon = kMomentEpsilon;
    std::size_t width = 16;
};

struct StylerLossWeights {
    double style_weight = 0.1;
};

inline StylerNet build_styler(std::uint64_t seed, std::size_t width = 16)
{
    if (width == 0) throw ValidationError("build_styler: width must be positive");
    RngStream rng(seed, "init/styler");
    StylerNet net;
    net.width = width;
    add_conv(net.encoder, "enc1", 3, width, 3, rng);
    add_conv(net.encoder, "enc2", width, 2 * width, 3, rng);
    add_conv(net.encoder, "enc3", 2 * width, 4 * width, 3, rng);
    add_conv(net.decoder, "dec1", 4 * width, 2 * width, 3, rng);
    add_conv(net.decoder, "dec2", 2 * width, width, 3, rng);
    add_conv(net.decoder, "dec3", width, width, 3, rng);
    add_conv(net.decoder, "dec4", width, 3, 3, rng);
    return net;
}

struct EncoderFeatures {
    Var<float> stage1;  // full resolution
    Var<float> stage2;  // 1/2
    Var<float> stage3;  // 1/4, the AdaIN feature map
};

inline EncoderFeatures encode(const Bound& enc, Var<float> x)
{
    const Shape& d = x.dims();
    if (d.size() != 4 || d[1] != 3 || d[2] % 4 != 0 || d[3] % 4 != 0) {
        throw ShapeError("styler: expected Nx3xHxW input with H, W divisible by 4, got " + to_string(d));
    }
    EncoderFeatures f;
    f.stage1 = relu(enc.conv("enc1", x, 1));
    f.stage2 = relu(enc.conv("enc2", maxpool2(f.stage1), 1));
    f.stage3 = relu(enc.conv("enc3", maxpool2(f.stage2), 1));
    return f;
}

inline Var<float> decode(const Bound& dec, Var<float> t)
{
    auto x = upsample_nearest2(relu(dec.conv("dec1", t, 1)));
    x = upsample_nearest2(relu(dec.conv("dec2", x, 1)));
    x = relu(dec.conv("dec3", x, 1));
    return dec.conv("dec4", x, 1);
}

// sigma(s) * (c - mu(c)) / sigma(c) + mu(s), per (n, channel), keeping c's spatial dims.
template <typename T>
Var<T> adain(Var<T> content, Var<T> style, double epsilon)
{
    const Shape& cd = content.dims();
    const Shape& sd = style.dims();
    if (cd.size() != 4 || sd.size() != 4) throw ShapeError("adain: expected NCHW feature maps");
    if (cd[1] != sd[1]) {
        throw ShapeError("adain: channel mismatch " + std::to_string(cd[1]) + " vs " + std::to_string(sd[1]));
    }
    if (cd[0] != sd[0]) throw ShapeError("adain: batch mismatch");
    const std::size_t h = cd[2], w = cd[3];
    const auto mc = channel_moments(content, epsilon);
    const auto ms = channel_moments(style, epsilon);
    auto normalized = mul(sub(content, broadcast_channels(mc.mu, h, w)),
                          broadcast_channels(pow_scalar(mc.sigma, -1.0), h, w));
    return add(mul(normalized, broadcast_channels(ms.sigma, h, w)), broadcast_channels(ms.mu, h, w));
}

// clip(g(alpha * adain(f(c), f(s)) + (1 - alpha) * f(c)), 0, 1).
inline Image generate(const Image& content, const Image& style, double alpha, const StylerNet& net)
{
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("generate: alpha must lie in [0, 1]");
    Graph<float> g;
    const auto enc = Bound::frozen(g, net.encoder);
    const auto dec = Bound::frozen(g, net.decoder);
    const auto tc = encode(enc, g.constant(to_tensor(content))).stage3;
    const auto ts = encode(enc, g.constant(to_tensor(style))).stage3;
    const auto mixed = add(scale(adain(tc, ts, net.epsilon), alpha), scale(tc, 1.0 - alpha));
    return image_from_tensor(clip(decode(dec, mixed), 0.0, 1.0).value());
}

// clip(g(f(c)), 0, 1): the pure reconstruction path.
inline Image reconstruct(const Image& content, const StylerNet& net)
{
    Graph<float> g;
    const auto enc = Bound::frozen(g, net.encoder);
    const auto dec = Bound::frozen(g, net.decoder);
    const auto tc = encode(enc, g.constant(to_tensor(content))).stage3;
    return image_from_tensor(clip(decode(dec, tc), 0.0, 1.0).value());
}

struct StylerLoss {
    Var<float> total;
    double content = 0.0;
    double style = 0.0;
};

inline Var<float> mean_square(Var<float> a, Var<float> b)
{
    auto d = sub(a, b);
    return mean(mul(d, d));
}

// Squared Euclidean norm of the difference of two {N, C} moment tensors,
// averaged over the batch.
inline Var<float> moment_distance(Var<float> a, Var<float> b)
{
    auto d = sub(a, b);
    return scale(sum(mul(d, d)), 1.0 / static_cast<double>(a.dims()[0]));
}

// Loss for an already decoded output:
//   mean((f(out) - target)^2) + w * sum_stages [|mu - mu_s|^2 + |sigma - sigma_s|^2]
// where target is the AdaIN feature map, the style moments come from s and
// |.|^2 is the squared norm over channels.
inline StylerLoss styler_loss_for_output(const Bound& enc, Var<float> output, Var<float> target,
                                         const EncoderFeatures& style_features, double epsilon,
                                         const StylerLossWeights& w)
{
    if (!(w.style_weight >= 0.0)) throw ValidationError("styler loss: style weight must be non-negative");
    const auto out_features = encode(enc, output);
    auto content = mean_square(out_features.stage3, target);
    const Var<float> out_stages[] = {out_features.stage1, out_features.stage2, out_features.stage3};
    const Var<float> style_stages[] = {style_features.stage1, style_features.stage2, style_features.stage3};
    Var<float> style{};
    for (std::size_t i = 0; i < 3; ++i) {
        const auto mo = channel_moments(out_stages[i], epsilon);
        const auto ms = channel_moments(style_stages[i], epsilon);
        auto term = add(moment_distance(mo.mu, ms.mu), moment_distance(mo.sigma, ms.sigma));
        style = i == 0 ? term : add(style, term);
    }
    StylerLoss loss;
    loss.content = content.value()[0];
    loss.style = style.value()[0];
    loss.total = add(content, scale(style, w.style_weight));
    return loss;
}

// Generator training objective on one (content, style) pair. The encoder is
// read as a constant; only the decoder receives gradients.
inline StylerLoss styler_loss(Graph<float>& g, const Image& content, const Image& style, StylerNet& net,
                              const StylerLossWeights& w)
{
    const auto enc_frozen = Bound::frozen(g, net.encoder);
    const auto dec = Bound::trainable(g, net.decoder);
    const auto tc = encode(enc_frozen, g.constant(to_tensor(content))).stage3;
    const auto sf = encode(enc_frozen, g.constant(to_tensor(style)));
    const auto target = adain(tc, sf.stage3, net.epsilon);
    const auto output = decode(dec, target);
    return styler_loss_for_output(enc_frozen, output, target, sf, net.epsilon, w);
}

struct StylerRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double content = 0.0;
    double style = 0.0;
};

// Encoder pretraining: encoder and decoder jointly minimize pixel MSE of
// g(f(x)) against x on random crops of the unlabeled pool. The encoder is
// frozen afterwards.
inline std::vector<StylerRecord> pretrain_autoencoder(std::span<const Image> pool, StylerNet& net, OptimState& opt,
                                                      std::size_t steps, std::size_t crop, RngStream& rng)
{
    if (pool.empty()) throw ValidationError("pretrain_autoencoder: empty image pool");
    std::vector<StylerRecord> records;
    net.encoder.set_trainable(true);
    net.decoder.set_trainable(true);
    for (std::size_t s = 0; s < steps; ++s) {
        const auto& src = pool[rng.index(pool.size())];
        const auto cropped = random_crop(src, nullptr, crop, crop, rng).image;
        Graph<float> g;
        const auto enc = Bound::trainable(g, net.encoder);
        const auto dec = Bound::trainable(g, net.decoder);
        const auto x = g.constant(to_tensor(cropped));
        auto loss = mean_square(decode(dec, encode(enc, x).stage3), x);
        g.backward(loss);
        opt.step({&net.encoder, &net.decoder});
        records.push_back({s, loss.value()[0], loss.value()[0], 0.0});
    }
    net.encoder.set_trainable(false);
    return records;
}

// Decoder training on random (content, style) pairs where the style image
// comes from the other domain. The encoder must already be frozen.
inline std::vector<StylerRecord> train_styler(std::span<const Image> domain_a, std::span<const Image> domain_b,
                                              StylerNet& net, OptimState& opt, std::size_t steps, std::size_t crop,
                                              const StylerLossWeights& w, RngStream& rng)
{
    if (domain_a.empty() || domain_b.empty()) throw ValidationError("train_styler: empty dataset");
    net.encoder.set_trainable(false);
    net.decoder.set_trainable(true);
    std::vector<StylerRecord> records;
    for (std::size_t s = 0; s < steps; ++s) {
        const bool a_is_content = rng.bernoulli(0.5);
        const auto& cpool = a_is_content ? domain_a : domain_b;
        const auto& spool = a_is_content ? domain_b : domain_a;
        const auto& c_src = cpool[rng.index(cpool.size())];
        const auto& s_src = spool[rng.index(spool.size())];
        const auto c = random_crop(c_src, nullptr, crop, crop, rng).image;
        const auto st = random_crop(s_src, nullptr, crop, crop, rng).image;
        Graph<float> g;
        const auto loss = styler_loss(g, c, st, net, w);
        g.backward(loss.total);
        opt.step(net.decoder);
        records.push_back({s, loss.total.value()[0], loss.content, loss.style});
    }
    net.decoder.set_trainable(false);
    return records;
}

inline double psnr(const Image& a, const Image& b)
{
    if (a.height != b.height || a.width != b.width) throw ShapeError("psnr: image sizes differ");
    double se = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.pixels.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace bisida
