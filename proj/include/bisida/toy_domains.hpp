#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bisida/error.hpp"
#include "bisida/image.hpp"
#include "bisida/rng.hpp"

namespace bisida {

inline constexpr std::size_t kNumClasses = 5;

enum ToyClass : std::uint8_t { kBackground = 0, kStripe = 1, kCircle = 2, kRectangle = 3, kTriangle = 4 };

inline const std::array<std::string, kNumClasses>& class_names()
{
    static const std::array<std::string, kNumClasses> names = {"background", "road-stripe", "circle", "rectangle",
                                                               "triangle"};
    return names;
}

using Rgb = std::array<float, 3>;

// Rendering recipe of one synthetic domain.
struct DomainSpec {
    std::string name;
    std::array<Rgb, kNumClasses> palette{};
    double hue_shift = 0.0;    // rotation (radians) of RGB about the gray axis
    double gamma = 1.0;
    double noise_sigma = 0.0;  // additive Gaussian texture noise
    // Relative odds of circle, rectangle, triangle when placing a shape.
    std::array<double, 3> shape_frequencies{0.4, 0.4, 0.2};

    void validate() const
    {
        if (noise_sigma < 0.0) throw ValidationError("domain spec: noise_sigma must be non-negative");
        if (!(gamma > 0.0)) throw ValidationError("domain spec: gamma must be positive");
        for (std::size_t a = 0; a < kNumClasses; ++a) {
            for (std::size_t b = a + 1; b < kNumClasses; ++b) {
                double d2 = 0.0;
                for (std::size_t c = 0; c < 3; ++c) {
                    const double d = palette[a][c] - palette[b][c];
                    d2 += d * d;
                }
                if (std::sqrt(d2) < 0.15) {
                    throw ValidationError("domain spec: palette entries " + std::to_string(a) + " and " +
                                          std::to_string(b) + " are closer than 0.15");
                }
            }
        }
        double total = 0.0;
        for (double f : shape_frequencies) {
            if (f < 0.0) throw ValidationError("domain spec: negative shape frequency");
            total += f;
        }
        if (!(total > 0.0)) throw ValidationError("domain spec: shape frequencies sum to zero");
    }
};

inline std::array<Rgb, kNumClasses> default_palette()
{
    return {{
        {0.25f, 0.55f, 0.30f},  // background
        {0.55f, 0.55f, 0.60f},  // road-stripe
        {0.90f, 0.20f, 0.20f},  // circle
        {0.20f, 0.30f, 0.90f},  // rectangle
        {0.90f, 0.80f, 0.15f},  // triangle
    }};
}

// Source domain: clean, saturated, noise free.
inline DomainSpec synth_a()
{
    DomainSpec s;
    s.name = "synthA";
    s.palette = default_palette();
    return s;
}

// Target domain: same palette seen through a hue rotation, gamma 1.3 and sensor noise.
inline DomainSpec real_b()
{
    DomainSpec s;
    s.name = "realB";
    s.palette = default_palette();
    s.hue_shift = 0.7;
    s.gamma = 1.3;
    s.noise_sigma = 0.05;
    return s;
}

inline DomainSpec domain_by_name(const std::string& name)
{
    if (name == "synthA") return synth_a();
    if (name == "realB") return real_b();
    throw ValidationError("unknown domain '" + name + "' (expected synthA or realB)");
}

struct Scene {
    Image image;
    LabelMap label;
};

namespace detail {

struct Box {
    std::size_t y0, x0, y1, x1;  // inclusive-exclusive

    bool intersects(const Box& o, std::size_t margin) const
    {
        return !(y1 + margin <= o.y0 || o.y1 + margin <= y0 || x1 + margin <= o.x0 || o.x1 + margin <= x0);
    }
};

inline Rgb rotate_hue(const Rgb& c, double angle)
{
    // Rodrigues rotation about the unit gray axis (1,1,1)/sqrt(3).
    const double k = 1.0 / std::sqrt(3.0);
    const double cs = std::cos(angle), sn = std::sin(angle);
    const double dotk = k * (c[0] + c[1] + c[2]);
    const double cross[3] = {k * (c[2] - c[1]), k * (c[0] - c[2]), k * (c[1] - c[0])};
    Rgb out{};
    for (std::size_t i = 0; i < 3; ++i) {
        out[i] = static_cast<float>(c[i] * cs + cross[i] * sn + k * dotk * (1.0 - cs));
    }
    return out;
}

}  // namespace detail

// Horizontal road stripe plus 2-6 non-overlapping shapes on background. Labels
// are rasterized exactly; hue shift, gamma and noise touch the image only.
inline Scene generate_scene(const DomainSpec& spec, std::size_t h, std::size_t w, RngStream& rng)
{
    spec.validate();
    if (h % 4 != 0 || w % 4 != 0 || h < 16 || w < 16) {
        throw ValidationError("generate_scene: dims must be divisible by 4 and at least 16");
    }
    Scene scene{Image(h, w), LabelMap(h, w, kBackground)};
    const double side = static_cast<double>(std::min(h, w));

    const auto stripe_h = static_cast<std::size_t>(rng.uniform(side / 12.0, side / 6.0));
    const std::size_t stripe_y = rng.index(h - stripe_h + 1);
    const detail::Box stripe{stripe_y, 0, stripe_y + stripe_h, w};
    for (std::size_t y = stripe.y0; y < stripe.y1; ++y) {
        for (std::size_t x = 0; x < w; ++x) scene.label.at(y, x) = kStripe;
    }

    std::vector<detail::Box> placed{stripe};
    const std::size_t wanted = 2 + rng.index(5);
    const double freq_total = spec.shape_frequencies[0] + spec.shape_frequencies[1] + spec.shape_frequencies[2];
    std::size_t shapes = 0;
    for (std::size_t attempt = 0; attempt < 200 && shapes < wanted; ++attempt) {
        const double pick = rng.uniform() * freq_total;
        const ToyClass kind = pick < spec.shape_frequencies[0]                                  ? kCircle
                              : pick < spec.shape_frequencies[0] + spec.shape_frequencies[1] ? kRectangle
                                                                                               : kTriangle;
        std::size_t bh = 0, bw = 0;
        if (kind == kCircle) {
            bh = bw = 2 * static_cast<std::size_t>(rng.uniform(side / 16.0, side / 8.0)) + 1;
        } else if (kind == kRectangle) {
            bh = static_cast<std::size_t>(rng.uniform(side / 10.0, side / 4.0));
            bw = static_cast<std::size_t>(rng.uniform(side / 10.0, side / 4.0));
        } else {
            bw = static_cast<std::size_t>(rng.uniform(side / 10.0, side / 5.0));
            bh = bw;
        }
        bh = std::max<std::size_t>(bh, 3);
        bw = std::max<std::size_t>(bw, 3);
        if (bh >= h || bw >= w) continue;
        const std::size_t y0 = rng.index(h - bh + 1);
        const std::size_t x0 = rng.index(w - bw + 1);
        const detail::Box box{y0, x0, y0 + bh, x0 + bw};
        bool clash = false;
        for (const auto& other : placed) clash = clash || box.intersects(other, 1);
        if (clash) continue;
        placed.push_back(box);
        ++shapes;
        for (std::size_t y = box.y0; y < box.y1; ++y) {
            for (std::size_t x = box.x0; x < box.x1; ++x) {
                const double fy = static_cast<double>(y - box.y0) + 0.5;
                const double fx = static_cast<double>(x - box.x0) + 0.5;
                bool inside = true;
                if (kind == kCircle) {
                    const double r = static_cast<double>(bh) / 2.0;
                    inside = (fy - r) * (fy - r) + (fx - r) * (fx - r) <= r * r;
                } else if (kind == kTriangle) {
                    // apex at top centre, base along the bottom row
                    const double half = static_cast<double>(bw) / 2.0;
                    inside = std::abs(fx - half) <= half * fy / static_cast<double>(bh);
                }
                if (inside) scene.label.at(y, x) = kind;
            }
        }
    }

    std::array<Rgb, kNumClasses> colors = spec.palette;
    if (spec.hue_shift != 0.0) {
        for (auto& c : colors) {
            c = detail::rotate_hue(c, spec.hue_shift);
            for (auto& v : c) v = std::clamp(v, 0.0f, 1.0f);
        }
    }
    const std::size_t plane = h * w;
    for (std::size_t i = 0; i < plane; ++i) {
        const Rgb& c = colors[scene.label.labels[i]];
        for (std::size_t ch = 0; ch < 3; ++ch) {
            float v = c[ch];
            if (spec.gamma != 1.0) v = static_cast<float>(std::pow(static_cast<double>(v), spec.gamma));
            if (spec.noise_sigma > 0.0) {
                v = std::clamp(static_cast<float>(v + spec.noise_sigma * rng.normal()), 0.0f, 1.0f);
            }
            scene.image.pixels[ch * plane + i] = v;
        }
    }
    return scene;
}

// Scenes i = 0..count-1 each use their own stream derived from (seed, domain, i).
inline std::vector<Scene> generate_dataset(const DomainSpec& spec, std::size_t count, std::size_t h, std::size_t w,
                                           std::uint64_t seed, const std::string& split)
{
    std::vector<Scene> out;
    out.reserve(count);
    const RngStream root(seed, "data/" + spec.name + "/" + split);
    for (std::size_t i = 0; i < count; ++i) {
        RngStream rng = root.fork(std::to_string(i));
        out.push_back(generate_scene(spec, h, w, rng));
    }
    return out;
}

// Pixel fraction of each class over a labeled set.
struct ClassPriors {
    std::vector<double> d;

    bool degenerate() const
    {
        for (double v : d) {
            if (v <= 0.0) return true;
        }
        return false;
    }
};

inline ClassPriors class_priors(std::span<const LabelMap> labels, std::size_t num_classes)
{
    if (labels.empty()) throw ValidationError("class_priors: empty dataset");
    std::vector<std::uint64_t> counts(num_classes, 0);
    std::uint64_t total = 0;
    for (const auto& lab : labels) {
        for (std::uint8_t v : lab.labels) {
            if (v >= num_classes) throw ValidationError("class_priors: label " + std::to_string(v) + " out of range");
            ++counts[v];
        }
        total += lab.labels.size();
    }
    ClassPriors p;
    for (auto c : counts) p.d.push_back(static_cast<double>(c) / static_cast<double>(total));
    return p;
}

inline ClassPriors class_priors(std::span<const Scene> scenes, std::size_t num_classes = kNumClasses)
{
    std::vector<LabelMap> labels;
    labels.reserve(scenes.size());
    for (const auto& s : scenes) labels.push_back(s.label);
    return class_priors(std::span<const LabelMap>(labels), num_classes);
}

}  // namespace bisida
