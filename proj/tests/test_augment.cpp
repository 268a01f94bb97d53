#include <gtest/gtest.h>

#include <set>

#include "bisida/augment.hpp"
#include "bisida/toy_domains.hpp"

using namespace bisida;

namespace {

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed)
{
    RngStream rng(seed, "image");
    Image img(h, w);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    return img;
}

}  // namespace

TEST(RngStream, SeededNamedAndReplayable)
{
    RngStream a(7, "data"), b(7, "data"), c(7, "augment"), d(8, "data");
    bool differs_name = false, differs_seed = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next();
        EXPECT_EQ(x, b.next());
        differs_name = differs_name || x != c.next();
        differs_seed = differs_seed || x != d.next();
    }
    EXPECT_TRUE(differs_name);
    EXPECT_TRUE(differs_seed);
    EXPECT_EQ(a.counter(), 100u);
}

TEST(RngStream, SampleDistinctAndIndexRange)
{
    RngStream r(1, "pick");
    for (int t = 0; t < 200; ++t) {
        const auto s = r.sample_distinct(10, 4);
        ASSERT_EQ(s.size(), 4u);
        EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 4u);
        for (auto v : s) EXPECT_LT(v, 10u);
        EXPECT_LT(r.index(3), 3u);
    }
}

TEST(ColorPerturb, CollapsedRangesAreIdentity)
{
    const auto img = random_image(8, 12, 1);
    RngStream rng(1, "augment");
    EXPECT_EQ(color_perturb(img, ColorJitterSpec::identity(), rng), img);
}

TEST(ColorPerturb, StaysInUnitRangeAndIsDeterministic)
{
    const auto img = random_image(16, 16, 2);
    ColorJitterSpec wide{0.2, 3.0, -0.8, 0.8, true};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        RngStream r1(seed, "augment"), r2(seed, "augment");
        const auto a = color_perturb(img, wide, r1);
        for (float v : a.pixels) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
        }
        EXPECT_EQ(a, color_perturb(img, wide, r2));
    }
}

TEST(ColorPerturb, PerChannelAffineWithinRanges)
{
    Image img(2, 2);
    for (std::size_t c = 0; c < 3; ++c) {
        img.at(c, 0, 0) = 0.25f;
        img.at(c, 0, 1) = 0.5f;
    }
    const ColorJitterSpec spec;
    RngStream rng(3, "augment");
    const auto out = color_perturb(img, spec, rng);
    for (std::size_t c = 0; c < 3; ++c) {
        const double a = (out.at(c, 0, 1) - out.at(c, 0, 0)) / 0.25;
        const double b = out.at(c, 0, 0) - a * 0.25;
        EXPECT_GE(a, spec.gain_lo - 1e-5);
        EXPECT_LE(a, spec.gain_hi + 1e-5);
        EXPECT_GE(b, spec.shift_lo - 1e-5);
        EXPECT_LE(b, spec.shift_hi + 1e-5);
    }
    ColorJitterSpec shared = spec;
    shared.per_channel = false;
    const auto same = color_perturb(img, shared, rng);
    EXPECT_EQ(same.at(0, 0, 1), same.at(2, 0, 1));
}

TEST(ColorPerturb, RangesMustContainIdentity)
{
    const auto img = random_image(4, 4, 1);
    RngStream rng(1, "augment");
    EXPECT_THROW(color_perturb(img, ColorJitterSpec{1.1, 1.2, -0.1, 0.1, true}, rng), ValidationError);
    EXPECT_THROW(color_perturb(img, ColorJitterSpec{0.8, 1.2, 0.1, 0.2, true}, rng), ValidationError);
}

TEST(RandomCrop, FullSizeIsIdentity)
{
    RngStream gen(1, "scene");
    const auto s = generate_scene(synth_a(), 16, 24, gen);
    RngStream rng(1, "crop");
    const auto c = random_crop(s.image, &s.label, 16, 24, rng);
    EXPECT_EQ(c.image, s.image);
    EXPECT_EQ(*c.label, s.label);
}

TEST(RandomCrop, SameWindowForImageAndLabel)
{
    RngStream gen(2, "scene");
    const auto s = generate_scene(synth_a(), 32, 32, gen);
    RngStream rng(2, "crop");
    for (int t = 0; t < 20; ++t) {
        const auto c = random_crop(s.image, &s.label, 16, 20, rng);
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 20; ++x) {
                EXPECT_EQ(c.label->at(y, x), s.label.at(y + c.offset_y, x + c.offset_x));
                for (std::size_t ch = 0; ch < 3; ++ch)
                    EXPECT_EQ(c.image.at(ch, y, x), s.image.at(ch, y + c.offset_y, x + c.offset_x));
            }
    }
}

TEST(RandomCrop, OffsetsUniformChiSquare)
{
    const Image img(96, 96);
    RngStream rng(7, "crop");
    const std::size_t n = 10000, side = 33;
    std::vector<double> joint(side * side, 0.0), ys(side, 0.0), xs(side, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = random_crop(img, nullptr, 64, 64, rng);
        ASSERT_LE(c.offset_y, 32u);
        ASSERT_LE(c.offset_x, 32u);
        joint[c.offset_y * side + c.offset_x] += 1;
        ys[c.offset_y] += 1;
        xs[c.offset_x] += 1;
    }
    auto chi2 = [](const std::vector<double>& counts, double expected) {
        double s = 0;
        for (double o : counts) s += (o - expected) * (o - expected) / expected;
        return s;
    };
    // Mean + 5 standard deviations of the chi-square null distribution.
    EXPECT_LT(chi2(joint, double(n) / (side * side)), 1088 + 5 * std::sqrt(2.0 * 1088));
    EXPECT_LT(chi2(ys, double(n) / side), 32 + 5 * 8);
    EXPECT_LT(chi2(xs, double(n) / side), 32 + 5 * 8);
    for (double c : ys) EXPECT_GT(c, 0.0);
}

TEST(RandomCrop, ErrorPaths)
{
    const Image img(16, 16);
    RngStream rng(1, "crop");
    EXPECT_THROW(random_crop(img, nullptr, 20, 16, rng), ValidationError);
    EXPECT_THROW(random_crop(img, nullptr, 10, 12, rng), ValidationError);
    const LabelMap lab(8, 8);
    EXPECT_THROW(random_crop(img, &lab, 8, 8, rng), ShapeError);
}

TEST(Augment, JitterCommutesWithCrop)
{
    RngStream gen(5, "scene");
    const auto s = generate_scene(real_b(), 32, 32, gen);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        RngStream j1(seed, "augment"), j2(seed, "augment"), c1(seed, "crop"), c2(seed, "crop");
        const auto a = random_crop(color_perturb(s.image, ColorJitterSpec{}, j1), &s.label, 16, 16, c1);
        const auto jitter_after = color_perturb(random_crop(s.image, &s.label, 16, 16, c2).image, ColorJitterSpec{}, j2);
        EXPECT_EQ(a.image, jitter_after);
    }
}

TEST(Augment, LabelsNeverTouched)
{
    RngStream gen(6, "scene");
    const auto s = generate_scene(synth_a(), 16, 16, gen);
    RngStream rng(6, "crop");
    const auto c = random_crop(color_perturb(s.image, ColorJitterSpec{}, rng), &s.label, 16, 16, rng);
    EXPECT_EQ(*c.label, s.label);
}
