#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "bisida/styler.hpp"
#include "bisida/toy_domains.hpp"

using namespace bisida;

namespace {

TensorD random_d(const Shape& dims, std::uint64_t seed, double lo = -1.0, double hi = 1.0)
{
    RngStream rng(seed, "test");
    TensorD t(dims);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed)
{
    RngStream rng(seed, "image");
    Image img(h, w);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    return img;
}

// Per-plane mean and sqrt(var + eps) in double, independent of the graph ops.
std::pair<std::vector<double>, std::vector<double>> moments(const TensorD& t, double eps)
{
    const std::size_t planes = t.dim(0) * t.dim(1), hw = t.dim(2) * t.dim(3);
    std::vector<double> mu(planes), sd(planes);
    for (std::size_t p = 0; p < planes; ++p) {
        double s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += t[p * hw + i];
        mu[p] = s / double(hw);
        double v = 0;
        for (std::size_t i = 0; i < hw; ++i) v += (t[p * hw + i] - mu[p]) * (t[p * hw + i] - mu[p]);
        sd[p] = std::sqrt(v / double(hw) + eps);
    }
    return {mu, sd};
}

double max_abs_diff(const Image& a, const Image& b)
{
    double m = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, double(std::abs(a.pixels[i] - b.pixels[i])));
    return m;
}

}  // namespace

TEST(Adain, SelfStyleIsIdentity)
{
    const auto t = random_d({1, 4, 5, 6}, 1, -3.0, 3.0);
    Graph<double> g;
    const auto out = adain(g.constant(t), g.constant(t), kMomentEpsilon).value();
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(out[i], t[i], 1e-5);
}

TEST(Adain, StandardizedContentMapsAffinely)
{
    // Content with mu 0 and sqrt(var + eps) = 1; style with mu 5 and sigma ~ 2.
    auto z = random_d({1, 1, 6, 6}, 2);
    auto [mu, sd] = moments(z, 0.0);
    const double scale_to = std::sqrt(1.0 - kMomentEpsilon) / sd[0];
    for (auto& v : z.data()) v = (v - mu[0]) * scale_to;
    TensorD style(z.dims());
    for (std::size_t i = 0; i < z.size(); ++i) style[i] = 2.0 * z[i] + 5.0;
    Graph<double> g;
    const auto out = adain(g.constant(z), g.constant(style), kMomentEpsilon).value();
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(out[i], 2.0 * z[i] + 5.0, 1e-4);
}

TEST(Adain, OutputMomentsMatchStyleOverHundredPairs)
{
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto c = random_d({2, 3, 5, 4}, 2 * seed, -2.0, 2.0);
        auto s = random_d({2, 3, 3, 7}, 2 * seed + 1, -1.0, 1.0);
        for (auto& v : s.data()) v = 3.0 * v + 1.5;
        Graph<double> g;
        const auto out = adain(g.constant(c), g.constant(s), kMomentEpsilon).value();
        ASSERT_EQ(out.dims(), c.dims());
        const auto [mo, so] = moments(out, kMomentEpsilon);
        const auto [ms, ss] = moments(s, kMomentEpsilon);
        for (std::size_t p = 0; p < mo.size(); ++p) {
            EXPECT_NEAR(mo[p], ms[p], 1e-4);
            EXPECT_NEAR(so[p], ss[p], 1e-4);
        }
    }
}

TEST(Adain, ChannelMismatchRejected)
{
    Graph<float> g;
    EXPECT_THROW(adain(g.constant(TensorF({1, 3, 4, 4})), g.constant(TensorF({1, 4, 4, 4})), kMomentEpsilon),
                 ShapeError);
}

TEST(StylerNet, EncoderAndDecoderGeometry)
{
    const auto net = build_styler(3);
    Graph<float> g;
    const auto enc = Bound::frozen(g, net.encoder);
    const auto dec = Bound::frozen(g, net.decoder);
    const auto x = g.constant(to_tensor(random_image(12, 20, 1)));
    const auto f = encode(enc, x);
    EXPECT_EQ(f.stage3.dims(), (Shape{1, 64, 3, 5}));
    EXPECT_EQ(decode(dec, f.stage3).dims(), x.dims());
    EXPECT_THROW(encode(enc, g.constant(to_tensor(random_image(10, 12, 1)))), ShapeError);
}

TEST(Generate, AlphaZeroIsReconstructionPath)
{
    const auto net = build_styler(5);
    const auto c = random_image(16, 16, 1), s = random_image(20, 12, 2);
    EXPECT_EQ(generate(c, s, 0.0, net), reconstruct(c, net));
}

TEST(Generate, AlphaOneIsDecodedAdain)
{
    const auto net = build_styler(5);
    const auto c = random_image(16, 16, 1), s = random_image(8, 24, 2);
    Graph<float> g;
    const auto enc = Bound::frozen(g, net.encoder);
    const auto dec = Bound::frozen(g, net.decoder);
    const auto t = adain(encode(enc, g.constant(to_tensor(c))).stage3, encode(enc, g.constant(to_tensor(s))).stage3,
                         net.epsilon);
    const auto expected = image_from_tensor(clip(decode(dec, t), 0.0, 1.0).value());
    EXPECT_EQ(generate(c, s, 1.0, net), expected);
}

TEST(Generate, UnitRangeDimsAndDeterminism)
{
    const auto net = build_styler(6);
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{4, 4}, {8, 16}, {24, 12}}) {
        const auto c = random_image(h, w, h), s = random_image(16, 16, w);
        const auto out = generate(c, s, 0.6, net);
        EXPECT_EQ(out.height, h);
        EXPECT_EQ(out.width, w);
        for (float v : out.pixels) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
        }
        EXPECT_EQ(out, generate(c, s, 0.6, net));
    }
}

TEST(Generate, AlphaOutsideUnitIntervalRejected)
{
    const auto net = build_styler(1);
    const auto c = random_image(8, 8, 1);
    EXPECT_THROW(generate(c, c, -0.01, net), ValidationError);
    EXPECT_THROW(generate(c, c, 1.01, net), ValidationError);
}

TEST(Generate, ContinuousInAlpha)
{
    const auto net = build_styler(8);
    const auto c = random_image(16, 16, 3), s = random_image(16, 16, 4);
    for (double a : {0.1, 0.5, 0.8}) {
        const auto base = generate(c, s, a, net);
        const double coarse = max_abs_diff(base, generate(c, s, a + 1e-2, net));
        const double fine = max_abs_diff(base, generate(c, s, a + 1e-3, net));
        EXPECT_LE(fine, coarse);
        EXPECT_LE(fine, 0.5 * coarse + 1e-6);
    }
}

TEST(StylerLoss, VanishesForPerfectDecoderAndMatchingMoments)
{
    const auto net = build_styler(2);
    const auto s = random_image(16, 16, 7);
    Graph<float> g;
    const auto enc = Bound::frozen(g, net.encoder);
    const auto x = g.constant(to_tensor(s));
    const auto sf = encode(enc, x);
    const auto loss = styler_loss_for_output(enc, x, sf.stage3, sf, net.epsilon, StylerLossWeights{1.0});
    EXPECT_EQ(loss.total.value()[0], 0.0f);
}

TEST(StylerLoss, ZeroStyleWeightIsContentOnly)
{
    auto net = build_styler(2);
    const auto c = random_image(16, 16, 1), s = random_image(16, 16, 2);
    Graph<float> g;
    const auto loss = styler_loss(g, c, s, net, StylerLossWeights{0.0});
    EXPECT_EQ(loss.total.value()[0], static_cast<float>(loss.content));
    EXPECT_GT(loss.style, 0.0);
}

TEST(StylerLoss, FinitePositiveAndDecoderOnlyGradients)
{
    auto net = build_styler(4);
    net.encoder.set_trainable(false);
    const auto c = random_image(16, 16, 1), s = random_image(16, 16, 2);
    Graph<float> g;
    const auto loss = styler_loss(g, c, s, net, StylerLossWeights{});
    const float v = loss.total.value()[0];
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GT(v, 0.0f);
    g.backward(loss.total);
    for (const auto& p : net.encoder.entries()) EXPECT_TRUE(p.tensor.grad().empty()) << p.name;
    bool any = false;
    for (const auto& p : net.decoder.entries())
        for (float gv : p.tensor.grad()) any = any || gv != 0.0f;
    EXPECT_TRUE(any);
}

TEST(StylerLoss, StyleTermIsChannelSumOfSquaredMomentGaps)
{
    auto net = build_styler(4, 2);
    const auto c = random_image(8, 8, 1), s = random_image(8, 8, 2);
    Graph<float> g;
    const auto loss = styler_loss(g, c, s, net, StylerLossWeights{0.5});

    Graph<double> gd;
    auto conv = [&](const char* layer, Var<double> x) {
        const auto& w = net.encoder.at(std::string(layer) + ".weight");
        const auto& b = net.encoder.at(std::string(layer) + ".bias");
        return relu(conv2d(x, gd.constant(w.cast<double>()), gd.constant(b.cast<double>()), 1, 1));
    };
    auto stages = [&](const Image& img) {
        auto s1 = conv("enc1", gd.constant(to_tensor(img).cast<double>()));
        auto s2 = conv("enc2", maxpool2(s1));
        auto s3 = conv("enc3", maxpool2(s2));
        return std::array<Var<double>, 3>{s1, s2, s3};
    };
    Graph<float> gf;
    const auto enc = Bound::frozen(gf, net.encoder);
    const auto dec = Bound::frozen(gf, net.decoder);
    const auto tc = encode(enc, gf.constant(to_tensor(c))).stage3;
    const auto ts = encode(enc, gf.constant(to_tensor(s))).stage3;
    const auto out = image_from_tensor(decode(dec, adain(tc, ts, net.epsilon)).value());
    const auto so = stages(out), ss = stages(s);
    double style = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const auto [mo, sdo] = moments(so[i].value(), kMomentEpsilon);
        const auto [ms, sds] = moments(ss[i].value(), kMomentEpsilon);
        for (std::size_t k = 0; k < mo.size(); ++k) {
            style += (mo[k] - ms[k]) * (mo[k] - ms[k]) + (sdo[k] - sds[k]) * (sdo[k] - sds[k]);
        }
    }
    EXPECT_NEAR(loss.style, style, 1e-3 * std::max(1.0, style));
}

TEST(TrainStyler, ZeroStepsLeavesNetUnchanged)
{
    auto net = build_styler(1, 4);
    const auto before = net;
    std::vector<Image> a{random_image(16, 16, 1)}, b{random_image(16, 16, 2)};
    OptimState opt;
    RngStream rng(1, "styler");
    net.encoder.set_trainable(false);
    EXPECT_TRUE(train_styler(a, b, net, opt, 0, 16, {}, rng).empty());
    EXPECT_TRUE(net.encoder.same_values(before.encoder));
    EXPECT_TRUE(net.decoder.same_values(before.decoder));
    EXPECT_THROW(train_styler({}, b, net, opt, 1, 16, {}, rng), ValidationError);
}

TEST(TrainStyler, LossFallsAndEncoderStaysFrozen)
{
    auto net = build_styler(3, 4);
    std::vector<Image> a, b;
    RngStream gen(3, "scenes");
    for (int i = 0; i < 8; ++i) {
        a.push_back(generate_scene(synth_a(), 24, 24, gen).image);
        b.push_back(generate_scene(real_b(), 24, 24, gen).image);
    }
    std::vector<Image> pool = a;
    pool.insert(pool.end(), b.begin(), b.end());
    RngStream rng(3, "styler");
    OptimConfig oc;
    oc.learning_rate = 3e-3;
    {
        OptimState pre(oc);
        pretrain_autoencoder(pool, net, pre, 200, 16, rng);
    }
    const auto encoder = net.encoder;
    OptimState opt(oc);
    const auto rec = train_styler(a, b, net, opt, 300, 16, StylerLossWeights{}, rng);
    ASSERT_EQ(rec.size(), 300u);
    double first = 0, last = 0;
    for (std::size_t i = 0; i < 50; ++i) {
        first += rec[i].loss;
        last += rec[rec.size() - 1 - i].loss;
    }
    EXPECT_LT(last, first);
    EXPECT_TRUE(net.encoder.same_values(encoder));
}

TEST(Psnr, StandardDefinition)
{
    Image a(4, 4, 0.5f), b(4, 4, 0.6f);
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-5);
    EXPECT_TRUE(std::isinf(psnr(a, a)));
    EXPECT_THROW(psnr(a, Image(4, 8)), ShapeError);
}
