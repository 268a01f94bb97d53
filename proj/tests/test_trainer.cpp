#include <gtest/gtest.h>

#include <cmath>

#include "bisida/trainer.hpp"

using namespace bisida;

namespace {

const ClassPriors kPriors{{0.6, 0.1, 0.1, 0.1, 0.1}};

struct Toy {
    std::vector<Scene> source, target;
    std::vector<Image> source_images, target_images;
};

Toy toy(std::size_t n = 6, std::size_t size = 16)
{
    Toy t;
    t.source = generate_dataset(synth_a(), n, size, size, 1, "src");
    t.target = generate_dataset(real_b(), n, size, size, 1, "tgt");
    for (const auto& s : t.source) t.source_images.push_back(s.image);
    for (const auto& s : t.target) t.target_images.push_back(s.image);
    return t;
}

TrainerState small_state(HyperParams hp = {}, AblationToggles toggles = {}, std::uint64_t seed = 3)
{
    return make_trainer_state(kNumClasses, 4, build_styler(seed, 4), kPriors, hp, toggles, OptimConfig{}, seed);
}

TensorF random_probs(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed, double spread = 3.0)
{
    RngStream rng(seed, "logits");
    TensorF z({1, c, h, w});
    for (auto& v : z.data()) v = static_cast<float>(rng.uniform(-spread, spread));
    Graph<float> g;
    return softmax_channels(g.constant(z)).value();
}

// Scoped capture of the warning sink.
struct WarningCapture {
    std::vector<std::string> messages;
    WarningSink saved = warning_sink();
    WarningCapture()
    {
        warning_sink() = [this](const std::string& m) { messages.push_back(m); };
    }
    ~WarningCapture() { warning_sink() = saved; }
};

}  // namespace

TEST(HyperParams, DefaultsAndInvariants)
{
    HyperParams hp;
    EXPECT_EQ(hp.tau, 0.9);
    EXPECT_EQ(hp.eta, 0.999);
    EXPECT_EQ(hp.temp, 0.25);
    EXPECT_EQ(hp.k, 4u);
    EXPECT_EQ(hp.lambda_u, 1.0);
    EXPECT_EQ(hp.p_s2t, 0.5);
    EXPECT_EQ(hp.p_t2s, 0.5);
    EXPECT_NO_THROW(hp.validate());
    auto bad = [](auto mutate) {
        HyperParams h;
        mutate(h);
        EXPECT_THROW(h.validate(), ValidationError);
    };
    bad([](HyperParams& h) { h.tau = 0.0; });
    bad([](HyperParams& h) { h.tau = 1.5; });
    bad([](HyperParams& h) { h.temp = 0.0; });
    bad([](HyperParams& h) { h.k = 0; });
    bad([](HyperParams& h) { h.p_s2t = 1.1; });
    bad([](HyperParams& h) { h.p_t2s = -0.1; });
    bad([](HyperParams& h) { h.gamma_rw = -1.0; });
    bad([](HyperParams& h) { h.lambda_rw = 0.0; });
}

TEST(Sharpen, Examples)
{
    TensorF p({1, 2, 1, 1}, std::vector<float>{0.8f, 0.2f});
    const auto s = sharpen(p, 0.5);
    EXPECT_NEAR(s[0], 16.0 / 17.0, 1e-6);
    EXPECT_NEAR(s[1], 1.0 / 17.0, 1e-6);
    TensorF half({1, 2, 1, 1}, std::vector<float>{0.5f, 0.5f});
    for (double t : {0.1, 0.25, 1.0, 4.0}) {
        const auto h = sharpen(half, t);
        EXPECT_NEAR(h[0], 0.5, 1e-7);
        EXPECT_NEAR(h[1], 0.5, 1e-7);
    }
    const auto q = random_probs(5, 4, 4, 1);
    const auto id = sharpen(q, 1.0);
    for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(id[i], q[i], 1e-6);
}

TEST(Sharpen, ZerosStayZeroAndTemperatureMustBePositive)
{
    TensorF p({1, 3, 1, 1}, std::vector<float>{0.0f, 0.3f, 0.7f});
    const auto s = sharpen(p, 0.25);
    EXPECT_EQ(s[0], 0.0f);
    EXPECT_NEAR(s[1] + s[2], 1.0, 1e-6);
    EXPECT_THROW(sharpen(p, 0.0), ValidationError);
    EXPECT_THROW(sharpen(p, -1.0), ValidationError);
}

TEST(Sharpen, NeverFlipsArgmax)
{
    // 10^4 random distributions over 5 classes, laid out as one 100x100 map.
    const auto p = random_probs(5, 100, 100, 2, 4.0);
    const auto q = argmax_labels(p);
    for (double t : {0.1, 0.25, 0.5, 1.0}) EXPECT_EQ(argmax_labels(sharpen(p, t)).labels, q.labels) << "T=" << t;
}

TEST(PseudoLabel, ThresholdExamples)
{
    const auto p = random_probs(4, 6, 6, 3);
    const auto all = make_pseudo_label(p, 0.0);
    for (auto m : all.mask) EXPECT_EQ(m, 1);
    EXPECT_EQ(all.mask_fraction(), 1.0);
    const auto uniform = make_pseudo_label(TensorF({1, 4, 3, 3}, 0.25f), 0.9);
    for (auto m : uniform.mask) EXPECT_EQ(m, 0);
    for (auto q : uniform.q.labels) EXPECT_EQ(q, 0);
}

TEST(PseudoLabel, MaskCountMonotoneInTau)
{
    const auto p = sharpen(random_probs(5, 32, 32, 4), 0.5);
    double prev = 2.0;
    for (int i = 0; i <= 100; ++i) {
        const double frac = make_pseudo_label(p, i / 100.0).mask_fraction();
        EXPECT_LE(frac, prev);
        prev = frac;
    }
}

TEST(ClassWeights, SpotValues)
{
    const auto w = class_weights(ClassPriors{{0.75, 0.25}}, 1.0, 1.0);
    EXPECT_NEAR(w[0], 4.0 / 3.0, 1e-9);
    EXPECT_NEAR(w[1], 4.0, 1e-9);
    for (double v : class_weights(kPriors, 1.0, 0.0)) EXPECT_EQ(v, 1.0);
    const auto scaled = class_weights(ClassPriors{{0.75, 0.25}}, 2.0, 1.0);
    EXPECT_NEAR(scaled[1], 2.0, 1e-9);
}

TEST(ClassWeights, RarerClassNeverWeighsLess)
{
    const ClassPriors d{{0.5, 0.02, 0.2, 0.08, 0.2}};
    for (double gamma : {0.0, 0.25, 0.5, 1.0, 2.0}) {
        const auto w = class_weights(d, 1.0, gamma);
        for (std::size_t a = 0; a < 5; ++a)
            for (std::size_t b = 0; b < 5; ++b)
                if (d.d[a] < d.d[b]) {
                    EXPECT_GE(w[a], w[b]);
                }
    }
}

TEST(ClassWeights, ZeroPriorUsesSmallestNonzeroWithWarning)
{
    WarningCapture cap;
    const auto w = class_weights(ClassPriors{{0.9, 0.1, 0.0}}, 1.0, 1.0);
    EXPECT_NEAR(w[2], 10.0, 1e-9);
    ASSERT_EQ(cap.messages.size(), 1u);
    EXPECT_NE(cap.messages[0].find("class 2"), std::string::npos);
    EXPECT_THROW(class_weights(ClassPriors{{0.0, 0.0}}, 1.0, 1.0), ValidationError);
}

TEST(SupervisedLoss, Examples)
{
    LabelMap y(2, 2);
    y.labels = {0, 1, 2, 3};
    Graph<float> g;
    EXPECT_NEAR(supervised_loss(g.constant(one_hot(y, 4)), y).value()[0], 0.0, 1e-7);
    EXPECT_NEAR(supervised_loss(g.constant(TensorF({1, 4, 2, 2}, 0.25f)), y).value()[0], std::log(4.0), 1e-6);

    y.labels[1] = 4;
    EXPECT_THROW(supervised_loss(g.constant(TensorF({1, 4, 2, 2}, 0.25f)), y), ValidationError);
}

TEST(SupervisedLoss, MovingMassToTrueClassLowersLoss)
{
    LabelMap y(1, 1);
    y.labels = {1};
    double prev = 1e9;
    for (float p1 : {0.1f, 0.3f, 0.5f, 0.7f, 0.9f}) {
        Graph<float> g;
        TensorF p({1, 3, 1, 1}, std::vector<float>{(1 - p1) / 2, p1, (1 - p1) / 2});
        const double l = supervised_loss(g.constant(p), y).value()[0];
        EXPECT_LT(l, prev);
        prev = l;
    }
}

TEST(UnsupervisedLoss, EmptyMaskIsZeroWithZeroGradient)
{
    RngStream rng(5, "z");
    TensorF z({1, 5, 4, 4});
    for (auto& v : z.data()) v = static_cast<float>(rng.uniform(-2, 2));
    z.set_requires_grad(true);
    Graph<float> g;
    const auto p = softmax_channels(g.parameter(z));
    auto pl = make_pseudo_label(random_probs(5, 4, 4, 6), 1.0);
    std::fill(pl.mask.begin(), pl.mask.end(), 0);
    const std::vector<double> w(5, 2.0);
    const auto l = unsupervised_loss(p, pl, w);
    EXPECT_EQ(l.value()[0], 0.0f);
    g.backward(l);
    for (float v : z.grad()) EXPECT_EQ(v, 0.0f);
}

TEST(UnsupervisedLoss, UnitWeightsFullMaskEqualsSupervised)
{
    Graph<float> g;
    const auto p = g.constant(random_probs(5, 6, 6, 7));
    const auto pl = make_pseudo_label(random_probs(5, 6, 6, 8), 0.0);
    const std::vector<double> ones(5, 1.0);
    EXPECT_NEAR(unsupervised_loss(p, pl, ones).value()[0], supervised_loss(p, pl.q).value()[0], 1e-6);
}

TEST(UnsupervisedLoss, LinearInWeightsAndMaskedPixelsContributeNothing)
{
    Graph<float> g;
    const auto p = g.constant(random_probs(5, 6, 6, 9));
    auto pl = make_pseudo_label(random_probs(5, 6, 6, 10), 0.0);
    const std::vector<double> w{0.5, 1.5, 2.0, 3.0, 0.25};
    std::vector<double> w2;
    for (double v : w) w2.push_back(2 * v);
    const double base = unsupervised_loss(p, pl, w).value()[0];
    EXPECT_NEAR(unsupervised_loss(p, pl, w2).value()[0], 2 * base, 1e-6);

    // Oracle: direct masked sum.
    for (std::size_t k = 0; k < pl.mask.size(); k += 3) pl.mask[k] = 0;
    double expect = 0;
    for (std::size_t k = 0; k < 36; ++k) {
        if (!pl.mask[k]) continue;
        const auto q = pl.q.labels[k];
        expect -= w[q] * std::log(double(p.value()[q * 36 + k]));
    }
    EXPECT_NEAR(unsupervised_loss(p, pl, w).value()[0], expect / 36, 1e-5);
}

TEST(UnsupervisedLoss, ShapeMismatchRejected)
{
    Graph<float> g;
    const auto p = g.constant(random_probs(5, 6, 6, 9));
    const auto pl = make_pseudo_label(random_probs(5, 4, 4, 10), 0.0);
    EXPECT_THROW(unsupervised_loss(p, pl, std::vector<double>(5, 1.0)), ShapeError);
    const auto ok = make_pseudo_label(random_probs(5, 6, 6, 10), 0.0);
    EXPECT_THROW(unsupervised_loss(p, ok, std::vector<double>(4, 1.0)), ShapeError);
}

TEST(TranslateSource, NoTranslationIsColorPerturb)
{
    const auto data = toy();
    HyperParams hp;
    hp.p_s2t = 0.0;
    auto st = small_state(hp);
    RngStream replay(3, "augment");
    for (int i = 0; i < 5; ++i) {
        const auto out = translate_source(data.source_images[i], data.target_images, st);
        EXPECT_FALSE(out.translated);
        EXPECT_EQ(out.image, color_perturb(data.source_images[i], ColorJitterSpec{}, replay));
    }
    EXPECT_THROW(translate_source(data.source_images[0], {}, st), ValidationError);
}

TEST(TranslateSource, AlphaZeroIsReconstructionOfJitteredImage)
{
    const auto data = toy();
    HyperParams hp;
    hp.p_s2t = 1.0;
    hp.alpha_hi = 0.0;
    auto st = small_state(hp);
    RngStream replay(3, "augment");
    for (int i = 0; i < 3; ++i) {
        const auto out = translate_source(data.source_images[i], data.target_images, st);
        EXPECT_TRUE(out.translated);
        EXPECT_EQ(out.image, reconstruct(color_perturb(data.source_images[i], ColorJitterSpec{}, replay), st.styler));
        EXPECT_EQ(out.image.height, 16u);
        EXPECT_EQ(out.image.width, 16u);
    }
}

TEST(TranslateSource, ToggleOffDisablesTranslation)
{
    const auto data = toy();
    HyperParams hp;
    hp.p_s2t = 1.0;
    AblationToggles tg;
    tg.s2t = false;
    auto st = small_state(hp, tg);
    for (int i = 0; i < 5; ++i) EXPECT_FALSE(translate_source(data.source_images[i], data.target_images, st).translated);
}

TEST(PerturbTarget, Branches)
{
    const auto data = toy();
    HyperParams off;
    off.p_t2s = 0.0;
    auto st = small_state(off);
    RngStream replay(3, "augment");
    const auto views = perturb_target(data.target_images[0], data.source_images, st);
    ASSERT_EQ(views.size(), 1u);
    EXPECT_EQ(views[0], color_perturb(data.target_images[0], ColorJitterSpec{}, replay));

    HyperParams one;
    one.p_t2s = 1.0;
    one.k = 1;
    one.alpha_lo = 1.0;
    auto st1 = small_state(one);
    RngStream replay1(3, "augment");
    const std::vector<Image> pool{data.source_images[2]};
    const auto single = perturb_target(data.target_images[0], pool, st1);
    ASSERT_EQ(single.size(), 1u);
    const auto base = color_perturb(data.target_images[0], ColorJitterSpec{}, replay1);
    EXPECT_EQ(single[0], generate(base, pool[0], 1.0, st1.styler));

    HyperParams four;
    four.p_t2s = 1.0;
    auto st4 = small_state(four);
    const auto many = perturb_target(data.target_images[1], data.source_images, st4);
    ASSERT_EQ(many.size(), 4u);
    for (const auto& v : many) {
        EXPECT_EQ(v.height, 16u);
        EXPECT_EQ(v.width, 16u);
    }
    EXPECT_THROW(perturb_target(data.target_images[0], {}, st4), ValidationError);
}

TEST(PerturbTarget, OversizedKSamplesWithReplacementAndWarns)
{
    const auto data = toy(3);
    HyperParams hp;
    hp.p_t2s = 1.0;
    hp.k = 6;
    auto st = small_state(hp);
    WarningCapture cap;
    EXPECT_EQ(perturb_target(data.target_images[0], data.source_images, st).size(), 6u);
    ASSERT_EQ(cap.messages.size(), 1u);
    EXPECT_NE(cap.messages[0].find("with replacement"), std::string::npos);
}

TEST(PseudoProbs, MeanOfTeacherMaps)
{
    const auto data = toy();
    const auto net = build_segnet(kNumClasses, 2, 4);
    const std::vector<Image> one{data.target_images[0]};
    EXPECT_EQ(pseudo_probs(net, one).data(), seg_probs(net, to_tensor(data.target_images[0])).data());

    const std::vector<Image> same(4, data.target_images[0]);
    const auto mean_same = pseudo_probs(net, same);
    const auto single = pseudo_probs(net, one);
    for (std::size_t i = 0; i < single.size(); ++i) EXPECT_NEAR(mean_same[i], single[i], 1e-6);

    const auto mixed = pseudo_probs(net, std::span<const Image>(data.target_images.data(), 4));
    const std::size_t hw = 16 * 16;
    for (std::size_t k = 0; k < hw; ++k) {
        double s = 0;
        for (std::size_t c = 0; c < kNumClasses; ++c) s += mixed[c * hw + k];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
    const std::vector<Image> misaligned{data.target_images[0], Image(8, 8)};
    EXPECT_THROW(pseudo_probs(net, misaligned), ShapeError);
    EXPECT_THROW(pseudo_probs(net, std::vector<Image>{}), ValidationError);
}

TEST(MakeTrainerState, InitOptions)
{
    auto st = small_state();
    EXPECT_TRUE(st.teacher.params.same_values(st.student.params));
    for (const auto& p : st.teacher.params.entries()) EXPECT_FALSE(p.tensor.requires_grad());
    for (const auto& p : st.styler.decoder.entries()) EXPECT_FALSE(p.tensor.requires_grad());

    const auto styler = build_styler(9, 4);
    auto init = make_trainer_state(kNumClasses, 4, styler, kPriors, {}, {}, OptimConfig{}, 3, SegInit{true, true});
    EXPECT_EQ(init.student.params.at("conv2.weight").data(), styler.encoder.at("enc2.weight").data());
    for (float v : init.student.params.at("head.weight").data()) EXPECT_EQ(v, 0.0f);
    EXPECT_TRUE(init.teacher.params.same_values(init.student.params));
    EXPECT_THROW(make_trainer_state(3, 4, styler, kPriors, {}, {}, OptimConfig{}, 3), ValidationError);
}

TEST(TrainStep, ZeroLambdaMakesLossSupervisedAndTeacherIrrelevant)
{
    const auto data = toy();
    HyperParams hp;
    hp.lambda_u = 0.0;
    hp.p_t2s = 1.0;
    hp.tau = 0.3;
    auto a = small_state(hp), b = small_state(hp);
    for (auto& p : b.teacher.params.entries())
        for (auto& v : p.tensor.data()) v *= -3.0f;
    for (int i = 0; i < 3; ++i) {
        const auto ra = train_step(data.source_images[i], data.source[i].label, data.target_images[i],
                                   data.source_images, data.target_images, a);
        const auto rb = train_step(data.source_images[i], data.source[i].label, data.target_images[i],
                                   data.source_images, data.target_images, b);
        EXPECT_EQ(ra.loss, ra.loss_s);
        EXPECT_EQ(ra.loss_s, rb.loss_s);
        EXPECT_TRUE(a.student.params.same_values(b.student.params));
    }
}

TEST(TrainStep, LossDecomposesAndTeacherGetsNoGradient)
{
    const auto data = toy();
    HyperParams hp;
    hp.lambda_u = 2.5;
    hp.tau = 0.2;
    hp.p_t2s = 1.0;
    hp.k = 2;
    for (bool pseudo_label : {true, false}) {
        for (bool self_ensemble : {true, false}) {
            AblationToggles tg;
            tg.pseudo_label = pseudo_label;
            tg.self_ensemble = self_ensemble;
            auto st = small_state(hp, tg);
            for (int i = 0; i < 4; ++i) {
                const auto r = train_step(data.source_images[i], data.source[i].label, data.target_images[i],
                                          data.source_images, data.target_images, st);
                EXPECT_NEAR(r.loss, r.loss_s + hp.lambda_u * r.loss_u, 1e-6 * std::max(1.0, r.loss));
                EXPECT_EQ(r.step, std::size_t(i + 1));
                EXPECT_EQ(st.step, std::size_t(i + 1));
                EXPECT_GE(r.target_views, 1u);
                for (const auto& p : st.teacher.params.entries()) {
                    EXPECT_FALSE(p.tensor.requires_grad());
                    EXPECT_TRUE(p.tensor.grad().empty());
                }
            }
        }
    }
}

TEST(TrainStep, TeacherFollowsEma)
{
    const auto data = toy();
    HyperParams hp;
    hp.eta = 0.5;
    auto st = small_state(hp);
    const auto teacher_before = st.teacher;
    train_step(data.source_images[0], data.source[0].label, data.target_images[0], data.source_images,
               data.target_images, st);
    auto expected = teacher_before;
    ema_update(expected, st.student, 0.5);
    EXPECT_TRUE(st.teacher.params.same_values(expected.params));
}

TEST(TrainStep, T2sOffSkipsUnsupervisedBranch)
{
    const auto data = toy();
    AblationToggles tg;
    tg.t2s = false;
    auto st = small_state({}, tg);
    const auto r = train_step(data.source_images[0], data.source[0].label, data.target_images[0],
                              data.source_images, data.target_images, st);
    EXPECT_EQ(r.loss_u, 0.0);
    EXPECT_EQ(r.target_views, 0u);
    EXPECT_EQ(r.loss, r.loss_s);
}

TEST(TrainStep, ReplaysBitwise)
{
    const auto data = toy();
    auto a = small_state(), b = small_state();
    for (int i = 0; i < 4; ++i) {
        const auto ra = train_step(data.source_images[i], data.source[i].label, data.target_images[i],
                                   data.source_images, data.target_images, a);
        const auto rb = train_step(data.source_images[i], data.source[i].label, data.target_images[i],
                                   data.source_images, data.target_images, b);
        EXPECT_EQ(ra.loss, rb.loss);
        EXPECT_EQ(ra.loss_u, rb.loss_u);
        EXPECT_EQ(ra.mask_frac, rb.mask_frac);
        EXPECT_EQ(ra.source_translated, rb.source_translated);
    }
    EXPECT_TRUE(a.student.params.same_values(b.student.params));
    EXPECT_TRUE(a.teacher.params.same_values(b.teacher.params));
}

TEST(TrainStep, NumericFailureNamesTheBranch)
{
    const auto data = toy();
    auto st = small_state();
    for (auto& v : st.student.params.at("conv1.weight").data()) v = 1e30f;
    try {
        train_step(data.source_images[0], data.source[0].label, data.target_images[0], data.source_images,
                   data.target_images, st);
        FAIL() << "expected a numeric error";
    } catch (const NumericError& e) {
        EXPECT_EQ(std::string(e.what()).rfind("supervised branch: ", 0), 0u) << e.what();
    }
}

TEST(TrainLoop, ZeroStepsAndHistoryLength)
{
    const auto data = toy();
    auto st = small_state();
    const auto before = st.student;
    LoopOptions none;
    none.crop = 16;
    const auto empty = train_loop(data.source, data.target_images, st, none, data.target);
    EXPECT_TRUE(empty.history.empty());
    EXPECT_FALSE(empty.best_teacher.has_value());
    EXPECT_TRUE(st.student.params.same_values(before.params));

    LoopOptions opts;
    opts.steps = 7;
    opts.eval_every = 3;
    opts.crop = 8;
    std::vector<std::size_t> seen;
    opts.on_eval = [&](const HistoryRow& r) { seen.push_back(r.step); };
    const auto res = train_loop(data.source, data.target_images, st, opts, data.target);
    ASSERT_EQ(res.history.size(), 2u);
    EXPECT_EQ(seen, (std::vector<std::size_t>{3, 6}));
    EXPECT_EQ(res.history[0].step, 3u);
    EXPECT_EQ(res.history[1].step, 6u);
    EXPECT_TRUE(res.best_teacher.has_value());
    EXPECT_EQ(st.step, 7u);
    for (const auto& r : res.history) {
        EXPECT_GE(r.miou_student, 0.0);
        EXPECT_LE(r.miou_teacher, 1.0);
    }
}

TEST(TrainLoop, RejectsEmptyInputs)
{
    const auto data = toy();
    auto st = small_state();
    LoopOptions opts;
    opts.steps = 1;
    opts.crop = 16;
    EXPECT_THROW(train_loop({}, data.target_images, st, opts, data.target), ValidationError);
    EXPECT_THROW(train_loop(data.source, {}, st, opts, data.target), ValidationError);
    EXPECT_THROW(train_loop(data.source, data.target_images, st, opts, {}), ValidationError);
}
