#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bisida/augment.hpp"
#include "bisida/ensemble.hpp"
#include "bisida/log.hpp"
#include "bisida/metrics.hpp"
#include "bisida/segnet.hpp"
#include "bisida/styler.hpp"
#include "bisida/toy_domains.hpp"

namespace bisida {

struct HyperParams {
    double tau = 0.9;        // pseudo-label confidence threshold
    double eta = 0.999;      // teacher EMA decay
    double temp = 0.25;      // sharpening temperature
    std::size_t k = 4;       // style images per target image
    double lambda_u = 1.0;   // unsupervised loss weight
    double p_s2t = 0.5;      // probability of translating a source image
    double p_t2s = 0.5;      // probability of translating a target image
    double lambda_rw = 1.0;  // class reweighting scale
    double gamma_rw = 0.5;   // class reweighting exponent
    double alpha_lo = 0.0;   // content-style trade-off ~ U(alpha_lo, alpha_hi)
    double alpha_hi = 1.0;
    bool threshold_before_sharpen = false;

    bool operator==(const HyperParams&) const = default;

    void validate() const
    {
        if (!(tau > 0.0 && tau <= 1.0)) throw ValidationError("invariant violated: tau in (0,1]");
        if (!(eta >= 0.0 && eta <= 1.0)) throw ValidationError("invariant violated: eta in [0,1]");
        if (!(temp > 0.0)) throw ValidationError("invariant violated: temp > 0");
        if (k < 1) throw ValidationError("invariant violated: k >= 1");
        if (!(lambda_u >= 0.0)) throw ValidationError("invariant violated: lambda_u >= 0");
        if (!(p_s2t >= 0.0 && p_s2t <= 1.0)) throw ValidationError("invariant violated: p_s2t in [0,1]");
        if (!(p_t2s >= 0.0 && p_t2s <= 1.0)) throw ValidationError("invariant violated: p_t2s in [0,1]");
        if (!(lambda_rw > 0.0)) throw ValidationError("invariant violated: lambda_rw > 0");
        if (!(gamma_rw >= 0.0)) throw ValidationError("invariant violated: gamma_rw >= 0");
        if (!(alpha_lo >= 0.0 && alpha_lo <= alpha_hi && alpha_hi <= 1.0)) {
            throw ValidationError("invariant violated: 0 <= alpha_lo <= alpha_hi <= 1");
        }
    }
};

// Module switches of the ablation grid. With t2s off the whole unsupervised
// branch is skipped; pseudo_label off trains on sharpened soft targets;
// self_ensemble off produces targets with the student instead of the teacher.
struct AblationToggles {
    bool s2t = true;
    bool t2s = true;
    bool pseudo_label = true;
    bool self_ensemble = true;

    bool operator==(const AblationToggles&) const = default;
};

struct TrainerState {
    SegNet student;
    SegNet teacher;
    StylerNet styler;
    ClassPriors priors;
    std::vector<double> class_weights;
    HyperParams hp;
    AblationToggles toggles;
    ColorJitterSpec jitter;
    OptimState opt;
    std::size_t step = 0;
    RngStream data_rng;
    RngStream augment_rng;
    RngStream translate_rng;
};

struct StepRecord {
    std::size_t step = 0;
    double loss_s = 0.0;
    double loss_u = 0.0;
    double loss = 0.0;
    double mask_frac = 0.0;
    bool source_translated = false;
    std::size_t target_views = 0;
};

// ---------------------------------------------------------------------------
// Per-pixel helpers on probability maps (1 x C x H x W tensors)

// p_i^(1/T) / sum_j p_j^(1/T) per pixel, evaluated in the log domain; zero
// entries stay zero.
inline TensorF sharpen(const TensorF& p, double temp)
{
    if (!(temp > 0.0)) throw ValidationError("sharpen: temperature must be positive");
    if (p.rank() != 4) throw ShapeError("sharpen: expected NCHW probability map");
    const std::size_t n = p.dim(0), c = p.dim(1), hw = p.dim(2) * p.dim(3);
    TensorF out(p.dims());
    std::vector<double> logs(c);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t k = 0; k < hw; ++k) {
            double top = -std::numeric_limits<double>::infinity();
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double v = p[(b * c + ch) * hw + k];
                logs[ch] = v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
                top = std::max(top, logs[ch]);
            }
            double den = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                logs[ch] = std::isinf(logs[ch]) ? 0.0 : std::exp((logs[ch] - top) / temp);
                den += logs[ch];
            }
            for (std::size_t ch = 0; ch < c; ++ch) {
                out[(b * c + ch) * hw + k] = static_cast<float>(logs[ch] / den);
            }
        }
    }
    return out;
}

struct PseudoLabel {
    LabelMap q;
    std::vector<std::uint8_t> mask;

    double mask_fraction() const
    {
        if (mask.empty()) return 0.0;
        std::size_t on = 0;
        for (auto m : mask) on += m;
        return static_cast<double>(on) / static_cast<double>(mask.size());
    }
};

// q = per-pixel argmax (first index on ties); mask = max >= tau.
inline PseudoLabel make_pseudo_label(const TensorF& p, double tau)
{
    if (p.rank() != 4 || p.dim(0) != 1) throw ShapeError("make_pseudo_label: expected 1xCxHxW map");
    const std::size_t c = p.dim(1), hw = p.dim(2) * p.dim(3);
    PseudoLabel out;
    out.q = argmax_labels(p);
    out.mask.resize(hw);
    for (std::size_t k = 0; k < hw; ++k) {
        const float top = p[out.q.labels[k] * hw + k];
        out.mask[k] = top >= static_cast<float>(tau) ? 1 : 0;
    }
    (void)c;
    return out;
}

// w_c = 1 / (lambda * d_c^gamma). A zero prior under gamma > 0 is replaced by
// the smallest nonzero prior, with a warning.
inline std::vector<double> class_weights(const ClassPriors& priors, double lambda_rw, double gamma_rw)
{
    if (!(lambda_rw > 0.0)) throw ValidationError("class_weights: lambda must be positive");
    if (!(gamma_rw >= 0.0)) throw ValidationError("class_weights: gamma must be non-negative");
    double smallest = 0.0;
    for (double d : priors.d) {
        if (d < 0.0) throw ValidationError("class_weights: negative prior");
        if (d > 0.0 && (smallest == 0.0 || d < smallest)) smallest = d;
    }
    std::vector<double> w;
    for (std::size_t c = 0; c < priors.d.size(); ++c) {
        double d = priors.d[c];
        if (d == 0.0 && gamma_rw > 0.0) {
            if (smallest == 0.0) throw ValidationError("class_weights: every prior is zero");
            warn("class " + std::to_string(c) + " has zero prior; using smallest nonzero prior " +
                 std::to_string(smallest));
            d = smallest;
        }
        w.push_back(1.0 / (lambda_rw * std::pow(d, gamma_rw)));
    }
    return w;
}

inline TensorF one_hot(const LabelMap& y, std::size_t num_classes)
{
    const std::size_t hw = y.labels.size();
    TensorF t(Shape{1, num_classes, y.height, y.width});
    for (std::size_t k = 0; k < hw; ++k) {
        if (y.labels[k] >= num_classes) {
            throw ValidationError("label " + std::to_string(y.labels[k]) + " out of range at pixel " + std::to_string(k));
        }
        t[y.labels[k] * hw + k] = 1.0f;
    }
    return t;
}

// -(1/HW) * sum_pixels log p[true class].
inline Var<float> supervised_loss(Var<float> probs, const LabelMap& y)
{
    const Shape& d = probs.dims();
    if (d.size() != 4 || d[0] != 1 || d[2] != y.height || d[3] != y.width) {
        throw ShapeError("supervised_loss: probability map " + to_string(d) + " does not match labels");
    }
    return cross_entropy(probs, one_hot(y, d[1]));
}

// -(1/HW) * sum over masked pixels of w[q] * log p[q]; q, mask and w are constants.
inline Var<float> unsupervised_loss(Var<float> probs, const PseudoLabel& pl, std::span<const double> w)
{
    const Shape& d = probs.dims();
    if (d.size() != 4 || d[0] != 1 || d[2] != pl.q.height || d[3] != pl.q.width || pl.mask.size() != d[2] * d[3]) {
        throw ShapeError("unsupervised_loss: probability map " + to_string(d) + " does not match pseudo-label");
    }
    if (w.size() != d[1]) throw ShapeError("unsupervised_loss: need one weight per class");
    const std::size_t hw = d[2] * d[3];
    TensorF target(d);
    for (std::size_t k = 0; k < hw; ++k) {
        if (pl.mask[k]) target[pl.q.labels[k] * hw + k] = static_cast<float>(w[pl.q.labels[k]]);
    }
    return cross_entropy(probs, target);
}

// Soft-target variant used when pseudo-labeling is switched off:
// -(1/HW) * sum over masked pixels of sum_c w_c * p_l[c] * log p[c].
inline Var<float> soft_unsupervised_loss(Var<float> probs, const TensorF& p_l, const std::vector<std::uint8_t>& mask,
                                         std::span<const double> w)
{
    const Shape& d = probs.dims();
    if (p_l.dims() != d || mask.size() != d[2] * d[3] || w.size() != d[1]) {
        throw ShapeError("soft_unsupervised_loss: shape mismatch");
    }
    const std::size_t hw = d[2] * d[3];
    TensorF target(d);
    for (std::size_t c = 0; c < d[1]; ++c) {
        for (std::size_t k = 0; k < hw; ++k) {
            if (mask[k]) target[c * hw + k] = static_cast<float>(w[c] * p_l[c * hw + k]);
        }
    }
    return cross_entropy(probs, target);
}

// ---------------------------------------------------------------------------
// Branch operations

namespace detail {

inline Image style_view(const Image& style, const Image& content, RngStream& rng)
{
    if (style.height >= content.height && style.width >= content.width &&
        (style.height != content.height || style.width != content.width)) {
        return random_crop(style, nullptr, content.height, content.width, rng).image;
    }
    return style;
}

}  // namespace detail

struct TranslatedSource {
    Image image;
    bool translated = false;
};

// x_s -> G(A(x_s), x_t, alpha) with probability p_s2t, else A(x_s).
inline TranslatedSource translate_source(const Image& x_s, std::span<const Image> target_pool, TrainerState& st)
{
    if (target_pool.empty()) throw ValidationError("translate_source: empty target pool");
    TranslatedSource out;
    out.image = color_perturb(x_s, st.jitter, st.augment_rng);
    const double p = st.toggles.s2t ? st.hp.p_s2t : 0.0;
    if (st.translate_rng.bernoulli(p)) {
        const auto& x_t = target_pool[st.translate_rng.index(target_pool.size())];
        const auto style = detail::style_view(x_t, out.image, st.translate_rng);
        const double alpha = st.translate_rng.uniform(st.hp.alpha_lo, st.hp.alpha_hi);
        out.image = generate(out.image, style, alpha, st.styler);
        out.translated = true;
    }
    return out;
}

// {G(A(x_t), x_s^i, alpha_i)}_{i=1..k} with probability p_t2s, else {A(x_t)}.
// A(x_t) is drawn once and shared; alpha is drawn per style image.
inline std::vector<Image> perturb_target(const Image& x_t, std::span<const Image> source_pool, TrainerState& st)
{
    if (source_pool.empty()) throw ValidationError("perturb_target: empty source pool");
    const Image base = color_perturb(x_t, st.jitter, st.augment_rng);
    if (!st.translate_rng.bernoulli(st.hp.p_t2s)) return {base};
    std::vector<std::size_t> picks;
    if (st.hp.k <= source_pool.size()) {
        picks = st.translate_rng.sample_distinct(source_pool.size(), st.hp.k);
    } else {
        warn("k = " + std::to_string(st.hp.k) + " exceeds source pool of " + std::to_string(source_pool.size()) +
             "; sampling style images with replacement");
        for (std::size_t i = 0; i < st.hp.k; ++i) picks.push_back(st.translate_rng.index(source_pool.size()));
    }
    std::vector<Image> views;
    for (std::size_t idx : picks) {
        const auto style = detail::style_view(source_pool[idx], base, st.translate_rng);
        const double alpha = st.translate_rng.uniform(st.hp.alpha_lo, st.hp.alpha_hi);
        views.push_back(generate(base, style, alpha, st.styler));
    }
    return views;
}

// Arithmetic mean of the network's probability maps over the views, summed in index order.
inline TensorF pseudo_probs(const SegNet& net, std::span<const Image> views)
{
    if (views.empty()) throw ValidationError("pseudo_probs: no images");
    for (const auto& v : views) {
        if (v.height != views[0].height || v.width != views[0].width) {
            throw ShapeError("pseudo_probs: views are not pixel-aligned");
        }
    }
    TensorF acc = seg_probs(net, to_tensor(views[0]));
    if (views.size() == 1) return acc;
    for (std::size_t i = 1; i < views.size(); ++i) {
        const TensorF p = seg_probs(net, to_tensor(views[i]));
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += p[j];
    }
    const float inv = 1.0f / static_cast<float>(views.size());
    for (auto& v : acc.data()) v *= inv;
    return acc;
}

// Student initialisation applied before the teacher copies it.
struct SegInit {
    bool zero_heads = false;
    bool trunk_from_styler = false;  // conv1..conv3 <- the styler's pretrained encoder
};

inline TrainerState make_trainer_state(std::size_t num_classes, std::size_t width, StylerNet styler,
                                       ClassPriors priors, const HyperParams& hp, const AblationToggles& toggles,
                                       const OptimConfig& optim, std::uint64_t seed, const SegInit& init = {})
{
    hp.validate();
    if (priors.d.size() != num_classes) throw ValidationError("trainer: priors do not match class count");
    SegNet student = build_segnet(num_classes, seed, width);
    if (init.trunk_from_styler) init_trunk_from_encoder(student, styler.encoder);
    if (init.zero_heads) zero_heads(student);
    SegNet teacher = init_teacher(student);
    auto weights = class_weights(priors, hp.lambda_rw, hp.gamma_rw);
    styler.encoder.set_trainable(false);
    styler.decoder.set_trainable(false);
    return TrainerState{std::move(student),
                        std::move(teacher),
                        std::move(styler),
                        std::move(priors),
                        std::move(weights),
                        hp,
                        toggles,
                        ColorJitterSpec{},
                        OptimState(optim),
                        0,
                        RngStream(seed, "data"),
                        RngStream(seed, "augment"),
                        RngStream(seed, "translate")};
}

// One optimization step: supervised branch, unsupervised branch,
// L = L_s + lambda_u * L_u, student update, teacher EMA.
inline StepRecord train_step(const Image& x_s, const LabelMap& y_s, const Image& x_t,
                             std::span<const Image> source_pool, std::span<const Image> target_pool, TrainerState& st)
{
    StepRecord rec;
    Graph<float> g;
    const auto student = Bound::trainable(g, st.student.params);

    Var<float> loss_s;
    try {
        const auto src = translate_source(x_s, target_pool, st);
        rec.source_translated = src.translated;
        const auto p_s = softmax_channels(seg_logits(student, g.constant(to_tensor(src.image))));
        loss_s = supervised_loss(p_s, y_s);
    } catch (const NumericError& e) {
        throw NumericError(std::string("supervised branch: ") + e.what());
    }

    Var<float> total = loss_s;
    if (st.toggles.t2s) {
        try {
            const auto views = perturb_target(x_t, source_pool, st);
            rec.target_views = views.size();
            const SegNet& labeler = st.toggles.self_ensemble ? st.teacher : st.student;
            const TensorF p_l = pseudo_probs(labeler, views);
            const TensorF p_sharp = sharpen(p_l, st.hp.temp);
            PseudoLabel pl = make_pseudo_label(p_sharp, st.hp.tau);
            if (st.hp.threshold_before_sharpen) pl.mask = make_pseudo_label(p_l, st.hp.tau).mask;
            rec.mask_frac = pl.mask_fraction();

            const Image student_view = color_perturb(x_t, st.jitter, st.augment_rng);
            const auto p_t = softmax_channels(seg_logits(student, g.constant(to_tensor(student_view))));
            const auto loss_u = st.toggles.pseudo_label ? unsupervised_loss(p_t, pl, st.class_weights)
                                                        : soft_unsupervised_loss(p_t, p_sharp, pl.mask, st.class_weights);
            rec.loss_u = loss_u.value()[0];
            total = add(loss_s, scale(loss_u, st.hp.lambda_u));
        } catch (const NumericError& e) {
            throw NumericError(std::string("unsupervised branch: ") + e.what());
        }
    }
    rec.loss_s = loss_s.value()[0];
    rec.loss = total.value()[0];
    if (!std::isfinite(rec.loss)) throw NumericError("combined loss is not finite");

    g.backward(total);
    st.opt.step(st.student.params);
    ema_update(st.teacher, st.student, st.hp.eta);
    ++st.step;
    rec.step = st.step;
    return rec;
}

inline IouReport evaluate(const SegNet& net, std::span<const Scene> scenes)
{
    if (scenes.empty()) throw ValidationError("evaluate: empty validation set");
    ConfusionMatrix cm(net.num_classes);
    for (const auto& s : scenes) cm.accumulate(seg_predict(net, s.image), s.label);
    return iou(cm);
}

struct HistoryRow {
    std::size_t step = 0;
    double loss_s = 0.0;
    double loss_u = 0.0;
    double mask_frac = 0.0;
    double miou_student = 0.0;
    double miou_teacher = 0.0;
};

struct LoopResult {
    std::vector<HistoryRow> history;
    std::optional<ParamSet> best_teacher;
    double best_teacher_miou = -1.0;
};

struct LoopOptions {
    std::size_t steps = 0;
    std::size_t eval_every = 100;
    std::size_t crop = 64;
    std::function<void(const HistoryRow&)> on_eval;
};

// Cyclic shuffled sampling over both training sets; every eval_every steps
// both networks are scored on the validation set and the row is appended.
inline LoopResult train_loop(std::span<const Scene> source_set, std::span<const Image> target_set, TrainerState& st,
                             const LoopOptions& opts, std::span<const Scene> val_set)
{
    if (source_set.empty() || target_set.empty()) throw ValidationError("train_loop: datasets must be nonempty");
    if (opts.eval_every == 0) throw ValidationError("train_loop: eval_every must be positive");
    if (opts.steps > 0 && val_set.empty()) throw ValidationError("train_loop: empty validation set");
    LoopResult result;

    std::vector<Image> source_images;
    source_images.reserve(source_set.size());
    for (const auto& s : source_set) source_images.push_back(s.image);

    std::vector<std::size_t> src_order(source_set.size()), tgt_order(target_set.size());
    std::size_t src_pos = src_order.size(), tgt_pos = tgt_order.size();
    auto next_index = [&](std::vector<std::size_t>& order, std::size_t& pos) {
        if (pos == order.size()) {
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            st.data_rng.shuffle(order.begin(), order.end());
            pos = 0;
        }
        return order[pos++];
    };

    HistoryRow window;
    std::size_t in_window = 0;
    for (std::size_t s = 0; s < opts.steps; ++s) {
        const Scene& src = source_set[next_index(src_order, src_pos)];
        const Image& tgt = target_set[next_index(tgt_order, tgt_pos)];
        const auto src_crop = random_crop(src.image, &src.label, opts.crop, opts.crop, st.data_rng);
        const auto tgt_crop = random_crop(tgt, nullptr, opts.crop, opts.crop, st.data_rng);
        const auto rec = train_step(src_crop.image, *src_crop.label, tgt_crop.image, source_images, target_set, st);
        window.loss_s += rec.loss_s;
        window.loss_u += rec.loss_u;
        window.mask_frac += rec.mask_frac;
        ++in_window;

        if (st.step % opts.eval_every == 0) {
            HistoryRow row;
            row.step = st.step;
            row.loss_s = window.loss_s / static_cast<double>(in_window);
            row.loss_u = window.loss_u / static_cast<double>(in_window);
            row.mask_frac = window.mask_frac / static_cast<double>(in_window);
            row.miou_student = evaluate(st.student, val_set).miou;
            row.miou_teacher = evaluate(st.teacher, val_set).miou;
            if (row.miou_teacher > result.best_teacher_miou) {
                result.best_teacher_miou = row.miou_teacher;
                result.best_teacher = st.teacher.params;
            }
            result.history.push_back(row);
            if (opts.on_eval) opts.on_eval(row);
            window = HistoryRow{};
            in_window = 0;
        }
    }
    return result;
}

}  // namespace bisida
