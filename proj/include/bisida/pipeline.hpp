#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bisida/checkpoint.hpp"
#include "bisida/config.hpp"
#include "bisida/dataset.hpp"
#include "bisida/trainer.hpp"

namespace bisida {

struct Benchmark {
    std::vector<Scene> source;
    std::vector<Scene> source_val;
    std::vector<Scene> target;
    std::vector<Scene> target_val;
};

inline std::vector<Image> images_of(std::span<const Scene> scenes)
{
    std::vector<Image> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back(s.image);
    return out;
}

inline Benchmark generate_benchmark(const DataConfig& d, std::uint64_t seed)
{
    const auto a = synth_a();
    const auto b = real_b();
    const std::size_t n = d.image_size;
    return Benchmark{generate_dataset(a, d.train_count, n, n, seed, d.source),
                     generate_dataset(a, d.val_count, n, n, seed, d.source_val),
                     generate_dataset(b, d.train_count, n, n, seed, d.target),
                     generate_dataset(b, d.val_count, n, n, seed, d.target_val)};
}

inline void write_benchmark(const std::filesystem::path& root, const Benchmark& bm, const DataConfig& d,
                            std::uint64_t seed)
{
    write_split(root, d.source, bm.source);
    write_split(root, d.source_val, bm.source_val);
    write_split(root, d.target, bm.target);
    write_split(root, d.target_val, bm.target_val);
    write_manifest(root,
                   {{d.source, bm.source.size(), synth_a()},
                    {d.source_val, bm.source_val.size(), synth_a()},
                    {d.target, bm.target.size(), real_b()},
                    {d.target_val, bm.target_val.size(), real_b()}},
                   d.image_size, d.image_size, seed);
}

inline Benchmark load_benchmark(const DataConfig& d)
{
    const std::filesystem::path root = d.root;
    return Benchmark{load_split(root, d.source, kNumClasses), load_split(root, d.source_val, kNumClasses),
                     load_split(root, d.target, kNumClasses), load_split(root, d.target_val, kNumClasses)};
}

// Mean alpha = 0 reconstruction PSNR over the first `per_domain` images of each split.
inline double reconstruction_psnr(const StylerNet& net, std::span<const Scene> a, std::span<const Scene> b,
                                  std::size_t per_domain)
{
    double total = 0.0;
    std::size_t n = 0;
    for (auto split : {a, b}) {
        for (std::size_t i = 0; i < std::min(per_domain, split.size()); ++i) {
            total += psnr(reconstruct(split[i].image, net), split[i].image);
            ++n;
        }
    }
    if (n == 0) throw ValidationError("reconstruction_psnr: no images");
    return total / static_cast<double>(n);
}

struct StylerFit {
    StylerNet net;
    std::vector<StylerRecord> pretrain;
    std::vector<StylerRecord> train;
};

inline StylerFit fit_styler(const Config& cfg, const Benchmark& bm)
{
    StylerFit fit{build_styler(cfg.seed, cfg.styler.width), {}, {}};
    const auto src = images_of(bm.source);
    const auto tgt = images_of(bm.target);
    std::vector<Image> pool = src;
    pool.insert(pool.end(), tgt.begin(), tgt.end());
    OptimConfig oc;
    oc.learning_rate = cfg.styler.learning_rate;
    RngStream rng(cfg.seed, "styler");
    {
        OptimState opt(oc);
        fit.pretrain = pretrain_autoencoder(pool, fit.net, opt, cfg.styler.pretrain_steps, cfg.styler.crop, rng);
    }
    OptimState opt(oc);
    fit.train = train_styler(src, tgt, fit.net, opt, cfg.styler.steps, cfg.styler.crop,
                             StylerLossWeights{cfg.styler.style_weight}, rng);
    return fit;
}

inline std::vector<CheckpointArray> styler_arrays(const StylerNet& net)
{
    std::vector<CheckpointArray> arrays;
    append_params(arrays, "encoder", net.encoder);
    append_params(arrays, "decoder", net.decoder);
    return arrays;
}

inline StylerNet load_styler(const std::filesystem::path& path, std::size_t width)
{
    StylerNet net = build_styler(0, width);
    const auto arrays = load_checkpoint(path);
    load_params(arrays, "encoder", net.encoder);
    load_params(arrays, "decoder", net.decoder);
    net.encoder.set_trainable(false);
    net.decoder.set_trainable(false);
    return net;
}

inline SegNet load_segnet(const std::filesystem::path& path, const std::string& prefix, std::size_t width)
{
    SegNet net = build_segnet(kNumClasses, 0, width);
    load_params(load_checkpoint(path), prefix, net.params);
    net.params.set_trainable(false);
    return net;
}

inline TrainerState make_state(const Config& cfg, StylerNet styler, const Benchmark& bm)
{
    return make_trainer_state(kNumClasses, cfg.train.seg_width, std::move(styler), class_priors(bm.source), cfg.hp,
                              cfg.toggles, cfg.train.optim(), cfg.seed, cfg.train.init());
}

struct RunResult {
    TrainerState state;
    LoopResult loop;
};

inline RunResult run_training(const Config& cfg, StylerNet styler, const Benchmark& bm,
                              std::function<void(const HistoryRow&)> on_eval = {})
{
    RunResult r{make_state(cfg, std::move(styler), bm), {}};
    const auto targets = images_of(bm.target);
    LoopOptions lo;
    lo.steps = cfg.train.steps;
    lo.eval_every = cfg.train.eval_every;
    lo.crop = cfg.train.crop;
    lo.on_eval = std::move(on_eval);
    r.loop = train_loop(bm.source, targets, r.state, lo, bm.target_val);
    return r;
}

// The model whose numbers a run reports: the teacher when it produced the
// pseudo-labels, the student otherwise.
inline const SegNet& reported_model(const TrainerState& st)
{
    return st.toggles.self_ensemble && st.toggles.t2s ? st.teacher : st.student;
}

inline std::string format_number(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// Resolved config as '#' comments, then one row per evaluation.
inline std::string metrics_csv(const Config& cfg, const std::vector<HistoryRow>& rows)
{
    std::string out = config_comment_block(cfg);
    out += "step,loss_s,loss_u,mask_frac,miou_student,miou_teacher\n";
    for (const auto& r : rows) {
        out += std::to_string(r.step) + ',' + format_number(r.loss_s) + ',' + format_number(r.loss_u) + ',' +
               format_number(r.mask_frac) + ',' + format_number(r.miou_student) + ',' + format_number(r.miou_teacher) +
               '\n';
    }
    return out;
}

// Write to a sibling temp file, then rename over the target.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text)
{
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw ValidationError("cannot write '" + tmp.string() + "'");
        out << text;
        if (!out) throw ValidationError("short write to '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace bisida
