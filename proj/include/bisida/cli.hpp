#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bisida/gradcheck_suite.hpp"
#include "bisida/pipeline.hpp"

namespace bisida {

namespace cli_detail {

struct ConfigArgs {
    std::string path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

inline void add_config_options(CLI::App& cmd, ConfigArgs& a)
{
    cmd.add_option("--config", a.path, "config file");
    cmd.add_option("--set", a.overrides, "override, section.key=value (repeatable)");
    cmd.add_option("--seed", a.seed, "shorthand for --set run.seed=N");
}

inline std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ValidationError("cannot open config '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Config resolve_config(const ConfigArgs& a)
{
    Config cfg = a.path.empty() ? Config{} : parse_config(slurp(a.path));
    for (const auto& o : a.overrides) apply_override(cfg, o);
    if (a.seed) cfg.seed = *a.seed;
    return cfg;
}

inline std::string one_line(std::string s)
{
    for (auto& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

inline bool needs_styler(const Config& cfg)
{
    return cfg.train.trunk_from_styler || (cfg.toggles.s2t && cfg.hp.p_s2t > 0.0) ||
           (cfg.toggles.t2s && cfg.hp.p_t2s > 0.0);
}

inline StylerNet styler_for(const Config& cfg, const std::string& path)
{
    if (!path.empty()) return load_styler(path, cfg.styler.width);
    if (needs_styler(cfg)) throw ValidationError("--styler is required when image translation or train.trunk_from_styler is enabled");
    return build_styler(cfg.seed, cfg.styler.width);
}

struct TrainOutcome {
    double miou_student = 0.0;
    double miou_teacher = 0.0;
    double miou_reported = 0.0;
};

// Runs one training job into out_dir: metrics.csv (rewritten after every
// evaluation), teacher.ckpt (best teacher) and final.ckpt (both nets).
inline TrainOutcome train_into(const Config& cfg, const StylerNet& styler, const Benchmark& bm,
                               const std::filesystem::path& out_dir)
{
    std::filesystem::create_directories(out_dir);
    std::vector<HistoryRow> rows;
    const auto metrics = out_dir / "metrics.csv";
    write_text_atomic(metrics, metrics_csv(cfg, rows));
    auto run = run_training(cfg, styler, bm, [&](const HistoryRow& row) {
        rows.push_back(row);
        write_text_atomic(metrics, metrics_csv(cfg, rows));
    });
    if (run.loop.best_teacher) {
        std::vector<CheckpointArray> best;
        append_params(best, "teacher", *run.loop.best_teacher);
        save_checkpoint(out_dir / "teacher.ckpt", best);
    }
    std::vector<CheckpointArray> final_arrays;
    append_params(final_arrays, "student", run.state.student.params);
    append_params(final_arrays, "teacher", run.state.teacher.params);
    save_checkpoint(out_dir / "final.ckpt", final_arrays);

    TrainOutcome o;
    o.miou_student = evaluate(run.state.student, bm.target_val).miou;
    o.miou_teacher = evaluate(run.state.teacher, bm.target_val).miou;
    o.miou_reported = &reported_model(run.state) == &run.state.teacher ? o.miou_teacher : o.miou_student;
    return o;
}

struct AblationCell {
    std::string value;
    Config cfg;
};

inline std::vector<AblationCell> ablation_cells(const std::string& axis, const Config& base)
{
    std::vector<AblationCell> cells;
    if (axis == "toggles") {
        struct Row {
            const char* name;
            bool s2t, t2s, pl, se;
        };
        const Row rows[] = {{"none", false, false, false, false},    {"s2t", true, false, false, false},
                            {"t2s", false, true, false, false},      {"s2t+t2s", true, true, false, false},
                            {"s2t+t2s+pl", true, true, true, false}, {"s2t+t2s+se", true, true, false, true},
                            {"full", true, true, true, true}};
        for (const auto& r : rows) {
            Config c = base;
            c.toggles = AblationToggles{r.s2t, r.t2s, r.pl, r.se};
            cells.push_back({r.name, c});
        }
    } else if (axis == "lambda_u") {
        for (double v : {0.1, 0.5, 1.0, 5.0, 10.0}) {
            Config c = base;
            c.hp.lambda_u = v;
            cells.push_back({config_detail::format_real(v), c});
        }
    } else if (axis == "k") {
        for (std::size_t v : {1, 2, 4, 6, 8}) {
            Config c = base;
            c.hp.k = v;
            cells.push_back({std::to_string(v), c});
        }
    } else {
        throw ValidationError("unknown ablation axis '" + axis + "' (expected toggles, lambda_u or k)");
    }
    return cells;
}

}  // namespace cli_detail

// Entry point of the command-line tool. Exit codes: 0 ok, 1 usage,
// 2 validation or I/O failure, 3 numeric failure.
inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr)
{
    using namespace cli_detail;
    CLI::App app{"two-domain segmentation adaptation toolkit", "bisida"};
    app.require_subcommand(1);

    ConfigArgs cfg_args;
    std::string out_path, styler_path, checkpoint_path, net_name = "teacher", split, content_path, style_path, axis;
    double alpha = 0.5, tolerance = 1e-5;
    std::size_t seeds = 20;

    auto* datagen = app.add_subcommand("datagen", "write the toy two-domain benchmark");
    add_config_options(*datagen, cfg_args);
    datagen->add_option("--out", out_path, "output root (defaults to data.root)");

    auto* train_styler_cmd = app.add_subcommand("train-styler", "train and checkpoint the style generator");
    add_config_options(*train_styler_cmd, cfg_args);
    train_styler_cmd->add_option("--out", out_path, "checkpoint path")->required();

    auto* train = app.add_subcommand("train", "train the segmentation networks");
    add_config_options(*train, cfg_args);
    train->add_option("--styler", styler_path, "style generator checkpoint");
    train->add_option("--out", out_path, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "score a segmentation checkpoint on a split");
    add_config_options(*eval, cfg_args);
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
    eval->add_option("--net", net_name, "network inside the checkpoint")->check(CLI::IsMember({"teacher", "student"}));
    eval->add_option("--split", split, "split name (defaults to data.target_val)");
    eval->add_option("--out", out_path, "also write the CSV here");

    auto* translate = app.add_subcommand("translate", "render G(content, style, alpha)");
    add_config_options(*translate, cfg_args);
    translate->add_option("--styler", styler_path, "style generator checkpoint")->required();
    translate->add_option("--content", content_path, "content image (PPM)")->required();
    translate->add_option("--style", style_path, "style image (PPM)")->required();
    translate->add_option("--alpha", alpha, "content-style trade-off in [0, 1]");
    translate->add_option("--out", out_path, "output image (PPM)")->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every registered op");
    gradcheck->add_option("--seeds", seeds, "random instances per op");
    gradcheck->add_option("--tolerance", tolerance, "maximum relative error");

    auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
    add_config_options(*ablate, cfg_args);
    ablate->add_option("--axis", axis, "toggles, lambda_u or k")->required();
    ablate->add_option("--styler", styler_path, "style generator checkpoint");
    ablate->add_option("--out", out_path, "output directory")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: usage: " << one_line(e.what()) << '\n';
        return 1;
    }

    try {
        if (datagen->parsed()) {
            Config cfg = resolve_config(cfg_args);
            if (!out_path.empty()) cfg.data.root = out_path;
            const auto bm = generate_benchmark(cfg.data, cfg.seed);
            write_benchmark(cfg.data.root, bm, cfg.data, cfg.seed);
            out << "datagen: root=" << cfg.data.root << " scenes="
                << bm.source.size() + bm.source_val.size() + bm.target.size() + bm.target_val.size() << '\n';
        } else if (train_styler_cmd->parsed()) {
            const Config cfg = resolve_config(cfg_args);
            const auto bm = load_benchmark(cfg.data);
            const auto fit = fit_styler(cfg, bm);
            const std::filesystem::path ckpt = out_path;
            if (ckpt.has_parent_path()) std::filesystem::create_directories(ckpt.parent_path());
            save_checkpoint(ckpt, styler_arrays(fit.net));
            const double val_psnr = reconstruction_psnr(fit.net, bm.source_val, bm.target_val, 25);
            std::ostringstream log;
            log << config_comment_block(cfg) << "step,phase,loss,content,style\n";
            for (const auto& r : fit.pretrain) log << r.step << ",pretrain," << r.loss << ',' << r.content << ",0\n";
            for (const auto& r : fit.train) log << r.step << ",train," << r.loss << ',' << r.content << ',' << r.style << '\n';
            write_text_atomic(ckpt.string() + ".log.csv", log.str());
            out << "train-styler: checkpoint=" << ckpt.string() << " psnr_val=" << format_number(val_psnr) << '\n';
        } else if (train->parsed()) {
            const Config cfg = resolve_config(cfg_args);
            const auto bm = load_benchmark(cfg.data);
            const auto o = train_into(cfg, styler_for(cfg, styler_path), bm, out_path);
            out << "train: miou_student=" << format_number(o.miou_student)
                << " miou_teacher=" << format_number(o.miou_teacher) << '\n';
        } else if (eval->parsed()) {
            const Config cfg = resolve_config(cfg_args);
            const std::string name = split.empty() ? cfg.data.target_val : split;
            const auto scenes = load_split(cfg.data.root, name, kNumClasses);
            const SegNet net = load_segnet(checkpoint_path, net_name, cfg.train.seg_width);
            const auto report = evaluate(net, scenes);
            std::ostringstream csv;
            const auto& names = class_names();
            write_iou_csv(csv, report, std::span<const std::string>(names.data(), names.size()));
            if (!out_path.empty()) write_text_atomic(out_path, csv.str());
            out << csv.str();
        } else if (translate->parsed()) {
            const Config cfg = resolve_config(cfg_args);
            const StylerNet net = load_styler(styler_path, cfg.styler.width);
            const Image content = read_ppm(content_path);
            const Image style = read_ppm(style_path);
            write_ppm(out_path, generate(content, style, alpha, net));
            out << "translate: wrote " << out_path << '\n';
        } else if (gradcheck->parsed()) {
            if (seeds == 0) throw ValidationError("--seeds must be positive");
            const auto result = run_gradcheck_suite(seeds, tolerance);
            out << "op,seeds,failures,max_rel_error,checked,excluded\n";
            for (const auto& o : result.ops) {
                out << o.name << ',' << o.seeds << ',' << o.failures << ',' << o.max_rel_error << ',' << o.checked
                    << ',' << o.excluded << '\n';
            }
            out << "gradcheck: " << (result.passed() ? "pass" : "fail") << " seconds=" << format_number(result.seconds)
                << '\n';
            if (!result.passed()) {
                err << "error: numeric: gradient check exceeded tolerance " << tolerance << '\n';
                return 3;
            }
        } else if (ablate->parsed()) {
            const Config base = resolve_config(cfg_args);
            const auto cells = ablation_cells(axis, base);
            const auto bm = load_benchmark(base.data);
            std::optional<StylerNet> styler;
            if (!styler_path.empty()) styler = load_styler(styler_path, base.styler.width);
            const std::filesystem::path root = out_path;
            std::filesystem::create_directories(root);
            std::string summary = config_comment_block(base);
            summary += "axis,value,s2t,t2s,pseudo_label,self_ensemble,lambda_u,k,miou_student,miou_teacher,miou_reported\n";
            for (const auto& cell : cells) {
                if (!styler && needs_styler(cell.cfg)) {
                    throw ValidationError("--styler is required for ablation cell '" + cell.value + "'");
                }
                const StylerNet net = styler ? *styler : build_styler(cell.cfg.seed, cell.cfg.styler.width);
                const auto o = train_into(cell.cfg, net, bm, root / (axis + "_" + cell.value));
                const auto& t = cell.cfg.toggles;
                summary += axis + ',' + cell.value + ',' + (t.s2t ? "1" : "0") + ',' + (t.t2s ? "1" : "0") + ',' +
                           (t.pseudo_label ? "1" : "0") + ',' + (t.self_ensemble ? "1" : "0") + ',' +
                           config_detail::format_real(cell.cfg.hp.lambda_u) + ',' + std::to_string(cell.cfg.hp.k) +
                           ',' + format_number(o.miou_student) + ',' + format_number(o.miou_teacher) + ',' +
                           format_number(o.miou_reported) + '\n';
                write_text_atomic(root / "summary.csv", summary);
                out << "ablate: " << axis << '=' << cell.value << " miou=" << format_number(o.miou_reported) << '\n';
            }
        }
    } catch (const NumericError& e) {
        err << "error: numeric: " << one_line(e.what()) << '\n';
        return 3;
    } catch (const std::exception& e) {
        err << "error: validation: " << one_line(e.what()) << '\n';
        return 2;
    }
    return 0;
}

}  // namespace bisida
