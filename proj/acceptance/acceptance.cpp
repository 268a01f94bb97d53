// Acceptance run: one PASS/FAIL line per criterion. Criteria 6-10 drive the
// command-line tool end to end on the toy benchmark (several minutes).
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "bisida/cli.hpp"

using namespace bisida;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail)
{
    std::printf("%s %2d %-22s %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += pass ? 0 : 1;
}

std::string fmt(const char* f, auto... v)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, v...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

TensorF random_tensor(const Shape& dims, RngStream& rng, double lo, double hi)
{
    TensorF t(dims);
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

Image random_image(std::size_t h, std::size_t w, RngStream& rng)
{
    Image img(h, w);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    return img;
}

TensorF random_probs(std::size_t c, std::size_t h, std::size_t w, RngStream& rng, double spread)
{
    Graph<float> g;
    return softmax_channels(g.constant(random_tensor({1, c, h, w}, rng, -spread, spread))).value();
}

double max_abs_diff(std::span<const float> a, std::span<const float> b)
{
    double m = a.size() == b.size() ? 0.0 : INFINITY;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
    return m;
}

double param_gap(const ParamSet& a, const ParamSet& b)
{
    double m = 0;
    for (std::size_t k = 0; k < a.size(); ++k)
        m = std::max(m, max_abs_diff(a.entries()[k].tensor.data(), b.entries()[k].tensor.data()));
    return m;
}

void criterion_gradcheck()
{
    const auto r = run_gradcheck_suite(20, 1e-5);
    double worst = 0;
    std::size_t seeds = 20;
    for (const auto& o : r.ops) {
        worst = std::max(worst, o.max_rel_error);
        seeds = std::min(seeds, o.seeds);
    }
    report(1, "autodiff grad_check", r.passed() && seeds >= 20 && r.seconds <= 60.0,
           fmt("%zu ops x %zu seeds, max rel err %.2e (<= 1e-5), %.1f s (<= 60 s)", r.ops.size(), seeds, worst,
               r.seconds));
}

void criterion_adain()
{
    RngStream rng(7, "acceptance/adain");
    double worst = 0;
    for (int pair = 0; pair < 100; ++pair) {
        // Gaussian feature-map-like pairs; spatial extents 4..12.
        const std::size_t c = 1 + rng.index(8), h = 4 + rng.index(9), w = 4 + rng.index(9);
        const double cs = rng.uniform(0.5, 3.0), ss = rng.uniform(0.5, 3.0), shift = rng.uniform(-2.0, 2.0);
        auto gaussian = [&](Shape dims, double mean, double sd) {
            TensorF t(dims);
            for (auto& v : t.data()) v = static_cast<float>(mean + sd * rng.normal());
            return t;
        };
        Graph<float> g;
        const auto content = g.constant(gaussian({1, c, h, w}, 0.0, cs));
        const auto style = g.constant(gaussian({1, c, 4 + rng.index(9), 4 + rng.index(9)}, shift, ss));
        const auto out = adain(content, style, kMomentEpsilon).value();
        // Independent double-precision moments.
        auto moments = [](const TensorF& t, std::size_t ch) {
            const std::size_t hw = t.dim(2) * t.dim(3);
            double m = 0, v = 0;
            for (std::size_t i = 0; i < hw; ++i) m += t[ch * hw + i];
            m /= double(hw);
            for (std::size_t i = 0; i < hw; ++i) v += (t[ch * hw + i] - m) * (t[ch * hw + i] - m);
            return std::pair{m, std::sqrt(v / double(hw))};
        };
        for (std::size_t ch = 0; ch < c; ++ch) {
            const auto [mo, so] = moments(out, ch);
            const auto [ms, ss2] = moments(style.value(), ch);
            worst = std::max({worst, std::abs(mo - ms), std::abs(so - ss2)});
        }
    }
    report(2, "AdaIN moment match", worst <= 1e-4, fmt("100 pairs, max |moment error| %.2e (<= 1e-4)", worst));
}

void criterion_reductions()
{
    RngStream rng(7, "acceptance/reductions");
    std::vector<std::pair<std::string, double>> gaps;

    const auto styler = build_styler(7, 8);
    double alpha0 = 0;
    for (int i = 0; i < 5; ++i) {
        const auto c = random_image(16, 16, rng), s = random_image(16, 16, rng);
        alpha0 = std::max(alpha0, max_abs_diff(generate(c, s, 0.0, styler).pixels, reconstruct(c, styler).pixels));
    }
    gaps.emplace_back("alpha=0", alpha0);

    double t1 = 0;
    for (int i = 0; i < 5; ++i) {
        const auto p = random_probs(5, 8, 8, rng, 4.0);
        t1 = std::max(t1, max_abs_diff(sharpen(p, 1.0).data(), p.data()));
    }
    gaps.emplace_back("T=1", t1);

    const auto student = build_segnet(kNumClasses, 1, 4);
    auto teacher = init_teacher(build_segnet(kNumClasses, 2, 4));
    const auto before = teacher;
    ema_update(teacher, student, 1.0);
    double ema = param_gap(teacher.params, before.params);
    ema_update(teacher, student, 0.0);
    ema = std::max(ema, param_gap(teacher.params, student.params));
    gaps.emplace_back("eta in {0,1}", ema);

    {
        const auto src = generate_dataset(synth_a(), 4, 16, 16, 7, "acc_src");
        const auto tgt = generate_dataset(real_b(), 4, 16, 16, 7, "acc_tgt");
        const auto si = images_of(src), ti = images_of(tgt);
        HyperParams hp;
        hp.lambda_u = 0.0;
        hp.tau = 0.3;
        auto st = make_trainer_state(kNumClasses, 4, build_styler(7, 4), class_priors(src), hp, {}, OptimConfig{}, 7);
        double lam = 0;
        for (int i = 0; i < 4; ++i) {
            const auto r = train_step(si[i], src[i].label, ti[i], si, ti, st);
            lam = std::max(lam, std::abs(r.loss - r.loss_s));
        }
        gaps.emplace_back("lambda_u=0", lam);
    }

    {
        Graph<float> g;
        const auto p = g.constant(random_probs(5, 8, 8, rng, 3.0));
        const auto pl = make_pseudo_label(random_probs(5, 8, 8, rng, 3.0), 0.0);
        const std::vector<double> ones(5, 1.0);
        gaps.emplace_back("w=1 full mask",
                          std::abs(unsupervised_loss(p, pl, ones).value()[0] - supervised_loss(p, pl.q).value()[0]));
    }

    {
        TensorF z = random_tensor({1, 5, 8, 8}, rng, -2.0, 2.0);
        z.set_requires_grad(true);
        Graph<float> g;
        const auto p = softmax_channels(g.parameter(z));
        auto pl = make_pseudo_label(random_probs(5, 8, 8, rng, 3.0), 0.0);
        std::fill(pl.mask.begin(), pl.mask.end(), 0);
        const auto l = unsupervised_loss(p, pl, std::vector<double>(5, 3.0));
        g.backward(l);
        double m = std::abs(double(l.value()[0]));
        for (float v : z.grad()) m = std::max(m, std::abs(double(v)));
        gaps.emplace_back("empty mask", m);
    }

    double worst = 0;
    std::string detail;
    for (const auto& [name, gap] : gaps) {
        worst = std::max(worst, gap);
        detail += (detail.empty() ? "" : ", ") + name + fmt(" %.1e", gap);
    }
    report(3, "reduction identities", worst <= 1e-6, detail + " (each <= 1e-6)");
}

void criterion_pseudo_label()
{
    RngStream rng(7, "acceptance/pseudo");
    const auto p = random_probs(5, 100, 100, rng, 4.0);
    const auto q = argmax_labels(p);
    std::size_t flips = 0;
    for (double t : {0.1, 0.25, 0.5, 1.0}) {
        const auto s = argmax_labels(sharpen(p, t));
        for (std::size_t i = 0; i < q.labels.size(); ++i) flips += s.labels[i] != q.labels[i];
    }
    const auto sharp = sharpen(p, 0.25);
    bool monotone = true;
    std::size_t prev = q.labels.size() + 1;
    for (int i = 0; i <= 100; ++i) {
        const auto mask = make_pseudo_label(sharp, i / 100.0).mask;
        const std::size_t count = std::count(mask.begin(), mask.end(), 1);
        monotone = monotone && count <= prev;
        prev = count;
    }
    report(4, "pseudo-label invariants", flips == 0 && monotone,
           fmt("10^4 distributions x 4 temperatures, %zu argmax flips; mask count %s over 101 tau values", flips,
               monotone ? "non-increasing" : "NOT monotone"));
}

void criterion_class_weights()
{
    std::vector<std::string> warnings;
    const auto saved = warning_sink();
    warning_sink() = [&](const std::string& m) { warnings.push_back(m); };
    const auto w = class_weights(ClassPriors{{0.75, 0.25}}, 1.0, 1.0);
    const double e = std::max(std::abs(w[0] - 4.0 / 3.0), std::abs(w[1] - 4.0));
    double g0 = 0;
    for (double v : class_weights(ClassPriors{{0.6, 0.1, 0.1, 0.15, 0.05}}, 1.0, 0.0)) g0 = std::max(g0, std::abs(v - 1.0));
    warning_sink() = saved;
    report(5, "class weight spot values", e <= 1e-9 && g0 <= 1e-9,
           fmt("[%.12f, %.12f] vs [4/3, 4] err %.1e; gamma=0 max |w-1| %.1e (<= 1e-9)", w[0], w[1], e, g0));
}

struct Cli {
    std::vector<std::string> base;
    bool ok = true;

    int operator()(std::vector<std::string> args)
    {
        args.insert(args.begin() + 1, base.begin(), base.end());
        std::ostringstream out, err;
        const int code = run_command(args, out, err);
        std::printf("  $ bisida");
        for (const auto& a : args) std::printf(" %s", a.c_str());
        std::printf("\n  %s", out.str().c_str());
        if (code != 0) {
            std::printf("  exit %d: %s", code, err.str().c_str());
            ok = false;
        }
        std::fflush(stdout);
        return code;
    }
};

std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double miou_of(const fs::path& ckpt, const std::string& net, std::span<const Scene> split, std::size_t width)
{
    return 100.0 * evaluate(load_segnet(ckpt, net, width), split).miou;
}

void pipeline(const fs::path& config, const fs::path& work)
{
    fs::remove_all(work);
    fs::create_directories(work);
    Cli cli{{"--config", config.string(), "--seed", "7", "--set", "data.root=" + (work / "data").string()}};
    Config cfg = cli_detail::resolve_config({config.string(), {"data.root=" + (work / "data").string()}, 7});
    const std::string styler = (work / "styler.ckpt").string();

    cli({"datagen"});
    auto t0 = std::chrono::steady_clock::now();
    cli({"train-styler", "--out", styler});
    const double styler_s = seconds_since(t0);
    if (!cli.ok) {
        for (int id = 6; id <= 10; ++id) report(id, "pipeline", false, "toy pipeline setup failed");
        return;
    }
    const auto bm = load_benchmark(cfg.data);

    const double styler_psnr =
        reconstruction_psnr(load_styler(styler, cfg.styler.width), bm.source_val, bm.target_val, 25);
    const std::size_t held_out =
        std::min<std::size_t>(25, bm.source_val.size()) + std::min<std::size_t>(25, bm.target_val.size());

    struct RunSpec {
        std::string name;
        std::vector<std::string> sets;
        std::string reported;
    };
    const std::vector<RunSpec> runs{
        {"baseline", {"ablation.s2t=false", "ablation.t2s=false", "hyper.lambda_u=0", "hyper.p_s2t=0"}, "student"},
        {"s2t_only", {"ablation.t2s=false"}, "student"},
        {"full", {}, "teacher"},
    };
    std::vector<double> target, seconds;
    double base_source = 0;
    for (const auto& r : runs) {
        std::vector<std::string> args{"train", "--styler", styler, "--out", (work / r.name).string()};
        for (const auto& s : r.sets) {
            args.push_back("--set");
            args.push_back(s);
        }
        t0 = std::chrono::steady_clock::now();
        const int code = cli(args);
        seconds.push_back(seconds_since(t0));
        if (code != 0) {
            target.push_back(NAN);
            continue;
        }
        const auto ckpt = work / r.name / "final.ckpt";
        target.push_back(miou_of(ckpt, r.reported, bm.target_val, cfg.train.seg_width));
        const char* other = r.reported == "student" ? "teacher" : "student";
        std::printf("  %s: target-val mIoU %s %.2f, %s %.2f\n", r.name.c_str(), r.reported.c_str(), target.back(),
                    other, miou_of(ckpt, other, bm.target_val, cfg.train.seg_width));
        if (r.name == "baseline") base_source = miou_of(ckpt, "student", bm.source_val, cfg.train.seg_width);
    }

    const double base = target[0], s2t = target[1], full = target[2];
    report(6, "domain gap premise", base_source - base >= 10.0 && seconds[0] <= 600.0,
           fmt("source-only: source-val %.2f, target-val %.2f, gap %.2f (>= 10), %.0f s (<= 600 s)", base_source, base,
               base_source - base, seconds[0]));
    report(7, "end-to-end adaptation", full - base >= 5.0 && seconds[2] <= 1800.0,
           fmt("full %.2f vs source-only %.2f, +%.2f (>= 5), %.0f s (<= 1800 s)", full, base, full - base, seconds[2]));
    report(8, "translation ablation", full - s2t >= 1.0 && s2t - base >= 1.0,
           fmt("full %.2f >= S2T-only %.2f >= baseline %.2f, margins %.2f and %.2f (each >= 1)", full, s2t, base,
               full - s2t, s2t - base));

    // Determinism: repeat a short full run twice; compare bytes.
    std::vector<std::string> det_sets{"--set", "train.steps=250"};
    std::vector<std::string> a{"train", "--styler", styler, "--out", (work / "det_a").string()};
    std::vector<std::string> b{"train", "--styler", styler, "--out", (work / "det_b").string()};
    a.insert(a.end(), det_sets.begin(), det_sets.end());
    b.insert(b.end(), det_sets.begin(), det_sets.end());
    const bool ran = cli(a) == 0 && cli(b) == 0;
    const auto ma = read_file(work / "det_a" / "metrics.csv"), mb = read_file(work / "det_b" / "metrics.csv");
    const bool csv_same = ran && !ma.empty() && ma == mb;
    bool ckpt_same = false;
    if (ran) {
        const auto bytes = netpbm::read_file(work / "det_a" / "final.ckpt");
        const auto arrays = decode_checkpoint(bytes);
        auto net = build_segnet(kNumClasses, 0, cfg.train.seg_width);
        load_params(arrays, "student", net.params);
        std::vector<CheckpointArray> again;
        append_params(again, "student", net.params);
        load_params(arrays, "teacher", net.params);
        append_params(again, "teacher", net.params);
        save_checkpoint(work / "resaved.ckpt", again);
        ckpt_same = netpbm::read_file(work / "resaved.ckpt") == bytes &&
                    bytes == netpbm::read_file(work / "det_b" / "final.ckpt");
    }
    report(9, "determinism", csv_same && ckpt_same,
           fmt("two seed-7 train runs: metrics.csv %s (%zu bytes); checkpoint load/save round-trip %s",
               csv_same ? "identical" : "DIFFER", ma.size(), ckpt_same ? "bitwise identical" : "DIFFERS"));
    report(10, "styler reconstruction", styler_psnr >= 20.0,
           fmt("alpha=0 PSNR %.2f dB on %zu held-out images (>= 20 dB), fit %.0f s", styler_psnr, held_out, styler_s));
}

}  // namespace

int main(int argc, char** argv)
{
    if (argc < 2) {
        std::fprintf(stderr, "usage: acceptance <config.ini> [work dir]\n");
        return 1;
    }
    const fs::path config = argv[1];
    const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "bisida_acceptance";
    try {
        criterion_gradcheck();
        criterion_adain();
        criterion_reductions();
        criterion_pseudo_label();
        criterion_class_weights();
        pipeline(config, work);
    } catch (const std::exception& e) {
        std::printf("FAIL    aborted: %s\n", e.what());
        return 1;
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
