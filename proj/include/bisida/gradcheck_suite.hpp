#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "bisida/gradcheck.hpp"
#include "bisida/nn_ops.hpp"
#include "bisida/styler.hpp"

namespace bisida {

struct GradCheckProblem {
    OpClosure<double> op;
    std::vector<TensorD> inputs;
};

// One registered op: builds a random problem instance from a seeded stream.
struct GradCheckCase {
    std::string name;
    std::function<GradCheckProblem(RngStream&)> make;
};

namespace suite_detail {

inline TensorD random_tensor(const Shape& dims, RngStream& rng, double lo = -1.0, double hi = 1.0)
{
    TensorD t(dims);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

inline GradCheckCase unary(std::string name, std::function<Var<double>(Var<double>)> f, Shape dims, double lo = -1.0,
                           double hi = 1.0)
{
    return {std::move(name), [f, dims, lo, hi](RngStream& rng) {
                return GradCheckProblem{[f](Graph<double>&, std::span<const Var<double>> in) { return f(in[0]); },
                                        {random_tensor(dims, rng, lo, hi)}};
            }};
}

inline GradCheckCase binary(std::string name, std::function<Var<double>(Var<double>, Var<double>)> f, Shape a, Shape b)
{
    return {std::move(name), [f, a, b](RngStream& rng) {
                return GradCheckProblem{
                    [f](Graph<double>&, std::span<const Var<double>> in) { return f(in[0], in[1]); },
                    {random_tensor(a, rng), random_tensor(b, rng)}};
            }};
}

}  // namespace suite_detail

inline std::vector<GradCheckCase> gradcheck_cases()
{
    using namespace suite_detail;
    using V = Var<double>;
    std::vector<GradCheckCase> cases;
    cases.push_back(binary("add", [](V a, V b) { return add(a, b); }, {2, 3}, {2, 3}));
    cases.push_back(binary("add_broadcast", [](V a, V b) { return add(a, b); }, {2, 3}, {1}));
    cases.push_back(binary("sub", [](V a, V b) { return sub(a, b); }, {2, 3}, {2, 3}));
    cases.push_back(binary("mul", [](V a, V b) { return mul(a, b); }, {2, 3}, {2, 3}));
    cases.push_back(binary("mul_broadcast", [](V a, V b) { return mul(a, b); }, {1}, {2, 3}));
    cases.push_back(unary("scale", [](V a) { return scale(a, 1.7); }, {2, 3}));
    cases.push_back(unary("relu", [](V a) { return relu(a); }, {2, 3, 4}));
    cases.push_back(unary("clip", [](V a) { return clip(a, -0.5, 0.5); }, {2, 3, 4}));
    cases.push_back(unary("log", [](V a) { return log(a); }, {2, 3}, 0.5, 2.0));
    cases.push_back(unary("pow_scalar", [](V a) { return pow_scalar(a, 2.5); }, {2, 3}, 0.5, 2.0));
    cases.push_back(unary("exp", [](V a) { return exp(a); }, {2, 3}));
    cases.push_back(unary("sum", [](V a) { return sum(a); }, {2, 3}));
    cases.push_back(unary("mean", [](V a) { return mean(a); }, {2, 3}));
    cases.push_back({"conv2d", [](RngStream& rng) {
                         return GradCheckProblem{
                             [](Graph<double>&, std::span<const Var<double>> in) { return conv2d(in[0], in[1], in[2], 1, 1); },
                             {random_tensor({1, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)}};
                     }});
    cases.push_back({"conv2d_stride2", [](RngStream& rng) {
                         return GradCheckProblem{
                             [](Graph<double>&, std::span<const Var<double>> in) { return conv2d(in[0], in[1], in[2], 2, 1); },
                             {random_tensor({2, 2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)}};
                     }});
    cases.push_back({"conv2d_1x1", [](RngStream& rng) {
                         return GradCheckProblem{
                             [](Graph<double>&, std::span<const Var<double>> in) { return conv2d(in[0], in[1], in[2], 1, 0); },
                             {random_tensor({1, 3, 4, 4}, rng), random_tensor({2, 3, 1, 1}, rng), random_tensor({2}, rng)}};
                     }});
    cases.push_back(unary("maxpool2", [](V a) { return maxpool2(a); }, {1, 2, 4, 6}));
    cases.push_back(unary("upsample_nearest2", [](V a) { return upsample_nearest2(a); }, {1, 2, 3, 2}));
    cases.push_back(unary("channel_mean", [](V a) { return channel_mean(a); }, {2, 3, 3, 3}));
    cases.push_back(unary("channel_std", [](V a) { return channel_std(a, kMomentEpsilon); }, {2, 3, 3, 3}));
    cases.push_back(unary("broadcast_channels", [](V a) { return broadcast_channels(a, 2, 3); }, {2, 3}));
    cases.push_back(unary("softmax_channels", [](V a) { return softmax_channels(a); }, {1, 4, 3, 3}, -2.0, 2.0));
    cases.push_back({"cross_entropy", [](RngStream& rng) {
                         TensorD target(Shape{1, 3, 2, 3});
                         for (auto& v : target.data()) v = rng.uniform(0.0, 2.0);
                         return GradCheckProblem{[target](Graph<double>&, std::span<const Var<double>> in) {
                                                     return cross_entropy(softmax_channels(in[0]), target);
                                                 },
                                                 {random_tensor({1, 3, 2, 3}, rng, -2.0, 2.0)}};
                     }});
    cases.push_back(binary("adain", [](V c, V s) { return adain(c, s, kMomentEpsilon); }, {1, 3, 4, 4}, {1, 3, 3, 5}));
    return cases;
}

struct GradCheckSummary {
    std::string name;
    std::size_t seeds = 0;
    std::size_t failures = 0;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t excluded = 0;
};

struct GradCheckSuiteResult {
    std::vector<GradCheckSummary> ops;
    double seconds = 0.0;

    bool passed() const
    {
        for (const auto& o : ops) {
            if (o.failures) return false;
        }
        return !ops.empty();
    }
};

inline GradCheckSuiteResult run_gradcheck_suite(std::size_t seeds, double tolerance = 1e-5, std::uint64_t base_seed = 0)
{
    const auto start = std::chrono::steady_clock::now();
    GradCheckSuiteResult result;
    for (const auto& c : gradcheck_cases()) {
        GradCheckSummary s;
        s.name = c.name;
        for (std::size_t k = 0; k < seeds; ++k) {
            RngStream rng(base_seed + k, "gradcheck/" + c.name);
            auto problem = c.make(rng);
            GradCheckOptions opts;
            opts.tolerance = tolerance;
            opts.seed = base_seed + k;
            const auto report = grad_check(problem.op, std::move(problem.inputs), opts);
            ++s.seeds;
            if (!report.passed) ++s.failures;
            s.max_rel_error = std::max(s.max_rel_error, report.max_rel_error());
            for (const auto& e : report.entries) s.checked += e.checked;
            s.excluded += report.excluded();
        }
        result.ops.push_back(s);
    }
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace bisida
