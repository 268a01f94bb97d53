#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bisida/graph.hpp"
#include "bisida/rng.hpp"

namespace bisida {

template <typename T>
using OpClosure = std::function<Var<T>(Graph<T>&, std::span<const Var<T>>)>;

struct GradCheckOptions {
    double tolerance = 1e-5;
    double step = 1e-4;
    // Relative error is |a - n| / max(|a|, |n|, error_floor).
    double error_floor = 1e-3;
    // One-sided slopes disagreeing by more than kink_ratio * max(1, |slope|)
    // mark a nondifferentiable point; such elements are excluded.
    double kink_ratio = 1e-2;
    std::uint64_t seed = 0;
};

struct GradCheckEntry {
    std::size_t input = 0;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t excluded = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;
    bool passed = true;

    double max_rel_error() const
    {
        double m = 0.0;
        for (const auto& e : entries) m = std::max(m, e.max_rel_error);
        return m;
    }
    std::size_t excluded() const
    {
        std::size_t n = 0;
        for (const auto& e : entries) n += e.excluded;
        return n;
    }
};

namespace detail {

// Scalar objective: the op output itself when scalar, otherwise a fixed
// random-signed weighted sum so that sum-preserving ops (softmax) still
// produce informative gradients.
template <typename T>
Var<T> reduce_for_check(Graph<T>& g, Var<T> out, std::uint64_t seed)
{
    if (out.value().size() == 1) return out;
    RngStream rng(seed, "gradcheck-projection");
    Tensor<T> w(out.dims());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double mag = rng.uniform(0.5, 1.5);
        w[i] = static_cast<T>(rng.bernoulli(0.5) ? mag : -mag);
    }
    return sum(mul(out, g.constant(std::move(w))));
}

template <typename T>
T evaluate_objective(const OpClosure<T>& op, const std::vector<Tensor<T>>& inputs, std::uint64_t seed)
{
    Graph<T> g;
    std::vector<Var<T>> vars;
    for (const auto& t : inputs) vars.push_back(g.constant(t));
    return reduce_for_check(g, op(g, vars), seed).value()[0];
}

}  // namespace detail

// Compares reverse-mode gradients of op with central finite differences.
template <typename T>
GradCheckReport grad_check(const OpClosure<T>& op, std::vector<Tensor<T>> inputs, GradCheckOptions opts = {})
{
    GradCheckReport report;
    report.tolerance = opts.tolerance;

    for (auto& t : inputs) t.set_requires_grad(true);
    {
        Graph<T> g;
        std::vector<Var<T>> vars;
        for (auto& t : inputs) vars.push_back(g.parameter(t));
        g.backward(detail::reduce_for_check(g, op(g, vars), opts.seed));
    }

    const T h = static_cast<T>(opts.step);
    std::vector<Tensor<T>> probe;
    for (const auto& t : inputs) probe.emplace_back(t.dims(), t.data());
    const T base = detail::evaluate_objective(op, probe, opts.seed);

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        GradCheckEntry entry;
        entry.input = k;
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const T x0 = probe[k][i];
            probe[k][i] = x0 + h;
            const T up = detail::evaluate_objective(op, probe, opts.seed);
            probe[k][i] = x0 - h;
            const T down = detail::evaluate_objective(op, probe, opts.seed);
            probe[k][i] = x0;

            const double right = static_cast<double>(up - base) / opts.step;
            const double left = static_cast<double>(base - down) / opts.step;
            const double scale = std::max({1.0, std::abs(left), std::abs(right)});
            if (std::abs(right - left) > opts.kink_ratio * scale) {
                ++entry.excluded;
                continue;
            }
            const double numeric = static_cast<double>(up - down) / (2.0 * opts.step);
            const double analytic = static_cast<double>(inputs[k].grad()[i]);
            const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.error_floor});
            entry.max_rel_error = std::max(entry.max_rel_error, std::abs(analytic - numeric) / denom);
            ++entry.checked;
        }
        if (entry.max_rel_error > opts.tolerance) report.passed = false;
        report.entries.push_back(entry);
    }
    return report;
}

}  // namespace bisida
