#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bisida/error.hpp"
#include "bisida/tensor.hpp"

namespace bisida {

template <typename T>
class Graph;

// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
template <typename T>
struct Var {
    Graph<T>* graph = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return graph->value(*this); }
    const Shape& dims() const { return value().dims(); }
};

// Tape of op records in creation order. Because an op can only consume
// nodes that already exist, creation order is a topological order and the
// backward pass is a single reverse sweep.
template <typename T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t)>;

    struct Node {
        std::string op;
        Tensor<T> value;
        std::vector<T> grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Tensor<T>* param = nullptr;
        bool needs_grad = false;
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Leaf that never receives gradient.
    Var<T> constant(Tensor<T> value)
    {
        Node node;
        node.op = "constant";
        value.set_requires_grad(false);
        node.value = std::move(value);
        return push(std::move(node));
    }

    // Leaf bound to an external trainable tensor. backward() accumulates into
    // p.grad(); a tensor bound more than once collects every contribution.
    Var<T> parameter(Tensor<T>& p)
    {
        Node node;
        node.op = "parameter";
        node.value = Tensor<T>(p.dims(), p.data());
        node.param = p.requires_grad() ? &p : nullptr;
        node.needs_grad = p.requires_grad();
        return push(std::move(node));
    }

    // Appends an op result. The backward closure is dropped when no input
    // needs a gradient, so inference graphs carry no adjoint bookkeeping.
    Var<T> record(std::string op, Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn)
    {
        for (std::size_t i = 0; i < value.size(); ++i) {
            if (!std::isfinite(value[i])) {
                throw NumericError("non-finite value produced by op '" + op + "' at node " +
                                   std::to_string(nodes_.size()) + ", element " + std::to_string(i));
            }
        }
        Node node;
        node.op = std::move(op);
        node.value = std::move(value);
        for (std::size_t in : inputs) node.needs_grad = node.needs_grad || nodes_.at(in).needs_grad;
        node.inputs = std::move(inputs);
        if (node.needs_grad) node.backward = std::move(fn);
        return push(std::move(node));
    }

    const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
    const Node& node(std::size_t id) const { return nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

    // Adjoint buffer of a node, allocated zeroed on first touch.
    std::vector<T>& grad_of(std::size_t id)
    {
        auto& node = nodes_[id];
        if (node.grad.empty()) node.grad.assign(node.value.size(), T{0});
        return node.grad;
    }

    void backward(Var<T> loss)
    {
        if (loss.graph != this) throw ValidationError("backward: loss belongs to another graph");
        if (value(loss).size() != 1) {
            throw ShapeError("backward: loss must be scalar, got dims " + to_string(value(loss).dims()));
        }
        visited_.clear();
        grad_of(loss.id)[0] = T{1};
        for (std::size_t id = loss.id + 1; id-- > 0;) {
            Node& node = nodes_[id];
            if (!node.needs_grad || node.grad.empty()) continue;
            visited_.push_back(id);
            for (std::size_t i = 0; i < node.grad.size(); ++i) {
                if (!std::isfinite(node.grad[i])) {
                    throw NumericError("non-finite gradient at node " + std::to_string(id) + " (op '" +
                                       node.op + "'), element " + std::to_string(i));
                }
            }
            if (node.backward) node.backward(*this, id);
            if (node.param != nullptr) {
                auto& pg = node.param->grad();
                for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += node.grad[i];
            }
        }
    }

    // Node ids touched by the last backward(), in visiting order.
    const std::vector<std::size_t>& last_backward_order() const { return visited_; }

private:
    Var<T> push(Node node)
    {
        nodes_.push_back(std::move(node));
        return Var<T>{this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
    std::vector<std::size_t> visited_;
};

namespace detail {

template <typename T>
void require_same_graph(Var<T> a, Var<T> b, const char* op)
{
    if (a.graph != b.graph) throw ValidationError(std::string(op) + ": operands from different graphs");
}

// Elementwise binary op with scalar broadcasting on either side.
// dfa/dfb return the partial derivatives at (x, y).
template <typename T, typename F, typename DA, typename DB>
Var<T> binary(const char* op, Var<T> a, Var<T> b, F f, DA dfa, DB dfb)
{
    require_same_graph(a, b, op);
    const Tensor<T>& x = a.value();
    const Tensor<T>& y = b.value();
    const bool a_scalar = x.size() == 1 && y.size() != 1;
    const bool b_scalar = y.size() == 1 && x.size() != 1;
    if (!a_scalar && !b_scalar && x.dims() != y.dims()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(x.dims()) + " vs " +
                         to_string(y.dims()));
    }
    const Shape& out_dims = a_scalar ? y.dims() : x.dims();
    Tensor<T> out(out_dims);
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = f(x[a_scalar ? 0 : i], y[b_scalar ? 0 : i]);
    }
    const std::size_t ia = a.id;
    const std::size_t ib = b.id;
    return a.graph->record(op, std::move(out), {ia, ib},
                           [ia, ib, a_scalar, b_scalar, n, dfa, dfb](Graph<T>& g, std::size_t self) {
                               const auto& go = g.node(self).grad;
                               const auto& xv = g.node(ia).value;
                               const auto& yv = g.node(ib).value;
                               if (g.needs_grad(ia)) {
                                   auto& ga = g.grad_of(ia);
                                   for (std::size_t i = 0; i < n; ++i) {
                                       const std::size_t ix = a_scalar ? 0 : i;
                                       const std::size_t iy = b_scalar ? 0 : i;
                                       ga[ix] += go[i] * dfa(xv[ix], yv[iy]);
                                   }
                               }
                               if (g.needs_grad(ib)) {
                                   auto& gb = g.grad_of(ib);
                                   for (std::size_t i = 0; i < n; ++i) {
                                       const std::size_t ix = a_scalar ? 0 : i;
                                       const std::size_t iy = b_scalar ? 0 : i;
                                       gb[iy] += go[i] * dfb(xv[ix], yv[iy]);
                                   }
                               }
                           });
}

// Elementwise unary op; df receives (input, output).
template <typename T, typename F, typename D>
Var<T> unary(std::string op, Var<T> a, F f, D df)
{
    const Tensor<T>& x = a.value();
    Tensor<T> out(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    const std::size_t ia = a.id;
    return a.graph->record(std::move(op), std::move(out), {ia}, [ia, df](Graph<T>& g, std::size_t self) {
        const auto& node = g.node(self);
        const auto& xv = g.node(ia).value;
        auto& ga = g.grad_of(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += node.grad[i] * df(xv[i], node.value[i]);
    });
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b)
{
    return detail::binary(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T{1}; }, [](T, T) { return T{1}; });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b)
{
    return detail::binary(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T{1}; }, [](T, T) { return T{-1}; });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b)
{
    return detail::binary(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Var<T> scale(Var<T> a, double s)
{
    const T k = static_cast<T>(s);
    return detail::unary("scale", a, [k](T x) { return k * x; }, [k](T, T) { return k; });
}

template <typename T>
Var<T> relu(Var<T> a)
{
    return detail::unary(
        "relu", a, [](T x) { return x > T{0} ? x : T{0}; }, [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

// Gradient is 1 on the closed interval [lo, hi] and 0 outside it.
template <typename T>
Var<T> clip(Var<T> a, double lo, double hi)
{
    if (!(lo < hi)) throw ValidationError("clip: requires lo < hi");
    const T l = static_cast<T>(lo);
    const T h = static_cast<T>(hi);
    return detail::unary(
        "clip", a, [l, h](T x) { return std::clamp(x, l, h); },
        [l, h](T x, T) { return (x >= l && x <= h) ? T{1} : T{0}; });
}

template <typename T>
Var<T> log(Var<T> a)
{
    const Tensor<T>& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > T{0})) {
            throw ValidationError("log: non-positive input at element " + std::to_string(i));
        }
    }
    return detail::unary("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

template <typename T>
Var<T> pow_scalar(Var<T> a, double p)
{
    const T e = static_cast<T>(p);
    return detail::unary(
        "pow_scalar", a, [e](T x) { return std::pow(x, e); },
        [e](T x, T) { return e * std::pow(x, e - T{1}); });
}

template <typename T>
Var<T> exp(Var<T> a)
{
    return detail::unary("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> sum(Var<T> a)
{
    const Tensor<T>& x = a.value();
    T s{0};
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
    const std::size_t ia = a.id;
    return a.graph->record("sum", Tensor<T>::scalar(s), {ia}, [ia](Graph<T>& g, std::size_t self) {
        const T go = g.node(self).grad[0];
        auto& ga = g.grad_of(ia);
        for (auto& v : ga) v += go;
    });
}

template <typename T>
Var<T> mean(Var<T> a)
{
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

enum class Elementwise { add, sub, mul, scale, relu, clip_lo_hi, log, pow_scalar, exp };

// Table-driven entry point over the elementwise family. Unary kinds read
// one input; scale and pow_scalar take p0, clip takes [p0, p1].
template <typename T>
Var<T> apply_elementwise(Elementwise kind, std::span<const Var<T>> in, double p0 = 0.0, double p1 = 0.0)
{
    const std::size_t arity =
        (kind == Elementwise::add || kind == Elementwise::sub || kind == Elementwise::mul) ? 2 : 1;
    if (in.size() != arity) throw ValidationError("apply_elementwise: wrong operand count");
    switch (kind) {
    case Elementwise::add: return add(in[0], in[1]);
    case Elementwise::sub: return sub(in[0], in[1]);
    case Elementwise::mul: return mul(in[0], in[1]);
    case Elementwise::scale: return scale(in[0], p0);
    case Elementwise::relu: return relu(in[0]);
    case Elementwise::clip_lo_hi: return clip(in[0], p0, p1);
    case Elementwise::log: return log(in[0]);
    case Elementwise::pow_scalar: return pow_scalar(in[0], p0);
    case Elementwise::exp: return exp(in[0]);
    }
    throw ValidationError("apply_elementwise: unknown kind");
}

}  // namespace bisida
