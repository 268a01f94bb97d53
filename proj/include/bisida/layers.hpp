#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "bisida/nn_ops.hpp"
#include "bisida/optim.hpp"
#include "bisida/rng.hpp"

namespace bisida {

// Registers "<name>.weight" (OxIxKxK, He fan-in init) and "<name>.bias" (zeros).
inline void add_conv(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                     RngStream& rng)
{
    TensorF w(Shape{out, in, k, k});
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in * k * k));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(std_dev * rng.normal());
    params.add(name + ".weight", std::move(w));
    params.add(name + ".bias", TensorF(Shape{out}));
}

// Graph view of a ParamSet: trainable tensors become gradient-collecting
// leaves, everything else (or everything, for inference) enters as constants.
class Bound {
public:
    // Tensors with requires_grad collect gradients; the rest enter as constants.
    static Bound trainable(Graph<float>& g, ParamSet& params)
    {
        Bound b;
        for (auto& p : params.entries()) b.vars_.emplace_back(p.name, g.parameter(p.tensor));
        return b;
    }

    // Every tensor enters as a constant.
    static Bound frozen(Graph<float>& g, const ParamSet& params)
    {
        Bound b;
        for (const auto& p : params.entries()) {
            b.vars_.emplace_back(p.name, g.constant(TensorF(p.tensor.dims(), p.tensor.data())));
        }
        return b;
    }

    Var<float> operator[](const std::string& name) const
    {
        for (const auto& [n, v] : vars_) {
            if (n == name) return v;
        }
        throw ValidationError("unbound parameter '" + name + "'");
    }

    Var<float> conv(const std::string& layer, Var<float> x, std::size_t pad) const
    {
        return conv2d(x, (*this)[layer + ".weight"], (*this)[layer + ".bias"], 1, pad);
    }

private:
    Bound() = default;

    std::vector<std::pair<std::string, Var<float>>> vars_;
};

}  // namespace bisida
