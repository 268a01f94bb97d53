#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bisida/error.hpp"
#include "bisida/graph.hpp"
#include "bisida/tensor.hpp"

namespace bisida {

struct NamedTensor {
    std::string name;
    TensorF tensor;
};

// Named trainable tensors of one network, in a fixed order.
class ParamSet {
public:
    TensorF& add(std::string name, TensorF t, bool trainable = true)
    {
        for (const auto& p : params_) {
            if (p.name == name) throw ValidationError("duplicate parameter name '" + name + "'");
        }
        t.set_requires_grad(trainable);
        params_.push_back({std::move(name), std::move(t)});
        return params_.back().tensor;
    }

    TensorF& at(const std::string& name)
    {
        for (auto& p : params_) {
            if (p.name == name) return p.tensor;
        }
        throw ValidationError("no parameter named '" + name + "'");
    }
    const TensorF& at(const std::string& name) const { return const_cast<ParamSet*>(this)->at(name); }

    std::vector<NamedTensor>& entries() { return params_; }
    const std::vector<NamedTensor>& entries() const { return params_; }
    std::size_t size() const { return params_.size(); }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.tensor.size();
        return n;
    }

    void set_trainable(bool on)
    {
        for (auto& p : params_) p.tensor.set_requires_grad(on);
    }

    void zero_grad()
    {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    // Bit-exact equality of names, dims and values.
    bool same_values(const ParamSet& other) const
    {
        if (params_.size() != other.params_.size()) return false;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const auto& a = params_[i];
            const auto& b = other.params_[i];
            if (a.name != b.name || a.tensor.dims() != b.tensor.dims()) return false;
            if (a.tensor.data() != b.tensor.data()) return false;
        }
        return true;
    }

private:
    std::vector<NamedTensor> params_;
};

enum class OptimKind { adam, sgd };

struct OptimConfig {
    OptimKind kind = OptimKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double momentum = 0.9;
    double weight_decay = 0.0;
    double adam_eps = 1e-8;
};

class OptimState {
public:
    explicit OptimState(OptimConfig cfg = {}) : cfg_(cfg) {}

    const OptimConfig& config() const { return cfg_; }
    std::uint64_t step_count() const { return step_; }

    // Adam (bias-corrected) or SGD with momentum; weight decay is added to the
    // gradient. Gradients are zeroed afterwards.
    void step(ParamSet& params) { step(std::vector<ParamSet*>{&params}); }

    // Steps several sets as one flat parameter list (moment buffers follow
    // the concatenated order, which must not change between calls).
    void step(const std::vector<ParamSet*>& sets)
    {
        std::vector<NamedTensor*> entries;
        for (ParamSet* set : sets) {
            for (auto& p : set->entries()) entries.push_back(&p);
        }
        if (first_.empty()) {
            for (const auto* p : entries) {
                first_.emplace_back(p->tensor.size(), 0.0f);
                if (cfg_.kind == OptimKind::adam) second_.emplace_back(p->tensor.size(), 0.0f);
            }
        }
        if (first_.size() != entries.size()) throw ValidationError("optimizer: parameter set changed size");
        for (std::size_t k = 0; k < entries.size(); ++k) {
            const auto& t = entries[k]->tensor;
            if (!t.requires_grad() || t.grad().size() != t.size()) {
                throw ValidationError("optimizer: missing gradient for parameter '" + entries[k]->name + "'");
            }
            if (first_[k].size() != t.size()) {
                throw ValidationError("optimizer: moment buffer shape mismatch for '" + entries[k]->name + "'");
            }
        }
        ++step_;
        const double lr = cfg_.learning_rate;
        const double wd = cfg_.weight_decay;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t k = 0; k < entries.size(); ++k) {
            auto& t = entries[k]->tensor;
            auto& g = t.grad();
            auto& m = first_[k];
            for (std::size_t i = 0; i < t.size(); ++i) {
                const double gi = static_cast<double>(g[i]) + wd * static_cast<double>(t[i]);
                if (cfg_.kind == OptimKind::adam) {
                    auto& v = second_[k];
                    m[i] = static_cast<float>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi);
                    v[i] = static_cast<float>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi);
                    const double mhat = m[i] / bc1;
                    const double vhat = v[i] / bc2;
                    t[i] = static_cast<float>(t[i] - lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps));
                } else {
                    m[i] = static_cast<float>(cfg_.momentum * m[i] + gi);
                    t[i] = static_cast<float>(t[i] - lr * m[i]);
                }
            }
            t.zero_grad();
        }
    }

private:
    OptimConfig cfg_;
    std::vector<std::vector<float>> first_;
    std::vector<std::vector<float>> second_;
    std::uint64_t step_ = 0;
};

}  // namespace bisida
