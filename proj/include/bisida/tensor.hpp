#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bisida/error.hpp"

namespace bisida {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& dims)
{
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& dims)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << 'x';
        os << dims[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major array. Images use NCHW. The gradient buffer exists only
// while requires_grad is set and always matches the data length.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape dims, T fill = T{0})
        : dims_(std::move(dims)), data_(numel(dims_), fill)
    {
    }

    Tensor(Shape dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data))
    {
        if (data_.size() != numel(dims_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match dims " + to_string(dims_));
        }
    }

    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    const Shape& dims() const { return dims_; }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t rank() const { return dims_.size(); }
    std::size_t size() const { return data_.size(); }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on)
    {
        requires_grad_ = on;
        if (on) {
            grad_.assign(data_.size(), T{0});
        } else {
            grad_.clear();
            grad_.shrink_to_fit();
        }
    }
    std::vector<T>& grad() { return grad_; }
    const std::vector<T>& grad() const { return grad_; }
    void zero_grad()
    {
        std::fill(grad_.begin(), grad_.end(), T{0});
    }

    bool all_finite() const
    {
        for (T v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    template <typename U>
    Tensor<U> cast() const
    {
        Tensor<U> out(dims_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    Shape dims_;
    std::vector<T> data_;
    std::vector<T> grad_;
    bool requires_grad_ = false;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace bisida
