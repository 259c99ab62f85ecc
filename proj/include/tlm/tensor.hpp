#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "tlm/common.hpp"

namespace tlm {

/// Dense row-major tensor. Training runs use Tensor<float>; verification
/// (finite-difference) runs instantiate Tensor<double>.
template <typename T>
struct Tensor {
    std::vector<size_t> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<size_t> shape_in, T fill = T(0))
        : shape(std::move(shape_in)), data(count(shape), fill) {}

    Tensor(std::vector<size_t> shape_in, std::vector<T> data_in)
        : shape(std::move(shape_in)), data(std::move(data_in)) {
        if (count(shape) != data.size())
            throw std::invalid_argument("tensor data length does not match shape " + shape_str());
    }

    static size_t count(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t d : s) {
            if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
            n *= d;
        }
        return n;
    }

    size_t size() const { return data.size(); }
    size_t rank() const { return shape.size(); }
    size_t dim(size_t i) const { return shape.at(i); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ']';
        return os.str();
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

}  // namespace tlm
