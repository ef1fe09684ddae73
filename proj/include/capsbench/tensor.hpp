#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace capsbench {

#ifdef CAPSBENCH_REAL_FLOAT
using real = float;
#else
using real = double;
#endif

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline long shape_size(const std::vector<int>& shape) {
    long n = 1;
    for (int d : shape) n *= d;
    return n;
}

// Dense N-dimensional array, row-major.
struct Tensor {
    std::vector<int> shape;
    std::vector<real> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, real fill = 0) : shape(std::move(s)) {
        for (int d : shape)
            if (d <= 0) throw ShapeError("tensor extent must be positive, got " + std::to_string(d));
        data.assign(static_cast<size_t>(shape_size(shape)), fill);
    }
    Tensor(std::vector<int> s, std::vector<real> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_size(shape) != static_cast<long>(data.size()))
            throw ShapeError("tensor data length does not match shape product");
    }

    static Tensor scalar(real v) { return Tensor({1}, std::vector<real>{v}); }

    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    long size() const { return static_cast<long>(data.size()); }

    real& operator[](long i) { return data[static_cast<size_t>(i)]; }
    real operator[](long i) const { return data[static_cast<size_t>(i)]; }

    // Row-major index helpers for the common ranks.
    real& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    real at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
    real& at(int i, int j, int k) {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    real at(int i, int j, int k) const {
        return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    real& at(int i, int j, int k, int l) {
        return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * static_cast<size_t>(shape[3]) + l];
    }
    real at(int i, int j, int k, int l) const {
        return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * static_cast<size_t>(shape[3]) + l];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (real v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool is_scalar() const { return size() == 1; }
    real scalar_value() const {
        if (!is_scalar()) throw ShapeError("expected scalar tensor");
        return data[0];
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Debug-only NaN/Inf tripwire.
#ifndef NDEBUG
#define CAPSBENCH_ASSERT_FINITE(t) assert((t).all_finite())
#else
#define CAPSBENCH_ASSERT_FINITE(t) ((void)0)
#endif

}  // namespace capsbench
