#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mstcn/errors.hpp"

namespace mstcn {

/// Dense multi-dimensional array of 64-bit floats, row-major.
///
/// Shapes follow the channels-first convention: a frame-feature matrix is
/// (channels, time), so inner loops over time touch contiguous memory.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    Tensor(std::vector<std::size_t> dims, double fill) {
        if (dims.empty()) {
            throw ShapeError("tensor shape must have at least one dimension");
        }
        std::size_t n = 1;
        for (std::size_t d : dims) {
            if (d == 0) {
                throw ShapeError("tensor dimensions must be positive");
            }
            n *= d;
        }
        shape = std::move(dims);
        data.assign(n, fill);
    }

    static Tensor zeros(std::vector<std::size_t> dims) { return Tensor(std::move(dims), 0.0); }

    static Tensor full(std::vector<std::size_t> dims, double fill) {
        return Tensor(std::move(dims), fill);
    }

    std::size_t numel() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }

    // Matrix helpers; most of the library works on (rows, cols) tensors.
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    // 3-d access, used by the (tap, in, out) convolution kernels.
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }
};

inline void require_shape(const Tensor& t, const Tensor& like, const std::string& what) {
    if (!t.same_shape(like)) {
        throw ShapeError(what + ": got " + t.shape_str() + ", expected " +
                         like.shape_str());
    }
}

inline void require_matrix(const Tensor& t, std::size_t rows, const std::string& what) {
    if (t.ndim() != 2 || t.rows() != rows) {
        throw ShapeError(what + ": got " + t.shape_str() + ", expected (" +
                         std::to_string(rows) + ", T)");
    }
}

} // namespace mstcn
