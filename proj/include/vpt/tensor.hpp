#pragma once

#include "vpt/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace vpt {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;

// Aligned storage: Eigen picks its vectorized loop split from the buffer
// address, so unaligned heap blocks would make sums vary from run to run.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

// Dense row-major float64 buffer. Rank 0 and rank 1 tensors are viewed as a
// single row when treated as a matrix, so a bias of shape {n} is a 1 x n matrix.
struct Tensor {
    std::vector<std::size_t> shape;
    Buffer values;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s)
        : shape(std::move(s)), values(count(shape), 0.0) {}

    Tensor(std::vector<std::size_t> s, Buffer v) : shape(std::move(s)), values(std::move(v)) { check(); }

    Tensor(std::vector<std::size_t> s, const std::vector<double> &v)
        : shape(std::move(s)), values(v.begin(), v.end()) {
        check();
    }

    Tensor(std::vector<std::size_t> s, std::initializer_list<double> v) : shape(std::move(s)), values(v) { check(); }

    void check() const {
        if (count(shape) != values.size()) {
            throw ShapeError("tensor of shape " + shape_string(shape) + " given " +
                             std::to_string(values.size()) + " values");
        }
    }

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

    static Tensor filled(std::size_t rows, std::size_t cols, double v) {
        Tensor t({rows, cols});
        std::fill(t.values.begin(), t.values.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

    static std::size_t count(const std::vector<std::size_t> &s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    static std::string shape_string(const std::vector<std::size_t> &s) {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < s.size(); ++i) {
            os << (i ? "," : "") << s[i];
        }
        os << ']';
        return os.str();
    }

    std::size_t size() const noexcept { return values.size(); }

    std::size_t rows() const noexcept {
        return shape.size() < 2 ? 1 : shape[0];
    }

    std::size_t cols() const noexcept {
        if (shape.empty()) return 1;
        if (shape.size() == 1) return shape[0];
        return values.size() / shape[0];
    }

    double &operator()(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

    MatMap mat() { return MatMap(values.data(), rows(), cols()); }
    ConstMatMap mat() const { return ConstMatMap(values.data(), rows(), cols()); }

    // Exponent-bit test; an integer OR-reduction vectorizes where isfinite does not.
    bool all_finite() const noexcept {
        constexpr std::uint64_t kExp = 0x7FF0000000000000ull;
        std::uint64_t bad = 0;
        for (double v : values) bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & kExp) == kExp);
        return bad == 0;
    }

    bool same_shape(const Tensor &o) const noexcept { return rows() == o.rows() && cols() == o.cols(); }

    friend bool operator==(const Tensor &a, const Tensor &b) {
        return a.shape == b.shape && a.values == b.values;
    }
};

} // namespace vpt
