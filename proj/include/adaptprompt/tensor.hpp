// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor of doubles and the error types shared by the library.

#ifndef ADAPTPROMPT_TENSOR_HPP
#define ADAPTPROMPT_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace adaptprompt {

/// Raised when operand extents do not fit together.
class DimensionError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Raised when an operation would produce NaN or Inf.
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Raised for malformed files or inputs that violate a documented precondition.
class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_size(shape_) != data_.size()) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    /// Builds a 2-D tensor from nested rows; all rows must have equal length.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("ragged matrix literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    static Tensor vector(std::initializer_list<double> values) {
        return Tensor({values.size()}, std::vector<double>(values));
    }

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    std::size_t dim(std::size_t axis) const {
        if (axis >= shape_.size()) throw DimensionError("axis out of range for " + shape_string(shape_));
        return shape_[axis];
    }
    std::size_t rows() const { return dim(0); }
    std::size_t cols() const { return rank() == 1 ? 1 : dim(1); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    std::span<double> row(std::size_t i) {
        const std::size_t w = shape_.back();
        return std::span<double>(data_).subspan(i * w, w);
    }
    std::span<const double> row(std::size_t i) const {
        const std::size_t w = shape_.back();
        return std::span<const double>(data_).subspan(i * w, w);
    }

    /// Same data, new extents; total size must be preserved.
    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != data_.size()) {
            throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    bool all_finite() const noexcept {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

  private:
    Shape shape_;
    std::vector<double> data_;
};

inline void require_finite(const Tensor& t, const char* what) {
    if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite value produced");
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_string(t.shape()));
    }
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimensionError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

/// ||a - b|| / max(||a||, ||b||, floor). Used by every gradient check in the project.
inline double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-12) {
    if (a.shape() != b.shape()) throw DimensionError("relative_error: shape mismatch");
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
    const double denom = std::max({l2_norm(a.data()), l2_norm(b.data()), floor});
    return std::sqrt(diff) / denom;
}

}  // namespace adaptprompt

#endif
