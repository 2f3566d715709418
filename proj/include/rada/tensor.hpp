#pragma once

// Dense row-major tensors of rank 1..3 over 64-bit floats, plus the eager
// (non-differentiable) kernels the rest of the library is built on.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rada/errors.hpp"

namespace rada {

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

inline std::size_t shape_product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_product(shape_), fill) {
        check_rank();
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_rank();
        if (shape_product(shape_) != data_.size()) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
        }
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t n = rows.size();
        const std::size_t m = n ? rows.begin()->size() : 0;
        std::vector<double> data;
        data.reserve(n * m);
        for (const auto& row : rows) {
            if (row.size() != m) throw DimensionError("ragged matrix literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({n, m}, std::move(data));
    }

    static Tensor row(std::span<const double> values) {
        return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return shape_.at(shape_.size() - 1); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    double& operator()(std::size_t b, std::size_t i, std::size_t j) {
        return data_[(b * shape_[1] + i) * shape_[2] + j];
    }
    double operator()(std::size_t b, std::size_t i, std::size_t j) const {
        return data_[(b * shape_[1] + i) * shape_[2] + j];
    }

    std::span<double> row_span(std::size_t i) {
        const std::size_t w = cols();
        return std::span<double>(data_).subspan(i * w, w);
    }
    std::span<const double> row_span(std::size_t i) const {
        const std::size_t w = cols();
        return std::span<const double>(data_).subspan(i * w, w);
    }

    // Slice b of a rank-3 tensor as an (extent1 x extent2) matrix copy.
    Tensor slice(std::size_t b) const {
        if (rank() != 3) throw DimensionError("slice needs a rank-3 tensor, got " + shape_string(shape_));
        const std::size_t n = shape_[1] * shape_[2];
        return Tensor({shape_[1], shape_[2]},
                      std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(b * n),
                                          data_.begin() + static_cast<std::ptrdiff_t>((b + 1) * n)));
    }

    bool requires_grad = false;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_rank() const {
        if (shape_.empty() || shape_.size() > 3) {
            throw DimensionError("tensor rank must be 1..3, got shape " + shape_string(shape_));
        }
    }

    Shape shape_;
    std::vector<double> data_;
};

inline bool all_finite(const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

inline void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw DimensionError(std::string(what) + " must be a matrix, got " + shape_string(t.shape()));
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul lhs");
    require_matrix(b, "matmul rhs");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul inner extents differ: " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a(i, p);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out(i, j) += av * b(p, j);
        }
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose operand");
    Tensor out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

// Softmax along the last axis with max subtraction.
inline Tensor softmax_lastdim(const Tensor& x) {
    const std::size_t w = x.cols();
    if (w == 0) throw DimensionError("softmax over an empty last axis");
    Tensor out(x.shape());
    const std::size_t n = x.size() / w;
    for (std::size_t r = 0; r < n; ++r) {
        const double* in = x.data().data() + r * w;
        double* o = out.data().data() + r * w;
        const double mx = *std::max_element(in, in + w);
        double sum = 0.0;
        for (std::size_t j = 0; j < w; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < w; ++j) o[j] /= sum;
    }
    return out;
}

inline std::vector<double> row_norms(const Tensor& x) {
    require_matrix(x, "row_norms operand");
    std::vector<double> norms(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double s = 0.0;
        for (double v : x.row_span(i)) s += v * v;
        norms[i] = std::sqrt(s);
    }
    return norms;
}

inline Tensor l2_normalize_rows(const Tensor& x) {
    const auto norms = row_norms(x);
    Tensor out = x;
    out.requires_grad = false;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        if (!(norms[i] > 0.0)) {
            throw DegenerateInputError("cannot normalize row " + std::to_string(i) + ": zero norm");
        }
        for (double& v : out.row_span(i)) v /= norms[i];
    }
    return out;
}

inline bool rows_unit_norm(const Tensor& x, double tol) {
    for (double n : row_norms(x))
        if (std::abs(n - 1.0) > tol) return false;
    return true;
}

}  // namespace rada
