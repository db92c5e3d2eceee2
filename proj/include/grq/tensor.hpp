#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"

namespace grq {

using Shape = std::vector<std::int64_t>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major f64 tensor. Rank 1..3 is all this library needs.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        for (auto d : shape_)
            if (d < 0) throw dimension_error("negative tensor extent in " + shape_str(shape_));
        data_.assign(numel_of(shape_), 0.0);
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != numel_of(shape_))
            throw dimension_error("tensor data size " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
    }

    Tensor(Shape shape, std::initializer_list<double> data)
        : Tensor(std::move(shape), std::vector<double>(data)) {}

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static std::size_t numel_of(const Shape& s) {
        std::size_t n = 1;
        for (auto d : s) n *= std::size_t(d);
        return n;
    }

    bool empty() const { return data_.empty() && shape_.empty(); }
    const Shape& shape() const { return shape_; }
    int rank() const { return int(shape_.size()); }
    std::int64_t dim(int i) const {
        assert(i >= 0 && i < rank());
        return shape_[std::size_t(i)];
    }
    std::size_t numel() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator()(std::int64_t i) {
        assert(rank() == 1 && i >= 0 && i < shape_[0]);
        return data_[std::size_t(i)];
    }
    double operator()(std::int64_t i) const {
        assert(rank() == 1 && i >= 0 && i < shape_[0]);
        return data_[std::size_t(i)];
    }
    double& operator()(std::int64_t i, std::int64_t j) {
        assert(rank() == 2 && i >= 0 && i < shape_[0] && j >= 0 && j < shape_[1]);
        return data_[std::size_t(i * shape_[1] + j)];
    }
    double operator()(std::int64_t i, std::int64_t j) const {
        assert(rank() == 2 && i >= 0 && i < shape_[0] && j >= 0 && j < shape_[1]);
        return data_[std::size_t(i * shape_[1] + j)];
    }
    double& operator()(std::int64_t i, std::int64_t j, std::int64_t k) {
        assert(rank() == 3 && i >= 0 && i < shape_[0] && j >= 0 && j < shape_[1] && k >= 0 && k < shape_[2]);
        return data_[std::size_t((i * shape_[1] + j) * shape_[2] + k)];
    }
    double operator()(std::int64_t i, std::int64_t j, std::int64_t k) const {
        assert(rank() == 3 && i >= 0 && i < shape_[0] && j >= 0 && j < shape_[1] && k >= 0 && k < shape_[2]);
        return data_[std::size_t((i * shape_[1] + j) * shape_[2] + k)];
    }

    /// Pointer to row i of a rank-2 tensor (or plane i of rank-3).
    double* row(std::int64_t i) {
        assert(rank() >= 2 && i >= 0 && i < shape_[0]);
        return data_.data() + std::size_t(i) * row_stride();
    }
    const double* row(std::int64_t i) const {
        assert(rank() >= 2 && i >= 0 && i < shape_[0]);
        return data_.data() + std::size_t(i) * row_stride();
    }
    std::size_t row_stride() const {
        std::size_t s = 1;
        for (int i = 1; i < rank(); ++i) s *= std::size_t(shape_[std::size_t(i)]);
        return s;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(0.0); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : data_) m = std::max(m, std::abs(v));
        return m;
    }

  private:
    Shape shape_;
    std::vector<double> data_;
};

inline void require_shape(const Tensor& t, const Shape& want, const char* what) {
    if (t.shape() != want)
        throw dimension_error(std::string(what) + ": expected shape " + shape_str(want) + ", got " +
                              shape_str(t.shape()));
}

inline void require_rank(const Tensor& t, int r, const char* what) {
    if (t.rank() != r)
        throw dimension_error(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                              shape_str(t.shape()));
}

}  // namespace grq
