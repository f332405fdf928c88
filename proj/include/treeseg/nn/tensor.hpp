#pragma once

#include <Eigen/Core>
#include <cstring>
#include <memory>
#include <numeric>
#include <sstream>
#include <vector>

#include "treeseg/common.hpp"

namespace treeseg::nn {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major tensor. The buffer is shared between tensors produced by
// reshape, so treat tensors handed to autograd ops as immutable; mutate only
// tensors you just created.
class Tensor {
public:
    Tensor() : shape_{0}, data_(std::make_shared<std::vector<real_t>>()) {}

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<real_t>>(shape_numel(shape_), 0.0)) {
        for (int64_t d : shape_) TS_CHECK(d > 0, "tensor: dims must be positive");
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, real_t v) {
        Tensor t(std::move(shape));
        std::fill(t.data(), t.data() + t.numel(), v);
        return t;
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    static Tensor scalar(real_t v) { return full({1}, v); }

    static Tensor from(std::vector<real_t> values, Shape shape) {
        TS_CHECK((int64_t)values.size() == shape_numel(shape),
                 "Tensor::from: value count does not match shape " + shape_str(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<real_t>>(std::move(values));
        return t;
    }

    const Shape& shape() const { return shape_; }
    int64_t ndim() const { return (int64_t)shape_.size(); }
    int64_t dim(int64_t i) const { return shape_[(size_t)(i < 0 ? i + ndim() : i)]; }
    int64_t numel() const { return shape_numel(shape_); }

    real_t* data() { return data_->data(); }
    const real_t* data() const { return data_->data(); }

    real_t& operator[](int64_t i) { return (*data_)[(size_t)i]; }
    real_t operator[](int64_t i) const { return (*data_)[(size_t)i]; }

    real_t& at(std::initializer_list<int64_t> idx) { return (*data_)[(size_t)flat(idx)]; }
    real_t at(std::initializer_list<int64_t> idx) const { return (*data_)[(size_t)flat(idx)]; }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<real_t>>(*data_);
        return t;
    }

    // Shares the buffer; numel must match.
    Tensor reshaped(Shape shape) const {
        TS_CHECK(shape_numel(shape) == numel(),
                 "reshape: numel mismatch " + shape_str(shape_) + " -> " + shape_str(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    using EigenMat =
        Eigen::Matrix<real_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MatMap = Eigen::Map<EigenMat>;
    using ConstMatMap = Eigen::Map<const EigenMat>;
    using VecMap = Eigen::Map<Eigen::Matrix<real_t, Eigen::Dynamic, 1>>;
    using ConstVecMap = Eigen::Map<const Eigen::Matrix<real_t, Eigen::Dynamic, 1>>;

    MatMap mat(int64_t rows, int64_t cols) {
        TS_CHECK(rows * cols == numel(), "mat: bad view");
        return MatMap(data(), rows, cols);
    }
    ConstMatMap mat(int64_t rows, int64_t cols) const {
        TS_CHECK(rows * cols == numel(), "mat: bad view");
        return ConstMatMap(data(), rows, cols);
    }
    VecMap vec() { return VecMap(data(), numel()); }
    ConstVecMap vec() const { return ConstVecMap(data(), numel()); }

private:
    int64_t flat(std::initializer_list<int64_t> idx) const {
        TS_CHECK((int64_t)idx.size() == ndim(), "at: rank mismatch");
        int64_t off = 0;
        size_t k = 0;
        for (int64_t i : idx) {
            off = off * shape_[k] + i;
            ++k;
        }
        return off;
    }

    Shape shape_;
    std::shared_ptr<std::vector<real_t>> data_;
};

}  // namespace treeseg::nn
