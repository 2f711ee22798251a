#pragma once

#include <algorithm>
#include <cassert>
#include <span>
#include <vector>

#include "mcae/common.hpp"

namespace mcae {

// Dense row-major matrix of Real.
class Mat {
public:
    Mat() = default;
    Mat(Index rows, Index cols, Real fill = 0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Index rows() const { return rows_; }
    Index cols() const { return cols_; }
    Index size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    Real& operator()(Index r, Index c) {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }
    Real operator()(Index r, Index c) const {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }

    std::span<Real> row(Index r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const Real> row(Index r) const { return {data_.data() + r * cols_, cols_}; }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    std::vector<Real>& values() { return data_; }
    const std::vector<Real>& values() const { return data_; }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }
    bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    Mat& operator+=(const Mat& o) {
        assert(same_shape(o));
        for (Index i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    friend bool operator==(const Mat& a, const Mat& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    Index rows_ = 0;
    Index cols_ = 0;
    std::vector<Real> data_;
};

// Gather rows of `src` listed in `idx`, preserving order.
inline Mat gather_rows(const Mat& src, std::span<const Index> idx) {
    Mat out(idx.size(), src.cols());
    for (Index i = 0; i < idx.size(); ++i) {
        if (idx[i] >= src.rows()) throw std::out_of_range("gather_rows: index out of range");
        std::copy_n(src.row(idx[i]).data(), src.cols(), out.row(i).data());
    }
    return out;
}

}  // namespace mcae
