#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace ndf {

/// Feature-major batch storage: row i holds feature i for every sample of
/// the batch, contiguously. Kernels loop over samples innermost, so each
/// output's reduction order is independent of the batch size.
template <typename S>
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    FeatureMatrix(std::size_t rows, std::size_t cols) { resize(rows, cols); }

    void resize(std::size_t rows, std::size_t cols) {
        rows_ = rows;
        cols_ = cols;
        data_.resize(rows * cols);
    }
    void fill(S value) { std::fill(data_.begin(), data_.end(), value); }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    S* row(std::size_t r) { return data_.data() + r * cols_; }
    const S* row(std::size_t r) const { return data_.data() + r * cols_; }
    S& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    S operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<S> data() { return data_; }
    std::span<const S> data() const { return data_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<S> data_;
};

} // namespace ndf
