#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace vitlens {

/// Dense row-major float32 matrix. Every kernel below returns a fresh value
/// and leaves its inputs untouched.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

/// c = a·b with float64 accumulation.
Matrix matmul(const Matrix& a, const Matrix& b);

/// Row-wise softmax of (scale × m), max-subtracted per row.
Matrix softmax_rows(const Matrix& m, float scale = 1.0f);
std::vector<float> softmax(std::span<const float> v);

/// Layer normalization over the D features with population variance.
std::vector<float> layer_norm(std::span<const float> x, std::span<const float> gamma,
                              std::span<const float> beta, float eps);
Matrix layer_norm_rows(const Matrix& x, std::span<const float> gamma,
                       std::span<const float> beta, float eps);

/// Exact-erf GELU: 0.5·x·(1 + erf(x/√2)).
std::vector<float> gelu(std::span<const float> x);
Matrix gelu(const Matrix& x);

Matrix add_rows(const Matrix& a, const Matrix& b);
/// Adds `bias` to every row of `m`.
Matrix add_bias(const Matrix& m, std::span<const float> bias);
Matrix transpose(const Matrix& m);
Matrix scale(const Matrix& m, float factor);

/// Columns [begin, begin + count) of `m`.
Matrix slice_cols(const Matrix& m, std::size_t begin, std::size_t count);

/// Throws NonFiniteInput naming `what` if any value is NaN or Inf.
void require_finite(std::span<const float> values, const char* what);

}  // namespace vitlens
