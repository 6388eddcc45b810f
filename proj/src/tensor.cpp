#include "vitlens/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vitlens/error.hpp"

namespace vitlens {

namespace {

std::string shape_str(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw Error(ErrorCode::DimensionMismatch, std::string(op) + ": " +
                                                      shape_str(a.rows(), a.cols()) + " vs " +
                                                      shape_str(b.rows(), b.cols()));
    }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw Error(ErrorCode::DimensionMismatch,
                    "matrix " + shape_str(rows, cols) + " needs " + std::to_string(rows * cols) +
                        " values, got " + std::to_string(data_.size()));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
    return m;
}

void require_finite(std::span<const float> values, const char* what) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw Error(ErrorCode::NonFiniteInput,
                        std::string(what) + " has a non-finite value at index " + std::to_string(i));
        }
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "matmul: a.cols=" + std::to_string(a.cols()) + " b.rows=" + std::to_string(b.rows()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Matrix c(m, n);
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t t = 0; t < k; ++t) {
            const double av = a(i, t);
            if (av == 0.0) continue;
            const float* brow = b.row(t).data();
            for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
        }
        float* crow = c.row(i).data();
        for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[j]);
    }
    require_finite(c.data(), "matmul output");
    return c;
}

std::vector<float> softmax(std::span<const float> v) {
    require_finite(v, "softmax input");
    std::vector<float> out(v.size());
    if (v.empty()) return out;
    const float mx = *std::max_element(v.begin(), v.end());
    std::vector<double> e(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        e[i] = std::exp(static_cast<double>(v[i]) - mx);
        sum += e[i];
    }
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(e[i] / sum);
    return out;
}

Matrix softmax_rows(const Matrix& m, float scale) {
    if (!(scale > 0.0f) || !std::isfinite(scale)) {
        throw Error(ErrorCode::InvalidArgument, "softmax_rows: scale must be positive and finite");
    }
    require_finite(m.data(), "softmax_rows input");
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto in = m.row(r);
        auto o = out.row(r);
        double mx = -INFINITY;
        for (float v : in) mx = std::max(mx, static_cast<double>(scale) * v);
        double sum = 0.0;
        for (float v : in) sum += std::exp(static_cast<double>(scale) * v - mx);
        for (std::size_t c = 0; c < in.size(); ++c) {
            o[c] = static_cast<float>(std::exp(static_cast<double>(scale) * in[c] - mx) / sum);
        }
    }
    return out;
}

std::vector<float> layer_norm(std::span<const float> x, std::span<const float> gamma,
                              std::span<const float> beta, float eps) {
    if (gamma.size() != x.size() || beta.size() != x.size()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "layer_norm: x=" + std::to_string(x.size()) + " gamma=" + std::to_string(gamma.size()) +
                        " beta=" + std::to_string(beta.size()));
    }
    if (!(eps > 0.0f)) throw Error(ErrorCode::InvalidArgument, "layer_norm: eps must be positive");
    if (x.empty()) return {};
    const double n = static_cast<double>(x.size());
    double mean = 0.0;
    for (float v : x) mean += v;
    mean /= n;
    double var = 0.0;
    for (float v : x) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    std::vector<float> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = static_cast<float>(gamma[i] * ((x[i] - mean) * inv) + beta[i]);
    }
    require_finite(y, "layer_norm output");
    return y;
}

Matrix layer_norm_rows(const Matrix& x, std::span<const float> gamma, std::span<const float> beta,
                       float eps) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto y = layer_norm(x.row(r), gamma, beta, eps);
        std::copy(y.begin(), y.end(), out.row(r).begin());
    }
    return out;
}

std::vector<float> gelu(std::span<const float> x) {
    require_finite(x, "gelu input");
    std::vector<float> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        y[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)));
    }
    return y;
}

Matrix gelu(const Matrix& x) {
    return Matrix(x.rows(), x.cols(), gelu(x.data()));
}

Matrix add_rows(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add_rows");
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
    require_finite(c.data(), "add_rows output");
    return c;
}

Matrix add_bias(const Matrix& m, std::span<const float> bias) {
    if (bias.size() != m.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "add_bias: cols=" + std::to_string(m.cols()) +
                                                      " bias=" + std::to_string(bias.size()));
    }
    Matrix out = m;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
    }
    require_finite(out.data(), "add_bias output");
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
    return t;
}

Matrix scale(const Matrix& m, float factor) {
    Matrix out = m;
    for (float& v : out.data()) v *= factor;
    require_finite(out.data(), "scale output");
    return out;
}

Matrix slice_cols(const Matrix& m, std::size_t begin, std::size_t count) {
    if (begin + count > m.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "slice_cols: [" + std::to_string(begin) + ", " +
                                                      std::to_string(begin + count) + ") exceeds " +
                                                      std::to_string(m.cols()) + " columns");
    }
    Matrix out(m.rows(), count);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto src = m.row(r).subspan(begin, count);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

}  // namespace vitlens
