#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace subtyper {

/**
 * Dense row-major matrix of doubles.
 *
 * A `Matrix` is a plain value: copies are deep and there is no shared state,
 * so a finished matrix can be read from any number of threads.
 */
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    /// Build from nested rows, e.g. `Matrix::from_rows({{1, 2}, {3, 4}})`.
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix from_rows(const std::vector<std::vector<double>>& rows);
    static Matrix identity(std::size_t n);
    static Matrix row_vector(std::vector<double> values);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    /// Same data reinterpreted with a new shape; rows*cols must be unchanged.
    Matrix reshaped(std::size_t rows, std::size_t cols) const;

    /// Copy of the given rows, in the given order.
    Matrix select_rows(std::span<const std::size_t> indices) const;

    bool all_finite() const;
    std::string shape_string() const;

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

std::string shape_of(const Matrix& m);

Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T without materializing the transpose.
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// a^T * b without materializing the transpose.
Matrix matmul_at(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double factor);
Matrix hadamard(const Matrix& a, const Matrix& b);
/// Adds a 1 x cols row to every row of `a`.
Matrix add_row(const Matrix& a, const Matrix& row);
/// 1 x cols vector of column sums.
Matrix column_sums(const Matrix& a);
double sum(const Matrix& a);

/// Elementwise max(0, x).
Matrix relu(const Matrix& x);

/**
 * Per-row layer normalization.
 *
 * Each row is centred on its mean and divided by `sqrt(var + eps)` where
 * `var` is the biased (divide-by-width) variance of that row, then scaled
 * by `gamma` and shifted by `beta` (both 1 x cols).
 */
Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& x);

/// Stack matrices side by side; all must have the same row count.
Matrix concat_cols(std::span<const Matrix> parts);
/// Columns [begin, begin + count) of `a`.
Matrix slice_cols(const Matrix& a, std::size_t begin, std::size_t count);

/// Mean of squared elementwise differences.
double mse(const Matrix& a, const Matrix& b);

} // namespace subtyper
