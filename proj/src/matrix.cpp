#include "subtyper/matrix.hpp"

#include "subtyper/errors.hpp"

#include <algorithm>
#include <cmath>

namespace subtyper {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_of(a) + " vs " + shape_of(b));
    }
}

} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("Matrix: " + std::to_string(data_.size()) + " values cannot fill " + std::to_string(rows) +
                         "x" + std::to_string(cols));
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<std::vector<double>> tmp;
    for (const auto& r : rows) {
        tmp.emplace_back(r);
    }
    return from_rows(tmp);
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t ncol = rows.empty() ? 0 : rows.front().size();
    Matrix out(rows.size(), ncol);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != ncol) {
            throw ShapeError("Matrix::from_rows: ragged row " + std::to_string(r));
        }
        std::copy(rows[r].begin(), rows[r].end(), out.row(r).begin());
    }
    return out;
}

Matrix Matrix::identity(std::size_t n) {
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        out(i, i) = 1.0;
    }
    return out;
}

Matrix Matrix::row_vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Matrix(1, n, std::move(values));
}

Matrix Matrix::reshaped(std::size_t rows, std::size_t cols) const {
    if (rows * cols != data_.size()) {
        throw ShapeError("reshape: cannot view " + shape_string() + " as " + std::to_string(rows) + "x" +
                         std::to_string(cols));
    }
    return Matrix(rows, cols, data_);
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), cols_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows_) {
            throw ArgumentError("select_rows: index " + std::to_string(indices[i]) + " out of range");
        }
        auto src = row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

std::string shape_of(const Matrix& m) { return m.shape_string(); }

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: shape mismatch " + shape_of(a) + " x " + shape_of(b));
    }
    Matrix out(a.rows(), b.cols());
    const std::size_t inner = a.cols();
    const std::size_t ncol = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* orow = out.row(i).data();
        const double* arow = a.row(i).data();
        for (std::size_t k = 0; k < inner; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) {
                continue;
            }
            const double* brow = b.row(k).data();
            for (std::size_t j = 0; j < ncol; ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_bt: shape mismatch " + shape_of(a) + " x " + shape_of(b) + "^T");
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.row(i).data();
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* brow = b.row(j).data();
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += arow[k] * brow[k];
            }
            out(i, j) = acc;
        }
    }
    return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_at: shape mismatch " + shape_of(a) + "^T x " + shape_of(b));
    }
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* arow = a.row(k).data();
        const double* brow = b.row(k).data();
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = arow[i];
            if (aki == 0.0) {
                continue;
            }
            double* orow = out.row(i).data();
            for (std::size_t j = 0; j < b.cols(); ++j) {
                orow[j] += aki * brow[j];
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] += b.data()[i];
    }
    return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "subtract");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] -= b.data()[i];
    }
    return out;
}

Matrix scale(const Matrix& a, double factor) {
    Matrix out = a;
    for (double& v : out.data()) {
        v *= factor;
    }
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] *= b.data()[i];
    }
    return out;
}

Matrix add_row(const Matrix& a, const Matrix& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ShapeError("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " + shape_of(row));
    }
    Matrix out = a;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) {
            r[j] += row(0, j);
        }
    }
    return out;
}

Matrix column_sums(const Matrix& a) {
    Matrix out(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto r = a.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) {
            out(0, j) += r[j];
        }
    }
    return out;
}

double sum(const Matrix& a) {
    double acc = 0.0;
    for (double v : a.data()) {
        acc += v;
    }
    return acc;
}

Matrix relu(const Matrix& x) {
    Matrix out = x;
    for (double& v : out.data()) {
        v = v > 0.0 ? v : 0.0;
    }
    return out;
}

Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps) {
    if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 || beta.cols() != x.cols()) {
        throw ShapeError("layer_norm: gamma " + shape_of(gamma) + " / beta " + shape_of(beta) +
                         " do not match input width " + std::to_string(x.cols()));
    }
    if (!(eps > 0.0)) {
        throw ArgumentError("layer_norm: eps must be positive");
    }
    Matrix out(x.rows(), x.cols());
    const double width = static_cast<double>(x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto in = x.row(i);
        double mean = 0.0;
        for (double v : in) {
            mean += v;
        }
        mean /= width;
        double var = 0.0;
        for (double v : in) {
            var += (v - mean) * (v - mean);
        }
        var /= width;
        const double inv_std = 1.0 / std::sqrt(var + eps);
        auto o = out.row(i);
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = gamma(0, j) * (in[j] - mean) * inv_std + beta(0, j);
        }
    }
    return out;
}

Matrix softmax_rows(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto in = x.row(i);
        if (in.empty()) {
            continue;
        }
        const double peak = *std::max_element(in.begin(), in.end());
        auto o = out.row(i);
        double total = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(in[j] - peak);
            total += o[j];
        }
        for (double& v : o) {
            v /= total;
        }
    }
    return out;
}

Matrix concat_cols(std::span<const Matrix> parts) {
    if (parts.empty()) {
        return {};
    }
    const std::size_t nrow = parts.front().rows();
    std::size_t ncol = 0;
    for (const auto& p : parts) {
        if (p.rows() != nrow) {
            throw ShapeError("concat_cols: row count mismatch " + shape_of(parts.front()) + " vs " + shape_of(p));
        }
        ncol += p.cols();
    }
    Matrix out(nrow, ncol);
    for (std::size_t i = 0; i < nrow; ++i) {
        auto o = out.row(i).begin();
        for (const auto& p : parts) {
            auto r = p.row(i);
            o = std::copy(r.begin(), r.end(), o);
        }
    }
    return out;
}

Matrix slice_cols(const Matrix& a, std::size_t begin, std::size_t count) {
    if (begin + count > a.cols()) {
        throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") exceed " + shape_of(a));
    }
    Matrix out(a.rows(), count);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto r = a.row(i);
        std::copy(r.begin() + static_cast<std::ptrdiff_t>(begin),
                  r.begin() + static_cast<std::ptrdiff_t>(begin + count), out.row(i).begin());
    }
    return out;
}

double mse(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "mse");
    if (a.empty()) {
        return 0.0;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

} // namespace subtyper
