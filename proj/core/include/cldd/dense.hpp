#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cldd {

/// Row-major dense matrix of doubles.
///
/// All kernels below accumulate in a fixed order (ascending inner index) so
/// that results are bit-reproducible on a given platform.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    void fill(double v);

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// A · B
Matrix matmul(const Matrix& a, const Matrix& b);
/// Aᵀ · B
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// A · Bᵀ
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// Elementwise product.
Matrix hadamard(const Matrix& a, const Matrix& b);

/// out += scale * x
void axpy(double scale, const Matrix& x, Matrix& out);

/// Column sums (length cols).
std::vector<double> column_sums(const Matrix& m);

/// Frobenius inner product Σ a_ij b_ij.
double frobenius_dot(const Matrix& a, const Matrix& b);

double dot(std::span<const double> a, std::span<const double> b);

/// Horizontal concatenation of equal-height blocks.
Matrix hconcat(std::span<const Matrix> blocks);

}  // namespace cldd
