#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace adrlab {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Dense row-major array of doubles with an explicit shape.
///
/// Rank 0 (shape `[]`) and rank 1 `[1]` both count as scalars. Most of the
/// library works with rank-2 `[rows, cols]` tensors; a rank-1 `[d]` tensor
/// is treated as a single row where a matrix is expected.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
    static Tensor row(std::initializer_list<double> values);
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t rank() const noexcept { return shape_.size(); }
    bool is_scalar() const noexcept { return data_.size() == 1 && rank() <= 1; }

    /// Rows/cols of the matrix view: `[r, c]` as is, `[d]` as `[1, d]`, `[]` as `[1, 1]`.
    std::size_t rows() const noexcept;
    std::size_t cols() const noexcept;

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }
    double item() const;

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool all_finite() const noexcept;

    /// Bitwise equality of shape and contents.
    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Same shape as `like`, every entry `value`.
Tensor filled_like(const Tensor& like, double value);

/// Plain (tape-free) matrix product used by inference paths and tests.
Tensor matmul_values(const Tensor& a, const Tensor& b);

/// Selects rows by index into a new `[indices.size(), cols]` tensor.
Tensor gather_rows(const Tensor& m, std::span<const std::size_t> indices);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace adrlab
