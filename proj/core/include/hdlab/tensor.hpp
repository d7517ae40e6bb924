#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hdlab {

// Dense row-major array of 64-bit floats, rank 0..2. Every value is treated
// as a matrix when operated on: scalars view as [1,1], rank-1 vectors as a
// single row. Immutable shape after construction.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(std::size_t rows, std::size_t cols);
    static Tensor ones(std::size_t rows, std::size_t cols);
    static Tensor full(std::size_t rows, std::size_t cols, double v);
    static Tensor row(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t rows() const;
    std::size_t cols() const;
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Scalar access; throws unless numel() == 1.
    double value() const;

    std::span<const double> data() const { return {data_.data(), data_.size()}; }
    std::span<double> data() { return {data_.data(), data_.size()}; }

    bool same_shape(const Tensor& other) const;
    bool all_finite() const;
    // Throws std::invalid_argument when a non-finite element is present.
    void require_finite(const char* what) const;
    std::string shape_str() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// Elementwise arithmetic under the library broadcast rules: equal shapes,
// scalar against anything, row [1,n] against [m,n], column [m,1] against
// [m,n]. Result takes the larger shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor emax(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

// Euclidean norm of each row: [m,n] -> [m,1].
Tensor row_norms(const Tensor& a);

double sum(const Tensor& a);
double mean(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
double squared_norm(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace hdlab
