#include "hdlab/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "broadcast_plan.hpp"

namespace hdlab {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

void check_rank(const std::vector<std::size_t>& shape) {
    if (shape.size() > 2) {
        throw std::invalid_argument("tensor rank > 2 is not supported");
    }
}

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EMat>;
using MutMap = Eigen::Map<EMat>;

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
    check_rank(shape_);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_rank(shape_);
    if (shape_numel(shape_) != data_.size()) {
        throw std::invalid_argument("tensor shape does not match data length");
    }
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, {v}); }

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

Tensor Tensor::ones(std::size_t rows, std::size_t cols) { return full(rows, cols, 1.0); }

Tensor Tensor::full(std::size_t rows, std::size_t cols, double v) {
    return Tensor({rows, cols}, std::vector<double>(rows * cols, v));
}

Tensor Tensor::row(std::vector<double> values) {
    std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
}

std::size_t Tensor::rows() const {
    if (shape_.size() == 2) return shape_[0];
    return numel() == 0 && shape_.empty() ? 0 : 1;
}

std::size_t Tensor::cols() const {
    if (shape_.size() == 2) return shape_[1];
    if (shape_.size() == 1) return shape_[0];
    return numel();
}

double Tensor::value() const {
    if (numel() != 1) {
        throw std::invalid_argument("value() requires a single-element tensor, got " + shape_str());
    }
    return data_[0];
}

bool Tensor::same_shape(const Tensor& other) const {
    return rows() == other.rows() && cols() == other.cols();
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::require_finite(const char* what) const {
    if (!all_finite()) {
        throw std::invalid_argument(std::string(what) + ": non-finite element");
    }
}

std::string Tensor::shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape_[i]);
    }
    return s + "]";
}

namespace {

template <class F>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, F f, const char* opname) {
    detail::BroadcastPlan p = detail::plan_broadcast(a, b, opname);
    Tensor out(p.out_shape);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < p.out_rows; ++i) {
        const double* ra = pa + i * p.a_rstride;
        const double* rb = pb + i * p.b_rstride;
        double* ro = po + i * p.out_cols;
        for (std::size_t j = 0; j < p.out_cols; ++j) {
            ro[j] = f(ra[j * p.a_cstride], rb[j * p.b_cstride]);
        }
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(a, b, [](double x, double y) { return x + y; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(a, b, [](double x, double y) { return x - y; }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(a, b, [](double x, double y) { return x * y; }, "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_elementwise(a, b, [](double x, double y) { return x / y; }, "div");
}

Tensor emax(const Tensor& a, const Tensor& b) {
    return binary_elementwise(a, b, [](double x, double y) { return x >= y ? x : y; }, "max");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions differ, " + a.shape_str() + " vs " +
                                    b.shape_str());
    }
    Tensor out({a.rows(), b.cols()});
    ConstMap ma(a.data().data(), static_cast<Eigen::Index>(a.rows()),
                static_cast<Eigen::Index>(a.cols()));
    ConstMap mb(b.data().data(), static_cast<Eigen::Index>(b.rows()),
                static_cast<Eigen::Index>(b.cols()));
    MutMap mo(out.data().data(), static_cast<Eigen::Index>(out.rows()),
              static_cast<Eigen::Index>(out.cols()));
    mo.noalias() = ma * mb;
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

Tensor add_scalar(const Tensor& a, double s) {
    Tensor out = a;
    for (double& v : out.data()) v += s;
    return out;
}

Tensor row_norms(const Tensor& a) {
    Tensor out({a.rows(), 1});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * a(i, j);
        out[i] = std::sqrt(acc);
    }
    return out;
}

double sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    return acc;
}

double mean(const Tensor& a) {
    if (a.numel() == 0) throw std::invalid_argument("mean of empty tensor");
    return sum(a) / static_cast<double>(a.numel());
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) {
        throw std::invalid_argument("dot: element counts differ");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
    return acc;
}

double squared_norm(const Tensor& a) { return dot(a, a); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) {
        throw std::invalid_argument("max_abs_diff: element counts differ");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace hdlab
